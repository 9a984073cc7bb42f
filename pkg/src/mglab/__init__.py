"""Desk-scale laboratory for posterior-sampling self-play in zero-sum Markov games."""

from .diagnostics import (
    DcTrace,
    DiagnosticError,
    ResidualReport,
    check_booster_value_identity,
    check_decoupling,
    check_main_value_bound,
    dc_bound_linear,
    dc_trace,
    elliptical_potential_check,
    excess_loss_moments,
    residuals,
)
from .function_class import (
    FunctionClass,
    InducedPolicyBundle,
    KappaResult,
    QFunction,
    build_closure_class,
    compute_kappa,
    induce_policy,
    induced_min_value,
)
from .game import (
    MarkovPolicy,
    OccupancyMeasure,
    TabularMG,
    Trajectory,
    compute_occupancy,
    policy_value,
    sample_episode,
)
from .instances import LinearMGSpec, benchmark_two_state, gen_linear_mg, gen_random_tabular
from .matrix_game import MatrixGameSolution, best_pure_response_value, solve_matrix_game
from .oracle import (
    BestResponseSolution,
    NashSolution,
    bellman_apply,
    bellman_apply_mu,
    best_response,
    pure_minimizer_policy,
    solve_nash,
)
from .posterior import (
    LossLedger,
    PosteriorChain,
    booster_posterior_from_ledger,
    build_booster_posterior,
    build_main_posterior,
    enumerate_posterior,
    sample_chain,
    sample_chain_batch,
    update_ledger,
)
from .selfplay import (
    HyperParams,
    RegretRecord,
    RunArtifacts,
    default_hyperparams,
    evaluate_episode,
    run_selfplay,
    write_regret_csv,
)

__version__ = "0.1.0"
