"""Top-level self-play loop.

Per episode: the main agent samples a candidate from its posterior and plays
its maximin policy; the booster agent, seeing that policy, samples from its
own posterior and plays the per-state pure minimizer against it; the pair is
executed once and the realized trajectory folded into the losses. Every
episode is scored with the exact oracle (never Monte-Carlo): the equilibrium
value, the executed pair's value, and the value of the main policy against
its exact best response.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .function_class import FunctionClass
from .game import MarkovPolicy, TabularMG, policy_value, sample_episode
from .oracle import NashSolution, best_response, pure_minimizer_policy, solve_nash
from .posterior import (
    ENUM_CAP,
    LossLedger,
    booster_posterior_from_ledger,
    build_main_posterior,
    enumerate_posterior,
    sample_chain,
    update_ledger,
)

log = logging.getLogger(__name__)


@dataclass
class HyperParams:
    """Learning rate, optimism weight, episode budget, value bound, RNG seed."""

    eta: float
    lam: float
    T: int
    beta: float
    seed: int = 0

    def validate(self, strict: bool = False) -> None:
        problems = []
        if self.eta * self.beta**2 > 0.5:
            problems.append(f"eta*beta^2 = {self.eta * self.beta**2:.4g} exceeds 0.5")
        if self.lam * self.beta**2 < 1.0:
            problems.append(f"lam*beta^2 = {self.lam * self.beta**2:.4g} is below 1")
        for msg in problems:
            if strict:
                raise ValueError(msg)
            warnings.warn(msg, stacklevel=2)


def default_hyperparams(beta: float, T: int, kappa: float, dc: float,
                        seed: int = 0) -> HyperParams:
    """Schedule eta = 1/(4 beta^2) and lam = sqrt(T kappa / (beta^2 dc)).

    lam is clamped up to 1/beta^2 (with a logged notice) when the formula
    lands below the admissible range.
    """
    if beta <= 0 or T <= 0 or kappa < 0 or dc <= 0:
        raise ValueError("beta, T, dc must be positive and kappa nonnegative")
    eta = 1.0 / (4.0 * beta**2)
    lam = math.sqrt(T * kappa / (beta**2 * dc))
    if lam * beta**2 < 1.0:
        log.info("lam %.4g below 1/beta^2, clamping up", lam)
        lam = 1.0 / beta**2
    return HyperParams(eta=eta, lam=lam, T=T, beta=beta, seed=seed)


@dataclass
class RegretRecord:
    """Exact per-episode evaluation; inst_regret = main_gap + booster_gap by construction."""

    episode: int
    v_star: float
    v_exec: float
    v_br: float
    main_gap: float
    booster_gap: float
    inst_regret: float
    cum_regret: float


@dataclass(eq=False)
class EpisodeArtifact:
    """What diagnostics need to replay one episode exactly."""

    f_indices: list
    g_indices: list
    mu: MarkovPolicy
    nu: MarkovPolicy


@dataclass(eq=False)
class RunArtifacts:
    mg: TabularMG
    fc: FunctionClass
    hp: HyperParams
    nash: NashSolution
    episodes: list  # EpisodeArtifact per episode
    records: list


def evaluate_episode(
    mg: TabularMG, mu: MarkovPolicy, nu: MarkovPolicy, nash: NashSolution,
    episode: int = 0, cum_so_far: float = 0.0,
) -> RegretRecord:
    """Exact oracle scores for one executed policy pair."""
    x1 = mg.initial_state
    v_star = float(nash.v_star[0, x1])
    v_exec = float(policy_value(mg, mu, nu)[0, x1])
    v_br = float(best_response(mg, mu).v_br[0, x1])
    main_gap = v_star - v_exec
    booster_gap = v_exec - v_br
    inst = main_gap + booster_gap
    return RegretRecord(
        episode=episode, v_star=v_star, v_exec=v_exec, v_br=v_br,
        main_gap=main_gap, booster_gap=booster_gap,
        inst_regret=inst, cum_regret=cum_so_far + inst,
    )


def pure_minimizer(fc: FunctionClass, g_indices, mu: MarkovPolicy) -> MarkovPolicy:
    """Per-state pure column minimizing the mu-averaged sampled layers."""
    layers = np.stack([fc.layers[h][g_indices[h]] for h in range(fc.horizon)])
    return pure_minimizer_policy(layers, mu)


def run_selfplay(
    mg: TabularMG,
    fc: FunctionClass,
    hp: HyperParams,
    *,
    record_artifacts: bool = True,
    strict: bool = False,
    posterior_dump=None,
) -> tuple:
    """Run hp.T episodes; returns (records, RunArtifacts).

    Fully deterministic given hp.seed: one generator drives the posterior
    draws and the episode sampling in a fixed order. posterior_dump, if set,
    is a path receiving the fully enumerated per-episode posteriors as CSV
    (only viable for classes small enough to enumerate).
    """
    hp.validate(strict=strict)
    nash = solve_nash(mg)
    contains_nash = _class_contains(fc, nash.q_star)
    if not contains_nash:
        warnings.warn("function class does not contain the exact equilibrium tables",
                      stacklevel=2)
    dump = None
    if posterior_dump is not None:
        if np.prod(fc.sizes) > ENUM_CAP:
            raise ValueError("class too large to enumerate for posterior_dump")
        dump = open(posterior_dump, "w")
        idx_cols = ",".join(f"idx{h + 1}" for h in range(fc.horizon))
        dump.write(f"episode,agent,{idx_cols},log_prob\n")

    rng = np.random.default_rng(hp.seed)
    ledger = LossLedger.create(mg, fc, capacity=max(hp.T, 1))
    records = []
    episodes = []
    cum = 0.0
    try:
        for t in range(1, hp.T + 1):
            chain = build_main_posterior(fc, ledger, hp.eta, hp.lam)
            f_idx = sample_chain(chain, rng)
            mu_t = fc.policy_from_indices(f_idx)

            bchain = booster_posterior_from_ledger(fc, mu_t, ledger, hp.eta, hp.lam)
            g_idx = sample_chain(bchain, rng)
            nu_t = pure_minimizer(fc, g_idx, mu_t)

            if dump is not None:
                for agent, ch in (("main", chain), ("booster", bchain)):
                    for combo, lp in enumerate_posterior(fc, ch):
                        cols = ",".join(str(i) for i in combo)
                        dump.write(f"{t},{agent},{cols},{lp:.12g}\n")

            zeta = sample_episode(mg, mu_t, nu_t, rng, episode=t)
            update_ledger(ledger, zeta)

            rec = evaluate_episode(mg, mu_t, nu_t, nash, episode=t, cum_so_far=cum)
            cum = rec.cum_regret
            records.append(rec)
            if record_artifacts:
                episodes.append(EpisodeArtifact(f_indices=f_idx, g_indices=g_idx,
                                                mu=mu_t, nu=nu_t))
    finally:
        if dump is not None:
            dump.close()
    artifacts = RunArtifacts(mg=mg, fc=fc, hp=hp, nash=nash,
                             episodes=episodes, records=records)
    return records, artifacts


def _class_contains(fc: FunctionClass, q_tables: np.ndarray, tol: float = 1e-9) -> bool:
    for h in range(fc.horizon):
        gaps = np.max(np.abs(fc.layers[h] - q_tables[h]), axis=(1, 2, 3))
        if gaps.min() > tol:
            return False
    return True


CSV_HEADER = "episode,v_star,v_exec,v_br,main_gap,booster_gap,inst_regret,cum_regret"


def regret_csv_lines(records) -> list:
    lines = [CSV_HEADER]
    for r in records:
        vals = (r.v_star, r.v_exec, r.v_br, r.main_gap, r.booster_gap,
                r.inst_regret, r.cum_regret)
        lines.append(f"{r.episode}," + ",".join(format(v, ".12g") for v in vals))
    return lines


def write_regret_csv(records, path) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(regret_csv_lines(records)) + "\n")
