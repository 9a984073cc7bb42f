import itertools
import math

import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import chisquare

from mglab.function_class import FunctionClass
from mglab.game import MarkovPolicy, sample_episode
from mglab.instances import gen_random_tabular
from mglab.matrix_game import solve_matrix_game
from mglab.posterior import (
    LossLedger,
    booster_posterior_from_ledger,
    build_booster_posterior,
    build_main_posterior,
    enumerate_posterior,
    sample_chain,
    sample_chain_batch,
    update_ledger,
)


def make_class(mg, sizes, seed, uniform=False):
    rng = np.random.default_rng(seed)
    beta = mg.horizon + 1.0
    shape = (mg.num_states, mg.num_a, mg.num_b)
    layers = [rng.random((k,) + shape) * (beta - 1.0) for k in sizes]
    prior = ([np.full(k, 1.0 / k) for k in sizes] if uniform
             else [rng.dirichlet(np.ones(k)) for k in sizes])
    return FunctionClass(layers=layers, prior=prior, beta=beta)


def record_episodes(mg, fc, n, seed):
    rng = np.random.default_rng(seed)
    mu = MarkovPolicy.uniform(mg, "max")
    nu = MarkovPolicy.uniform(mg, "min")
    ledger = LossLedger.create(mg, fc)
    trajs = []
    for t in range(n):
        z = sample_episode(mg, mu, nu, rng, episode=t)
        trajs.append(z)
        update_ledger(ledger, z)
    return ledger, trajs


def nash_values_of(layer_set):
    return np.array([[solve_matrix_game(tab[x]).value for x in range(tab.shape[0])]
                     for tab in layer_set])


def brute_force_main(fc, trajs, eta, lam, x1):
    """Direct evaluation of the tilted conditional-product posterior."""
    H = fc.horizon
    vals = [nash_values_of(fc.layers[h]) for h in range(H)]

    def loss(h, i, j):
        total = 0.0
        for z in trajs:
            x, a, b = z.states[h], z.a_actions[h], z.b_actions[h]
            v_next = vals[h + 1][j][z.states[h + 1]] if h + 1 < H else 0.0
            total += (fc.layers[h][i, x, a, b] - z.rewards[h] - v_next) ** 2
        return total

    return _assemble(fc, loss, lam * vals[0][:, x1], eta)


def brute_force_booster(fc, trajs, mu, eta, lam, x1):
    H = fc.horizon

    def min_val(h, j, x):
        return min(mu.probs[h, x] @ fc.layers[h][j, x, :, b] for b in range(fc.layers[h].shape[3]))

    def loss(h, i, j):
        total = 0.0
        for z in trajs:
            x, a, b = z.states[h], z.a_actions[h], z.b_actions[h]
            v_next = min_val(h + 1, j, z.states[h + 1]) if h + 1 < H else 0.0
            total += (fc.layers[h][i, x, a, b] - z.rewards[h] - v_next) ** 2
        return total

    unary = np.array([-lam * min_val(0, i, x1) for i in range(fc.sizes[0])])
    return _assemble(fc, loss, unary, eta)


def _assemble(fc, loss, unary, eta):
    H = fc.horizon
    logw = {}
    for combo in itertools.product(*(range(k) for k in fc.sizes)):
        w = unary[combo[0]]
        for h in range(H):
            j = combo[h + 1] if h + 1 < H else 0
            scores = [math.log(fc.prior[h][ii]) - eta * loss(h, ii, j)
                      for ii in range(fc.sizes[h])]
            w += scores[combo[h]] - logsumexp(scores)
        logw[combo] = w
    z = logsumexp(list(logw.values()))
    return {c: w - z for c, w in logw.items()}


def test_ledger_single_episode_cells():
    mg = gen_random_tabular(2, 2, 2, 2, seed=0)
    fc = make_class(mg, [2, 2], seed=1)
    ledger, trajs = record_episodes(mg, fc, 1, seed=2)
    z = trajs[0]
    vals1 = nash_values_of(fc.layers[1])
    for i in range(2):
        for j in range(2):
            x, a, b = z.states[0], z.a_actions[0], z.b_actions[0]
            expected = (fc.layers[0][i, x, a, b] - z.rewards[0] - vals1[j, z.states[1]]) ** 2
            assert abs(ledger.cum_loss[0][i, j] - expected) < 1e-12
    assert np.all(ledger.cum_loss[0] >= 0)


def test_ledger_exact_fit_gives_zero_cell():
    mg = gen_random_tabular(1, 1, 1, 1, seed=3)
    r = mg.reward[0, 0, 0, 0]
    layers = [np.array([[[[r]]], [[[r + 0.5]]]])]
    fc = FunctionClass(layers=layers, prior=[np.array([0.5, 0.5])], beta=3.0)
    ledger, _ = record_episodes(mg, fc, 1, seed=4)
    assert ledger.cum_loss[0][0, 0] == 0.0
    assert ledger.cum_loss[0][1, 0] > 0.0


def test_ledger_matches_from_scratch_recomputation():
    mg = gen_random_tabular(3, 2, 2, 2, seed=5)
    fc = make_class(mg, [3, 2, 3], seed=6)
    ledger, trajs = record_episodes(mg, fc, 3, seed=7)
    vals = [nash_values_of(fc.layers[h]) for h in range(3)]
    for h in range(3):
        for i in range(fc.sizes[h]):
            k_next = fc.sizes[h + 1] if h + 1 < 3 else 1
            for j in range(k_next):
                total = 0.0
                for z in trajs:
                    x, a, b = z.states[h], z.a_actions[h], z.b_actions[h]
                    v = vals[h + 1][j][z.states[h + 1]] if h + 1 < 3 else 0.0
                    total += (fc.layers[h][i, x, a, b] - z.rewards[h] - v) ** 2
                assert abs(ledger.cum_loss[h][i, j] - total) < 1e-10


def test_prior_recovered_without_data_or_optimism():
    mg = gen_random_tabular(2, 2, 2, 2, seed=8)
    fc = make_class(mg, [3, 2], seed=9)
    ledger = LossLedger.create(mg, fc)
    chain = build_main_posterior(fc, ledger, eta=0.5, lam=0.0)
    for combo, lp in enumerate_posterior(fc, chain):
        expected = math.log(fc.prior[0][combo[0]]) + math.log(fc.prior[1][combo[1]])
        assert abs(lp - expected) < 1e-12


def test_single_step_softmax_formula():
    mg = gen_random_tabular(1, 1, 2, 2, seed=10)
    fc = make_class(mg, [2], seed=11, uniform=True)
    ledger, _ = record_episodes(mg, fc, 4, seed=12)
    eta = 0.37
    l1, l2 = ledger.cum_loss[0][:, 0]
    chain = build_main_posterior(fc, ledger, eta=eta, lam=0.0)
    atoms = dict(enumerate_posterior(fc, chain))
    expected0 = math.exp(-eta * l1) / (math.exp(-eta * l1) + math.exp(-eta * l2))
    assert abs(math.exp(atoms[(0,)]) - expected0) < 1e-12


def test_main_posterior_matches_brute_force():
    mg = gen_random_tabular(3, 2, 2, 2, seed=13)
    fc = make_class(mg, [3, 3, 3], seed=14)
    ledger, trajs = record_episodes(mg, fc, 4, seed=15)
    chain = build_main_posterior(fc, ledger, eta=0.3, lam=1.7)
    brute = brute_force_main(fc, trajs, 0.3, 1.7, mg.initial_state)
    for combo, lp in enumerate_posterior(fc, chain):
        assert abs(lp - brute[combo]) < 1e-10


def test_booster_posterior_matches_brute_force():
    mg = gen_random_tabular(2, 2, 2, 2, seed=16)
    fc = make_class(mg, [2, 2], seed=17)
    _, trajs = record_episodes(mg, fc, 1, seed=18)
    rng = np.random.default_rng(19)
    mu = MarkovPolicy(side="max", probs=rng.dirichlet(np.ones(2), size=(2, 2)))
    chain = build_booster_posterior(fc, mu, trajs, eta=0.4, lam=0.9,
                                    initial_state=mg.initial_state)
    brute = brute_force_booster(fc, trajs, mu, 0.4, 0.9, mg.initial_state)
    for combo, lp in enumerate_posterior(fc, chain):
        assert abs(lp - brute[combo]) < 1e-10


def test_booster_empty_history_is_tilted_prior():
    mg = gen_random_tabular(2, 2, 2, 2, seed=20)
    fc = make_class(mg, [2, 3], seed=21)
    mu = MarkovPolicy.uniform(mg, "max")
    chain = build_booster_posterior(fc, mu, [], eta=0.5, lam=0.0,
                                    initial_state=mg.initial_state)
    for combo, lp in enumerate_posterior(fc, chain):
        expected = math.log(fc.prior[0][combo[0]]) + math.log(fc.prior[1][combo[1]])
        assert abs(lp - expected) < 1e-12


def test_booster_point_mass_mu_scalar_arithmetic():
    # one state, point-mass mu: targets reduce to plain scalar arithmetic
    mg = gen_random_tabular(2, 1, 2, 2, seed=22)
    rng = np.random.default_rng(23)
    layers = [rng.random((2, 1, 2, 2)) for _ in range(2)]
    fc = FunctionClass(layers=layers, prior=[np.array([0.5, 0.5])] * 2, beta=3.0)
    mu = MarkovPolicy.pure(mg, "max", np.zeros((2, 1), dtype=int))
    _, trajs = record_episodes(mg, fc, 2, seed=24)
    chain = build_booster_posterior(fc, mu, trajs, eta=0.6, lam=0.0,
                                    initial_state=0)
    # hand-recompute one conditional column
    j = 1
    v_next = [fc.layers[1][j, 0, 0, :].min()]  # mu picks row 0
    losses = np.zeros(2)
    for z in trajs:
        a, b = z.a_actions[0], z.b_actions[0]
        for i in range(2):
            losses[i] += (fc.layers[0][i, 0, a, b] - z.rewards[0] - v_next[0]) ** 2
    scores = np.log(0.5) - 0.6 * losses
    expected = scores - logsumexp(scores)
    assert np.max(np.abs(chain.pair_log_potentials[0][:, j] - expected)) < 1e-12


def test_booster_builders_agree():
    mg = gen_random_tabular(3, 2, 2, 2, seed=25)
    fc = make_class(mg, [2, 3, 2], seed=26)
    ledger, trajs = record_episodes(mg, fc, 5, seed=27)
    rng = np.random.default_rng(28)
    mu = MarkovPolicy(side="max", probs=rng.dirichlet(np.ones(2), size=(3, 2)))
    c1 = build_booster_posterior(fc, mu, trajs, 0.2, 1.1, mg.initial_state)
    c2 = booster_posterior_from_ledger(fc, mu, ledger, 0.2, 1.1)
    for p1, p2 in zip(c1.pair_log_potentials, c2.pair_log_potentials):
        assert np.max(np.abs(p1 - p2)) < 1e-12
    assert np.max(np.abs(c1.unary_log_weight - c2.unary_log_weight)) < 1e-12


def test_conditionals_normalize_per_successor():
    mg = gen_random_tabular(3, 2, 2, 2, seed=29)
    fc = make_class(mg, [3, 2, 4], seed=30)
    ledger, _ = record_episodes(mg, fc, 6, seed=31)
    chain = build_main_posterior(fc, ledger, eta=0.8, lam=2.0)
    for pot in chain.pair_log_potentials:
        norms = logsumexp(pot, axis=0)
        assert np.max(np.abs(norms)) < 1e-10


def test_enumeration_normalizes():
    mg = gen_random_tabular(2, 2, 2, 2, seed=32)
    fc = make_class(mg, [4, 4], seed=33)
    ledger, _ = record_episodes(mg, fc, 3, seed=34)
    chain = build_main_posterior(fc, ledger, eta=0.5, lam=1.0)
    total = logsumexp([lp for _, lp in enumerate_posterior(fc, chain)])
    assert abs(total) < 1e-9


def test_enumeration_cap():
    mg = gen_random_tabular(2, 2, 2, 2, seed=35)
    fc = make_class(mg, [4, 4], seed=36)
    ledger = LossLedger.create(mg, fc)
    chain = build_main_posterior(fc, ledger, eta=0.5, lam=0.0)
    with pytest.raises(ValueError):
        enumerate_posterior(fc, chain, cap=10)


def test_last_layer_marginal_matches_messages():
    mg = gen_random_tabular(2, 2, 2, 2, seed=37)
    fc = make_class(mg, [3, 3], seed=38)
    ledger, _ = record_episodes(mg, fc, 4, seed=39)
    chain = build_main_posterior(fc, ledger, eta=0.4, lam=1.2)
    atoms = enumerate_posterior(fc, chain)
    marg = np.full(3, -np.inf)
    for combo, lp in atoms:
        marg[combo[-1]] = np.logaddexp(marg[combo[-1]], lp)
    from_messages = (chain.messages[-1] + chain.pair_log_potentials[-1][:, 0]
                     - chain.log_partition)
    assert np.max(np.abs(marg - from_messages)) < 1e-10


def test_optimism_drives_first_layer_to_max_value():
    mg = gen_random_tabular(2, 2, 2, 2, seed=40)
    fc = make_class(mg, [3, 2], seed=41, uniform=True)
    ledger = LossLedger.create(mg, fc)
    v1 = fc.layer_values[0][:, mg.initial_state]
    best = int(np.argmax(v1))
    last_mass = 0.0
    for lam in (0.0, 2.0, 10.0, 50.0):
        chain = build_main_posterior(fc, ledger, eta=0.5, lam=lam)
        mass = sum(math.exp(lp) for combo, lp in enumerate_posterior(fc, chain)
                   if combo[0] == best)
        assert mass >= last_mass - 1e-12
        last_mass = mass
    assert last_mass > 0.99


def test_optimism_monotonicity_expected_values():
    mg = gen_random_tabular(2, 2, 2, 2, seed=42)
    fc = make_class(mg, [3, 3], seed=43)
    ledger, trajs = record_episodes(mg, fc, 2, seed=44)
    v1 = fc.layer_values[0][:, mg.initial_state]

    def expected_v(lam):
        chain = build_main_posterior(fc, ledger, eta=0.5, lam=lam)
        return sum(math.exp(lp) * v1[c[0]] for c, lp in enumerate_posterior(fc, chain))

    e0, e1, e10 = expected_v(0.0), expected_v(1.0), expected_v(10.0)
    assert e0 <= e1 + 1e-12 <= e10 + 2e-12

    mu = MarkovPolicy.uniform(mg, "max")
    from mglab.oracle import response_values
    vmin1 = response_values(fc.layers[0], mu.probs[0])[:, mg.initial_state]

    def expected_booster(lam):
        chain = build_booster_posterior(fc, mu, trajs, 0.5, lam, mg.initial_state)
        return sum(math.exp(lp) * vmin1[c[0]] for c, lp in enumerate_posterior(fc, chain))

    b0, b1, b10 = expected_booster(0.0), expected_booster(1.0), expected_booster(10.0)
    assert b0 >= b1 - 1e-12 >= b10 - 2e-12


def test_data_consistency_rewards_exact_fit():
    # a trajectory with zero residual for pair (i, j) and positive for others
    # must strictly raise that pair's posterior mass
    mg = gen_random_tabular(1, 1, 1, 1, seed=45)
    r = mg.reward[0, 0, 0, 0]
    layers = [np.array([[[[r]]], [[[r + 0.7]]]])]
    fc = FunctionClass(layers=layers, prior=[np.array([0.5, 0.5])], beta=3.0)
    ledger = LossLedger.create(mg, fc)
    chain0 = build_main_posterior(fc, ledger, eta=0.5, lam=0.0)
    mass0 = math.exp(dict(enumerate_posterior(fc, chain0))[(0,)])
    mu = MarkovPolicy.uniform(mg, "max")
    nu = MarkovPolicy.uniform(mg, "min")
    update_ledger(ledger, sample_episode(mg, mu, nu, np.random.default_rng(0)))
    chain1 = build_main_posterior(fc, ledger, eta=0.5, lam=0.0)
    mass1 = math.exp(dict(enumerate_posterior(fc, chain1))[(0,)])
    assert mass1 > mass0


def test_sampler_single_candidate():
    mg = gen_random_tabular(2, 2, 2, 2, seed=46)
    fc = make_class(mg, [1, 1], seed=47)
    ledger = LossLedger.create(mg, fc)
    chain = build_main_posterior(fc, ledger, eta=0.5, lam=1.0)
    assert sample_chain(chain, np.random.default_rng(0)) == [0, 0]


def test_sampler_uniform_prior_marginals():
    mg = gen_random_tabular(2, 2, 2, 2, seed=48)
    fc = make_class(mg, [4, 4], seed=49, uniform=True)
    ledger = LossLedger.create(mg, fc)
    chain = build_main_posterior(fc, ledger, eta=0.5, lam=0.0)
    draws = sample_chain_batch(chain, np.random.default_rng(50), 50_000)
    for h in range(2):
        freq = np.bincount(draws[:, h], minlength=4) / 50_000
        stderr = math.sqrt(0.25 * 0.75 / 50_000)
        assert np.max(np.abs(freq - 0.25)) < 4 * stderr


def test_sampler_joint_chi_square():
    mg = gen_random_tabular(3, 2, 2, 2, seed=51)
    fc = make_class(mg, [3, 3, 3], seed=52)
    ledger, _ = record_episodes(mg, fc, 3, seed=53)
    chain = build_main_posterior(fc, ledger, eta=0.4, lam=1.5)
    atoms = enumerate_posterior(fc, chain)
    n = 200_000
    draws = sample_chain_batch(chain, np.random.default_rng(54), n)
    flat = draws[:, 0] * 9 + draws[:, 1] * 3 + draws[:, 2]
    counts = np.bincount(flat, minlength=27)
    expected = np.array([math.exp(lp) for _, lp in atoms]) * n
    keep = expected > 1.0  # chi-square needs non-degenerate cells
    stat, p = chisquare(counts[keep], expected[keep] * counts[keep].sum() / expected[keep].sum())
    assert p > 0.001


def test_sample_batch_agrees_with_loop_distribution():
    mg = gen_random_tabular(2, 2, 2, 2, seed=55)
    fc = make_class(mg, [2, 3], seed=56)
    ledger, _ = record_episodes(mg, fc, 2, seed=57)
    chain = build_main_posterior(fc, ledger, eta=0.7, lam=0.8)
    atoms = dict(enumerate_posterior(fc, chain))
    rng = np.random.default_rng(58)
    n = 40_000
    counts = {}
    for _ in range(n):
        c = tuple(sample_chain(chain, rng))
        counts[c] = counts.get(c, 0) + 1
    tv = 0.5 * sum(abs(counts.get(c, 0) / n - math.exp(lp)) for c, lp in atoms.items())
    assert tv < 0.015


def test_nan_rejected():
    mg = gen_random_tabular(2, 2, 2, 2, seed=59)
    fc = make_class(mg, [2, 2], seed=60)
    ledger = LossLedger.create(mg, fc)
    ledger.cum_loss[0][0, 0] = np.nan
    with pytest.raises(ValueError):
        build_main_posterior(fc, ledger, eta=0.5, lam=0.0)
