"""Exact posteriors over finite function classes, as layer chains.

Both agents' posteriors factor as a chain over steps: a single tilt on the
first layer (the optimism weight on the initial-state value) times, per step,
a conditional distribution of the layer given its successor. Each conditional
is a prior-weighted softmax of the cumulative squared temporal-difference
loss against that successor, normalized over the layer's candidates. On a
finite class this makes exact sampling a forward message pass plus top-down
ancestral draws; no MCMC anywhere. All arithmetic stays in natural-log space
because the cumulative losses grow linearly in the episode count.

The ledger below accumulates the main agent's losses incrementally. The
booster agent's losses depend on the current opponent policy, which changes
every episode, so they are recomputed over the full history each call
(quadratic in the run length, accepted at desk scale); the ledger keeps the
per-step visit history in columnar buffers to make that recomputation a few
matrix products.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .function_class import FunctionClass
from .game import MarkovPolicy, TabularMG, Trajectory
from .oracle import response_values

COND_ATOL = 1e-10
ENUM_CAP = 10**6


@dataclass(eq=False)
class LossLedger:
    """Cumulative squared-loss matrices plus the visit history behind them.

    cum_loss[h][i, j] holds the loss of layer-h candidate i measured against
    the maximin values of layer-(h+1) candidate j, summed over all recorded
    episodes; the last step has a single terminal pseudo-candidate. The
    cached next_values[h] is the (K_{h+1}, X) table of successor values used
    for those targets.
    """

    fc: FunctionClass
    initial_state: int
    next_values: list  # per h: (K_{h+1}, X); terminal step is (1, X) zeros
    cum_loss: list  # per h: (K_h, K_{h+1})
    episodes: int = 0
    _visit_vals: list = field(default_factory=list)  # per h: (cap, K_h) candidate values at visits
    _rewards: np.ndarray | None = None  # (cap, H)
    _next_states: np.ndarray | None = None  # (cap, H); one past the last step is unused
    _cap: int = 0

    @classmethod
    def create(cls, mg: TabularMG, fc: FunctionClass, capacity: int = 64) -> "LossLedger":
        if fc.horizon != mg.horizon or fc.num_states != mg.num_states:
            raise ValueError("function class dimensions mismatch game")
        H = fc.horizon
        next_values = [
            fc.layer_values[h + 1] if h + 1 < H else np.zeros((1, mg.num_states))
            for h in range(H)
        ]
        cum = [np.zeros((fc.sizes[h], next_values[h].shape[0])) for h in range(H)]
        ledger = cls(fc=fc, initial_state=mg.initial_state, next_values=next_values,
                     cum_loss=cum)
        ledger._reserve(capacity)
        return ledger

    def _reserve(self, capacity: int) -> None:
        capacity = max(capacity, 1)
        H = self.fc.horizon
        if self._cap == 0:
            self._visit_vals = [np.empty((capacity, k)) for k in self.fc.sizes]
            self._rewards = np.empty((capacity, H))
            self._next_states = np.empty((capacity, H), dtype=int)
            self._cap = capacity
            return
        if capacity <= self._cap:
            return
        self._visit_vals = [np.resize(v, (capacity, v.shape[1])) for v in self._visit_vals]
        self._rewards = np.resize(self._rewards, (capacity, H))
        self._next_states = np.resize(self._next_states, (capacity, H))
        self._cap = capacity

    def visit_values(self, h: int) -> np.ndarray:
        """Recorded candidate values at step-h visits, shape (t, K_h)."""
        return self._visit_vals[h][: self.episodes]

    def rewards(self) -> np.ndarray:
        return self._rewards[: self.episodes]

    def next_states(self) -> np.ndarray:
        return self._next_states[: self.episodes]


def update_ledger(ledger: LossLedger, zeta: Trajectory, fc: FunctionClass | None = None) -> LossLedger:
    """Fold one trajectory into the cumulative losses; mutates and returns ledger."""
    fc = ledger.fc if fc is None else fc
    if fc is not ledger.fc:
        raise ValueError("ledger is bound to a different function class")
    H = fc.horizon
    if len(zeta) != H:
        raise ValueError(f"trajectory has {len(zeta)} steps, game horizon is {H}")
    if ledger.episodes >= ledger._cap:
        ledger._reserve(2 * ledger._cap)
    t = ledger.episodes
    for h in range(H):
        x, a, b = zeta.states[h], zeta.a_actions[h], zeta.b_actions[h]
        r = zeta.rewards[h]
        x_next = zeta.states[h + 1] if h + 1 < H else 0
        f_vals = fc.layers[h][:, x, a, b]  # (K_h,)
        targets = r + ledger.next_values[h][:, x_next]  # (K_{h+1},)
        ledger.cum_loss[h] += (f_vals[:, None] - targets[None, :]) ** 2
        ledger._visit_vals[h][t] = f_vals
        ledger._rewards[t, h] = r
        ledger._next_states[t, h] = x_next
    ledger.episodes += 1
    return ledger


@dataclass(eq=False)
class PosteriorChain:
    """Chain factorization of a posterior over one candidate index per step.

    pair_log_potentials[h] is the (K_h, K_{h+1}) table of log conditional
    probabilities of the step-h candidate given its successor (each column
    normalizes to one); unary_log_weight tilts the first layer. messages[h]
    accumulates the mass of layers <= h as a function of the layer-h
    candidate, so messages[0] is the unary weight itself.
    """

    unary_log_weight: np.ndarray
    pair_log_potentials: list
    messages: list = field(default_factory=list)
    log_partition: float = 0.0

    def __post_init__(self):
        if np.any(~np.isfinite(self.unary_log_weight)):
            raise ValueError("unary weights must be finite")
        for h, pot in enumerate(self.pair_log_potentials):
            if np.any(np.isnan(pot)):
                raise ValueError(f"NaN in pair potentials at step {h}")
            norms = logsumexp(pot, axis=0)
            if np.max(np.abs(norms)) > COND_ATOL:
                raise ValueError(f"conditional at step {h} is not normalized")
        if not self.messages:
            self._run_messages()

    def _run_messages(self) -> None:
        msg = np.asarray(self.unary_log_weight, dtype=float)
        self.messages = [msg]
        for pot in self.pair_log_potentials[:-1]:
            msg = logsumexp(msg[:, None] + pot, axis=0)
            self.messages.append(msg)
        last = self.pair_log_potentials[-1]
        self.log_partition = float(logsumexp(self.messages[-1] + last[:, 0]))

    @property
    def horizon(self) -> int:
        return len(self.pair_log_potentials)

    @property
    def sizes(self) -> tuple:
        return tuple(p.shape[0] for p in self.pair_log_potentials)

    def log_prob(self, indices) -> float:
        """Normalized joint log probability of one index per step."""
        indices = list(indices)
        score = float(self.unary_log_weight[indices[0]])
        for h, pot in enumerate(self.pair_log_potentials):
            succ = indices[h + 1] if h + 1 < self.horizon else 0
            score += float(pot[indices[h], succ])
        return score - self.log_partition


def _conditional_potentials(fc: FunctionClass, losses: list, eta: float) -> list:
    pots = []
    for h in range(fc.horizon):
        if np.any(np.isnan(losses[h])):
            raise ValueError(f"NaN in losses at step {h}")
        scores = np.log(fc.prior[h])[:, None] - eta * losses[h]
        pots.append(scores - logsumexp(scores, axis=0, keepdims=True))
    return pots


def build_main_posterior(
    fc: FunctionClass, ledger: LossLedger, eta: float, lam: float
) -> PosteriorChain:
    """Posterior of the max-player agent: value-seeking tilt times conditionals."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if fc is not ledger.fc:
        raise ValueError("ledger is bound to a different function class")
    unary = lam * fc.layer_values[0][:, ledger.initial_state]
    return PosteriorChain(
        unary_log_weight=unary,
        pair_log_potentials=_conditional_potentials(fc, ledger.cum_loss, eta),
    )


def _booster_losses_from_history(
    fc: FunctionClass,
    mu: MarkovPolicy,
    visit_vals: list,
    rewards: np.ndarray,
    next_states: np.ndarray,
) -> list:
    """Cumulative response-value losses for a fixed mu over the recorded visits.

    For each step h the target of successor candidate j at episode s is
    r_s + V^mu_j(x_s^{h+1}); expanding the square lets the (K_h, K_{h+1})
    loss matrix come out of one Gram product per step.
    """
    H = fc.horizon
    t = rewards.shape[0]
    losses = []
    for h in range(H):
        fv = visit_vals[h]  # (t, K_h)
        if h + 1 < H:
            v_mu = response_values(fc.layers[h + 1], mu.probs[h + 1])  # (K_{h+1}, X)
            targets = rewards[:, h][:, None] + v_mu[:, next_states[:, h]].T  # (t, K_next)
        else:
            targets = rewards[:, h][:, None]  # terminal layer is the zero function
        sq_f = (fv**2).sum(axis=0)
        sq_t = (targets**2).sum(axis=0)
        cross = fv.T @ targets
        loss = sq_f[:, None] + sq_t[None, :] - 2.0 * cross
        losses.append(np.maximum(loss, 0.0))  # Gram expansion can go -1e-18
    return losses


def build_booster_posterior(
    fc: FunctionClass,
    mu: MarkovPolicy,
    history: list,
    eta: float,
    lam: float,
    initial_state: int,
) -> PosteriorChain:
    """Posterior of the min-player agent for the given opponent policy.

    history is the list of trajectories recorded so far; the losses measure
    each layer against the fixed-mu response values of its successor, and the
    tilt favors candidates with small initial-state response value.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    H = fc.horizon
    t = len(history)
    visit_vals = [np.zeros((t, k)) for k in fc.sizes]
    rewards = np.zeros((t, H))
    next_states = np.zeros((t, H), dtype=int)
    for s, zeta in enumerate(history):
        if len(zeta) != H:
            raise ValueError("trajectory horizon mismatches class")
        for h in range(H):
            x, a, b = zeta.states[h], zeta.a_actions[h], zeta.b_actions[h]
            visit_vals[h][s] = fc.layers[h][:, x, a, b]
            rewards[s, h] = zeta.rewards[h]
            next_states[s, h] = zeta.states[h + 1] if h + 1 < H else 0
    losses = _booster_losses_from_history(fc, mu, visit_vals, rewards, next_states)
    unary = -lam * response_values(fc.layers[0], mu.probs[0])[:, initial_state]
    return PosteriorChain(
        unary_log_weight=unary,
        pair_log_potentials=_conditional_potentials(fc, losses, eta),
    )


def booster_posterior_from_ledger(
    fc: FunctionClass, mu: MarkovPolicy, ledger: LossLedger, eta: float, lam: float
) -> PosteriorChain:
    """Same as build_booster_posterior, served from the ledger's visit buffers."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if fc is not ledger.fc:
        raise ValueError("ledger is bound to a different function class")
    losses = _booster_losses_from_history(
        fc, mu,
        [ledger.visit_values(h) for h in range(fc.horizon)],
        ledger.rewards(), ledger.next_states(),
    )
    unary = -lam * response_values(fc.layers[0], mu.probs[0])[:, ledger.initial_state]
    return PosteriorChain(
        unary_log_weight=unary,
        pair_log_potentials=_conditional_potentials(fc, losses, eta),
    )


def _draw(logits: np.ndarray, rng: np.random.Generator) -> int:
    p = np.exp(logits - logsumexp(logits))
    p = p / p.sum()
    u = rng.random()
    return int(min(np.searchsorted(np.cumsum(p), u, side="right"), len(p) - 1))


def sample_chain(chain: PosteriorChain, rng: np.random.Generator) -> list:
    """Exact joint sample: one candidate index per step, drawn top-down."""
    H = chain.horizon
    indices = [0] * H
    succ = 0  # terminal pseudo-candidate
    for h in reversed(range(H)):
        logits = chain.messages[h] + chain.pair_log_potentials[h][:, succ]
        succ = _draw(logits, rng)
        indices[h] = succ
    return indices


def sample_chain_batch(chain: PosteriorChain, rng: np.random.Generator, size: int) -> np.ndarray:
    """Vectorized exact sampling; returns (size, H) index array."""
    H = chain.horizon
    out = np.zeros((size, H), dtype=int)
    succ = np.zeros(size, dtype=int)
    for h in reversed(range(H)):
        logits = chain.messages[h][:, None] + chain.pair_log_potentials[h]  # (K_h, K_next)
        logits = logits - logsumexp(logits, axis=0, keepdims=True)
        cdf = np.cumsum(np.exp(logits), axis=0)  # per successor column
        cdf[-1, :] = 1.0  # guard the u ~ 1 edge against rounding
        u = rng.random(size)
        picks = (u[:, None] < cdf.T[succ]).argmax(axis=1)
        succ = picks
        out[:, h] = picks
    return out


def enumerate_posterior(fc: FunctionClass, chain: PosteriorChain, cap: int = ENUM_CAP) -> list:
    """Exhaustive normalized joint: list of (index tuple, log probability)."""
    sizes = chain.sizes
    total = int(np.prod(sizes))
    if total > cap:
        raise ValueError(f"joint has {total} atoms, over the cap of {cap}")
    atoms = []
    for combo in itertools.product(*(range(k) for k in sizes)):
        atoms.append((combo, chain.log_prob(combo)))
    return atoms
