"""Finite action-value function classes with priors.

A class is a product over steps: at each step h it holds a finite list of
candidate (X, A, B) layers together with positive prior weights. Per-layer
maximin solutions (value and row strategy per state) are cached once and
reused by induced policies, posterior construction and the complexity
computation below.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .game import MarkovPolicy, TabularMG
from .matrix_game import solve_matrix_game
from .oracle import best_response, response_values, solve_nash

log = logging.getLogger(__name__)

PRIOR_ATOL = 1e-12
BOUND_ATOL = 1e-9


def _check_bounds(layers: np.ndarray, beta: float, what: str) -> None:
    lo, hi = float(np.min(layers)), float(np.max(layers))
    if lo < -BOUND_ATOL or hi > beta - 1.0 + BOUND_ATOL:
        raise ValueError(f"{what} entries [{lo}, {hi}] escape [0, {beta - 1.0}]")


@dataclass(eq=False)
class QFunction:
    """One candidate action-value function: (H, X, A, B) layers bounded by beta-1."""

    layers: np.ndarray
    beta: float

    def __post_init__(self):
        self.layers = np.ascontiguousarray(np.asarray(self.layers, dtype=float))
        if self.layers.ndim != 4:
            raise ValueError(f"layers must be (H, X, A, B), got {self.layers.shape}")
        if not self.beta > 1.0:
            raise ValueError("beta must exceed 1")
        _check_bounds(self.layers, self.beta, "QFunction")

    @property
    def horizon(self) -> int:
        return self.layers.shape[0]


@dataclass(eq=False)
class InducedPolicyBundle:
    """Maximin policy of a candidate function plus its per-state game values."""

    mu: MarkovPolicy
    values: np.ndarray  # (H, X)
    solutions: list  # per (h, x) MatrixGameSolution, row-major

    def value_at(self, x: int) -> float:
        return float(self.values[0, x])


@dataclass(eq=False)
class FunctionClass:
    """Per-step finite candidate sets with prior weights.

    layers[h] is (K_h, X, A, B); prior[h] is (K_h,) with positive entries
    summing to one.
    """

    layers: list
    prior: list
    beta: float

    def __post_init__(self):
        if not self.beta > 1.0:
            raise ValueError("beta must exceed 1")
        self.layers = [np.ascontiguousarray(np.asarray(l, dtype=float)) for l in self.layers]
        self.prior = [np.asarray(p, dtype=float) for p in self.prior]
        if len(self.layers) != len(self.prior):
            raise ValueError("layers and prior disagree on the horizon")
        shape = None
        for h, (tables, p) in enumerate(zip(self.layers, self.prior)):
            if tables.ndim != 4:
                raise ValueError(f"layer set {h} must be (K, X, A, B)")
            if shape is None:
                shape = tables.shape[1:]
            elif tables.shape[1:] != shape:
                raise ValueError("layer sets disagree on (X, A, B) dimensions")
            if p.shape != (tables.shape[0],):
                raise ValueError(f"prior {h} has wrong length")
            if np.any(p <= 0.0) or abs(p.sum() - 1.0) > PRIOR_ATOL:
                raise ValueError(f"prior {h} must be positive and sum to 1")
            _check_bounds(tables, self.beta, f"layer set {h}")

    @property
    def horizon(self) -> int:
        return len(self.layers)

    @property
    def sizes(self) -> tuple:
        return tuple(t.shape[0] for t in self.layers)

    @property
    def num_states(self) -> int:
        return self.layers[0].shape[1]

    def log_size(self) -> float:
        return float(sum(math.log(k) for k in self.sizes))

    @cached_property
    def layer_values(self) -> list:
        """Per h: (K_h, X) maximin game values of every candidate layer."""
        return [
            np.array([[solve_matrix_game(tab[x]).value for x in range(tab.shape[0])]
                      for tab in self.layers[h]])
            for h in range(self.horizon)
        ]

    @cached_property
    def layer_rows(self) -> list:
        """Per h: (K_h, X, A) maximin row strategies of every candidate layer."""
        out = []
        for h in range(self.horizon):
            tabs = self.layers[h]
            rows = np.zeros(tabs.shape[:3])
            for k in range(tabs.shape[0]):
                for x in range(tabs.shape[1]):
                    rows[k, x] = solve_matrix_game(tabs[k, x]).row_strategy
            out.append(rows)
        return out

    def member(self, indices) -> QFunction:
        """Assemble a full candidate from one index per step."""
        indices = list(indices)
        if len(indices) != self.horizon:
            raise ValueError("need one index per step")
        stacked = np.stack([self.layers[h][indices[h]] for h in range(self.horizon)])
        return QFunction(layers=stacked, beta=self.beta)

    def policy_from_indices(self, indices) -> MarkovPolicy:
        """Induced maximin policy of member(indices), served from the cache."""
        probs = np.stack([self.layer_rows[h][indices[h]] for h in range(self.horizon)])
        return MarkovPolicy(side="max", probs=probs)

    @classmethod
    def singleton(cls, f: QFunction) -> "FunctionClass":
        return cls(
            layers=[f.layers[h][None, ...] for h in range(f.horizon)],
            prior=[np.ones(1) for _ in range(f.horizon)],
            beta=f.beta,
        )

    @classmethod
    def from_layer_lists(cls, layer_lists, beta: float, prior=None) -> "FunctionClass":
        layers = [np.stack(ls) for ls in layer_lists]
        if prior is None:
            prior = [np.full(len(ls), 1.0 / len(ls)) for ls in layer_lists]
        return cls(layers=layers, prior=prior, beta=beta)

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "layers": [t.tolist() for t in self.layers],
            "prior": [p.tolist() for p in self.prior],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FunctionClass":
        return cls(layers=d["layers"], prior=d["prior"], beta=float(d["beta"]))


def induce_policy(f: QFunction) -> InducedPolicyBundle:
    """Solve the per-(step, state) matrix games of f; deterministic given f."""
    H, X = f.layers.shape[:2]
    probs = np.zeros(f.layers.shape[:3])
    values = np.zeros((H, X))
    solutions = []
    for h in range(H):
        for x in range(X):
            sol = solve_matrix_game(f.layers[h, x])
            probs[h, x] = sol.row_strategy
            values[h, x] = sol.value
            solutions.append(sol)
    return InducedPolicyBundle(
        mu=MarkovPolicy(side="max", probs=probs), values=values, solutions=solutions
    )


def induced_min_value(f_next: np.ndarray, mu: MarkovPolicy, h_next: int, x: int) -> float:
    """Value min over pure columns of the mu-averaged row of f_next at state x.

    f_next is the (X, A, B) layer at step h_next; mu supplies the row
    distribution at that step.
    """
    f_next = np.asarray(f_next, dtype=float)
    row = mu.probs[h_next, x] @ f_next[x]
    return float(row.min())


class KappaResult(NamedTuple):
    kappa: float
    kappa1: float
    offender: tuple | None  # (h, policy_index, value_index) behind an empty set
    offender1: tuple | None


def compute_kappa(mg: TabularMG, fc: FunctionClass, epsilon: float) -> KappaResult:
    """Negative log prior mass of near-Bellman-consistent candidates, exactly.

    For every step h the candidate sets to measure depend on the next layer
    only: the response-backup residual of (g_h, g_{h+1}) under a policy mu_f
    involves mu at step h+1 alone, and that row is the maximin strategy of
    f_{h+1}. So the suprema over full product members reduce to maxima over
    next-layer candidate pairs (policy source, value source), which this
    enumerates. kappa1 is the same quantity for the maximin backup, where the
    pair collapses to the value source alone.

    Empty sets make the result +inf; the first offending (h, i, j) triple is
    reported.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    H = fc.horizon
    kappa = 0.0
    kappa1 = 0.0
    offender = None
    offender1 = None
    for h in range(H):
        cands = fc.layers[h].reshape(fc.sizes[h], -1)  # (K_h, XAB)
        prior = fc.prior[h]
        terminal = h == H - 1
        next_ids = [None] if terminal else list(range(fc.sizes[h + 1]))

        worst = -np.inf
        worst1 = -np.inf
        for j in next_ids:  # value source at h+1
            if terminal:
                t_nash = mg.reward[h].reshape(-1)
            else:
                v_nash = fc.layer_values[h + 1][j]
                t_nash = (mg.reward[h] + mg.transition[h] @ v_nash).reshape(-1)
            sup1 = np.max(np.abs(cands - t_nash), axis=1)
            mass1 = prior[sup1 <= epsilon].sum()
            cost1 = math.inf if mass1 <= 0.0 else -math.log(mass1)
            if cost1 > worst1:
                worst1 = cost1
                if not np.isfinite(cost1) and offender1 is None:
                    offender1 = (h, j, j)

            for i in next_ids:  # policy source at h+1
                if terminal:
                    t_mu = mg.reward[h].reshape(-1)
                else:
                    rows = fc.layer_rows[h + 1][i]
                    v_mu = response_values(fc.layers[h + 1][j], rows)
                    t_mu = (mg.reward[h] + mg.transition[h] @ v_mu).reshape(-1)
                sup = np.max(np.abs(cands - t_mu), axis=1)
                mass = prior[sup <= epsilon].sum()
                cost = math.inf if mass <= 0.0 else -math.log(mass)
                if cost > worst:
                    worst = cost
                    if not np.isfinite(cost) and offender is None:
                        offender = (h, i, j)
        kappa += worst
        kappa1 += worst1
    return KappaResult(kappa=float(kappa), kappa1=float(kappa1),
                       offender=offender, offender1=offender1)


@dataclass(eq=False)
class ClosureResult:
    fc: FunctionClass
    defect: float  # sup-norm distance from the worst response-backup image to the class
    defect_at: tuple | None  # (h, policy_index, value_index) attaining it


def _dedup_key(table: np.ndarray) -> bytes:
    # +0.0 canonicalizes -0.0 so bitwise equality matches numeric equality
    return np.ascontiguousarray(table + 0.0).tobytes()


def build_closure_class(
    mg: TabularMG,
    seeds: list,
    *,
    beta: float | None = None,
    depth: int = 0,
    include_best_responses: bool = True,
    max_members: int = 64,
) -> ClosureResult:
    """Finite class from seeds: exact Nash tables, seed best responses, backups.

    Always contains the exact equilibrium tables. For each seed the best
    response to its induced policy is added; depth extra sweeps add
    response-backup images of current members under seed policies. Duplicates
    are removed by exact table equality. Any member escaping [0, beta-1]
    aborts construction; nothing is clipped silently. The returned defect is
    the worst sup-norm gap between a one-step response-backup image of the
    class and its nearest member, the measured shortfall from closure.
    """
    nash = solve_nash(mg)
    if beta is None:
        beta = mg.horizon + 1.0
    H = mg.horizon

    members = [[] for _ in range(H)]
    seen = [set() for _ in range(H)]

    def add(h: int, table: np.ndarray) -> None:
        table = np.asarray(table, dtype=float)
        _check_bounds(table, beta, f"closure member at step {h}")
        key = _dedup_key(table)
        if key in seen[h]:
            return
        if len(members[h]) >= max_members:
            raise RuntimeError(f"closure exceeded the {max_members}-member cap at step {h}")
        seen[h].add(key)
        members[h].append(table)

    for h in range(H):
        add(h, nash.q_star[h])
    for f in seeds:
        if f.horizon != H:
            raise ValueError("seed horizon mismatches game")
        for h in range(H):
            add(h, f.layers[h])

    policies = [induce_policy(f).mu for f in seeds] if seeds else []
    if include_best_responses:
        for mu in policies:
            br = best_response(mg, mu)
            for h in range(H):
                add(h, br.q_br[h])

    for _ in range(depth):
        snapshot = [list(ms) for ms in members]
        for mu in policies:
            for h in range(H):
                if h == H - 1:
                    add(h, mg.reward[h])
                    continue
                for g_next in snapshot[h + 1]:
                    v = response_values(g_next, mu.probs[h + 1])
                    add(h, mg.reward[h] + mg.transition[h] @ v)

    fc = FunctionClass.from_layer_lists(members, beta=beta)

    # Completeness defect: exact, via next-layer (policy, value) candidate pairs.
    defect = 0.0
    defect_at = None
    for h in range(H):
        flat = fc.layers[h].reshape(fc.sizes[h], -1)
        if h == H - 1:
            images = {(None, None): mg.reward[h].reshape(-1)}
        else:
            images = {}
            for i in range(fc.sizes[h + 1]):
                rows = fc.layer_rows[h + 1][i]
                for j in range(fc.sizes[h + 1]):
                    v = response_values(fc.layers[h + 1][j], rows)
                    images[(i, j)] = (mg.reward[h] + mg.transition[h] @ v).reshape(-1)
        for (i, j), img in images.items():
            gap = float(np.min(np.max(np.abs(flat - img), axis=1)))
            if gap > defect:
                defect = gap
                defect_at = (h, i, j)
    return ClosureResult(fc=fc, defect=defect, defect_at=defect_at)
