"""Ground-truth computations: Nash values, best responses, Bellman backups.

These are simulator-side oracles. The learner never sees them; the harness
uses them to evaluate executed policies exactly (no Monte-Carlo anywhere).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .game import MarkovPolicy, TabularMG
from .matrix_game import solve_matrix_game


@dataclass(eq=False)
class NashSolution:
    """Equilibrium tables: q_star (H,X,A,B), v_star (H,X) and a policy pair."""

    q_star: np.ndarray
    v_star: np.ndarray
    mu_star: MarkovPolicy
    nu_star: MarkovPolicy

    def value_at(self, x: int) -> float:
        return float(self.v_star[0, x])


@dataclass(eq=False)
class BestResponseSolution:
    """Value of one player's fixed policy against the other's best response.

    response is the responding player's deterministic policy (opposite side of
    the fixed input policy).
    """

    q_br: np.ndarray
    v_br: np.ndarray
    response: MarkovPolicy


def solve_nash(mg: TabularMG) -> NashSolution:
    """Backward induction solving one matrix game per (step, state)."""
    H, X = mg.horizon, mg.num_states
    q = np.zeros((H, X, mg.num_a, mg.num_b))
    v = np.zeros((H, X))
    mu = np.zeros((H, X, mg.num_a))
    nu = np.zeros((H, X, mg.num_b))
    v_next = np.zeros(X)
    for h in reversed(range(H)):
        q[h] = mg.reward[h] + mg.transition[h] @ v_next
        for x in range(X):
            sol = solve_matrix_game(q[h, x])
            v[h, x] = sol.value
            mu[h, x] = sol.row_strategy
            nu[h, x] = sol.col_strategy
        v_next = v[h]
    return NashSolution(
        q_star=q,
        v_star=v,
        mu_star=MarkovPolicy(side="max", probs=mu),
        nu_star=MarkovPolicy(side="min", probs=nu),
    )


def best_response(mg: TabularMG, policy: MarkovPolicy) -> BestResponseSolution:
    """Exact best response to a fixed policy of either player.

    For a fixed max-player policy the min player faces an MDP whose action
    value at each state is the mu-averaged column; ties broken by lowest
    action index. The min-player case is symmetric.
    """
    H, X = mg.horizon, mg.num_states
    if policy.side == "max":
        if policy.probs.shape != (H, X, mg.num_a):
            raise ValueError("policy dimensions mismatch game")
        n_resp = mg.num_b
    else:
        if policy.probs.shape != (H, X, mg.num_b):
            raise ValueError("policy dimensions mismatch game")
        n_resp = mg.num_a

    q = np.zeros((H, X, mg.num_a, mg.num_b))
    v = np.zeros((H, X))
    resp = np.zeros((H, X, n_resp))
    v_next = np.zeros(X)
    for h in reversed(range(H)):
        q[h] = mg.reward[h] + mg.transition[h] @ v_next
        if policy.side == "max":
            avg = np.einsum("xa,xab->xb", policy.probs[h], q[h])
            best = np.argmin(avg, axis=1)
        else:
            avg = np.einsum("xb,xab->xa", policy.probs[h], q[h])
            best = np.argmax(avg, axis=1)
        v[h] = avg[np.arange(X), best]
        resp[h, np.arange(X), best] = 1.0
        v_next = v[h]
    side = "min" if policy.side == "max" else "max"
    return BestResponseSolution(q_br=q, v_br=v, response=MarkovPolicy(side=side, probs=resp))


def max_min_values(layer: np.ndarray) -> np.ndarray:
    """Per-state maximin value of an (X, A, B) action-value layer."""
    layer = np.asarray(layer, dtype=float)
    return np.array([solve_matrix_game(layer[x]).value for x in range(layer.shape[0])])


def response_values(layer: np.ndarray, mu_probs_h: np.ndarray) -> np.ndarray:
    """Per-state min over pure columns of the mu-averaged layer.

    layer is (X, A, B) or (K, X, A, B); mu_probs_h is the (X, A) policy slice
    at the layer's step. The minimum of a linear function over the simplex is
    attained at a vertex, so no LP is needed.
    """
    layer = np.asarray(layer, dtype=float)
    if layer.ndim == 3:
        return np.einsum("xa,xab->xb", mu_probs_h, layer).min(axis=-1)
    return np.einsum("xa,kxab->kxb", mu_probs_h, layer).min(axis=-1)


def pure_minimizer_policy(layers: np.ndarray, mu: MarkovPolicy) -> MarkovPolicy:
    """Per-state pure column minimizing the mu-averaged (H, X, A, B) layers.

    Ties break toward the lowest column index, keeping the construction a
    deterministic function of (layers, mu).
    """
    layers = np.asarray(layers, dtype=float)
    H, X, _, n_b = layers.shape
    probs = np.zeros((H, X, n_b))
    for h in range(H):
        avg = np.einsum("xa,xab->xb", mu.probs[h], layers[h])
        cols = np.argmin(avg, axis=1)
        probs[h, np.arange(X), cols] = 1.0
    return MarkovPolicy(side="min", probs=probs)


def bellman_apply(mg: TabularMG, f_next: np.ndarray | None, h: int) -> np.ndarray:
    """One-step backup of the next layer's maximin values: r_h + P_h V_{f,h+1}.

    f_next is the (X, A, B) layer at step h+1, or None for the terminal zero
    layer.
    """
    if f_next is None:
        return mg.reward[h].copy()
    v_next = max_min_values(f_next)
    return mg.reward[h] + mg.transition[h] @ v_next


def bellman_apply_mu(
    mg: TabularMG, f_next: np.ndarray | None, mu: MarkovPolicy, h: int
) -> np.ndarray:
    """One-step backup of the next layer's fixed-mu min values.

    Uses mu at step h+1 (the step the next layer lives at); the terminal layer
    (f_next None) needs no policy.
    """
    if f_next is None:
        return mg.reward[h].copy()
    if h + 1 >= mg.horizon:
        raise ValueError("non-terminal next layer supplied at the last step")
    v_next = response_values(f_next, mu.probs[h + 1])
    return mg.reward[h] + mg.transition[h] @ v_next
