"""Seeded benchmark game generators: random tabular and valid linear games.

Linear instances keep their kernels valid by construction: features live in
the probability simplex and the per-dimension anchors are next-state
distributions, so the induced kernel is a simplex mixture (sufficient, not
necessary, but it never needs rejection sampling).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .function_class import FunctionClass, QFunction, induce_policy
from .game import TabularMG
from .oracle import best_response, solve_nash


def gen_random_tabular(
    H: int, num_states: int, num_a: int, num_b: int,
    *, reward_sparsity: float = 0.0, seed: int = 0,
) -> TabularMG:
    """Rewards i.i.d. uniform (optionally zeroed at the given rate); Dirichlet rows."""
    if min(H, num_states, num_a, num_b) <= 0:
        raise ValueError("all dimensions must be positive")
    rng = np.random.default_rng(seed)
    reward = rng.random((H, num_states, num_a, num_b))
    if reward_sparsity > 0.0:
        reward[rng.random(reward.shape) < reward_sparsity] = 0.0
    transition = rng.dirichlet(
        np.ones(num_states), size=(H, num_states, num_a, num_b)
    )
    return TabularMG(reward=reward, transition=transition, initial_state=0)


@dataclass(eq=False)
class LinearMGSpec:
    """Feature map, reward parameters and next-state anchors behind a linear game."""

    d: int
    phi: np.ndarray  # (H, X, A, B, d), rows in the probability simplex
    theta: np.ndarray  # (H, d)
    anchors: np.ndarray  # (H, d, X), each a next-state distribution

    def materialize_reward(self) -> np.ndarray:
        return np.einsum("hxabd,hd->hxab", self.phi, self.theta)

    def materialize_transition(self) -> np.ndarray:
        return np.einsum("hxabd,hdy->hxaby", self.phi, self.anchors)

    def to_dict(self) -> dict:
        return {"d": self.d, "phi": self.phi.tolist(), "theta": self.theta.tolist(),
                "anchors": self.anchors.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearMGSpec":
        return cls(d=int(d["d"]), phi=np.asarray(d["phi"], dtype=float),
                   theta=np.asarray(d["theta"], dtype=float),
                   anchors=np.asarray(d["anchors"], dtype=float))


def gen_linear_mg(
    H: int, num_states: int, num_a: int, num_b: int, d: int,
    *, seed: int = 0, one_hot: bool = False,
) -> tuple[TabularMG, LinearMGSpec]:
    """Valid linear game plus its spec; materialized so every oracle applies.

    With one_hot=True (requires d == X*A*B) each cell gets its own feature
    coordinate, the identity embedding of a tabular game.
    """
    if min(H, num_states, num_a, num_b, d) <= 0:
        raise ValueError("all dimensions must be positive")
    cells = num_states * num_a * num_b
    if d > cells:
        raise ValueError(f"d = {d} exceeds the {cells} cells of the game")
    if one_hot and d != cells:
        raise ValueError("one-hot features require d == X*A*B")
    rng = np.random.default_rng(seed)
    if one_hot:
        phi = np.tile(np.eye(d).reshape(num_states, num_a, num_b, d), (H, 1, 1, 1, 1))
    else:
        phi = rng.dirichlet(np.ones(d), size=(H, num_states, num_a, num_b))
    anchors = rng.dirichlet(np.ones(num_states), size=(H, d))
    theta = rng.random((H, d))
    spec = LinearMGSpec(d=d, phi=phi, theta=theta, anchors=anchors)

    reward = spec.materialize_reward()
    # Simplex features with theta in [0,1]^d keep rewards in [0,1] already;
    # rescale defensively rather than ever failing on rounding.
    top = reward.max()
    if top > 1.0:
        spec.theta = theta / top
        reward = spec.materialize_reward()
    mg = TabularMG(reward=reward, transition=spec.materialize_transition(),
                   initial_state=0)
    return mg, spec


def benchmark_two_state(seed: int = 20240) -> tuple[TabularMG, FunctionClass]:
    """Fixed 2-state, 2x2-action, horizon-2 benchmark with a 4-member class.

    Each layer holds the exact equilibrium tables, the best response to a
    perturbed seed's induced policy, and perturbed seeds (at the last step the
    best-response table coincides with the equilibrium one, so an extra seed
    keeps the per-layer count at four distinct members).
    """
    mg = gen_random_tabular(2, 2, 2, 2, seed=seed)
    nash = solve_nash(mg)
    beta = mg.horizon + 1.0
    rng = np.random.default_rng(seed + 1)

    def perturbed() -> np.ndarray:
        return nash.q_star * (0.55 + 0.3 * rng.random(nash.q_star.shape))

    s1, s2, s3 = perturbed(), perturbed(), perturbed()
    br = best_response(mg, induce_policy(QFunction(layers=s1, beta=beta)).mu).q_br
    layer_lists = [
        [nash.q_star[0], br[0], s1[0], s2[0]],
        [nash.q_star[1], s1[1], s2[1], s3[1]],  # br[1] == q_star[1] exactly
    ]
    return mg, FunctionClass.from_layer_lists(layer_lists, beta=beta)
