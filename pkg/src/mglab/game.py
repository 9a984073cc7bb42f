"""Episodic two-player zero-sum Markov games.

The model is fully tabular: a horizon-H game over finite states, with the
max-player picking rows and the min-player picking columns of a per-state
reward matrix, and a joint transition kernel indexed by (step, state, a, b).
Everything downstream (oracles, posteriors, diagnostics) works off the exact
tables held here, so validation is strict and fails fast instead of
renormalizing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_ATOL = 1e-12
OCC_ATOL = 1e-10


@dataclass(eq=False)
class TabularMG:
    """Episodic zero-sum Markov game with deterministic rewards in [0, 1].

    reward:     (H, X, A, B) array.
    transition: (H, X, A, B, X) array; the last axis is the next-state
                distribution.
    """

    reward: np.ndarray
    transition: np.ndarray
    initial_state: int

    def __post_init__(self):
        self.reward = np.ascontiguousarray(np.asarray(self.reward, dtype=float))
        self.transition = np.ascontiguousarray(np.asarray(self.transition, dtype=float))
        if self.reward.ndim != 4:
            raise ValueError(f"reward must be (H, X, A, B), got shape {self.reward.shape}")
        if self.transition.shape != self.reward.shape + (self.reward.shape[1],):
            raise ValueError(
                f"transition shape {self.transition.shape} does not extend "
                f"reward shape {self.reward.shape}"
            )
        if np.any(self.reward < 0.0) or np.any(self.reward > 1.0):
            raise ValueError("rewards must lie in [0, 1]")
        if np.any(self.transition < 0.0):
            raise ValueError("transition table has negative entries")
        sums = self.transition.sum(axis=-1)
        if np.max(np.abs(sums - 1.0)) > PROB_ATOL:
            worst = np.unravel_index(np.argmax(np.abs(sums - 1.0)), sums.shape)
            raise ValueError(f"transition row {worst} sums to {sums[worst]!r}, not 1")
        if not (0 <= self.initial_state < self.num_states):
            raise ValueError(f"initial_state {self.initial_state} out of range")
        self.initial_state = int(self.initial_state)
        self.reward.flags.writeable = False
        self.transition.flags.writeable = False

    @property
    def horizon(self) -> int:
        return self.reward.shape[0]

    @property
    def num_states(self) -> int:
        return self.reward.shape[1]

    @property
    def num_a(self) -> int:
        return self.reward.shape[2]

    @property
    def num_b(self) -> int:
        return self.reward.shape[3]

    def num_actions(self, side: str) -> int:
        return self.num_a if side == "max" else self.num_b

    def to_dict(self) -> dict:
        return {
            "H": self.horizon,
            "num_states": self.num_states,
            "num_a": self.num_a,
            "num_b": self.num_b,
            "initial_state": self.initial_state,
            "reward": self.reward.tolist(),
            "transition": self.transition.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TabularMG":
        mg = cls(
            reward=np.asarray(d["reward"], dtype=float),
            transition=np.asarray(d["transition"], dtype=float),
            initial_state=int(d["initial_state"]),
        )
        declared = (d["H"], d["num_states"], d["num_a"], d["num_b"])
        actual = (mg.horizon, mg.num_states, mg.num_a, mg.num_b)
        if tuple(int(v) for v in declared) != actual:
            raise ValueError(f"declared dims {declared} do not match tables {actual}")
        return mg


@dataclass(eq=False)
class MarkovPolicy:
    """Per-step per-state action distribution for one player.

    side is "max" (row player) or "min" (column player); probs is (H, X, n)
    where n is that player's action count.
    """

    side: str
    probs: np.ndarray

    def __post_init__(self):
        if self.side not in ("max", "min"):
            raise ValueError(f"side must be 'max' or 'min', got {self.side!r}")
        self.probs = np.ascontiguousarray(np.asarray(self.probs, dtype=float))
        if self.probs.ndim != 3:
            raise ValueError(f"probs must be (H, X, n), got shape {self.probs.shape}")
        if np.any(self.probs < 0.0):
            raise ValueError("policy has negative probabilities")
        sums = self.probs.sum(axis=-1)
        if np.max(np.abs(sums - 1.0)) > PROB_ATOL:
            worst = np.unravel_index(np.argmax(np.abs(sums - 1.0)), sums.shape)
            raise ValueError(f"policy row {worst} sums to {sums[worst]!r}, not 1")
        self.probs.flags.writeable = False

    @property
    def horizon(self) -> int:
        return self.probs.shape[0]

    @property
    def num_states(self) -> int:
        return self.probs.shape[1]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[2]

    @classmethod
    def uniform(cls, mg: TabularMG, side: str) -> "MarkovPolicy":
        n = mg.num_actions(side)
        probs = np.full((mg.horizon, mg.num_states, n), 1.0 / n)
        return cls(side=side, probs=probs)

    @classmethod
    def pure(cls, mg: TabularMG, side: str, actions: np.ndarray) -> "MarkovPolicy":
        """Point-mass policy from an (H, X) table of action indices."""
        actions = np.asarray(actions, dtype=int)
        n = mg.num_actions(side)
        probs = np.zeros((mg.horizon, mg.num_states, n))
        h_idx, x_idx = np.indices(actions.shape)
        probs[h_idx, x_idx, actions] = 1.0
        return cls(side=side, probs=probs)


def _check_dims(mg: TabularMG, mu: MarkovPolicy, nu: MarkovPolicy) -> None:
    if mu.side != "max" or nu.side != "min":
        raise ValueError(f"expected (max, min) policy pair, got ({mu.side}, {nu.side})")
    if mu.probs.shape != (mg.horizon, mg.num_states, mg.num_a):
        raise ValueError(f"max policy shape {mu.probs.shape} mismatches game")
    if nu.probs.shape != (mg.horizon, mg.num_states, mg.num_b):
        raise ValueError(f"min policy shape {nu.probs.shape} mismatches game")


@dataclass(eq=False)
class Trajectory:
    """One executed episode: states, both action streams, realized rewards."""

    states: np.ndarray
    a_actions: np.ndarray
    b_actions: np.ndarray
    rewards: np.ndarray
    episode: int = 0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=int)
        self.a_actions = np.asarray(self.a_actions, dtype=int)
        self.b_actions = np.asarray(self.b_actions, dtype=int)
        self.rewards = np.asarray(self.rewards, dtype=float)
        n = len(self.states)
        for name in ("a_actions", "b_actions", "rewards"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length mismatches states")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def steps(self):
        """List of (x, a, b, r) tuples, one per step."""
        return list(zip(self.states.tolist(), self.a_actions.tolist(),
                        self.b_actions.tolist(), self.rewards.tolist()))


@dataclass(eq=False)
class OccupancyMeasure:
    """Exact per-step visitation distribution over (x, a, b)."""

    dist: np.ndarray  # (H, X, A, B)

    def __post_init__(self):
        self.dist = np.asarray(self.dist, dtype=float)
        sums = self.dist.reshape(self.dist.shape[0], -1).sum(axis=1)
        if np.any(self.dist < -OCC_ATOL) or np.max(np.abs(sums - 1.0)) > OCC_ATOL:
            raise ValueError("occupancy is not a per-step probability table")

    def expect(self, tables: np.ndarray) -> np.ndarray:
        """Per-step expectation of an (H, X, A, B) table under the occupancy."""
        return np.einsum("hxab,hxab->h", self.dist, tables)


def sample_episode(
    mg: TabularMG, mu: MarkovPolicy, nu: MarkovPolicy, rng: np.random.Generator,
    episode: int = 0,
) -> Trajectory:
    """Ancestral sampling of one episode from the fixed initial state."""
    _check_dims(mg, mu, nu)
    H = mg.horizon
    xs = np.empty(H, dtype=int)
    aa = np.empty(H, dtype=int)
    bb = np.empty(H, dtype=int)
    rr = np.empty(H, dtype=float)
    x = mg.initial_state
    for h in range(H):
        a = int(rng.choice(mg.num_a, p=mu.probs[h, x]))
        b = int(rng.choice(mg.num_b, p=nu.probs[h, x]))
        xs[h], aa[h], bb[h] = x, a, b
        rr[h] = mg.reward[h, x, a, b]
        x = int(rng.choice(mg.num_states, p=mg.transition[h, x, a, b]))
    return Trajectory(states=xs, a_actions=aa, b_actions=bb, rewards=rr, episode=episode)


def compute_occupancy(mg: TabularMG, mu: MarkovPolicy, nu: MarkovPolicy) -> OccupancyMeasure:
    """Exact forward recursion for the visitation distribution of (mu, nu)."""
    _check_dims(mg, mu, nu)
    H, X = mg.horizon, mg.num_states
    dist = np.zeros((H, X, mg.num_a, mg.num_b))
    d_state = np.zeros(X)
    d_state[mg.initial_state] = 1.0
    for h in range(H):
        joint = np.einsum("x,xa,xb->xab", d_state, mu.probs[h], nu.probs[h])
        dist[h] = joint
        d_state = np.einsum("xab,xaby->y", joint, mg.transition[h])
    return OccupancyMeasure(dist=dist)


def policy_value(mg: TabularMG, mu: MarkovPolicy, nu: MarkovPolicy) -> np.ndarray:
    """Exact state values V[h, x] for the pair (mu, nu) via backward recursion."""
    _check_dims(mg, mu, nu)
    H, X = mg.horizon, mg.num_states
    V = np.zeros((H, X))
    v_next = np.zeros(X)
    for h in reversed(range(H)):
        q = mg.reward[h] + mg.transition[h] @ v_next
        V[h] = np.einsum("xa,xab,xb->x", mu.probs[h], q, nu.probs[h])
        v_next = V[h]
    return V
