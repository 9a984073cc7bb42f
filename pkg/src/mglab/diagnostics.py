"""Numerical verification of the analytical machinery on executed runs.

Every expectation here is taken under exact occupancy measures, never
rollouts: the identities being checked are exact statements and get exact
checks. The decoupling inequality is certified on realized run traces (the
definition's supremum over all candidate sequences has no finite procedure;
the realized-trace check is its falsifiable projection and is labeled as
such in reports).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .function_class import FunctionClass, QFunction, induce_policy
from .game import MarkovPolicy, TabularMG, compute_occupancy, policy_value
from .matrix_game import solve_matrix_game
from .oracle import (
    NashSolution,
    bellman_apply,
    bellman_apply_mu,
    best_response,
    pure_minimizer_policy,
    response_values,
    solve_nash,
)
from .selfplay import RunArtifacts

DC_MU_GRID = (0.1, 0.25, 0.5, 1.0)


class DiagnosticError(AssertionError):
    """A checked identity or bound failed outside tolerance."""


@dataclass(eq=False)
class ResidualReport:
    """Per-(h,x,a,b) one-step backup residuals of a candidate function."""

    tables: np.ndarray  # (H, X, A, B)

    def expectation(self, occupancy) -> np.ndarray:
        """Per-step expected residual under an occupancy measure."""
        return occupancy.expect(self.tables)


def residuals(mg: TabularMG, f: QFunction, mu: MarkovPolicy | None = None) -> ResidualReport:
    """Residual of each layer against the backup of its successor.

    With mu None the backup uses the successor's maximin values; otherwise
    the fixed-mu response values.
    """
    H = f.horizon
    tables = np.zeros_like(f.layers)
    for h in range(H):
        nxt = f.layers[h + 1] if h + 1 < H else None
        if mu is None:
            backup = bellman_apply(mg, nxt, h)
        else:
            backup = bellman_apply_mu(mg, nxt, mu, h)
        tables[h] = f.layers[h] - backup
    return ResidualReport(tables=tables)


@dataclass(eq=False)
class GapBoundCheck:
    lhs: float
    rhs: float
    slack: float  # rhs - lhs; the bound holds when slack >= -tol

    def ok(self, tol: float = 1e-8) -> bool:
        return self.slack >= -tol


def check_main_value_bound(
    mg: TabularMG, f: QFunction, nu: MarkovPolicy, nash: NashSolution | None = None
) -> GapBoundCheck:
    """Equilibrium-vs-executed value gap against the residual decomposition.

    With mu the policy induced by f and nu arbitrary, the gap
    V*(x1) - V^{mu,nu}(x1) is bounded by the summed expected residuals of f
    under the executed occupancy plus the optimism shortfall
    V*(x1) - V_{f,1}(x1).
    """
    nash = solve_nash(mg) if nash is None else nash
    bundle = induce_policy(f)
    mu = bundle.mu
    x1 = mg.initial_state
    v_star = float(nash.v_star[0, x1])
    lhs = v_star - float(policy_value(mg, mu, nu)[0, x1])
    occ = compute_occupancy(mg, mu, nu)
    res = residuals(mg, f)
    rhs = float(res.expectation(occ).sum()) + v_star - bundle.value_at(x1)
    return GapBoundCheck(lhs=lhs, rhs=rhs, slack=rhs - lhs)


@dataclass(eq=False)
class IdentityCheck:
    lhs: float
    rhs: float

    @property
    def abs_diff(self) -> float:
        return abs(self.lhs - self.rhs)

    def ok(self, tol: float = 1e-8) -> bool:
        return self.abs_diff <= tol


def check_booster_value_identity(
    mg: TabularMG, f: QFunction, g: QFunction,
    mu: MarkovPolicy | None = None, nu: MarkovPolicy | None = None,
) -> IdentityCheck:
    """Executed-vs-best-response value gap as an exact residual identity.

    mu defaults to the policy induced by f and nu to the per-state pure
    minimizer of the mu-averaged g (the booster's construction; replayed runs
    pass their recorded policies instead, so corrupted artifacts break the
    equality). The gap V^{mu,nu} - V^{mu,dagger} equals the negated summed
    expected response residuals of g plus V^mu_{g,1}(x1) - V^{mu,dagger}(x1),
    exactly.
    """
    mu = induce_policy(f).mu if mu is None else mu
    nu = pure_minimizer_policy(g.layers, mu) if nu is None else nu
    x1 = mg.initial_state
    v_exec = float(policy_value(mg, mu, nu)[0, x1])
    v_dag = float(best_response(mg, mu).v_br[0, x1])
    lhs = v_exec - v_dag
    occ = compute_occupancy(mg, mu, nu)
    res = residuals(mg, g, mu=mu)
    v_g_mu = float(response_values(g.layers[0], mu.probs[0])[x1])
    rhs = -float(res.expectation(occ).sum()) + v_g_mu - v_dag
    return IdentityCheck(lhs=lhs, rhs=rhs)


@dataclass(eq=False)
class MomentCheck:
    mean: float
    second_moment: float
    residual_sq: float


def excess_loss_moments(
    mg: TabularMG, f: QFunction, h: int, x: int, a: int, b: int,
    mu: MarkovPolicy | None = None, tol: float = 1e-10,
) -> MomentCheck:
    """Exact next-state moments of the excess squared loss at one cell.

    The excess loss subtracts the noise-only squared error from the realized
    squared error; its conditional mean must equal the squared residual and
    its second moment is bounded by (4 beta^2 / 3) times that. Violations
    raise DiagnosticError.
    """
    H = f.horizon
    nxt = f.layers[h + 1] if h + 1 < H else None
    if nxt is None:
        v_next = np.zeros(mg.num_states)
    elif mu is None:
        v_next = np.array([solve_matrix_game(nxt[y]).value for y in range(mg.num_states)])
    else:
        v_next = response_values(nxt, mu.probs[h + 1])
    r = mg.reward[h, x, a, b]
    z = f.layers[h, x, a, b] - r - v_next  # (X,) over successor states
    p = mg.transition[h, x, a, b]
    residual = float(p @ z)
    delta = z**2 - (z - residual) ** 2
    mean = float(p @ delta)
    second = float(p @ delta**2)
    res_sq = residual**2
    if abs(mean - res_sq) > tol:
        raise DiagnosticError(f"excess-loss mean {mean} != residual^2 {res_sq}")
    bound = (4.0 * f.beta**2 / 3.0) * res_sq
    if second > bound + tol:
        raise DiagnosticError(f"excess-loss second moment {second} exceeds {bound}")
    return MomentCheck(mean=mean, second_moment=second, residual_sq=res_sq)


@dataclass(eq=False)
class DcTrace:
    """Realized-trace decoupling terms.

    lhs_term[t, h] is the step-h expected response residual of episode t's
    sampled candidate under episode t's own occupancy; rhs_inner[t, h] is the
    sum over earlier episodes s of the squared expectation of that same
    residual under episode s's occupancy.
    """

    lhs_term: np.ndarray  # (T, H)
    rhs_inner: np.ndarray  # (T, H)

    @property
    def lhs_total(self) -> float:
        return float(self.lhs_term.sum())

    @property
    def rhs_total(self) -> float:
        return float(self.rhs_inner.sum())


def dc_trace(artifacts: RunArtifacts) -> DcTrace:
    """Exact decoupling-trace terms for one recorded run."""
    if not artifacts.episodes:
        raise ValueError("run artifacts hold no episodes")
    mg, fc = artifacts.mg, artifacts.fc
    T = len(artifacts.episodes)
    H = mg.horizon
    flat = mg.num_states * mg.num_a * mg.num_b
    occ = np.zeros((T, H, flat))
    for s, ep in enumerate(artifacts.episodes):
        occ[s] = compute_occupancy(mg, ep.mu, ep.nu).dist.reshape(H, -1)
    lhs = np.zeros((T, H))
    rhs = np.zeros((T, H))
    for t, ep in enumerate(artifacts.episodes):
        g = fc.member(ep.g_indices)
        res = residuals(mg, g, mu=ep.mu).tables.reshape(H, -1)
        dots = np.einsum("shf,hf->sh", occ, res)  # all-episode expectations
        lhs[t] = dots[t]
        rhs[t] = (dots[:t] ** 2).sum(axis=0)
    return DcTrace(lhs_term=lhs, rhs_inner=rhs)


def check_decoupling(trace: DcTrace, K: float, mu_values=DC_MU_GRID) -> dict:
    """Certify lhs_total <= mu * rhs_total + K/(4 mu) at each trade-off mu."""
    out = {}
    for mu in mu_values:
        bound = mu * trace.rhs_total + K / (4.0 * mu)
        out[mu] = {"ok": bool(trace.lhs_total <= bound), "bound": bound,
                   "lhs": trace.lhs_total}
    return out


def dc_bound_linear(d: int, H: int, T: int) -> float:
    """Decoupling bound 2 d H (2 + ln(2 H T)) for d-dimensional linear games."""
    if d <= 0 or H <= 0 or T <= 0:
        raise ValueError("d, H, T must be positive")
    return 2.0 * d * H * (2.0 + math.log(2.0 * H * T))


def elliptical_potential_check(vectors, Lambda0: np.ndarray, tol: float = 1e-9) -> tuple:
    """Log-det sandwich for bounded feature sequences.

    Returns (log_det_ratio, quad_sum, ok) where quad_sum accumulates
    phi_i^T Lambda_{i-1}^{-1} phi_i; the sandwich asserts
    log_det_ratio <= quad_sum <= 2 log_det_ratio.
    """
    Lambda0 = np.asarray(Lambda0, dtype=float)
    eigs = np.linalg.eigvalsh(Lambda0)
    if eigs.min() < 1.0 - 1e-12:
        raise ValueError("Lambda0 must have smallest eigenvalue >= 1")
    lam = Lambda0.copy()
    quad = 0.0
    for phi in vectors:
        phi = np.asarray(phi, dtype=float)
        if np.linalg.norm(phi) > 1.0 + 1e-12:
            raise ValueError("feature vectors must have norm <= 1")
        quad += float(phi @ np.linalg.solve(lam, phi))
        lam = lam + np.outer(phi, phi)
    sign0, logdet0 = np.linalg.slogdet(Lambda0)
    sign1, logdet1 = np.linalg.slogdet(lam)
    ratio = float(logdet1 - logdet0)
    ok = (ratio <= quad + tol) and (quad <= 2.0 * ratio + tol)
    return ratio, quad, ok
