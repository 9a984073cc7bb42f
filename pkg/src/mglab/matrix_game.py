"""Exact solver for two-player zero-sum matrix games.

Solves max_mu min_nu mu^T M nu by the standard LP formulation (maximize v
subject to M^T mu >= v, mu in the simplex). The column strategy is read off
the LP duals; if the duals ever fail to certify the value to 1e-9 the column
LP is solved explicitly. HiGHS is deterministic for a fixed input, so the
same matrix always yields the same strategy pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

GAP_TOL = 1e-8
_RESOLVE_TOL = 1e-9


@dataclass(frozen=True)
class MatrixGameSolution:
    value: float
    row_strategy: np.ndarray
    col_strategy: np.ndarray
    gap: float


def _clean_simplex(x: np.ndarray) -> np.ndarray:
    x = np.where(x > 0.0, x, 0.0)
    total = x.sum()
    if not np.isfinite(total) or total <= 0.5:
        raise RuntimeError("LP returned a degenerate strategy")
    return x / total


def _row_lp(M: np.ndarray):
    """LP for the row player; returns (mu, dual column strategy)."""
    m, n = M.shape
    c = np.zeros(m + 1)
    c[-1] = -1.0  # maximize the guaranteed value v
    A_ub = np.hstack([-M.T, np.ones((n, 1))])
    A_eq = np.zeros((1, m + 1))
    A_eq[0, :m] = 1.0
    bounds = [(0.0, None)] * m + [(None, None)]
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(n), A_eq=A_eq, b_eq=np.ones(1),
                  bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"matrix-game LP failed: {res.message}")
    return _clean_simplex(res.x[:m]), res.ineqlin.marginals


def solve_matrix_game(M: np.ndarray) -> MatrixGameSolution:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.size == 0:
        raise ValueError(f"expected a non-empty 2-D payoff matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("payoff matrix has non-finite entries")

    mu, marginals = _row_lp(M)
    try:
        nu = _clean_simplex(-marginals)
    except RuntimeError:
        nu = None
    if nu is None or (M @ nu).max() - (mu @ M).min() > _RESOLVE_TOL:
        # Degenerate duals: solve the column player's own LP on the swapped game.
        nu, _ = _row_lp(-M.T)

    sec_row = float((mu @ M).min())   # value the row strategy guarantees
    sec_col = float((M @ nu).max())   # value the column strategy concedes
    return MatrixGameSolution(
        value=0.5 * (sec_row + sec_col),
        row_strategy=mu,
        col_strategy=nu,
        gap=sec_col - sec_row,
    )


def best_pure_response_value(M: np.ndarray, row_strategy: np.ndarray) -> tuple[float, int]:
    """Min over columns of row_strategy^T M and the smallest minimizing index.

    A pure column attains the inner minimum over the simplex, so this is the
    exact best-response value to the given row strategy.
    """
    M = np.asarray(M, dtype=float)
    row_strategy = np.asarray(row_strategy, dtype=float)
    if M.ndim != 2 or row_strategy.shape != (M.shape[0],):
        raise ValueError(
            f"row strategy of shape {row_strategy.shape} mismatches matrix {M.shape}"
        )
    payoffs = row_strategy @ M
    j = int(np.argmin(payoffs))
    return float(payoffs[j]), j
