"""Stationarity checks for the noising kernels.

A doubly stochastic kernel keeps the uniform distribution stationary; if it
is also ergodic (strongly connected with a self-loop somewhere) the uniform
distribution is the unique limit, which is what lets generation start from
an arbitrary ranked list.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from app.core.errors import InvalidArgumentError, InvalidMatrixError

TV_THRESHOLD = 1e-3


@dataclass(frozen=True)
class StochasticCheck:
    ok: bool
    max_row_deviation: float
    max_col_deviation: float

    def __bool__(self) -> bool:
        return self.ok


@dataclass
class ChainReport:
    n_states: int
    is_doubly_stochastic: StochasticCheck
    is_ergodic: bool
    tv_curve: list[tuple[int, float]] = field(default_factory=list)
    worst_start: list[int] = field(default_factory=list)

    def mixing_time(self, threshold: float = TV_THRESHOLD) -> int | None:
        for t, tv in self.tv_curve:
            if tv < threshold:
                return t
        return None

    def to_summary(self, threshold: float = TV_THRESHOLD) -> dict:
        return {
            "n_states": self.n_states,
            "is_doubly_stochastic": self.is_doubly_stochastic.ok,
            "max_row_deviation": self.is_doubly_stochastic.max_row_deviation,
            "max_col_deviation": self.is_doubly_stochastic.max_col_deviation,
            "is_ergodic": self.is_ergodic,
            "t_max": self.tv_curve[-1][0] if self.tv_curve else 0,
            "final_tv": self.tv_curve[-1][1] if self.tv_curve else None,
            "tv_threshold": threshold,
            "t_star": self.mixing_time(threshold),
        }


def _as_square(M) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidMatrixError(f"expected a square matrix, got shape {M.shape}")
    if np.any(M < 0):
        raise InvalidMatrixError("matrix has negative entries")
    return M


def check_doubly_stochastic(M, tol: float = 1e-9) -> StochasticCheck:
    M = _as_square(M)
    row_dev = float(np.max(np.abs(M.sum(axis=1) - 1.0)))
    col_dev = float(np.max(np.abs(M.sum(axis=0) - 1.0)))
    return StochasticCheck(row_dev <= tol and col_dev <= tol, row_dev, col_dev)


def check_ergodic(M) -> bool:
    """Strong connectivity plus one self-loop (aperiodicity via gcd 1)."""
    M = _as_square(M)
    n_components, _ = connected_components(csr_matrix(M > 0), directed=True, connection="strong")
    return n_components == 1 and bool(np.any(np.diag(M) > 0))


def is_stationary_uniform(M, tol: float = 1e-12) -> bool:
    M = _as_square(M)
    n = M.shape[0]
    uniform = np.full(n, 1.0 / n)
    return bool(np.max(np.abs(uniform @ M - uniform)) <= tol)


def _tv_to_uniform(rows: np.ndarray) -> np.ndarray:
    return 0.5 * np.abs(rows - 1.0 / rows.shape[1]).sum(axis=1)


def stationary_gap(tm, t_max: int) -> ChainReport:
    """Worst-start TV distance to uniform for t = 0..t_max.

    Uses the stored cumulative kernels up to the model's horizon and keeps
    multiplying by the one-step kernel beyond it.
    """
    if t_max < 1:
        raise InvalidArgumentError(f"t_max must be >= 1, got {t_max}")
    step = tm.Q if tm.op == "perm" else tm.O
    n = step.shape[0]
    report = ChainReport(n, check_doubly_stochastic(step), check_ergodic(step))

    current = np.eye(n)
    tv = _tv_to_uniform(current)
    report.tv_curve.append((0, float(tv.max())))
    report.worst_start.append(int(tv.argmax()))
    horizon = tm.sched.T
    sparse_step = csr_matrix(step)
    for t in range(1, t_max + 1):
        current = tm.marginal(t) if t <= horizon else np.asarray(sparse_step @ current)
        tv = _tv_to_uniform(current)
        report.tv_curve.append((t, float(tv.max())))
        report.worst_start.append(int(tv.argmax()))
    return report
