"""Discrete forward (noising) process.

Two corruption operations are supported:

* ``perm``: swap one uniformly chosen pair of positions with probability
  beta, otherwise keep the ordering. States are the l_o! orderings, indexed
  by their lexicographic rank.
* ``token``: every position independently keeps its item with probability
  1 - beta, otherwise moves to one of the other l_s - 1 base items.

One-step kernels and their cumulative products are built once, in float64,
and shared read-only.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.sparse import csr_matrix

from app.core.errors import (
    CapacityError,
    InconsistentEvidenceError,
    IndexRangeError,
    InternalConsistencyError,
    InvalidArgumentError,
)
from app.services.permcore import (
    MAX_OUTPUT_LENGTH,
    ItemSequence,
    SequenceSpec,
    all_permutations,
    rank,
    swap_neighbors,
)

logger = logging.getLogger(__name__)

Op = Literal["perm", "token"]

NORMALIZATION_TOLERANCE = 1e-6


@dataclass(frozen=True)
class NoiseSchedule:
    beta: float
    T: int

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise InvalidArgumentError(f"beta must lie in (0, 1), got {self.beta}")
        if self.T < 1:
            raise InvalidArgumentError(f"T must be >= 1, got {self.T}")

    def beta_at(self, t: int) -> float:
        return self.beta


@dataclass(frozen=True)
class Categorical:
    support: tuple
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.shape != (len(self.support),):
            raise InvalidArgumentError(f"{len(self.support)} support entries but probs shape {probs.shape}")
        if len(set(self.support)) != len(self.support):
            raise InvalidArgumentError("support entries must be distinct")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise InternalConsistencyError(f"not a distribution: sum={probs.sum()!r}")
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    def prob_of(self, entry) -> float:
        return float(self.probs[self.support.index(entry)])


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _cumulative(step: np.ndarray, T: int) -> tuple[np.ndarray, ...]:
    """Q, Q^2, ..., Q^T, each power left-multiplied by the sparse step kernel."""
    sparse_step = csr_matrix(step)
    mats = [np.array(step, dtype=np.float64)]
    for _ in range(1, T):
        mats.append(np.asarray(sparse_step @ mats[-1]))
    return tuple(_frozen(m) for m in mats)


@dataclass(frozen=True)
class PermTransitionModel:
    spec: SequenceSpec
    sched: NoiseSchedule
    Q: np.ndarray
    Qbar: tuple[np.ndarray, ...]
    perms: tuple[tuple[int, ...], ...] = field(repr=False)

    op = "perm"

    @property
    def n_states(self) -> int:
        return self.Q.shape[0]

    def marginal(self, t: int) -> np.ndarray:
        """Q̄_t, with Q̄_0 the identity."""
        if t == 0:
            return np.eye(self.n_states)
        return self.Qbar[t - 1]


@dataclass(frozen=True)
class TokenTransitionModel:
    l_s: int
    sched: NoiseSchedule
    O: np.ndarray
    Obar: tuple[np.ndarray, ...]

    op = "token"

    @property
    def n_states(self) -> int:
        return self.l_s

    def marginal(self, t: int) -> np.ndarray:
        if t == 0:
            return np.eye(self.l_s)
        return self.Obar[t - 1]


def build_perm_transition(spec: SequenceSpec, sched: NoiseSchedule) -> PermTransitionModel:
    if spec.l_o > MAX_OUTPUT_LENGTH:
        raise CapacityError(f"l_o={spec.l_o} exceeds the cap of {MAX_OUTPUT_LENGTH}")
    perms = all_permutations(spec.l_o)
    n = len(perms)
    if n * n * sched.T * 8 > 2 ** 30:
        logger.warning("perm kernel for l_o=%d, T=%d needs %.1f GiB", spec.l_o, sched.T, n * n * sched.T * 8 / 2 ** 30)

    if n == 1:
        Q = np.ones((1, 1), dtype=np.float64)
    else:
        index = {p: i for i, p in enumerate(perms)}
        beta = sched.beta_at(1)
        off = beta / (spec.l_o * (spec.l_o - 1) // 2)
        rows, cols, vals = [], [], []
        for i, p in enumerate(perms):
            rows.append(i)
            cols.append(i)
            vals.append(1.0 - beta)
            for nb in swap_neighbors(p):
                rows.append(i)
                cols.append(index[tuple(nb)])
                vals.append(off)
        Q = csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=np.float64).toarray()
    return PermTransitionModel(spec, sched, _frozen(Q), _cumulative(Q, sched.T), perms)


def build_token_transition(spec: SequenceSpec, sched: NoiseSchedule) -> TokenTransitionModel:
    l_s = spec.l_s
    if l_s < 2:
        raise InvalidArgumentError(f"token operation needs l_s >= 2, got {l_s}")
    beta = sched.beta_at(1)
    O = np.full((l_s, l_s), beta / (l_s - 1), dtype=np.float64)
    np.fill_diagonal(O, 1.0 - beta)
    return TokenTransitionModel(l_s, sched, _frozen(O), _cumulative(O, sched.T))


def _check_step(t: int, T: int, low: int = 1):
    if not low <= t <= T:
        raise IndexRangeError(f"step t={t} outside [{low}, {T}]")


def _check_op(op: str, tm):
    if op != tm.op:
        raise InvalidArgumentError(f"op={op!r} does not match a {tm.op} transition model")


def perm_marginal(R0: ItemSequence, t: int, tm: PermTransitionModel) -> np.ndarray:
    """Row of Q̄_t for R0: q(R_t | R_0) over all orderings, indexed by rank."""
    return tm.marginal(t)[rank(R0.positions)]


def sample_forward_batch(R0: ItemSequence, t: int, op: Op, rng: np.random.Generator, tm, size: int) -> np.ndarray:
    """``size`` independent draws of R_t; ranks for perm, (size, l_o) positions for token."""
    _check_op(op, tm)
    _check_step(t, tm.sched.T)
    if op == "perm":
        row = perm_marginal(R0, t, tm)
        return rng.choice(len(row), size=size, p=row)
    rows = tm.marginal(t)[list(R0.positions)]
    cdf = np.cumsum(rows, axis=1)
    u = rng.random((size, len(R0.positions)))
    draws = (u[:, :, None] >= cdf[None, :, :]).sum(axis=2)
    return np.minimum(draws, tm.l_s - 1)


def sample_forward(R0: ItemSequence, t: int, op: Op, rng: np.random.Generator, tm) -> ItemSequence:
    draw = sample_forward_batch(R0, t, op, rng, tm, 1)[0]
    if op == "perm":
        return R0.with_positions(tm.perms[int(draw)])
    return R0.with_positions(int(p) for p in draw)


def sample_trajectory(R0: ItemSequence, T: int, op: Op, rng: np.random.Generator, tm) -> list[ItemSequence]:
    """R_1..R_T drawn by repeated one-step transitions."""
    _check_op(op, tm)
    _check_step(T, tm.sched.T)
    out = []
    current = R0
    for _ in range(T):
        current = sample_forward(current, 1, op, rng, tm)
        out.append(current)
    return out


def _normalize(num: np.ndarray, den: float, where: str) -> np.ndarray:
    total = num.sum() / den
    if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
        raise InternalConsistencyError(f"{where}: posterior mass {total!r} deviates from 1")
    return num / num.sum()


def posterior_perm(Rt: ItemSequence, R0: ItemSequence, t: int, tm: PermTransitionModel) -> Categorical:
    """q(R_{t-1} | R_t, R_0) over {R_t} ∪ swap_neighbors(R_t)."""
    _check_step(t, tm.sched.T)
    rt = rank(Rt.positions)
    r0 = rank(R0.positions)
    den = tm.marginal(t)[r0, rt]
    if den <= 0.0:
        raise InconsistentEvidenceError(
            f"q(R_t|R_0)=0 at t={t}", {"R_t": list(Rt.positions), "R_0": list(R0.positions), "t": t}
        )
    support = [Rt.positions] + [tuple(nb) for nb in swap_neighbors(Rt.positions)]
    idx = [rank(s) for s in support]
    prev = tm.marginal(t - 1)[r0, idx]
    num = tm.Q[idx, rt] * prev
    probs = _normalize(num, den, "posterior_perm")
    return Categorical(tuple(Rt.with_positions(s) for s in support), probs)


def posterior_token(Rt: ItemSequence, R0: ItemSequence, t: int, tm: TokenTransitionModel) -> list[Categorical]:
    """Per-position q(z_{t-1} | z_t, z_0) over the l_s base items."""
    _check_step(t, tm.sched.T)
    if len(Rt.positions) != len(R0.positions):
        raise InvalidArgumentError("R_t and R_0 differ in length")
    now = tm.marginal(t)
    prev = tm.marginal(t - 1)
    support = tuple(range(tm.l_s))
    out = []
    for k, (zt, z0) in enumerate(zip(Rt.positions, R0.positions)):
        den = now[z0, zt]
        if den <= 0.0:
            raise InconsistentEvidenceError(f"q(z_t|z_0)=0 at position {k}, t={t}", {"position": k, "t": t})
        num = tm.O[:, zt] * prev[z0]
        out.append(Categorical(support, _normalize(num, den, "posterior_token")))
    return out
