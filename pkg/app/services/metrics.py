"""Ranking metrics and the reranker evaluation protocol.

A reranked list is scored against the logged feedback of its session: the
item at output position k (0-based) gets score ``l_o - k``, and its label is
the feedback it received when the session was logged.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from app.core.errors import InvalidArgumentError

NDCG_K = 3


def auc(scored: Sequence[tuple[float, int]]) -> float | None:
    """P(random positive outranks random negative), ties 0.5. None if single-class."""
    if not scored:
        return None
    scores = np.array([s for s, _ in scored], dtype=np.float64)
    labels = np.array([y for _, y in scored], dtype=np.int64)
    n_pos = int((labels == 1).sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def dcg_at_k(gains: Sequence[float], k: int) -> float:
    g = np.asarray(gains, dtype=np.float64)[:k]
    return float((g / np.log2(np.arange(2, len(g) + 2))).sum())


def ndcg_at_k(gains: Sequence[float], k: int) -> float:
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    ideal = dcg_at_k(sorted(gains, reverse=True), k)
    if ideal == 0.0:
        return 1.0
    return dcg_at_k(gains, k) / ideal


def session_metrics(output_items: Sequence[int], session, k: int = NDCG_K) -> dict:
    label_of = dict(zip(session.displayed.items, session.feedback))
    if sorted(label_of) != sorted(output_items):
        raise InvalidArgumentError(f"session {session.session_id}: reranked list is not a reordering of the logged items")
    n = len(output_items)
    labels = [label_of[item] for item in output_items]
    return {
        "session_id": session.session_id,
        "auc": auc([(float(n - pos), y) for pos, y in enumerate(labels)]),
        "ndcg3": ndcg_at_k(labels, k),
    }


def mean_metrics(rows: Iterable[dict]) -> dict:
    """Per-session averages; undefined AUCs are excluded and counted."""
    df = pd.DataFrame(list(rows), columns=["session_id", "auc", "ndcg3"])
    auc_col = pd.to_numeric(df["auc"], errors="coerce")
    return {
        "n_sessions": int(len(df)),
        "auc": float(auc_col.mean()) if auc_col.notna().any() else None,
        "auc_undefined": int(auc_col.isna().sum()),
        "ndcg3": float(df["ndcg3"].mean()) if len(df) else None,
    }


def paired_bootstrap(a: Sequence[float], b: Sequence[float], n_resamples: int, rng: np.random.Generator) -> float:
    """One-sided p-value for H0: mean(a - b) <= 0 over paired observations."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape or len(a) == 0:
        raise InvalidArgumentError("paired_bootstrap needs two equal-length non-empty sequences")
    if n_resamples < 1:
        raise InvalidArgumentError(f"n_resamples must be >= 1, got {n_resamples}")
    diffs = a - b
    idx = rng.integers(0, len(diffs), size=(n_resamples, len(diffs)))
    means = diffs[idx].mean(axis=1)
    return float(((means <= 0.0).sum() + 1) / (n_resamples + 1))
