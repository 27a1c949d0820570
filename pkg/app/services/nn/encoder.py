"""Contextual encoding layer shared (structurally, not by weights) by the
denoiser and the evaluator.

For every query item the encoder concatenates
  * the query embedding plus its self attention over the context sequence, and
  * history attention of the query over the user's history,
giving a (n_queries, 2D) representation. The residual keeps each row tied to
its own item.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from app.services.nn.layers import AttentionCache, attention_backward, attention_forward

OOV_ROW = 0

ENCODER_KEYS = ("item_embeddings", "self_q", "self_k", "self_v", "hist_q", "hist_k", "hist_v")


@dataclass(frozen=True)
class Vocabulary:
    """Item id -> embedding row; row 0 is the shared out-of-vocabulary row."""

    item_ids: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "_index", {int(item): k + 1 for k, item in enumerate(self.item_ids)})

    @classmethod
    def build(cls, items: Iterable[int]) -> "Vocabulary":
        return cls(tuple(sorted({int(i) for i in items})))

    def __len__(self) -> int:
        return len(self.item_ids) + 1

    def rows(self, items: Sequence[int]) -> np.ndarray:
        return np.array([self._index.get(int(i), OOV_ROW) for i in items], dtype=np.int64)


def init_encoder_arrays(n_rows: int, dim: int, rng: np.random.Generator, scale: float) -> dict[str, np.ndarray]:
    arrays = {"item_embeddings": rng.uniform(-scale, scale, (n_rows, dim))}
    for key in ENCODER_KEYS[1:]:
        arrays[key] = rng.uniform(-scale, scale, (dim, dim))
    return arrays


@dataclass
class EncoderCache:
    q_rows: np.ndarray
    c_rows: np.ndarray
    h_rows: np.ndarray
    Xq: np.ndarray
    Xc: np.ndarray
    H: np.ndarray
    self_attn: AttentionCache
    hist_attn: AttentionCache


def encode_forward(
    w: dict[str, np.ndarray],
    q_rows: np.ndarray,
    c_rows: np.ndarray,
    h_rows: np.ndarray,
    q_pe: np.ndarray | None = None,
    c_pe: np.ndarray | None = None,
) -> tuple[np.ndarray, EncoderCache]:
    E = w["item_embeddings"]
    Xq = E[q_rows] if q_pe is None else E[q_rows] + q_pe
    Xc = E[c_rows] if c_pe is None else E[c_rows] + c_pe
    H = E[h_rows]
    S, self_cache = attention_forward(Xq @ w["self_q"], Xc @ w["self_k"], Xc @ w["self_v"])
    S = S + Xq
    Ho, hist_cache = attention_forward(Xq @ w["hist_q"], H @ w["hist_k"], H @ w["hist_v"])
    C = np.concatenate([S, Ho], axis=1)
    return C, EncoderCache(q_rows, c_rows, h_rows, Xq, Xc, H, self_cache, hist_cache)


def encode_backward(w: dict[str, np.ndarray], dC: np.ndarray, cache: EncoderCache, grads: dict[str, np.ndarray]) -> None:
    """Accumulates encoder parameter gradients into ``grads`` in place."""
    dim = w["self_q"].shape[0]
    dS, dHo = dC[:, :dim], dC[:, dim:]

    dQ, dK, dV = attention_backward(dS, cache.self_attn)
    grads["self_q"] += cache.Xq.T @ dQ
    grads["self_k"] += cache.Xc.T @ dK
    grads["self_v"] += cache.Xc.T @ dV
    dXq = dQ @ w["self_q"].T + dS
    dXc = dK @ w["self_k"].T + dV @ w["self_v"].T

    dE = grads["item_embeddings"]
    if len(cache.h_rows):
        dQh, dKh, dVh = attention_backward(dHo, cache.hist_attn)
        grads["hist_q"] += cache.Xq.T @ dQh
        grads["hist_k"] += cache.H.T @ dKh
        grads["hist_v"] += cache.H.T @ dVh
        dXq += dQh @ w["hist_q"].T
        np.add.at(dE, cache.h_rows, dKh @ w["hist_k"].T + dVh @ w["hist_v"].T)

    np.add.at(dE, cache.q_rows, dXq)
    np.add.at(dE, cache.c_rows, dXc)
