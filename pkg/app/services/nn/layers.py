"""Forward/backward pairs for the few layers the models are built from.

Everything is float64 numpy; backward functions return gradients for their
inputs and never touch parameters directly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

NORM_FLOOR = 1e-12


@dataclass
class AttentionCache:
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    A: np.ndarray
    scale: float


def attention_forward(Q: np.ndarray, K: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, AttentionCache]:
    """Single-head scaled dot-product attention; an empty key set yields zeros."""
    scale = 1.0 / np.sqrt(Q.shape[1])
    if K.shape[0] == 0:
        A = np.zeros((Q.shape[0], 0))
        return np.zeros((Q.shape[0], V.shape[1])), AttentionCache(Q, K, V, A, scale)
    A = softmax(Q @ K.T * scale, axis=1)
    return A @ V, AttentionCache(Q, K, V, A, scale)


def attention_backward(dout: np.ndarray, cache: AttentionCache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    Q, K, V, A, scale = cache.Q, cache.K, cache.V, cache.A, cache.scale
    if K.shape[0] == 0:
        return np.zeros_like(Q), np.zeros_like(K), np.zeros_like(V)
    dV = A.T @ dout
    dA = dout @ V.T
    dZ = A * (dA - (dA * A).sum(axis=1, keepdims=True))
    dQ = dZ @ K * scale
    dK = dZ.T @ Q * scale
    return dQ, dK, dV


@dataclass
class CosineCache:
    A: np.ndarray
    B: np.ndarray
    na: np.ndarray
    nb: np.ndarray
    cos: np.ndarray


def cosine_matrix_forward(A: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, CosineCache]:
    """cos[i, j] between row i of A and row j of B."""
    na = np.maximum(np.linalg.norm(A, axis=1), NORM_FLOOR)
    nb = np.maximum(np.linalg.norm(B, axis=1), NORM_FLOOR)
    cos = (A @ B.T) / np.outer(na, nb)
    return cos, CosineCache(A, B, na, nb, cos)


def cosine_matrix_backward(dcos: np.ndarray, cache: CosineCache) -> tuple[np.ndarray, np.ndarray]:
    A, B, na, nb, cos = cache.A, cache.B, cache.na, cache.nb, cache.cos
    w = dcos / np.outer(na, nb)
    dA = w @ B - ((dcos * cos).sum(axis=1) / na ** 2)[:, None] * A
    dB = w.T @ A - ((dcos * cos).sum(axis=0) / nb ** 2)[:, None] * B
    return dA, dB


def sinusoidal_encoding(n: int, dim: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
