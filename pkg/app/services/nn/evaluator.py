from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from app.core.errors import InvalidArgumentError, NumericalError
from app.services.nn.encoder import Vocabulary, encode_backward, encode_forward, init_encoder_arrays
from app.services.nn.layers import sinusoidal_encoding
from app.services.permcore import ItemSequence

PROB_CLIP = 1e-7


@dataclass
class EvaluatorParams:
    vocab: Vocabulary
    arrays: dict[str, np.ndarray]

    @property
    def dim(self) -> int:
        return self.arrays["self_q"].shape[0]

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}


def init_evaluator_params(vocab: Vocabulary, dim: int, hidden: int, rng: np.random.Generator, init_scale: float = 0.05) -> EvaluatorParams:
    arrays = init_encoder_arrays(len(vocab), dim, rng, init_scale)
    arrays["mlp_w1"] = rng.uniform(-init_scale, init_scale, (2 * dim, hidden))
    arrays["mlp_b1"] = np.zeros(hidden)
    arrays["mlp_w2"] = rng.uniform(-init_scale, init_scale, hidden)
    arrays["mlp_b2"] = np.zeros(1)
    return EvaluatorParams(vocab, arrays)


def rank_weights(length: int) -> np.ndarray:
    """w_k = 1 / log2(k + 1) for 1-based position k."""
    return 1.0 / np.log2(np.arange(2, length + 2, dtype=np.float64))


def utility_from_scores(scores: Sequence[float]) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    return float(rank_weights(len(scores)) @ scores)


def _forward(p: EvaluatorParams, seq: ItemSequence, history: Sequence[int]):
    rows = p.vocab.rows(seq.items)
    pe = sinusoidal_encoding(len(rows), p.dim)
    C, cache = encode_forward(p.arrays, rows, rows, p.vocab.rows(list(history)), pe, pe)
    hidden = np.tanh(C @ p.arrays["mlp_w1"] + p.arrays["mlp_b1"])
    logits = hidden @ p.arrays["mlp_w2"] + p.arrays["mlp_b2"][0]
    return logits, hidden, C, cache


def evaluator_score(p: EvaluatorParams, seq: ItemSequence, history: Sequence[int]) -> tuple[np.ndarray, float]:
    """Per-position positive-feedback probabilities and the rank-weighted utility."""
    logits, _, _, _ = _forward(p, seq, history)
    probs = expit(logits)
    return probs, utility_from_scores(probs)


def binary_cross_entropy(probs: Sequence[float], labels: Sequence[int]) -> float:
    probs = np.clip(np.asarray(probs, dtype=np.float64), PROB_CLIP, 1.0 - PROB_CLIP)
    labels = np.asarray(labels, dtype=np.float64)
    return float(-(labels * np.log(probs) + (1.0 - labels) * np.log(1.0 - probs)).mean())


def evaluator_loss(p: EvaluatorParams, session) -> tuple[float, dict[str, np.ndarray]]:
    """Mean per-position BCE against the logged feedback, with gradients."""
    labels = np.asarray(session.feedback, dtype=np.float64)
    seq = session.displayed
    if labels.shape != (seq.l_o,):
        raise InvalidArgumentError(f"session {session.session_id}: need {seq.l_o} feedback labels, got {labels.shape}")

    logits, hidden, C, cache = _forward(p, seq, session.history)
    loss = float(np.mean(np.logaddexp(0.0, logits) - labels * logits))
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite evaluator loss for session {session.session_id}")

    w = p.arrays
    grads = p.zeros_like()
    dlogits = (expit(logits) - labels) / len(labels)
    grads["mlp_w2"] += hidden.T @ dlogits
    grads["mlp_b2"] += dlogits.sum()
    dpre = np.outer(dlogits, w["mlp_w2"]) * (1.0 - hidden ** 2)
    grads["mlp_w1"] += C.T @ dpre
    grads["mlp_b1"] += dpre.sum(axis=0)
    encode_backward(w, dpre @ w["mlp_w1"].T, cache, grads)
    return loss, grads
