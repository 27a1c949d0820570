"""Conditional denoising model p_θ(R_{t-1} | R_t, c).

The noisy sequence is contextually encoded; per-position condition
embeddings (plus a sinusoidal position signal) then attend over that
encoding to produce the expected representation of every output position
of R_{t-1}. A candidate is scored by the mean positionwise cosine between
the expected representations and the candidate's own contextual encoding;
probabilities are a softmax of score / tau.

perm op:  candidates are R_t and its swap neighbours. Their encodings are
           row permutations of R_t's encoding (no positional signal in the
           encoder), so one encoder pass serves every candidate.
token op: every base item is encoded against R_t's context and each
           output position gets its own softmax over the l_s base items.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import rel_entr, softmax

from app.core.errors import InconsistentEvidenceError, InvalidArgumentError, NumericalError
from app.services.forward import Categorical, posterior_perm, posterior_token
from app.services.nn.encoder import (
    ENCODER_KEYS,
    EncoderCache,
    Vocabulary,
    encode_backward,
    encode_forward,
    init_encoder_arrays,
)
from app.services.nn.layers import (
    AttentionCache,
    CosineCache,
    attention_backward,
    attention_forward,
    cosine_matrix_backward,
    cosine_matrix_forward,
    sinusoidal_encoding,
)
from app.services.permcore import ItemSequence, swap_neighbors

POSITIVE = 1


@dataclass
class ModelParams:
    vocab: Vocabulary
    tau: float
    arrays: dict[str, np.ndarray]

    @property
    def dim(self) -> int:
        return self.arrays["self_q"].shape[0]

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}


def init_denoiser_params(vocab: Vocabulary, dim: int, tau: float, rng: np.random.Generator, init_scale: float = 0.05) -> ModelParams:
    arrays = init_encoder_arrays(len(vocab), dim, rng, init_scale)
    arrays["condition_embeddings"] = rng.uniform(-init_scale, init_scale, (2, dim))
    arrays["condition_q"] = rng.uniform(-init_scale, init_scale, (dim, 2 * dim))
    return ModelParams(vocab, tau, arrays)


def warm_start_encoder(p: ModelParams, source: dict[str, np.ndarray], source_vocab: Vocabulary) -> None:
    """Copies trained encoder weights (same vocabulary and width) into the denoiser."""
    if source_vocab != p.vocab:
        raise InvalidArgumentError("warm start needs the denoiser and source to share a vocabulary")
    for key in ENCODER_KEYS:
        if source[key].shape != p.arrays[key].shape:
            raise InvalidArgumentError(f"warm start shape mismatch for {key}: {source[key].shape} vs {p.arrays[key].shape}")
        p.arrays[key] = source[key].copy()


@dataclass
class DenoiserPass:
    """Everything a forward pass keeps around for the backward pass."""

    op: str
    logits: np.ndarray
    probs: np.ndarray
    cond: np.ndarray
    U: np.ndarray
    seq_cache: EncoderCache
    cond_cache: AttentionCache
    cos_cache: CosineCache
    cand_index: np.ndarray | None = None
    base_cache: EncoderCache | None = None
    support: list = field(default_factory=list)


def _history_rows(p: ModelParams, history: Sequence[int]) -> np.ndarray:
    return p.vocab.rows(list(history))


def encode_context(p: ModelParams, seq: ItemSequence, history: Sequence[int]) -> np.ndarray:
    rows = p.vocab.rows(seq.items)
    C, _ = encode_forward(p.arrays, rows, rows, _history_rows(p, history))
    return C


def _check_condition(c: Sequence[int], length: int) -> np.ndarray:
    cond = np.asarray(c, dtype=np.int64)
    if cond.shape != (length,) or np.any((cond != 0) & (cond != 1)):
        raise InvalidArgumentError(f"condition must be {length} labels in {{0, 1}}, got {list(c)}")
    return cond


def _perm_candidate_index(Rt: ItemSequence, support: Sequence[ItemSequence]) -> np.ndarray:
    """cand_index[j, k] = row of R_t's encoding holding candidate j's item at position k."""
    where = {pos: k for k, pos in enumerate(Rt.positions)}
    try:
        return np.array([[where[pos] for pos in cand.positions] for cand in support], dtype=np.int64)
    except KeyError:
        raise InvalidArgumentError("perm-op candidates must reorder the items of R_t")


def denoiser_forward(
    p: ModelParams,
    Rt: ItemSequence,
    c: Sequence[int],
    history: Sequence[int],
    op: str,
    support: Sequence[ItemSequence] | None = None,
) -> DenoiserPass:
    L = Rt.l_o
    cond = _check_condition(c, L)
    rows = p.vocab.rows(Rt.items)
    h_rows = _history_rows(p, history)
    C, seq_cache = encode_forward(p.arrays, rows, rows, h_rows)

    U = p.arrays["condition_embeddings"][cond] + sinusoidal_encoding(L, p.dim)
    expected, cond_cache = attention_forward(U @ p.arrays["condition_q"], C, C)

    if op == "perm":
        if support is None:
            support = [Rt] + [Rt.with_positions(nb) for nb in swap_neighbors(Rt.positions)]
        if not support:
            raise InvalidArgumentError("empty candidate support")
        cand_index = _perm_candidate_index(Rt, support)
        cos, cos_cache = cosine_matrix_forward(expected, C)
        scores = cos[np.arange(L)[None, :], cand_index].mean(axis=1)
        logits = scores / p.tau
        probs = softmax(logits)
        return DenoiserPass(op, logits, probs, cond, U, seq_cache, cond_cache, cos_cache, cand_index, None, list(support))

    if op == "token":
        base_rows = p.vocab.rows(Rt.base_items)
        B, base_cache = encode_forward(p.arrays, base_rows, rows, h_rows)
        cos, cos_cache = cosine_matrix_forward(expected, B)
        logits = cos / p.tau
        probs = softmax(logits, axis=1)
        support = list(range(len(Rt.base_items)))
        return DenoiserPass(op, logits, probs, cond, U, seq_cache, cond_cache, cos_cache, None, base_cache, support)

    raise InvalidArgumentError(f"unknown op {op!r}")


def denoiser_backward(p: ModelParams, fwd: DenoiserPass, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    grads = p.zeros_like()
    w = p.arrays
    L = len(fwd.cond)

    if fwd.op == "perm":
        dscores = dlogits / p.tau
        dcos = np.zeros_like(fwd.cos_cache.cos)
        np.add.at(dcos, (np.broadcast_to(np.arange(L), fwd.cand_index.shape), fwd.cand_index), dscores[:, None] / L)
        dexpected, dC = cosine_matrix_backward(dcos, fwd.cos_cache)
    else:
        dexpected, dB = cosine_matrix_backward(dlogits / p.tau, fwd.cos_cache)
        encode_backward(w, dB, fwd.base_cache, grads)
        dC = np.zeros_like(fwd.cond_cache.K)

    dq, dK, dV = attention_backward(dexpected, fwd.cond_cache)
    dC = dC + dK + dV
    grads["condition_q"] += fwd.U.T @ dq
    np.add.at(grads["condition_embeddings"], fwd.cond, dq @ w["condition_q"].T)
    encode_backward(w, dC, fwd.seq_cache, grads)
    return grads


def denoise_distribution(
    p: ModelParams,
    Rt: ItemSequence,
    c: Sequence[int],
    support: Sequence | None,
    history: Sequence[int],
    op: str = "perm",
) -> Categorical | list[Categorical]:
    """Perm op: one Categorical over ``support``. Token op: one per position."""
    if support is not None and len(support) == 0:
        raise InvalidArgumentError("empty candidate support")
    if op == "perm":
        fwd = denoiser_forward(p, Rt, c, history, "perm", support)
        return Categorical(tuple(fwd.support), fwd.probs)
    fwd = denoiser_forward(p, Rt, c, history, "token")
    return [Categorical(tuple(fwd.support), row) for row in fwd.probs]


def kl_loss(qpost: Categorical, pmodel: Categorical) -> float:
    if qpost.support != pmodel.support:
        raise InvalidArgumentError("posterior and model distributions have different supports")
    return float(rel_entr(qpost.probs, pmodel.probs).sum())


@dataclass(frozen=True)
class DenoiseExample:
    Rt: ItemSequence
    R0: ItemSequence
    t: int
    c: tuple[int, ...]
    history: tuple[int, ...]


def example_loss_and_grads(p: ModelParams, ex: DenoiseExample, tm) -> tuple[float, dict[str, np.ndarray]]:
    if tm.op == "perm":
        q = posterior_perm(ex.Rt, ex.R0, ex.t, tm)
        fwd = denoiser_forward(p, ex.Rt, ex.c, ex.history, "perm", list(q.support))
        loss = float(rel_entr(q.probs, fwd.probs).sum())
        dlogits = fwd.probs - q.probs
    else:
        posts = posterior_token(ex.Rt, ex.R0, ex.t, tm)
        fwd = denoiser_forward(p, ex.Rt, ex.c, ex.history, "token")
        q = np.stack([post.probs for post in posts])
        loss = float(rel_entr(q, fwd.probs).sum())
        dlogits = fwd.probs - q
    return loss, denoiser_backward(p, fwd, dlogits)


def model_gradients(p: ModelParams, batch: Sequence[DenoiseExample], tm) -> tuple[float, dict[str, np.ndarray], int]:
    """Mean KL loss and its gradient over the usable examples of ``batch``.

    Examples whose posterior is undefined are skipped and counted.
    """
    if not batch:
        raise InvalidArgumentError("empty batch")
    total = 0.0
    grads = p.zeros_like()
    used = 0
    skipped = 0
    for ex in batch:
        try:
            loss, g = example_loss_and_grads(p, ex, tm)
        except InconsistentEvidenceError:
            skipped += 1
            continue
        total += loss
        for k, v in g.items():
            grads[k] += v
        used += 1
    if used == 0:
        return float("nan"), grads, skipped
    mean = total / used
    if not np.isfinite(mean):
        raise NumericalError(
            f"non-finite denoiser loss {mean!r}",
            {"batch_size": len(batch), "steps": [ex.t for ex in batch]},
        )
    for v in grads.values():
        v /= used
    return mean, grads, skipped
