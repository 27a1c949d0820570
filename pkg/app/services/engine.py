"""Training loop and conditional beam-search reranking."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from app.core.config import InferenceConfig
from app.core.errors import InvalidArgumentError
from app.services.forward import sample_forward
from app.services.nn.denoiser import DenoiseExample, ModelParams, denoise_distribution, model_gradients
from app.services.nn.evaluator import PROB_CLIP, EvaluatorParams, evaluator_loss, evaluator_score
from app.services.permcore import ItemSequence

logger = logging.getLogger(__name__)


def make_example(session, t: int, rng: np.random.Generator, tm) -> DenoiseExample:
    R0 = session.displayed
    Rt = sample_forward(R0, t, tm.op, rng, tm)
    return DenoiseExample(Rt=Rt, R0=R0, t=t, c=tuple(session.feedback), history=tuple(session.history))


def train_step(params: ModelParams, session, t: int, rng: np.random.Generator, tm, optimizer) -> float:
    """One denoising update on a single session at step ``t``; returns L_t.

    Returns nan, logs a warning and leaves params untouched when the sampled
    R_t makes the posterior undefined.
    """
    loss, grads, skipped = model_gradients(params, [make_example(session, t, rng, tm)], tm)
    if skipped:
        logger.warning("Session %s skipped at t=%d: posterior undefined for the sampled R_t", session.session_id, t)
        return loss
    optimizer.step(params.arrays, grads)
    return loss


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    skipped_samples: int
    n_batches: int
    losses: list[float] = field(default_factory=list)


class DenoiserTrainer:
    """Single-writer trainer: sample t ~ U{1..T}, R_t ~ q(R_t|R_0), KL step."""

    def __init__(self, params: ModelParams, tm, optimizer, rng: np.random.Generator):
        self.params = params
        self.tm = tm
        self.optimizer = optimizer
        self.rng = rng
        self.epochs_done = 0

    @property
    def T(self) -> int:
        return self.tm.sched.T

    def train_batch(self, sessions: Sequence) -> tuple[float, int]:
        if not sessions:
            raise InvalidArgumentError("empty batch")
        steps = self.rng.integers(1, self.T + 1, size=len(sessions))
        batch = [make_example(s, int(t), self.rng, self.tm) for s, t in zip(sessions, steps)]
        loss, grads, skipped = model_gradients(self.params, batch, self.tm)
        if skipped < len(batch):
            self.optimizer.step(self.params.arrays, grads)
        return loss, skipped

    def train_epoch(self, sessions: Sequence, batch_size: int) -> EpochStats:
        order = self.rng.permutation(len(sessions))
        losses, weights = [], []
        skipped = 0
        for start in range(0, len(order), batch_size):
            batch = [sessions[i] for i in order[start : start + batch_size]]
            loss, n_skipped = self.train_batch(batch)
            skipped += n_skipped
            if not math.isnan(loss):
                losses.append(loss)
                weights.append(len(batch) - n_skipped)
        self.epochs_done += 1
        mean = float(np.average(losses, weights=weights)) if losses else float("nan")
        if skipped:
            logger.warning("Epoch %d skipped %d samples with undefined posterior", self.epochs_done, skipped)
        return EpochStats(self.epochs_done, mean, skipped, len(losses), losses)


def train_evaluator_epoch(params: EvaluatorParams, sessions: Sequence, optimizer, rng: np.random.Generator, batch_size: int) -> float:
    """One shuffled pass of BCE updates; returns the mean session loss."""
    order = rng.permutation(len(sessions))
    total = 0.0
    for start in range(0, len(order), batch_size):
        batch = [sessions[i] for i in order[start : start + batch_size]]
        grads = params.zeros_like()
        for s in batch:
            loss, g = evaluator_loss(params, s)
            total += loss
            for k, v in g.items():
                grads[k] += v
        for v in grads.values():
            v /= len(batch)
        optimizer.step(params.arrays, grads)
    return total / max(len(sessions), 1)


@dataclass(frozen=True)
class BeamCandidate:
    seq: ItemSequence
    logp: float


def _tie_key(seq: ItemSequence, op: str):
    if op == "perm":
        return seq.rank_index
    return seq.positions


class BeamState:
    """At most ``capacity`` distinct candidates, best accumulated log-prob first."""

    def __init__(self, capacity: int, op: str, candidates: Iterable[BeamCandidate] = ()):
        if capacity < 1:
            raise InvalidArgumentError(f"beam capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.op = op
        self.candidates: list[BeamCandidate] = self._select(candidates)

    def _select(self, candidates: Iterable[BeamCandidate]) -> list[BeamCandidate]:
        best: dict = {}
        for cand in candidates:
            key = _tie_key(cand.seq, self.op)
            if key not in best or cand.logp > best[key].logp:
                best[key] = cand
        ranked = sorted(best.values(), key=lambda c: (-c.logp, _tie_key(c.seq, self.op)))
        return ranked[: self.capacity]

    def merge(self, children: Iterable[BeamCandidate]) -> "BeamState":
        return BeamState(self.capacity, self.op, children)

    @property
    def best(self) -> BeamCandidate:
        return self.candidates[0]

    def __len__(self) -> int:
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)


def expected_condition(cfg: InferenceConfig, l_o: int) -> tuple[int, ...]:
    if cfg.condition_policy == "mask":
        if cfg.condition_mask is None or len(cfg.condition_mask) != l_o:
            raise InvalidArgumentError(f"condition mask must have length {l_o}")
        return tuple(cfg.condition_mask)
    return (1,) * l_o


def condition_likelihood(evaluator: EvaluatorParams, seq: ItemSequence, history: Sequence[int], condition: Sequence[int] | None = None) -> float:
    """Geometric mean over positions of P(feedback at k matches the condition)."""
    probs, _ = evaluator_score(evaluator, seq, history)
    if condition is not None:
        cond = np.asarray(condition)
        probs = np.where(cond == 1, probs, 1.0 - probs)
    probs = np.clip(probs, PROB_CLIP, 1.0)
    return float(np.exp(np.log(probs).mean()))


def _expand_perm(params, cand: BeamCandidate, cond, history, K: int) -> list[BeamCandidate]:
    dist = denoise_distribution(params, cand.seq, cond, None, history, "perm")
    order = sorted(range(len(dist.support)), key=lambda j: (-dist.probs[j], dist.support[j].rank_index))
    return [BeamCandidate(dist.support[j], cand.logp + math.log(dist.probs[j])) for j in order[:K]]


def _expand_token(params, cand: BeamCandidate, cond, history, K: int, top_m: int) -> list[BeamCandidate]:
    dists = denoise_distribution(params, cand.seq, cond, None, history, "token")
    partial: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    for dist in dists:
        top = sorted(range(len(dist.support)), key=lambda z: (-dist.probs[z], z))[:top_m]
        grown = [
            (prefix + (z,), lp + math.log(dist.probs[z]))
            for prefix, lp in partial
            for z in top
            if z not in prefix
        ]
        partial = sorted(grown, key=lambda x: (-x[1], x[0]))[:K]
        if not partial:
            return [cand]
    return [BeamCandidate(cand.seq.with_positions(pos), cand.logp + lp) for pos, lp in partial]


def beam_step(params: ModelParams, beam: BeamState, cond, history: Sequence[int], top_m: int = 4) -> BeamState:
    """Expand every candidate to its top-K children and keep the overall top K."""
    children: list[BeamCandidate] = []
    for cand in beam:
        if beam.op == "perm":
            children.extend(_expand_perm(params, cand, cond, history, beam.capacity))
        else:
            children.extend(_expand_token(params, cand, cond, history, beam.capacity, top_m))
    return beam.merge(children)


@dataclass
class RerankResult:
    sequence: ItemSequence
    diagnostics: dict


def rerank(
    params: ModelParams,
    evaluator: EvaluatorParams,
    input_seq: ItemSequence,
    history: Sequence[int],
    cfg: InferenceConfig,
    op: str = "perm",
) -> RerankResult:
    started = time.perf_counter()
    if op == "perm" and not input_seq.is_permutation:
        raise InvalidArgumentError(f"perm-op reranking needs the input to order the first {input_seq.l_o} base items")
    if op == "token" and input_seq.has_duplicates:
        raise InvalidArgumentError("input sequence repeats an item")
    history = tuple(history)
    cond = expected_condition(cfg, input_seq.l_o)

    beam = BeamState(cfg.beam, op, [BeamCandidate(input_seq, 0.0)])
    previous = condition_likelihood(evaluator, input_seq, history, cond)
    likelihoods = [previous]
    steps = 0
    early_stop = False
    for step in range(1, cfg.max_steps + 1):
        beam = beam_step(params, beam, cond, history, cfg.token_top_m)
        steps = step
        current = condition_likelihood(evaluator, beam.best.seq, history, cond)
        likelihoods.append(current)
        if current - previous < cfg.epsilon:
            early_stop = step < cfg.max_steps
            break
        previous = current

    utilities = [evaluator_score(evaluator, c.seq, history)[1] for c in beam]
    chosen = beam.candidates[int(np.argmax(utilities))].seq
    diagnostics = {
        "op": op,
        "steps": steps,
        "early_stop": early_stop,
        "likelihoods": likelihoods,
        "beam": [
            {"items": list(c.seq.items), "rank_index": c.seq.rank_index, "logp": c.logp}
            for c in beam
        ],
        "utilities": utilities,
        "input": list(input_seq.items),
        "chosen": list(chosen.items),
        "latency_ms": (time.perf_counter() - started) * 1000.0,
    }
    logger.debug("rerank: %s", diagnostics)
    return RerankResult(chosen, diagnostics)


def pointwise_scores(evaluator: EvaluatorParams, seq: ItemSequence, history: Sequence[int]) -> np.ndarray:
    """Each item scored as a one-item list, without the rest of the list as context."""
    return np.array([evaluator_score(evaluator, ItemSequence.from_items([item]), history)[0][0] for item in seq.items])


def greedy_rerank(evaluator: EvaluatorParams, seq: ItemSequence, history: Sequence[int]) -> ItemSequence:
    """Pointwise baseline: sort by per-item score, ties keep the input order."""
    probs = pointwise_scores(evaluator, seq, history)
    order = np.argsort(-probs, kind="stable")
    return seq.with_positions([seq.positions[i] for i in order])
