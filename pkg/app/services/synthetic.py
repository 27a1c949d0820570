"""Synthetic logged sessions with listwise interplay.

Items carry noisy one-hot topic vectors, users a Dirichlet topic preference.
A pointwise logging policy orders each session's candidates, then feedback
at output position k is drawn from

    sigmoid(affinity(u, i_k) - penalty * max_sim(i_k, i_<k) + bias_k + BASE_LOGIT + noise * N(0, 1))

so an item shown after a near-duplicate loses positive rate, which a
listwise reranker can learn to avoid.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit, softmax

from app.core.config import WorldConfig
from app.core.errors import InvalidArgumentError
from app.services.data import Session
from app.services.permcore import ItemSequence

logger = logging.getLogger(__name__)

BASE_LOGIT = -1.0
TOPIC_JITTER = 0.25
ITEM_ID_OFFSET = 10_000
USER_ID_OFFSET = 1


def default_position_bias(l_o: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, l_o + 2, dtype=np.float64))


@dataclass(frozen=True)
class SyntheticWorld:
    item_ids: np.ndarray
    item_vectors: np.ndarray
    quality: np.ndarray
    user_ids: np.ndarray
    preferences: np.ndarray
    position_bias: np.ndarray
    redundancy_penalty: float
    noise: float
    affinity_scale: float

    @property
    def n_topics(self) -> int:
        return self.item_vectors.shape[1]

    def affinity(self, user: int, items: Sequence[int] | np.ndarray | None = None) -> np.ndarray:
        """Affinity of user index ``user`` to item indices (all items when None)."""
        vectors = self.item_vectors if items is None else self.item_vectors[np.asarray(items)]
        quality = self.quality if items is None else self.quality[np.asarray(items)]
        return self.affinity_scale * (vectors @ self.preferences[user] - 1.0 / self.n_topics) + quality

    def redundancy(self, items: Sequence[int]) -> np.ndarray:
        """max(0, cosine) to the most similar earlier item, per position."""
        v = self.item_vectors[np.asarray(items)]
        sim = np.clip(v @ v.T, 0.0, None)
        out = np.zeros(len(items))
        for k in range(1, len(items)):
            out[k] = sim[k, :k].max()
        return out


def build_world(cfg: WorldConfig, l_o: int, rng: np.random.Generator) -> SyntheticWorld:
    topics = rng.integers(cfg.n_topics, size=cfg.n_items)
    vectors = np.eye(cfg.n_topics)[topics] + TOPIC_JITTER * rng.standard_normal((cfg.n_items, cfg.n_topics))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    bias = default_position_bias(l_o) if cfg.position_bias is None else np.asarray(cfg.position_bias, dtype=np.float64)
    return SyntheticWorld(
        item_ids=ITEM_ID_OFFSET + np.arange(cfg.n_items),
        item_vectors=vectors,
        quality=0.5 * rng.standard_normal(cfg.n_items),
        user_ids=USER_ID_OFFSET + np.arange(cfg.n_users),
        preferences=rng.dirichlet(np.full(cfg.n_topics, 0.5), size=cfg.n_users),
        position_bias=bias,
        redundancy_penalty=cfg.redundancy_penalty,
        noise=cfg.noise,
        affinity_scale=cfg.affinity_scale,
    )


def feedback_logits(world: SyntheticWorld, user: int, items: Sequence[int]) -> np.ndarray:
    """Noise-free feedback logits for item indices shown in this order."""
    return (
        world.affinity(user, items)
        - world.redundancy_penalty * world.redundancy(items)
        + world.position_bias[: len(items)]
        + BASE_LOGIT
    )


def positive_probabilities(world: SyntheticWorld, user: int, items: Sequence[int]) -> np.ndarray:
    return expit(feedback_logits(world, user, items))


def simulate_feedback(world: SyntheticWorld, user: int, items: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    logits = feedback_logits(world, user, items) + world.noise * rng.standard_normal(len(items))
    return (rng.random(len(items)) < expit(logits)).astype(np.int64)


def logging_order(world: SyntheticWorld, user: int, candidates: np.ndarray, temperature: float, rng: np.random.Generator) -> np.ndarray:
    """Plackett-Luce draw over pointwise affinity (Gumbel top-k)."""
    keys = world.affinity(user, candidates) / temperature + rng.gumbel(size=len(candidates))
    return candidates[np.argsort(-keys, kind="stable")]


def _histories(world: SyntheticWorld, cfg: WorldConfig, rng: np.random.Generator) -> list[tuple[int, ...]]:
    out = []
    replace = cfg.history_len > cfg.n_items
    for u in range(cfg.n_users):
        if cfg.history_len == 0:
            out.append(())
            continue
        idx = rng.choice(cfg.n_items, size=cfg.history_len, replace=replace, p=softmax(world.affinity(u)))
        out.append(tuple(int(world.item_ids[i]) for i in idx))
    return out


def generate_world_sessions(cfg: WorldConfig, l_o: int, seed: int) -> tuple[SyntheticWorld, list[Session]]:
    if cfg.n_items < l_o:
        raise InvalidArgumentError(f"n_items={cfg.n_items} cannot fill lists of length {l_o}")
    rng = np.random.default_rng(seed)
    world = build_world(cfg, l_o, rng)
    histories = _histories(world, cfg, rng)
    sessions = []
    for s in range(cfg.n_sessions):
        user = int(rng.integers(cfg.n_users))
        candidates = rng.choice(cfg.n_items, size=l_o, replace=False, p=softmax(world.affinity(user)))
        shown = logging_order(world, user, candidates, cfg.logging_temperature, rng)
        feedback = simulate_feedback(world, user, shown, rng)
        sessions.append(
            Session(
                session_id=s + 1,
                user_id=int(world.user_ids[user]),
                history=histories[user],
                displayed=ItemSequence.from_items([int(world.item_ids[i]) for i in shown]),
                feedback=tuple(int(y) for y in feedback),
            )
        )
    positive_rate = float(np.mean([np.mean(s.feedback) for s in sessions])) if sessions else 0.0
    logger.info("Synthetic world: %d sessions, %d users, %d items, positive rate %.3f", len(sessions), cfg.n_users, cfg.n_items, positive_rate)
    return world, sessions


def split_by_time(sessions: list[Session], test_fraction: float) -> tuple[list[Session], list[Session]]:
    """Sessions are in logging order; the last ``test_fraction`` become the test set."""
    n = len(sessions)
    n_test = min(max(1, round(n * test_fraction)), n - 1) if n > 1 else 0
    return sessions[: n - n_test], sessions[n - n_test :]


def generate_synthetic(cfg: WorldConfig, l_o: int, seed: int) -> tuple[list[Session], list[Session]]:
    _, sessions = generate_world_sessions(cfg, l_o, seed)
    return split_by_time(sessions, cfg.test_fraction)
