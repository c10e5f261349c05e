"""Negative samplers f(u) with positive-set exclusion."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Collection, Optional
import logging

import numpy as np

from .dataset import BipartiteGraph

logger = logging.getLogger(__name__)

MAX_REJECTIONS = 100

ScoreFn = Callable[[int, np.ndarray], np.ndarray]


class SamplerKind(str, Enum):
    UNIFORM = "uniform"
    POPULARITY = "popularity"
    DYNAMIC = "dynamic"


@dataclass(frozen=True)
class NegativeSamplerConfig:
    """Sampler selection and its parameters.

    ``exclude_psp_positives`` picks the exclusion set: every PSP positive of
    the user when true, only observed train items otherwise.
    """

    kind: SamplerKind = SamplerKind.UNIFORM
    popularity_exponent: float = 1.0
    candidate_count: int = 8
    seed: int = 0
    exclude_psp_positives: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", SamplerKind(self.kind))
        if self.candidate_count < 1:
            raise ValueError(f"candidate count M must be >= 1, got {self.candidate_count}")
        if self.popularity_exponent < 0:
            raise ValueError(f"popularity exponent must be >= 0, got {self.popularity_exponent}")


def _excluded_in_catalog(exclusion: Collection[int], n_items: int) -> np.ndarray:
    excluded = np.zeros(n_items, dtype=bool)
    idx = np.fromiter((p for p in exclusion if 0 <= p < n_items), dtype=np.int64)
    excluded[idx] = True
    return excluded


def sample_uniform(u: int, exclusion: Collection[int], rng: np.random.Generator, *, n_items: int) -> int:
    """Uniform draw over items outside ``exclusion``.

    Rejection sampling; after ``MAX_REJECTIONS`` misses the complement is
    enumerated explicitly.
    """

    for _ in range(MAX_REJECTIONS):
        p = int(rng.integers(n_items))
        if p not in exclusion:
            return p
    complement = np.flatnonzero(~_excluded_in_catalog(exclusion, n_items))
    if complement.size == 0:
        raise ValueError(f"user {u}: every item is excluded")
    return int(complement[rng.integers(complement.size)])


def sample_popularity(
    u: int,
    exclusion: Collection[int],
    exponent: float,
    rng: np.random.Generator,
    *,
    item_degrees: np.ndarray,
) -> int:
    """Draw proportional to ``colD(p) ** exponent`` over non-excluded items with ``colD(p) > 0``."""

    degrees = np.asarray(item_degrees, dtype=np.float64)
    mass = np.where(degrees > 0, np.power(degrees, exponent, where=degrees > 0), 0.0)
    mass[_excluded_in_catalog(exclusion, degrees.shape[0])] = 0.0
    total = mass.sum()
    if total <= 0:
        raise ValueError(f"user {u}: no eligible item with positive popularity")
    return int(rng.choice(degrees.shape[0], p=mass / total))


def sample_dynamic(
    u: int,
    exclusion: Collection[int],
    score_fn: ScoreFn,
    M: int,
    rng: np.random.Generator,
    *,
    n_items: int,
) -> int:
    """Best-scoring of ``M`` uniform candidates (drawn with replacement)."""

    if M < 1:
        raise ValueError(f"candidate count M must be >= 1, got {M}")
    candidates = np.array([sample_uniform(u, exclusion, rng, n_items=n_items) for _ in range(M)])
    scores = np.asarray(score_fn(u, candidates))
    best = candidates[scores == scores.max()]
    return int(best.min())


class NegativeSampler:
    """Vectorized batch sampler used by the trainer.

    Rejection rounds run over the whole batch against the exclusion graph;
    entries still rejected after ``MAX_REJECTIONS`` rounds go through the
    per-user samplers one at a time.
    """

    def __init__(
        self,
        config: NegativeSamplerConfig,
        exclusion: BipartiteGraph,
        item_degrees: Optional[np.ndarray] = None,
    ) -> None:
        self.config = config
        self.exclusion = exclusion
        self.n_items = exclusion.n_items
        self._keys = exclusion.edge_users() * self.n_items + exclusion.indices

        if config.kind is SamplerKind.POPULARITY:
            if item_degrees is None:
                raise ValueError("popularity sampling needs item degrees")
            degrees = np.asarray(item_degrees, dtype=np.float64)
            self._degrees = degrees
            positive = degrees > 0
            self._mass = np.where(positive, np.power(degrees, config.popularity_exponent, where=positive), 0.0)
            self._cdf = np.cumsum(self._mass)
        logger.debug("Negative sampler kind=%s over %d items", config.kind.value, self.n_items)

    def is_excluded(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        keys = users * self.n_items + items
        pos = np.searchsorted(self._keys, keys)
        hit = pos < self._keys.shape[0]
        hit[hit] = self._keys[pos[hit]] == keys[hit]
        return hit

    def sample(
        self,
        users: np.ndarray,
        rng: np.random.Generator,
        model: Optional[object] = None,
    ) -> np.ndarray:
        """One negative per entry of ``users``."""

        users = np.asarray(users, dtype=np.int64)
        kind = self.config.kind
        if kind is SamplerKind.UNIFORM:
            return self._draw(users, rng, self._uniform_draws, self._uniform_fallback)
        if kind is SamplerKind.POPULARITY:
            return self._draw(users, rng, self._popularity_draws, self._popularity_fallback)
        if model is None:
            raise ValueError("dynamic sampling needs the current model")
        return self._dynamic(users, rng, model)

    def _reject(self, users, rng, draws) -> tuple[np.ndarray, np.ndarray]:
        """Batch rejection rounds; returns the draws and the still-excluded positions."""

        out = draws(users.shape[0], rng)
        pending = np.flatnonzero(self.is_excluded(users, out))
        for _ in range(MAX_REJECTIONS):
            if pending.size == 0:
                break
            out[pending] = draws(pending.size, rng)
            pending = pending[self.is_excluded(users[pending], out[pending])]
        return out, pending

    def _draw(self, users, rng, draws, fallback) -> np.ndarray:
        out, pending = self._reject(users, rng, draws)
        for i in pending.tolist():
            out[i] = fallback(int(users[i]), rng)
        return out

    def _uniform_draws(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(self.n_items, size=size)

    def _excluded_items(self, u: int) -> frozenset[int]:
        return frozenset(self.exclusion.neighbors(u).tolist())

    def _uniform_fallback(self, u: int, rng: np.random.Generator) -> int:
        return sample_uniform(u, self._excluded_items(u), rng, n_items=self.n_items)

    def _popularity_draws(self, size: int, rng: np.random.Generator) -> np.ndarray:
        total = self._cdf[-1]
        if total <= 0:
            raise ValueError("no item has positive popularity")
        return np.searchsorted(self._cdf, rng.random(size) * total, side="right").astype(np.int64)

    def _popularity_fallback(self, u: int, rng: np.random.Generator) -> int:
        return sample_popularity(
            u,
            self._excluded_items(u),
            self.config.popularity_exponent,
            rng,
            item_degrees=self._degrees,
        )

    def _dynamic(self, users: np.ndarray, rng: np.random.Generator, model) -> np.ndarray:
        m = self.config.candidate_count
        candidates, pending = self._reject(np.repeat(users, m), rng, self._uniform_draws)
        candidates = candidates.reshape(users.shape[0], m)
        scores = np.einsum("bd,bmd->bm", model.user_emb[users], model.item_emb[candidates])
        best = scores == scores.max(axis=1, keepdims=True)
        out = np.where(best, candidates, self.n_items).min(axis=1)

        def score_fn(u: int, items: np.ndarray) -> np.ndarray:
            return model.item_emb[items] @ model.user_emb[u]

        # rows with a candidate still excluded are redrawn per user
        for row in np.unique(pending // m).tolist():
            u = int(users[row])
            out[row] = sample_dynamic(u, self._excluded_items(u), score_fn, m, rng, n_items=self.n_items)
        return out


__all__ = [
    "MAX_REJECTIONS",
    "NegativeSampler",
    "NegativeSamplerConfig",
    "SamplerKind",
    "sample_dynamic",
    "sample_popularity",
    "sample_uniform",
]
