"""Planted-block synthetic interactions with known ground truth and injected noise."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional
import logging

import numpy as np

from .utils import ConfigError, IssueSeverity, ValidationIssue, derive_rng, write_json

logger = logging.getLogger(__name__)

INTERACTIONS_FILE = "interactions.tsv"
GROUND_TRUTH_FILE = "ground_truth.tsv"
SUMMARY_FILE = "synth.json"


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator parameters.

    Users and items are assigned to ``n_blocks`` preference clusters. A user
    truly likes every item of their own block, plus each cross-block item with
    probability ``density_out``. Liked items are observed independently with
    probability ``density_in`` scaled by a Pareto(``activity_skew``) activity
    factor and by a per-block factor rising geometrically from 1 to
    ``block_activity_ratio``, capped at 1. ``noise_rate`` of the observed
    interactions are then replaced by items the user does not like.
    """

    n_users: int = 500
    n_items: int = 300
    n_blocks: int = 5
    density_in: float = 0.05
    density_out: float = 0.01
    noise_rate: float = 0.1
    activity_skew: float = 1.2
    block_activity_ratio: float = 6.0
    seed: int = 0

    def validate(self) -> list[ValidationIssue]:
        issues: list[ValidationIssue] = []

        def fail(key: str, message: str) -> None:
            issues.append(ValidationIssue(IssueSeverity.CRITICAL, message, key=key))

        if self.n_users < 1:
            fail("n_users", "must be >= 1")
        if self.n_items < 2:
            fail("n_items", "must be >= 2")
        if not 1 <= self.n_blocks <= max(self.n_items, 1):
            fail("n_blocks", "must lie in [1, n_items]")
        if not 0.0 < self.density_in <= 1.0:
            fail("density_in", "must lie in (0, 1]")
        if not 0.0 <= self.density_out < min(self.density_in, 1.0):
            fail("density_out", "need 0 <= density_out < density_in")
        if not 0.0 <= self.noise_rate < 1.0:
            fail("noise_rate", "must lie in [0, 1)")
        if not self.activity_skew > 0:
            fail("activity_skew", "must be > 0")
        if not self.block_activity_ratio >= 1.0:
            fail("block_activity_ratio", "must be >= 1")
        if self.seed < 0:
            fail("seed", "must be >= 0")
        return issues


@dataclass
class SyntheticData:
    spec: SyntheticSpec
    observed: list[list[int]]
    ground_truth: list[set[int]]
    user_blocks: np.ndarray
    item_blocks: np.ndarray
    noisy_pairs: int

    @property
    def n_interactions(self) -> int:
        return sum(len(items) for items in self.observed)

    def summary(self) -> dict[str, object]:
        return {
            "spec": asdict(self.spec),
            "interactions": self.n_interactions,
            "ground_truth_pairs": sum(len(items) for items in self.ground_truth),
            "noisy_pairs": self.noisy_pairs,
        }


def generate(spec: SyntheticSpec) -> SyntheticData:
    """Draw one dataset from the ``synth`` stream of ``spec.seed``."""

    issues = spec.validate()
    if issues:
        raise ConfigError(issues)

    rng = derive_rng(spec.seed, "synth")
    item_blocks = rng.permutation(np.arange(spec.n_items) % spec.n_blocks)
    user_blocks = rng.integers(spec.n_blocks, size=spec.n_users)
    same_block = user_blocks[:, None] == item_blocks[None, :]
    likes = same_block | (rng.random((spec.n_users, spec.n_items)) < spec.density_out)
    activity = 1.0 + rng.pareto(spec.activity_skew, size=spec.n_users)
    block_scale = np.geomspace(1.0, spec.block_activity_ratio, spec.n_blocks)
    observe = np.minimum(1.0, spec.density_in * activity * block_scale[user_blocks])

    observed: list[list[int]] = []
    ground_truth: list[set[int]] = []
    noisy = 0
    for u in range(spec.n_users):
        truth = np.flatnonzero(likes[u])
        chosen = truth[rng.random(truth.size) < observe[u]]
        if chosen.size == 0:
            chosen = np.array([rng.choice(truth)])

        flips = np.flatnonzero(rng.random(chosen.size) < spec.noise_rate)
        if flips.size:
            outside = np.setdiff1d(np.arange(spec.n_items), truth)
            take = min(flips.size, outside.size)
            if take:
                chosen[flips[:take]] = rng.choice(outside, size=take, replace=False)
                noisy += take
        observed.append(sorted(chosen.tolist()))
        ground_truth.append(set(truth.tolist()))

    data = SyntheticData(
        spec=spec,
        observed=observed,
        ground_truth=ground_truth,
        user_blocks=user_blocks,
        item_blocks=item_blocks,
        noisy_pairs=noisy,
    )
    logger.info(
        "Synthetic data: %d users, %d items, %d interactions (%d noisy)",
        spec.n_users,
        spec.n_items,
        data.n_interactions,
        noisy,
    )
    return data


def _write_pairs(path: Path, rows: list, header: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        handle.write(f"# {header}\n")
        for u, items in enumerate(rows):
            for p in sorted(items):
                handle.write(f"u{u}\ti{p}\n")


def write_synthetic(data: SyntheticData, out_dir: Path) -> tuple[Path, Path]:
    """Write ``interactions.tsv``, ``ground_truth.tsv`` and ``synth.json``."""

    interactions_path = out_dir / INTERACTIONS_FILE
    truth_path = out_dir / GROUND_TRUTH_FILE
    _write_pairs(interactions_path, data.observed, "observed interactions: user<TAB>item")
    _write_pairs(truth_path, data.ground_truth, "ground truth preferences: user<TAB>item")
    write_json(out_dir / SUMMARY_FILE, data.summary())
    return interactions_path, truth_path


def noisy_fraction(data: SyntheticData) -> Optional[float]:
    total = data.n_interactions
    return data.noisy_pairs / total if total else None


__all__ = [
    "GROUND_TRUTH_FILE",
    "INTERACTIONS_FILE",
    "SyntheticData",
    "SyntheticSpec",
    "generate",
    "noisy_fraction",
    "write_synthetic",
]
