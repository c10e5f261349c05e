"""Stage-tagged orchestration of PSP construction, training and the ablation grid."""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from itertools import product
from typing import Iterator, Mapping, Optional
import logging
import time

import numpy as np

from .config import TrainConfig
from .dataset import BipartiteGraph, InteractionMatrix, SplitDataset, build_matrix_and_graph
from .graph import WeightedBipartiteGraph, adaptive_topk_select, fuse_graphs
from .linalg import TruncatedFactors, normalize_adjacency, randomized_svd
from .model import EmbeddingModel
from .psp import (
    PositivePairTable,
    PspMode,
    PspQuality,
    UserWeights,
    build_psp,
    compute_user_weights,
    exclude_eval_interactions,
    measure_psp_quality,
)
from .sampler import NegativeSampler
from .train_eval import EvalReport, TrainHistory, evaluate, segment_report, train
from .utils import (
    ConfigError,
    IssueSeverity,
    StageError,
    ValidationIssue,
    as_float,
)

logger = logging.getLogger(__name__)

DEFAULT_GRID = {
    "mode": [mode.value for mode in PspMode],
    "scheme": ["none", "log", "isw", "edw", "crw"],
}
VARIANT_ORDER = (PspMode.W_EW, PspMode.W_HOP_LW, PspMode.W_HOP, PspMode.ONE_HOP)
LOCAL_MODES = (PspMode.ONE_HOP, PspMode.ONE_HOP_X2)
ORDERING_TOLERANCE = 0.01

# SVD inputs: q, oversample, n_power, seed
SvdCache = dict[tuple[int, int, int, int], tuple[TruncatedFactors, BipartiteGraph]]


@contextmanager
def stage(name: str, timings: dict[str, float]) -> Iterator[None]:
    """Time a pipeline stage and tag any failure with its name."""

    started = time.perf_counter()
    logger.debug("Stage %s started", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        logger.error("[%s] %s", name, exc)
        raise StageError(name, exc) from exc
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - started


@dataclass
class PspArtifacts:
    """Everything built before training starts."""

    matrix: InteractionMatrix
    graph: BipartiteGraph
    factors: Optional[TruncatedFactors]
    svd_graph: BipartiteGraph
    g_hat: WeightedBipartiteGraph
    psp: PositivePairTable
    removed_by_guard: int
    weights: UserWeights

    def summary(self) -> dict[str, object]:
        t = self.weights.t
        return {
            "mode": self.psp.mode.value,
            "distinct_pairs": len(self.psp),
            "expanded_pairs": self.psp.total_expanded,
            "removed_by_guard": self.removed_by_guard,
            "train_edges": self.graph.nnz,
            "svd_edges": self.svd_graph.nnz,
            "fused_edges": self.g_hat.nnz,
            "shared_edges": self.graph.nnz + self.svd_graph.nnz - self.g_hat.nnz,
            "weights": {
                "scheme": self.weights.scheme.value,
                "a": self.weights.a,
                "cap": self.weights.cap,
                "min": as_float(t.min()) if t.size else 0.0,
                "max": as_float(t.max()) if t.size else 0.0,
                "mean": as_float(t.mean()) if t.size else 0.0,
            },
        }


@dataclass
class RunResult:
    config: TrainConfig
    split: SplitDataset
    artifacts: PspArtifacts
    model: EmbeddingModel
    history: TrainHistory
    test: EvalReport
    quality: Optional[PspQuality] = None
    train_quality: Optional[PspQuality] = None
    timings: dict[str, float] = field(default_factory=dict)


def construct_psp(
    split: SplitDataset,
    config: TrainConfig,
    timings: Optional[dict[str, float]] = None,
    svd_cache: Optional[SvdCache] = None,
) -> PspArtifacts:
    """normalize -> svd -> topk -> fuse -> psp -> guard -> weights.

    The one-hop modes never read ``G_SVD``; they skip the three SVD stages and
    fuse against an empty neighbor graph, so ``q`` is not checked for them.
    """

    timings = timings if timings is not None else {}
    with stage("prepare", timings):
        matrix, graph = build_matrix_and_graph(split.train)

    factors: Optional[TruncatedFactors] = None
    cache_key = (config.q, config.oversample, config.n_power, config.seed)
    if config.psp_mode in LOCAL_MODES:
        svd_graph = BipartiteGraph.from_lists([[] for _ in range(graph.n_users)], graph.n_items)
        logger.debug("Mode %s reads only G; SVD stages skipped", config.psp_mode.value)
    elif svd_cache is not None and cache_key in svd_cache:
        factors, svd_graph = svd_cache[cache_key]
        logger.debug("Reusing SVD neighbors for q=%d seed=%d", config.q, config.seed)
    else:
        with stage("normalize", timings):
            normalized = normalize_adjacency(matrix, graph)
        with stage("svd", timings):
            factors = randomized_svd(
                normalized,
                config.q,
                oversample=config.oversample,
                n_power=config.n_power,
                seed=config.seed,
            )
        with stage("topk", timings):
            svd_graph = adaptive_topk_select(factors, graph)
        if svd_cache is not None:
            svd_cache[cache_key] = (factors, svd_graph)

    with stage("fuse", timings):
        g_hat = fuse_graphs(graph, svd_graph, config.s)
    with stage("psp", timings):
        psp = build_psp(g_hat, config.psp_mode)
    with stage("guard", timings):
        guarded = exclude_eval_interactions(psp, split.val, split.test)
    with stage("weights", timings):
        weights = compute_user_weights(g_hat, config.weight_scheme, config.a, config.cap)

    return PspArtifacts(
        matrix=matrix,
        graph=graph,
        factors=factors,
        svd_graph=svd_graph,
        g_hat=g_hat,
        psp=guarded,
        removed_by_guard=len(psp) - len(guarded),
        weights=weights,
    )


def build_sampler(config: TrainConfig, artifacts: PspArtifacts) -> NegativeSampler:
    sampler_config = config.sampler_config()
    exclusion = artifacts.psp.positive_graph() if sampler_config.exclude_psp_positives else artifacts.graph
    return NegativeSampler(sampler_config, exclusion, item_degrees=artifacts.graph.col_degrees)


def run_training(
    split: SplitDataset,
    config: TrainConfig,
    ground_truth: Optional[Mapping[int, set[int]]] = None,
    svd_cache: Optional[SvdCache] = None,
) -> RunResult:
    """One end-to-end run: PSP construction, training and test evaluation."""

    timings: dict[str, float] = {}
    artifacts = construct_psp(split, config, timings=timings, svd_cache=svd_cache)

    quality = train_quality = None
    if ground_truth is not None:
        with stage("psp", timings):
            quality = measure_psp_quality(artifacts.psp, ground_truth)
            train_quality = measure_psp_quality(build_psp(artifacts.g_hat, PspMode.ONE_HOP), ground_truth)
        logger.info(
            "PSP quality: Acc=%.4f Cov=%.4f (train positives Acc=%.4f Cov=%.4f)",
            quality.acc_weighted,
            quality.cov,
            train_quality.acc,
            train_quality.cov,
        )

    with stage("train", timings):
        sampler = build_sampler(config, artifacts)
        model, history = train(config, split, artifacts.psp, artifacts.weights, sampler, train_graph=artifacts.graph)
    timings["validation"] = float(sum(history.eval_seconds))

    with stage("evaluate", timings):
        if len(split.test) == 0:
            logger.warning("Test split is empty; test metrics are reported as zero")
        test = evaluate(model, split.test, artifacts.graph, config.ks, batch_users=config.eval_batch_users)
        n_inactive = int(round(config.inactive_fraction * split.n_users))
        test.segments = segment_report(
            model, split.test, artifacts.graph, n_inactive, config.ks, batch_users=config.eval_batch_users
        )
    first_k = config.ks[0]
    logger.info(
        "Test Recall@%d=%.5f Precision@%d=%.5f (inactive Recall@%d=%.5f)",
        first_k,
        test.recall[first_k],
        first_k,
        test.precision[first_k],
        first_k,
        test.segments["inactive"].recall[first_k],
    )
    return RunResult(
        config=config,
        split=split,
        artifacts=artifacts,
        model=model,
        history=history,
        test=test,
        quality=quality,
        train_quality=train_quality,
        timings=timings,
    )


def parse_grid(spec: Optional[str]) -> list[dict[str, str]]:
    """``"mode=w_ew,w_hop;s=1,2"`` -> cartesian product of override dicts."""

    if spec is None or not spec.strip():
        axes = {key: list(values) for key, values in DEFAULT_GRID.items()}
    else:
        axes = {}
        issues: list[ValidationIssue] = []
        known = TrainConfig.config_keys()
        for part in filter(None, (chunk.strip() for chunk in spec.split(";"))):
            key, sep, raw_values = part.partition("=")
            key = key.strip()
            values = [value.strip() for value in raw_values.split(",") if value.strip()]
            if not sep or not values:
                issues.append(ValidationIssue(IssueSeverity.CRITICAL, f"malformed grid axis {part!r}"))
            elif key not in known:
                issues.append(ValidationIssue(IssueSeverity.CRITICAL, "unknown configuration key", key=key))
            elif key in axes:
                issues.append(ValidationIssue(IssueSeverity.CRITICAL, "grid axis given twice", key=key))
            else:
                axes[key] = values
        if issues:
            raise ConfigError(issues)
    keys = list(axes)
    return [dict(zip(keys, combo)) for combo in product(*(axes[key] for key in keys))]


def parse_seeds(spec: str) -> list[int]:
    """``"0..4"`` (inclusive) or ``"0,3,7"``."""

    text = spec.strip()
    try:
        if ".." in text:
            lo, hi = (int(part) for part in text.split("..", 1))
            seeds = list(range(lo, hi + 1))
        else:
            seeds = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ValueError(f"invalid seed list {spec!r}") from None
    if not seeds or min(seeds) < 0:
        raise ValueError(f"seed list {spec!r} must contain non-negative seeds")
    return seeds


@dataclass
class AblationRow:
    """One grid cell aggregated over seeds."""

    overrides: dict[str, str]
    seeds: list[int]
    per_seed: list[dict[str, float]] = field(default_factory=list)

    @property
    def label(self) -> str:
        return " ".join(f"{key}={value}" for key, value in self.overrides.items())

    def values(self, metric: str) -> np.ndarray:
        return np.array([entry[metric] for entry in self.per_seed], dtype=np.float64)

    def mean(self, metric: str) -> float:
        return float(self.values(metric).mean())

    def std(self, metric: str) -> float:
        return float(self.values(metric).std())

    def metric_names(self) -> list[str]:
        return sorted(self.per_seed[0]) if self.per_seed else []

    def to_dict(self) -> dict[str, object]:
        return {
            "overrides": dict(self.overrides),
            "seeds": list(self.seeds),
            "metrics": {
                name: {
                    "mean": as_float(self.mean(name)),
                    "std": as_float(self.std(name)),
                    "per_seed": [as_float(v) for v in self.values(name)],
                }
                for name in self.metric_names()
            },
        }


@dataclass
class AblationTable:
    rows: list[AblationRow]
    ks: tuple[int, ...]
    issues: list[ValidationIssue] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def headline(self) -> str:
        return f"recall@{self.ks[0]}"


def _seed_metrics(result: RunResult) -> dict[str, float]:
    metrics: dict[str, float] = {}
    for k in result.config.ks:
        metrics[f"recall@{k}"] = result.test.recall[k]
        metrics[f"precision@{k}"] = result.test.precision[k]
        metrics[f"inactive_recall@{k}"] = result.test.segments["inactive"].recall[k]
    if result.quality is not None:
        metrics["psp_acc_weighted"] = result.quality.acc_weighted
        metrics["psp_cov"] = result.quality.cov
    return metrics


def run_ablation(
    split: SplitDataset,
    base: TrainConfig,
    grid: list[dict[str, str]],
    seeds: list[int],
    ground_truth: Optional[Mapping[int, set[int]]] = None,
) -> AblationTable:
    """Run every grid cell for every seed; seeds are shared across cells."""

    # validate every cell before spending time on training
    configs = [[base.with_overrides({**cell, "seed": seed}) for seed in seeds] for cell in grid]
    svd_cache: SvdCache = {}
    rows: list[AblationRow] = []
    timings: dict[str, float] = {}
    for cell, cell_configs in zip(grid, configs):
        row = AblationRow(overrides=dict(cell), seeds=list(seeds))
        for config in cell_configs:
            logger.info("Ablation cell [%s] seed=%d", row.label or "base", config.seed)
            result = run_training(split, config, ground_truth=ground_truth, svd_cache=svd_cache)
            row.per_seed.append(_seed_metrics(result))
            for name, seconds in result.timings.items():
                timings[name] = timings.get(name, 0.0) + seconds
        rows.append(row)

    table = AblationTable(rows=rows, ks=base.ks, timings=timings)
    table.issues = check_variant_ordering(table)
    return table


def check_variant_ordering(table: AblationTable) -> list[ValidationIssue]:
    """Flag cells where a simpler variant beats a richer one on the headline metric.

    Rows are compared within groups that share every override except ``mode``.
    """

    metric = table.headline
    groups: dict[tuple, dict[str, AblationRow]] = {}
    for row in table.rows:
        mode = row.overrides.get("mode")
        if mode is None or not row.per_seed:
            continue
        context = tuple(sorted((k, v) for k, v in row.overrides.items() if k != "mode"))
        groups.setdefault(context, {})[mode] = row

    issues: list[ValidationIssue] = []
    for context, by_mode in groups.items():
        present = [mode.value for mode in VARIANT_ORDER if mode.value in by_mode]
        where = " ".join(f"{k}={v}" for k, v in context) or "base"
        for higher, lower in zip(present, present[1:]):
            high, low = by_mode[higher].mean(metric), by_mode[lower].mean(metric)
            if low <= high:
                continue
            relative = (low - high) / high if high > 0 else float("inf")
            beyond = " (beyond the 1% tolerance)" if relative >= ORDERING_TOLERANCE else ""
            issues.append(
                ValidationIssue(
                    IssueSeverity.WARNING,
                    f"{lower} exceeds {higher} on {metric} by {relative:.2%} [{where}]{beyond}",
                    key="ordering",
                )
            )
    for issue in issues:
        logger.warning("Variant ordering: %s", issue.message)
    return issues


__all__ = [
    "AblationRow",
    "AblationTable",
    "DEFAULT_GRID",
    "PspArtifacts",
    "RunResult",
    "build_sampler",
    "check_variant_ordering",
    "construct_psp",
    "parse_grid",
    "parse_seeds",
    "run_ablation",
    "run_training",
    "stage",
]
