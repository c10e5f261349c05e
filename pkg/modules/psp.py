"""Positive sample pair construction, leakage guard and user weighting."""
from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union
import logging

import numpy as np
import scipy.sparse as sp

from .dataset import BipartiteGraph, InteractionDataset
from .graph import WeightedBipartiteGraph

logger = logging.getLogger(__name__)

DEFAULT_WEIGHT_CAP = 1e4


class PspMode(str, Enum):
    """How positive pairs are drawn from the graphs."""

    ONE_HOP = "one_hop"
    ONE_HOP_X2 = "one_hop_x2"
    SVD_HOP = "svd_hop"
    W_HOP = "w_hop"
    W_HOP_LW = "w_hop_lw"
    W_EW = "w_ew"


class WeightScheme(str, Enum):
    """Activity-aware user weighting functions."""

    NONE = "none"
    LOG = "log"
    ISW = "isw"
    EDW = "edw"
    CRW = "crw"


@dataclass(frozen=True, eq=False)
class PositivePairTable:
    """Distinct positive pairs with replication counts.

    ``loss_weight`` is a per-pair loss multiplier; it is only different from 1
    under ``w_hop_lw``.
    """

    users: np.ndarray
    items: np.ndarray
    multiplicity: np.ndarray
    loss_weight: np.ndarray
    mode: PspMode
    n_users: int
    n_items: int

    def __len__(self) -> int:
        return int(self.users.shape[0])

    @property
    def total_expanded(self) -> int:
        return int(self.multiplicity.sum())

    @property
    def pairs(self) -> list[tuple[int, int, int]]:
        return list(zip(self.users.tolist(), self.items.tolist(), self.multiplicity.tolist()))

    def pair_keys(self) -> np.ndarray:
        return self.users * self.n_items + self.items

    def expand(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """The replicated stream as ``(users, items, loss_weights)`` arrays."""

        return (
            np.repeat(self.users, self.multiplicity),
            np.repeat(self.items, self.multiplicity),
            np.repeat(self.loss_weight, self.multiplicity),
        )

    def positive_graph(self) -> BipartiteGraph:
        """Items each user holds as positives (the negative-sampling exclusion)."""

        csr = sp.csr_matrix(
            (np.ones(len(self)), (self.users, self.items)),
            shape=(self.n_users, self.n_items),
        )
        csr.sum_duplicates()
        return BipartiteGraph.from_csr(csr)


@dataclass(frozen=True, eq=False)
class UserWeights:
    """Per-user loss weights ``t_u``."""

    t: np.ndarray
    scheme: WeightScheme
    a: float
    cap: float

    def __getitem__(self, users: Union[int, np.ndarray]) -> Union[float, np.ndarray]:
        return self.t[users]

    @classmethod
    def uniform(cls, n_users: int) -> "UserWeights":
        return cls(t=np.ones(n_users), scheme=WeightScheme.NONE, a=1.0, cap=DEFAULT_WEIGHT_CAP)


@dataclass(frozen=True)
class PspQuality:
    """Acc/Cov of constructed positives against a ground truth."""

    acc: float
    cov: float
    acc_weighted: float
    cov_weighted: float
    n_pairs: int
    n_true_pairs: int


def _edges_table(graph: BipartiteGraph, mode: PspMode, repeat: int = 1) -> PositivePairTable:
    users = graph.edge_users()
    return PositivePairTable(
        users=users,
        items=graph.indices.copy(),
        multiplicity=np.full(graph.nnz, repeat, dtype=np.int64),
        loss_weight=np.ones(graph.nnz),
        mode=mode,
        n_users=graph.n_users,
        n_items=graph.n_items,
    )


def build_psp(g_hat: WeightedBipartiteGraph, mode: Union[PspMode, str], s: Optional[int] = None) -> PositivePairTable:
    """Build the positive pair table for one construction mode."""

    mode = PspMode(mode)
    if s is not None and s != g_hat.s:
        raise ValueError(f"s={s} does not match the fused graph weight s={g_hat.s}")

    if mode in (PspMode.ONE_HOP, PspMode.ONE_HOP_X2):
        if g_hat.local_graph is None:
            raise ValueError(f"mode {mode.value} needs the interaction graph G")
        table = _edges_table(g_hat.local_graph, mode, repeat=2 if mode is PspMode.ONE_HOP_X2 else 1)
    elif mode is PspMode.SVD_HOP:
        if g_hat.svd_graph is None:
            raise ValueError("mode svd_hop needs the SVD neighbor graph")
        table = _edges_table(g_hat.svd_graph, mode)
    else:
        weights = g_hat.weights.astype(np.int64)
        table = PositivePairTable(
            users=g_hat.edge_users(),
            items=g_hat.indices.copy(),
            multiplicity=weights.copy() if mode is PspMode.W_EW else np.ones_like(weights),
            loss_weight=weights.astype(np.float64) if mode is PspMode.W_HOP_LW else np.ones(weights.shape[0]),
            mode=mode,
            n_users=g_hat.n_users,
            n_items=g_hat.n_items,
        )

    logger.info("PSP mode=%s: %d distinct pairs, %d expanded", mode.value, len(table), table.total_expanded)
    return table


def exclude_eval_interactions(
    psp: PositivePairTable,
    val: InteractionDataset,
    test: InteractionDataset,
) -> PositivePairTable:
    """Drop every pair that appears in the validation or test interactions."""

    held_out = np.union1d(val.pair_keys(), test.pair_keys())
    keep = ~np.isin(psp.pair_keys(), held_out)
    removed = int(len(psp) - keep.sum())
    if removed:
        logger.info("Leakage guard removed %d pairs", removed)
    return replace(
        psp,
        users=psp.users[keep],
        items=psp.items[keep],
        multiplicity=psp.multiplicity[keep],
        loss_weight=psp.loss_weight[keep],
    )


def compute_user_weights(
    g_hat: WeightedBipartiteGraph,
    scheme: Union[WeightScheme, str],
    a: float,
    cap: float = DEFAULT_WEIGHT_CAP,
) -> UserWeights:
    """Weights decreasing in the fused degree ``d = |P_u^G^|``.

    Users with ``d = 0`` get weight 0 except under ``none``; every scheme is
    clamped to ``[0, cap]``. ``log`` uses the natural logarithm.
    """

    scheme = WeightScheme(scheme)
    if not a > 0:
        raise ValueError(f"sensitivity a must be positive, got {a!r}")
    if not cap > 0:
        raise ValueError(f"weight cap must be positive, got {cap!r}")

    d = g_hat.fused_degrees.astype(np.float64)
    if scheme is WeightScheme.NONE:
        return UserWeights(t=np.ones_like(d), scheme=scheme, a=float(a), cap=float(cap))

    active = d > 0
    scaled = a * d[active]
    t = np.zeros_like(d)
    if scheme is WeightScheme.LOG:
        t[active] = 1.0 / np.log1p(scaled)
    elif scheme is WeightScheme.ISW:
        t[active] = 1.0 / np.sqrt(scaled + 1.0)
    elif scheme is WeightScheme.EDW:
        t[active] = np.exp(-scaled)
    else:
        t[active] = 1.0 / scaled
    t = np.clip(t, 0.0, cap)
    return UserWeights(t=t, scheme=scheme, a=float(a), cap=float(cap))


def measure_psp_quality(
    psp: PositivePairTable,
    ground_truth: Union[Sequence[Iterable[int]], Mapping[int, Iterable[int]]],
) -> PspQuality:
    """Acc = P(p in D_u | p in S_u+), Cov = P(p in S_u+ | p in D_u).

    The weighted variants count each PSP pair by its multiplicity; weighted
    Cov normalizes by the largest multiplicity so it stays in [0, 1].
    """

    if len(psp) == 0:
        raise ValueError("cannot measure the quality of an empty PSP")

    entries = ground_truth.items() if isinstance(ground_truth, Mapping) else enumerate(ground_truth)
    gt_users: list[int] = []
    gt_items: list[int] = []
    for u, items in entries:
        for p in items:
            gt_users.append(int(u))
            gt_items.append(int(p))

    # ground-truth items unseen in the data may carry indices >= n_items
    stride = max(psp.n_items, max(gt_items, default=-1) + 1)
    gt_keys = np.unique(np.asarray(gt_users, dtype=np.int64) * stride + np.asarray(gt_items, dtype=np.int64))
    hits = np.isin(psp.users * stride + psp.items, gt_keys)

    mult = psp.multiplicity.astype(np.float64)
    n_true = int(gt_keys.shape[0])
    hit_count = float(hits.sum())
    weighted_hits = float(mult[hits].sum())
    return PspQuality(
        acc=hit_count / len(psp),
        cov=hit_count / n_true if n_true else 0.0,
        acc_weighted=weighted_hits / float(mult.sum()),
        cov_weighted=weighted_hits / (n_true * float(mult.max())) if n_true else 0.0,
        n_pairs=len(psp),
        n_true_pairs=n_true,
    )


def export_psp(psp: PositivePairTable, path: Path) -> None:
    """Write ``u<TAB>p<TAB>multiplicity`` lines."""

    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for u, p, m in psp.pairs:
            handle.write(f"{u}\t{p}\t{m}\n")


__all__ = [
    "DEFAULT_WEIGHT_CAP",
    "PositivePairTable",
    "PspMode",
    "PspQuality",
    "UserWeights",
    "WeightScheme",
    "build_psp",
    "compute_user_weights",
    "exclude_eval_interactions",
    "export_psp",
    "measure_psp_quality",
]
