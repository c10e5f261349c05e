"""Training loop with early stopping, top-k evaluation and margin diagnostics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union
import logging
import time

import numpy as np

from .config import TrainConfig
from .dataset import BipartiteGraph, InteractionDataset, SplitDataset, build_matrix_and_graph
from .model import (
    EmbeddingModel,
    OptimizerState,
    bpr_loss,
    gradient_step,
    init_embeddings,
    sgd_step,
)
from .psp import PositivePairTable, PspMode, UserWeights
from .sampler import NegativeSampler
from .utils import TrainingError, as_float, derive_rng

logger = logging.getLogger(__name__)

MAX_PROBE_ETA = 1e-2


@dataclass
class EvalReport:
    """Macro-averaged Recall@k / Precision@k over evaluable users."""

    recall: dict[int, float]
    precision: dict[int, float]
    n_evaluable_users: int
    segments: dict[str, "EvalReport"] = field(default_factory=dict)
    epoch: Optional[int] = None
    seconds: float = 0.0

    def to_dict(self) -> dict:
        """Deterministic payload (wall-clock time excluded)."""

        payload: dict = {
            "n_evaluable_users": self.n_evaluable_users,
            "recall": {str(k): as_float(v) for k, v in self.recall.items()},
            "precision": {str(k): as_float(v) for k, v in self.precision.items()},
        }
        if self.epoch is not None:
            payload["epoch"] = self.epoch
        if self.segments:
            payload["segments"] = {name: seg.to_dict() for name, seg in self.segments.items()}
        return payload


@dataclass
class TrainHistory:
    """One record per epoch; evaluated epochs carry validation metrics."""

    records: list[dict] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_score: float = float("-inf")
    stopped_epoch: int = 0
    eval_seconds: list[float] = field(default_factory=list)

    def evaluations(self) -> list[dict]:
        return [r for r in self.records if "val_recall" in r]


class EarlyStopping:
    """Stop after ``patience`` evaluations without a strict improvement."""

    def __init__(self, patience: int) -> None:
        if patience < 1:
            raise ValueError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.best = float("-inf")
        self.bad_rounds = 0

    def update(self, score: float) -> tuple[bool, bool]:
        """Return ``(improved, should_stop)``."""

        if score > self.best:
            self.best = score
            self.bad_rounds = 0
            return True, False
        self.bad_rounds += 1
        return False, self.bad_rounds >= self.patience


@dataclass
class MarginProbe:
    """Margin statistics around one plain SGD step."""

    mean_before: float
    mean_after: float
    gain: np.ndarray
    gain_by_weight: dict[float, float]

    @property
    def mean_gain(self) -> float:
        return self.mean_after - self.mean_before


def train(
    config: TrainConfig,
    split: SplitDataset,
    psp: PositivePairTable,
    weights: UserWeights,
    sampler: NegativeSampler,
    train_graph: Optional[BipartiteGraph] = None,
) -> tuple[EmbeddingModel, TrainHistory]:
    """Weighted BPR over the expanded PSP stream; returns the best-validation model.

    One epoch is one pass over ``sum(multiplicity)`` triplets, shuffled under
    an epoch-derived seed, with one fresh negative per occurrence.
    """

    if psp.total_expanded == 0:
        raise TrainingError("PSP is empty after the leakage guard")
    if train_graph is None:
        _, train_graph = build_matrix_and_graph(split.train)

    model = init_embeddings(split.n_users, split.n_items, config.d, config.seed)
    state = OptimizerState.for_model(
        model,
        lr=config.lr,
        l2=config.l2,
        decoupled_weight_decay=config.decoupled_weight_decay,
    )
    stream_users, stream_items, stream_lw = psp.expand()
    use_loss_weights = psp.mode is PspMode.W_HOP_LW
    sampler_seed = sampler.config.seed
    n = stream_users.shape[0]
    first_k = config.ks[0]

    history = TrainHistory()
    stopper = EarlyStopping(config.patience)
    best_model: Optional[EmbeddingModel] = None
    can_validate = len(split.val) > 0
    if not can_validate:
        logger.warning("Validation split is empty; training runs all %d epochs", config.max_epochs)

    logger.info("Training on %d triplets per epoch (batch=%d, d=%d)", n, config.batch_size, config.d)
    for epoch in range(1, config.max_epochs + 1):
        order = derive_rng(config.seed, "shuffle", epoch).permutation(n)
        sampler_rng = derive_rng(sampler_seed, "sampler", epoch)
        epoch_loss = 0.0
        for batch_no, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            users = stream_users[idx]
            negatives = sampler.sample(users, sampler_rng, model)
            batch = np.stack([users, stream_items[idx], negatives], axis=1)
            loss, grads = bpr_loss(
                batch,
                weights,
                model,
                l2=state.loss_l2,
                loss_weights=stream_lw[idx] if use_loss_weights else None,
            )
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, batch {batch_no}")
            gradient_step(grads, state, model)
            epoch_loss += loss
        if not model.is_finite():
            raise TrainingError(f"embeddings became non-finite after epoch {epoch}")

        record: dict = {"epoch": epoch, "loss": as_float(epoch_loss)}
        history.stopped_epoch = epoch
        if can_validate and epoch % config.eval_every == 0:
            report = evaluate(model, split.val, train_graph, config.ks, batch_users=config.eval_batch_users)
            history.eval_seconds.append(report.seconds)
            score = report.recall[first_k]
            record["val_recall"] = {str(k): as_float(v) for k, v in report.recall.items()}
            record["val_precision"] = {str(k): as_float(v) for k, v in report.precision.items()}
            improved, stop = stopper.update(score)
            if improved:
                best_model = model.copy()
                history.best_epoch = epoch
                history.best_score = score
            logger.info("Epoch %d loss=%.4f val Recall@%d=%.5f%s", epoch, epoch_loss, first_k, score, " *" if improved else "")
            history.records.append(record)
            if stop:
                logger.info("Early stop at epoch %d (best epoch %s)", epoch, history.best_epoch)
                break
        else:
            logger.debug("Epoch %d loss=%.4f", epoch, epoch_loss)
            history.records.append(record)

    return (best_model if best_model is not None else model), history


def _eval_keys(eval_set: InteractionDataset, n_items: int) -> np.ndarray:
    return np.unique(eval_set.users * n_items + eval_set.items)


def evaluate(
    model: EmbeddingModel,
    eval_set: InteractionDataset,
    train_positive: BipartiteGraph,
    ks: Sequence[int],
    users: Optional[np.ndarray] = None,
    batch_users: int = 1024,
) -> EvalReport:
    """All-item ranking with observed train interactions excluded.

    ``users`` restricts the evaluable population (segments); users with no
    eval items never count.
    """

    started = time.perf_counter()
    ks = [int(k) for k in ks]
    n_items = model.n_items
    eval_counts = np.bincount(eval_set.users, minlength=model.n_users)
    candidates = np.flatnonzero(eval_counts > 0)
    if users is not None:
        candidates = np.intersect1d(candidates, np.asarray(users, dtype=np.int64))

    recall_sum = {k: 0.0 for k in ks}
    precision_sum = {k: 0.0 for k in ks}
    if candidates.size:
        eval_keys = _eval_keys(eval_set, n_items)
        train_csr = train_positive.to_csr()
        kmax = min(max(ks), n_items)
        for start in range(0, candidates.size, batch_users):
            block = candidates[start : start + batch_users]
            scores = model.user_emb[block] @ model.item_emb.T
            seen = train_csr[block].tocoo()
            scores[seen.row, seen.col] = -np.inf
            # stable sort keeps ascending item index among equal scores
            top = np.argsort(-scores, axis=1, kind="stable")[:, :kmax]
            eligible = np.isfinite(np.take_along_axis(scores, top, axis=1))
            hit = np.isin(block[:, None] * n_items + top, eval_keys) & eligible
            cum_hits = np.cumsum(hit, axis=1)
            n_eval = eval_counts[block].astype(np.float64)
            for k in ks:
                hits_k = cum_hits[:, min(k, kmax) - 1].astype(np.float64)
                recall_sum[k] += float(np.sum(hits_k / n_eval))
                precision_sum[k] += float(np.sum(hits_k / k))

    n_eval_users = int(candidates.size)
    denom = float(n_eval_users) if n_eval_users else 1.0
    return EvalReport(
        recall={k: recall_sum[k] / denom for k in ks},
        precision={k: precision_sum[k] / denom for k in ks},
        n_evaluable_users=n_eval_users,
        seconds=time.perf_counter() - started,
    )


def segment_report(
    model: EmbeddingModel,
    eval_set: InteractionDataset,
    train_graph: BipartiteGraph,
    n_inactive: int,
    ks: Sequence[int],
    batch_users: int = 1024,
) -> dict[str, EvalReport]:
    """Metrics for the ``n_inactive`` lowest-train-degree users and for the rest."""

    n_users = train_graph.n_users
    if not 0 <= n_inactive <= n_users:
        raise ValueError(f"n_inactive={n_inactive} out of range [0, {n_users}]")
    degrees = train_graph.row_degrees
    order = np.lexsort((np.arange(n_users), degrees))
    segments = {"inactive": order[:n_inactive], "other": order[n_inactive:]}
    return {
        name: evaluate(model, eval_set, train_graph, ks, users=members, batch_users=batch_users)
        for name, members in segments.items()
    }


def margin_probe(
    model: EmbeddingModel,
    batch: np.ndarray,
    weights: Union[UserWeights, np.ndarray],
    eta: float,
    l2: float = 0.0,
) -> MarginProbe:
    """Apply one SGD step of rate ``eta`` to a clone and measure margin gains."""

    if not 0 <= eta <= MAX_PROBE_ETA:
        raise ValueError(f"probe step eta must lie in [0, {MAX_PROBE_ETA}], got {eta}")
    batch = np.asarray(batch, dtype=np.int64)
    probe = model.copy()
    before = probe.margins(batch)
    _, grads = bpr_loss(batch, weights, probe, l2=l2)
    sgd_step(grads, probe, eta)
    after = probe.margins(batch)
    gain = after - before

    t = weights.t if isinstance(weights, UserWeights) else np.asarray(weights, dtype=np.float64)
    t_batch = t[batch[:, 0]]
    by_weight = {float(value): float(gain[t_batch == value].mean()) for value in np.unique(t_batch)}
    return MarginProbe(
        mean_before=float(before.mean()),
        mean_after=float(after.mean()),
        gain=gain,
        gain_by_weight=by_weight,
    )


__all__ = [
    "EarlyStopping",
    "EvalReport",
    "MarginProbe",
    "TrainHistory",
    "evaluate",
    "margin_probe",
    "segment_report",
    "train",
]
