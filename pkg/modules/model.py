"""Matrix-factorization backbone trained with the weighted BPR loss."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Collection, Optional, Union
import logging
import struct

import numpy as np
from scipy.special import expit

from .psp import UserWeights
from .utils import DataFormatError, derive_rng, top_k_order

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"PSPM"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sHQQQ")
_FLOAT_DTYPE = np.dtype("<f8")


@dataclass(eq=False)
class EmbeddingModel:
    """User and item embeddings scored by dot product."""

    user_emb: np.ndarray
    item_emb: np.ndarray

    @property
    def d(self) -> int:
        return int(self.user_emb.shape[1])

    @property
    def n_users(self) -> int:
        return int(self.user_emb.shape[0])

    @property
    def n_items(self) -> int:
        return int(self.item_emb.shape[0])

    def score(self, u: int, p: int) -> float:
        return float(self.user_emb[u] @ self.item_emb[p])

    def scores(self, u: int) -> np.ndarray:
        return self.item_emb @ self.user_emb[u]

    def margins(self, batch: np.ndarray) -> np.ndarray:
        eu = self.user_emb[batch[:, 0]]
        return np.einsum("bd,bd->b", eu, self.item_emb[batch[:, 1]] - self.item_emb[batch[:, 2]])

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(user_emb=self.user_emb.copy(), item_emb=self.item_emb.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.user_emb).all() and np.isfinite(self.item_emb).all())


@dataclass(eq=False)
class OptimizerState:
    """Adam moments, one row per embedding row, updated lazily."""

    user_m: np.ndarray
    user_v: np.ndarray
    item_m: np.ndarray
    item_v: np.ndarray
    lr: float = 0.001
    l2: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decoupled_weight_decay: bool = False
    step: int = 0

    @classmethod
    def for_model(cls, model: EmbeddingModel, **hyper: float) -> "OptimizerState":
        return cls(
            user_m=np.zeros_like(model.user_emb),
            user_v=np.zeros_like(model.user_emb),
            item_m=np.zeros_like(model.item_emb),
            item_v=np.zeros_like(model.item_emb),
            **hyper,
        )

    @property
    def loss_l2(self) -> float:
        """L2 coefficient that belongs inside the loss."""

        return 0.0 if self.decoupled_weight_decay else self.l2


@dataclass(eq=False)
class Gradients:
    """Row-sparse gradients: unique row indices and their summed gradient."""

    user_rows: np.ndarray
    user_grad: np.ndarray
    item_rows: np.ndarray
    item_grad: np.ndarray
    margins: np.ndarray = field(default_factory=lambda: np.zeros(0))


def init_embeddings(n_users: int, n_items: int, d: int, seed: int) -> EmbeddingModel:
    """Xavier-uniform embeddings with ``fan_in = fan_out = d``."""

    if d < 1:
        raise ValueError(f"embedding dimension must be >= 1, got {d}")
    bound = np.sqrt(6.0 / (2 * d))
    rng = derive_rng(seed, "init")
    return EmbeddingModel(
        user_emb=rng.uniform(-bound, bound, size=(n_users, d)),
        item_emb=rng.uniform(-bound, bound, size=(n_items, d)),
    )


def _row_sum(rows: np.ndarray, grads: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    unique, inverse = np.unique(rows, return_inverse=True)
    summed = np.zeros((unique.shape[0], grads.shape[1]))
    np.add.at(summed, inverse, grads)
    return unique, summed


def bpr_loss(
    batch: np.ndarray,
    weights: Union[UserWeights, np.ndarray],
    model: EmbeddingModel,
    l2: float = 0.0,
    loss_weights: Optional[np.ndarray] = None,
) -> tuple[float, Gradients]:
    """Weighted BPR loss over ``(u, p+, p-)`` rows and its exact gradients.

    ``loss = sum(-c * ln sigmoid(m)) + 0.5 * l2 * sum(|e_u|^2 + |e_p+|^2 + |e_p-|^2)``
    with ``c = t_u`` (times the per-pair ``loss_weights`` when given).
    """

    batch = np.asarray(batch, dtype=np.int64)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ValueError("batch must be a non-empty (B, 3) array of triplets")
    users, pos, neg = batch[:, 0], batch[:, 1], batch[:, 2]
    t = weights.t if isinstance(weights, UserWeights) else np.asarray(weights, dtype=np.float64)
    coeff = t[users]
    if loss_weights is not None:
        coeff = coeff * loss_weights

    eu, ep, en = model.user_emb[users], model.item_emb[pos], model.item_emb[neg]
    diff = ep - en
    margins = np.einsum("bd,bd->b", eu, diff)

    # -ln sigmoid(m) = softplus(-m)
    loss = float(np.sum(coeff * np.logaddexp(0.0, -margins)))
    dm = -coeff * expit(-margins)
    grad_u = dm[:, None] * diff
    grad_p = dm[:, None] * eu
    grad_n = -grad_p
    if l2:
        loss += 0.5 * l2 * float(np.sum(eu * eu) + np.sum(ep * ep) + np.sum(en * en))
        grad_u = grad_u + l2 * eu
        grad_p = grad_p + l2 * ep
        grad_n = grad_n + l2 * en

    user_rows, user_grad = _row_sum(users, grad_u)
    item_rows, item_grad = _row_sum(np.concatenate([pos, neg]), np.concatenate([grad_p, grad_n]))
    return loss, Gradients(user_rows, user_grad, item_rows, item_grad, margins=margins)


def gradient_step(gradients: Gradients, state: OptimizerState, model: EmbeddingModel) -> EmbeddingModel:
    """Lazy Adam: only rows present in the batch move; bias correction uses the global step."""

    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    for rows, grad, param, m, v in (
        (gradients.user_rows, gradients.user_grad, model.user_emb, state.user_m, state.user_v),
        (gradients.item_rows, gradients.item_grad, model.item_emb, state.item_m, state.item_v),
    ):
        if rows.size == 0:
            continue
        m[rows] = state.beta1 * m[rows] + (1.0 - state.beta1) * grad
        v[rows] = state.beta2 * v[rows] + (1.0 - state.beta2) * grad * grad
        update = state.lr * (m[rows] / bias1) / (np.sqrt(v[rows] / bias2) + state.epsilon)
        if state.decoupled_weight_decay and state.l2:
            update += state.lr * state.l2 * param[rows]
        param[rows] -= update
    return model


def sgd_step(gradients: Gradients, model: EmbeddingModel, eta: float) -> EmbeddingModel:
    """Plain ``theta -= eta * grad`` on the touched rows."""

    model.user_emb[gradients.user_rows] -= eta * gradients.user_grad
    model.item_emb[gradients.item_rows] -= eta * gradients.item_grad
    return model


def recommend_topk(model: EmbeddingModel, u: int, k: int, exclusion: Collection[int] = ()) -> list[int]:
    """The ``k`` best non-excluded items, descending, ties by ascending index."""

    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    eligible = np.ones(model.n_items, dtype=bool)
    excluded = np.fromiter((p for p in exclusion if 0 <= p < model.n_items), dtype=np.int64)
    eligible[excluded] = False
    candidates = np.flatnonzero(eligible)
    order = top_k_order(model.scores(u)[candidates], k)
    return candidates[order].tolist()


def save_model(model: EmbeddingModel, path: Path) -> None:
    """Checkpoint: header then row-major little-endian float64 matrices."""

    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        handle.write(_MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, model.n_users, model.n_items, model.d))
        handle.write(np.ascontiguousarray(model.user_emb, dtype=_FLOAT_DTYPE).tobytes())
        handle.write(np.ascontiguousarray(model.item_emb, dtype=_FLOAT_DTYPE).tobytes())


def load_model(path: Path) -> EmbeddingModel:
    payload = Path(path).read_bytes()
    if len(payload) < _MODEL_HEADER.size:
        raise DataFormatError(f"{path} is truncated")
    magic, version, n_users, n_items, d = _MODEL_HEADER.unpack_from(payload, 0)
    if magic != MODEL_MAGIC or version != MODEL_VERSION:
        raise DataFormatError(f"{path} is not a model checkpoint (magic={magic!r}, version={version})")
    expected = _MODEL_HEADER.size + (n_users + n_items) * d * _FLOAT_DTYPE.itemsize
    if len(payload) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes, found {len(payload)}")
    offset = _MODEL_HEADER.size
    user = np.frombuffer(payload, dtype=_FLOAT_DTYPE, count=n_users * d, offset=offset)
    offset += n_users * d * _FLOAT_DTYPE.itemsize
    item = np.frombuffer(payload, dtype=_FLOAT_DTYPE, count=n_items * d, offset=offset)
    return EmbeddingModel(user_emb=user.reshape(n_users, d).copy(), item_emb=item.reshape(n_items, d).copy())


__all__ = [
    "EmbeddingModel",
    "Gradients",
    "OptimizerState",
    "bpr_loss",
    "gradient_step",
    "init_embeddings",
    "load_model",
    "recommend_topk",
    "save_model",
    "sgd_step",
]
