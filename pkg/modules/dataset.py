"""Interaction ingestion, ID remapping, splitting and the train matrix/graph."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence
import json
import logging
import struct

import numpy as np
import scipy.sparse as sp

from .utils import DataFormatError, derive_rng, strip_bom

logger = logging.getLogger(__name__)

SEPARATORS = {"tsv": "\t", "csv": ","}
SPLIT_MAGIC = b"PSPS"
SPLIT_VERSION = 1
_SPLIT_HEADER = struct.Struct("<4sHqQQQQQ")
_BLOB_LENGTH = struct.Struct("<Q")
_INDEX_DTYPE = np.dtype("<i4")


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    """De-duplicated implicit interactions over dense user/item indices.

    ``user_ids[i]`` is the raw identifier of user index ``i`` (same for items).
    Views produced by :func:`split_dataset` share the ID tuples.
    """

    users: np.ndarray
    items: np.ndarray
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def __len__(self) -> int:
        return int(self.users.shape[0])

    @property
    def interactions(self) -> list[tuple[int, int]]:
        return list(zip(self.users.tolist(), self.items.tolist()))

    @cached_property
    def user_id_map(self) -> dict[str, int]:
        return {raw: idx for idx, raw in enumerate(self.user_ids)}

    @cached_property
    def item_id_map(self) -> dict[str, int]:
        return {raw: idx for idx, raw in enumerate(self.item_ids)}

    def raw_pairs(self) -> list[tuple[str, str]]:
        return [(self.user_ids[u], self.item_ids[p]) for u, p in self.interactions]

    def take(self, positions: np.ndarray) -> "InteractionDataset":
        """Return the view holding the interactions at ``positions``."""

        return InteractionDataset(
            users=self.users[positions],
            items=self.items[positions],
            user_ids=self.user_ids,
            item_ids=self.item_ids,
        )

    def positive_sets(self) -> list[set[int]]:
        sets: list[set[int]] = [set() for _ in range(self.n_users)]
        for u, p in self.interactions:
            sets[u].add(p)
        return sets

    def pair_keys(self) -> np.ndarray:
        """Sorted ``u * n_items + p`` keys for vectorized membership tests."""

        return np.sort(self.users.astype(np.int64) * self.n_items + self.items.astype(np.int64))


@dataclass(frozen=True, eq=False)
class SplitDataset:
    """Train/validation/test views sharing the full-data ID maps."""

    train: InteractionDataset
    val: InteractionDataset
    test: InteractionDataset
    split_seed: int

    @property
    def n_users(self) -> int:
        return self.train.n_users

    @property
    def n_items(self) -> int:
        return self.train.n_items

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


@dataclass(frozen=True, eq=False)
class InteractionMatrix:
    """Binary CSR matrix ``A`` over users x items."""

    csr: sp.csr_matrix

    @property
    def row_offsets(self) -> np.ndarray:
        return self.csr.indptr

    @property
    def col_indices(self) -> np.ndarray:
        return self.csr.indices

    @property
    def n_rows(self) -> int:
        return self.csr.shape[0]

    @property
    def n_cols(self) -> int:
        return self.csr.shape[1]

    @property
    def nnz(self) -> int:
        return int(self.csr.nnz)

    def contains(self, u: int, p: int) -> bool:
        row = self.csr.indices[self.csr.indptr[u] : self.csr.indptr[u + 1]]
        pos = np.searchsorted(row, p)
        return bool(pos < row.shape[0] and row[pos] == p)


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    """Per-user sorted item adjacency in CSR layout."""

    indptr: np.ndarray
    indices: np.ndarray
    n_users: int
    n_items: int

    @classmethod
    def from_csr(cls, csr: sp.csr_matrix) -> "BipartiteGraph":
        csr = csr.tocsr()
        csr.sort_indices()
        return cls(
            indptr=csr.indptr.astype(np.int64),
            indices=csr.indices.astype(np.int64),
            n_users=csr.shape[0],
            n_items=csr.shape[1],
        )

    @classmethod
    def from_lists(cls, lists: Sequence[Sequence[int]], n_items: int) -> "BipartiteGraph":
        indptr = np.zeros(len(lists) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(row) for row in lists])
        if lists and indptr[-1]:
            indices = np.concatenate([np.sort(np.asarray(row, dtype=np.int64)) for row in lists])
        else:
            indices = np.zeros(0, dtype=np.int64)
        return cls(indptr=indptr, indices=indices, n_users=len(lists), n_items=n_items)

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    @cached_property
    def row_degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @cached_property
    def col_degrees(self) -> np.ndarray:
        return np.bincount(self.indices, minlength=self.n_items).astype(np.int64)

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u] : self.indptr[u + 1]]

    def edge_users(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_users, dtype=np.int64), self.row_degrees)

    def to_csr(self) -> sp.csr_matrix:
        data = np.ones(self.nnz, dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n_users, self.n_items))


def load_interactions(path: Path, format: str = "tsv") -> InteractionDataset:
    """Parse a ``raw_user<sep>raw_item`` file into an :class:`InteractionDataset`.

    IDs are remapped to dense indices in order of first appearance, duplicate
    pairs collapse, lines starting with ``#`` are ignored.
    """

    if format not in SEPARATORS:
        raise ValueError(f"unknown interaction format {format!r} (expected tsv or csv)")
    sep = SEPARATORS[format]
    path = Path(path).expanduser()
    logger.info("Reading interactions from %s (%s)", path, format)

    try:
        raw = strip_bom(path.read_bytes()).decode("utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"{path} is not valid UTF-8: {exc}") from exc

    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    seen: set[tuple[int, int]] = set()
    users: list[int] = []
    items: list[int] = []
    duplicates = 0

    for line_number, line in enumerate(raw.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split(sep)
        if len(fields) < 2 or not fields[0].strip() or not fields[1].strip():
            raise DataFormatError(f"expected at least 2 {format} fields, got {line!r}", line_number)
        raw_user, raw_item = fields[0].strip(), fields[1].strip()
        u = user_map.setdefault(raw_user, len(user_map))
        p = item_map.setdefault(raw_item, len(item_map))
        if (u, p) in seen:
            duplicates += 1
            continue
        seen.add((u, p))
        users.append(u)
        items.append(p)

    if not users:
        raise DataFormatError(f"{path} contains no interactions")

    logger.info(
        "Loaded %d interactions (%d users, %d items, %d duplicates collapsed)",
        len(users),
        len(user_map),
        len(item_map),
        duplicates,
    )
    return InteractionDataset(
        users=np.asarray(users, dtype=np.int64),
        items=np.asarray(items, dtype=np.int64),
        user_ids=tuple(user_map),
        item_ids=tuple(item_map),
    )


def split_dataset(ds: InteractionDataset, ratios: Sequence[float], seed: int) -> SplitDataset:
    """Global uniform shuffle under ``seed`` followed by a proportional cut."""

    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"split ratios must be three positive fractions, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {sum(ratios)!r}")

    n = len(ds)
    order = derive_rng(seed, "split").permutation(n)
    n_train = min(n, int(round(n * ratios[0])))
    n_val = min(n - n_train, int(round(n * ratios[1])))

    # each view keeps file order
    parts = np.split(order, [n_train, n_train + n_val])
    train, val, test = (ds.take(np.sort(part)) for part in parts)
    logger.info("Split %d interactions into train=%d val=%d test=%d (seed=%d)", n, len(train), len(val), len(test), seed)
    return SplitDataset(train=train, val=val, test=test, split_seed=int(seed))


def build_matrix_and_graph(train: InteractionDataset) -> tuple[InteractionMatrix, BipartiteGraph]:
    """Materialize ``A`` and the unweighted bipartite graph ``G`` from train."""

    if len(train) == 0:
        raise ValueError("cannot build the interaction matrix from an empty train set")
    data = np.ones(len(train), dtype=np.float64)
    csr = sp.csr_matrix((data, (train.users, train.items)), shape=(train.n_users, train.n_items))
    csr.sum_duplicates()
    csr.sort_indices()
    csr.data[:] = 1.0
    graph = BipartiteGraph.from_csr(csr)
    logger.debug("Built %dx%d interaction matrix with nnz=%d", csr.shape[0], csr.shape[1], csr.nnz)
    return InteractionMatrix(csr=csr), graph


def save_split(split: SplitDataset, path: Path) -> None:
    """Write the binary split cache (little-endian, versioned)."""

    parts = (split.train, split.val, split.test)
    header = _SPLIT_HEADER.pack(
        SPLIT_MAGIC,
        SPLIT_VERSION,
        split.split_seed,
        split.n_users,
        split.n_items,
        *(len(part) for part in parts),
    )
    blob = json.dumps(
        {"users": list(split.train.user_ids), "items": list(split.train.item_ids)},
        ensure_ascii=False,
    ).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        handle.write(header)
        for part in parts:
            handle.write(part.users.astype(_INDEX_DTYPE).tobytes())
            handle.write(part.items.astype(_INDEX_DTYPE).tobytes())
        handle.write(_BLOB_LENGTH.pack(len(blob)))
        handle.write(blob)
    logger.info("Wrote split cache %s", path)


def load_split(path: Path) -> SplitDataset:
    """Read a cache written by :func:`save_split`."""

    try:
        payload = Path(path).read_bytes()
    except OSError as exc:
        raise DataFormatError(f"cannot read split cache {path}: {exc}") from exc
    if len(payload) < _SPLIT_HEADER.size:
        raise DataFormatError(f"{path} is truncated")

    magic, version, seed, n_users, n_items, *counts = _SPLIT_HEADER.unpack_from(payload, 0)
    if magic != SPLIT_MAGIC:
        raise DataFormatError(f"{path} is not a split cache (magic={magic!r})")
    if version != SPLIT_VERSION:
        raise DataFormatError(f"unsupported split cache version {version}")

    offset = _SPLIT_HEADER.size
    arrays = []
    try:
        for count in counts:
            users = np.frombuffer(payload, dtype=_INDEX_DTYPE, count=count, offset=offset).astype(np.int64)
            offset += count * _INDEX_DTYPE.itemsize
            items = np.frombuffer(payload, dtype=_INDEX_DTYPE, count=count, offset=offset).astype(np.int64)
            offset += count * _INDEX_DTYPE.itemsize
            arrays.append((users, items))
        (blob_len,) = _BLOB_LENGTH.unpack_from(payload, offset)
        offset += _BLOB_LENGTH.size
        ids = json.loads(payload[offset : offset + blob_len].decode("utf-8"))
    except (ValueError, struct.error) as exc:
        raise DataFormatError(f"{path} is corrupt: {exc}") from exc

    user_ids, item_ids = tuple(ids["users"]), tuple(ids["items"])
    if len(user_ids) != n_users or len(item_ids) != n_items:
        raise DataFormatError(f"{path}: ID tables do not match header counts")
    train, val, test = (
        InteractionDataset(users=u, items=p, user_ids=user_ids, item_ids=item_ids) for u, p in arrays
    )
    return SplitDataset(train=train, val=val, test=test, split_seed=int(seed))


def load_ground_truth(path: Path, ds: InteractionDataset, format: str = "tsv") -> dict[int, set[int]]:
    """Read clean per-user positives in the index space of ``ds``.

    Raw IDs missing from ``ds`` get fresh indices past ``n_users``/``n_items``
    so they still count as true positives that no constructed pair can hit.
    """

    truth = load_interactions(path, format)
    user_map, item_map = dict(ds.user_id_map), dict(ds.item_id_map)
    sets: dict[int, set[int]] = {}
    for raw_user, raw_item in truth.raw_pairs():
        u = user_map.setdefault(raw_user, len(user_map))
        p = item_map.setdefault(raw_item, len(item_map))
        sets.setdefault(u, set()).add(p)
    unseen = len(item_map) - ds.n_items
    if unseen:
        logger.info("Ground truth references %d items absent from the observed data", unseen)
    return sets


def dataset_statistics(ds: InteractionDataset) -> dict[str, float]:
    """Users, items, interactions and density of a dataset."""

    density = len(ds) / (ds.n_users * ds.n_items) if ds.n_users and ds.n_items else 0.0
    return {
        "users": ds.n_users,
        "items": ds.n_items,
        "interactions": len(ds),
        "density": density,
    }


__all__ = [
    "BipartiteGraph",
    "InteractionDataset",
    "InteractionMatrix",
    "SplitDataset",
    "build_matrix_and_graph",
    "dataset_statistics",
    "load_ground_truth",
    "load_interactions",
    "load_split",
    "save_split",
    "split_dataset",
]
