from __future__ import annotations

from typing import Sequence

import numpy as np

from modules.dataset import InteractionDataset
from modules.synth import SyntheticSpec, generate


def make_dataset(pairs: Sequence[tuple[int, int]], n_users: int, n_items: int) -> InteractionDataset:
    users = np.array([u for u, _ in pairs], dtype=np.int64)
    items = np.array([p for _, p in pairs], dtype=np.int64)
    return InteractionDataset(
        users=users,
        items=items,
        user_ids=tuple(f"u{i}" for i in range(n_users)),
        item_ids=tuple(f"i{i}" for i in range(n_items)),
    )


def synthetic_dataset(spec: SyntheticSpec) -> tuple[InteractionDataset, list[set[int]]]:
    data = generate(spec)
    pairs = [(u, p) for u, items in enumerate(data.observed) for p in items]
    return make_dataset(pairs, spec.n_users, spec.n_items), data.ground_truth
