#!/usr/bin/env python3
"""
Time PSP construction on a large random interaction set.

Draws a skewed 50k-user x 10k-item dataset with about 1M distinct
interactions, splits it 80/10/10 and runs normalize, SVD, top-K, fusion,
PSP and user weights once, printing the seconds spent per stage.

Usage:
  python3 scripts/benchmark_psp.py [--users 50000 --items 10000 --interactions 1000000 --q 100]

Exit code 1 when the total exceeds --budget seconds.
"""
from __future__ import annotations

from pathlib import Path
import argparse
import logging
import sys
import time

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from modules.config import TrainConfig  # noqa: E402
from modules.dataset import InteractionDataset, split_dataset  # noqa: E402
from modules.pipeline import construct_psp  # noqa: E402
from modules.utils import configure_logging, derive_rng  # noqa: E402


def random_interactions(n_users: int, n_items: int, n_interactions: int, seed: int) -> InteractionDataset:
    rng = derive_rng(seed, "synth")
    # Zipf-like popularity on both sides
    user_p = 1.0 / np.arange(1, n_users + 1) ** 0.6
    item_p = 1.0 / np.arange(1, n_items + 1) ** 0.8
    users = rng.choice(n_users, size=int(n_interactions * 1.15), p=user_p / user_p.sum())
    items = rng.choice(n_items, size=users.size, p=item_p / item_p.sum())
    keys = np.unique(users.astype(np.int64) * n_items + items)
    keys = keys[rng.permutation(keys.size)][:n_interactions]
    users, items = keys // n_items, keys % n_items
    # dense ids in sorted raw-id order
    user_ids, user_idx = np.unique(users, return_inverse=True)
    item_ids, item_idx = np.unique(items, return_inverse=True)
    return InteractionDataset(
        users=user_idx.astype(np.int64),
        items=item_idx.astype(np.int64),
        user_ids=tuple(f"u{u}" for u in user_ids.tolist()),
        item_ids=tuple(f"i{p}" for p in item_ids.tolist()),
    )


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("--users", type=int, default=50_000)
    parser.add_argument("--items", type=int, default=10_000)
    parser.add_argument("--interactions", type=int, default=1_000_000)
    parser.add_argument("--q", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--budget", type=float, default=120.0)
    args = parser.parse_args()
    configure_logging(logging.INFO)

    dataset = random_interactions(args.users, args.items, args.interactions, args.seed)
    split = split_dataset(dataset, (0.8, 0.1, 0.1), args.seed)
    config = TrainConfig(q=args.q, seed=args.seed)

    timings: dict[str, float] = {}
    started = time.perf_counter()
    artifacts = construct_psp(split, config, timings=timings)
    total = time.perf_counter() - started

    print(f"Dataset: {dataset.n_users} users, {dataset.n_items} items, {len(dataset)} interactions")
    print(f"PSP: {len(artifacts.psp)} distinct pairs, {artifacts.psp.total_expanded} expanded")
    for name, seconds in timings.items():
        print(f"  {name:<10}{seconds:>9.2f}s")
    print(f"  {'total':<10}{total:>9.2f}s (budget {args.budget:.0f}s)")
    return 0 if total <= args.budget else 1


if __name__ == "__main__":
    raise SystemExit(main())
