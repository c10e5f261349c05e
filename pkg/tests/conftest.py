from __future__ import annotations

import pytest

from modules.dataset import SplitDataset, split_dataset
from modules.synth import SyntheticSpec

from .helpers import make_dataset, synthetic_dataset


@pytest.fixture
def tiny_split() -> SplitDataset:
    """4 users x 6 items with hand-picked held-out pairs."""

    train = make_dataset([(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 3), (2, 4), (3, 0), (3, 5)], 4, 6)
    val = make_dataset([(0, 3), (2, 5)], 4, 6)
    test = make_dataset([(1, 0), (3, 4)], 4, 6)
    return SplitDataset(train=train, val=val, test=test, split_seed=0)


@pytest.fixture(scope="session")
def small_synthetic():
    spec = SyntheticSpec(n_users=80, n_items=60, n_blocks=4, density_in=0.15, density_out=0.02, seed=3)
    dataset, truth = synthetic_dataset(spec)
    return split_dataset(dataset, (0.8, 0.1, 0.1), seed=0), truth
