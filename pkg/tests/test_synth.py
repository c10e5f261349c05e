import json

import numpy as np
import pytest

from modules.dataset import load_ground_truth, load_interactions
from modules.synth import SyntheticSpec, generate, noisy_fraction, write_synthetic
from modules.utils import ConfigError


def test_without_noise_observed_is_subset_of_truth():
    data = generate(SyntheticSpec(n_users=200, n_items=100, noise_rate=0.0, seed=1))
    assert data.noisy_pairs == 0
    for observed, truth in zip(data.observed, data.ground_truth):
        assert observed
        assert set(observed) <= truth


def test_noise_rate_is_respected():
    data = generate(SyntheticSpec(n_users=2000, n_items=300, noise_rate=0.1, seed=2))
    n = data.n_interactions
    assert n > 5000
    outside = sum(len(set(obs) - truth) for obs, truth in zip(data.observed, data.ground_truth))
    assert outside == data.noisy_pairs
    assert abs(data.noisy_pairs - 0.1 * n) <= 3 * np.sqrt(n * 0.1 * 0.9)
    assert noisy_fraction(data) == pytest.approx(data.noisy_pairs / n)


def test_observed_items_are_distinct():
    data = generate(SyntheticSpec(n_users=300, n_items=80, noise_rate=0.3, seed=4))
    for observed in data.observed:
        assert len(observed) == len(set(observed))


def test_block_structure_dominates_truth():
    data = generate(SyntheticSpec(n_users=300, n_items=200, n_blocks=4, density_in=0.5, density_out=0.01, seed=5))
    inside = total = 0
    for u, truth in enumerate(data.ground_truth):
        inside += sum(1 for p in truth if data.item_blocks[p] == data.user_blocks[u])
        total += len(truth)
    assert inside / total > 0.8


def test_truth_covers_the_whole_own_block():
    data = generate(SyntheticSpec(n_users=100, n_items=90, n_blocks=3, seed=6))
    for u, truth in enumerate(data.ground_truth):
        block = set(np.flatnonzero(data.item_blocks == data.user_blocks[u]).tolist())
        assert block <= truth


def _mean_degree_per_block(data):
    degrees = np.array([len(items) for items in data.observed])
    return np.array([degrees[data.user_blocks == b].mean() for b in range(data.spec.n_blocks)])


def test_block_activity_ratio_separates_quiet_and_busy_blocks():
    base = {"n_users": 2000, "n_items": 200, "n_blocks": 4, "noise_rate": 0.0, "seed": 11}
    skewed = _mean_degree_per_block(generate(SyntheticSpec(**base, block_activity_ratio=8.0)))
    assert skewed[-1] > 3 * skewed[0]
    flat = _mean_degree_per_block(generate(SyntheticSpec(**base, block_activity_ratio=1.0)))
    assert flat.max() < 1.5 * flat.min()


def test_same_seed_writes_identical_files(tmp_path):
    spec = SyntheticSpec(n_users=60, n_items=40, seed=7)
    write_synthetic(generate(spec), tmp_path / "a")
    write_synthetic(generate(spec), tmp_path / "b")
    for name in ("interactions.tsv", "ground_truth.tsv", "synth.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    other = tmp_path / "c"
    write_synthetic(generate(SyntheticSpec(n_users=60, n_items=40, seed=8)), other)
    assert (other / "interactions.tsv").read_bytes() != (tmp_path / "a" / "interactions.tsv").read_bytes()


def test_written_files_load_back(tmp_path):
    data = generate(SyntheticSpec(n_users=50, n_items=30, seed=9))
    interactions_path, truth_path = write_synthetic(data, tmp_path)
    dataset = load_interactions(interactions_path)
    assert len(dataset) == data.n_interactions
    truth = load_ground_truth(truth_path, dataset)
    assert sum(len(items) for items in truth.values()) == sum(len(items) for items in data.ground_truth)
    summary = json.loads((tmp_path / "synth.json").read_text(encoding="utf-8"))
    assert summary["noisy_pairs"] == data.noisy_pairs
    assert summary["spec"]["seed"] == 9


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n_users": 0},
        {"n_items": 1},
        {"n_blocks": 0},
        {"density_in": 0.0},
        {"density_in": 1.5},
        {"density_in": 0.01, "density_out": 0.2},
        {"noise_rate": 1.0},
        {"activity_skew": 0.0},
        {"block_activity_ratio": 0.5},
    ],
)
def test_invalid_spec_is_rejected(kwargs):
    with pytest.raises(ConfigError):
        generate(SyntheticSpec(**kwargs))
