import numpy as np
import pytest
from scipy import stats

from modules import sampler as sampler_module
from modules.dataset import BipartiteGraph
from modules.model import init_embeddings
from modules.sampler import (
    NegativeSampler,
    NegativeSamplerConfig,
    SamplerKind,
    sample_dynamic,
    sample_popularity,
    sample_uniform,
)


def test_uniform_never_returns_excluded_items():
    rng = np.random.default_rng(0)
    exclusion = {0, 1, 2, 3, 4, 5, 6, 7}
    draws = {sample_uniform(0, exclusion, rng, n_items=10) for _ in range(200)}
    assert draws <= {8, 9}
    assert draws == {8, 9}


def test_uniform_falls_back_to_the_complement():
    rng = np.random.default_rng(1)
    exclusion = set(range(9999))
    assert sample_uniform(0, exclusion, rng, n_items=10_000) == 9999


def test_uniform_with_everything_excluded():
    with pytest.raises(ValueError):
        sample_uniform(3, {0, 1}, np.random.default_rng(0), n_items=2)


def test_popularity_skips_zero_degree_and_excluded_items():
    rng = np.random.default_rng(2)
    degrees = np.array([0, 5, 1, 3])
    draws = [sample_popularity(0, {3}, 1.0, rng, item_degrees=degrees) for _ in range(2000)]
    counts = np.bincount(draws, minlength=4)
    assert counts[0] == 0 and counts[3] == 0
    # P(1) / P(2) = 5
    assert counts[1] / counts[2] == pytest.approx(5.0, rel=0.25)


def test_popularity_exponent_zero_is_uniform_over_seen_items():
    rng = np.random.default_rng(3)
    degrees = np.array([0, 100, 1])
    draws = [sample_popularity(0, set(), 0.0, rng, item_degrees=degrees) for _ in range(3000)]
    counts = np.bincount(draws, minlength=3)
    assert counts[0] == 0
    assert counts[1] / counts[2] == pytest.approx(1.0, rel=0.15)


def test_popularity_without_support():
    with pytest.raises(ValueError):
        sample_popularity(0, {1}, 1.0, np.random.default_rng(0), item_degrees=np.array([0, 4]))


def test_dynamic_picks_the_best_candidate():
    rng = np.random.default_rng(4)
    scores = np.arange(20, dtype=float)

    def score_fn(u, candidates):
        return scores[candidates]

    picks = [sample_dynamic(0, {19}, score_fn, 300, rng, n_items=20) for _ in range(20)]
    assert all(p == 18 for p in picks)


def test_dynamic_ties_resolve_to_lowest_index():
    rng = np.random.default_rng(5)
    pick = sample_dynamic(0, set(), lambda u, c: np.zeros(len(c)), 40, rng, n_items=3)
    assert pick == 0


def test_dynamic_rejects_bad_candidate_count():
    with pytest.raises(ValueError):
        sample_dynamic(0, set(), lambda u, c: c, 0, np.random.default_rng(0), n_items=3)


@pytest.mark.parametrize("kwargs", [{"candidate_count": 0}, {"popularity_exponent": -1.0}, {"kind": "hardest"}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        NegativeSamplerConfig(**kwargs)


def _exclusion():
    return BipartiteGraph.from_lists([[0, 1, 2], [5], []], n_items=6)


@pytest.mark.parametrize("kind", [SamplerKind.UNIFORM, SamplerKind.POPULARITY, SamplerKind.DYNAMIC])
def test_batch_sampler_respects_exclusion(kind):
    exclusion = _exclusion()
    sampler = NegativeSampler(
        NegativeSamplerConfig(kind=kind, candidate_count=4),
        exclusion,
        item_degrees=np.array([1, 1, 1, 2, 3, 4]),
    )
    model = init_embeddings(3, 6, 4, seed=0)
    users = np.repeat(np.arange(3), 200)
    negatives = sampler.sample(users, np.random.default_rng(6), model)
    assert not sampler.is_excluded(users, negatives).any()
    assert set(negatives[users == 0].tolist()) <= {3, 4, 5}


def test_batch_sampler_is_reproducible():
    sampler = NegativeSampler(NegativeSamplerConfig(), _exclusion())
    users = np.array([0, 1, 2, 0, 1, 2])
    first = sampler.sample(users, np.random.default_rng(7))
    second = sampler.sample(users, np.random.default_rng(7))
    np.testing.assert_array_equal(first, second)


def test_batch_sampler_fallback_for_crowded_users():
    exclusion = BipartiteGraph.from_lists([list(range(499))], n_items=500)
    sampler = NegativeSampler(NegativeSamplerConfig(), exclusion)
    negatives = sampler.sample(np.zeros(50, dtype=np.int64), np.random.default_rng(8))
    assert set(negatives.tolist()) == {499}


def test_dynamic_needs_a_model():
    sampler = NegativeSampler(NegativeSamplerConfig(kind=SamplerKind.DYNAMIC), _exclusion())
    with pytest.raises(ValueError):
        sampler.sample(np.array([0]), np.random.default_rng(0))


def test_popularity_needs_degrees():
    with pytest.raises(ValueError):
        NegativeSampler(NegativeSamplerConfig(kind=SamplerKind.POPULARITY), _exclusion())


def test_uniform_marginal_fits_a_thousand_item_catalog():
    rng = np.random.default_rng(9)
    exclusion = set(range(0, 1000, 10))
    draws = [sample_uniform(0, exclusion, rng, n_items=1000) for _ in range(45_000)]
    counts = np.bincount(draws, minlength=1000)
    assert counts[sorted(exclusion)].sum() == 0
    allowed = np.delete(counts, sorted(exclusion))
    assert stats.chisquare(allowed).pvalue > 1e-3


def test_batch_uniform_marginal_fits_a_thousand_item_catalog():
    exclusion = BipartiteGraph.from_lists([list(range(0, 1000, 10))], n_items=1000)
    sampler = NegativeSampler(NegativeSamplerConfig(), exclusion)
    counts = np.bincount(sampler.sample(np.zeros(45_000, dtype=np.int64), np.random.default_rng(10)), minlength=1000)
    allowed = np.delete(counts, np.arange(0, 1000, 10))
    assert stats.chisquare(allowed).pvalue > 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_dynamic_scores_dominate_uniform_draws(seed):
    model = init_embeddings(1, 200, 8, seed=seed)
    rng = np.random.default_rng(seed)
    exclusion = {0, 1, 2}

    def score_fn(u, candidates):
        return model.item_emb[candidates] @ model.user_emb[u]

    uniform = [sample_uniform(0, exclusion, rng, n_items=200) for _ in range(300)]
    dynamic = [sample_dynamic(0, exclusion, score_fn, 8, rng, n_items=200) for _ in range(300)]
    assert score_fn(0, np.array(dynamic)).mean() > score_fn(0, np.array(uniform)).mean()


def test_batch_fallback_goes_through_the_per_user_samplers(monkeypatch):
    calls = []
    original = sampler_module.sample_uniform

    def spy(u, exclusion, rng, *, n_items):
        calls.append((u, len(exclusion)))
        return original(u, exclusion, rng, n_items=n_items)

    monkeypatch.setattr(sampler_module, "sample_uniform", spy)
    exclusion = BipartiteGraph.from_lists([list(range(499))], n_items=500)
    sampler = NegativeSampler(NegativeSamplerConfig(), exclusion)
    negatives = sampler.sample(np.zeros(20, dtype=np.int64), np.random.default_rng(11))
    assert set(negatives.tolist()) == {499}
    assert calls and all(call == (0, 499) for call in calls)


def test_popularity_fallback_for_crowded_users():
    exclusion = BipartiteGraph.from_lists([list(range(499))], n_items=500)
    sampler = NegativeSampler(
        NegativeSamplerConfig(kind=SamplerKind.POPULARITY),
        exclusion,
        item_degrees=np.ones(500),
    )
    negatives = sampler.sample(np.zeros(20, dtype=np.int64), np.random.default_rng(12))
    assert set(negatives.tolist()) == {499}


def test_dynamic_fallback_for_crowded_users(monkeypatch):
    calls = []
    original = sampler_module.sample_dynamic

    def spy(u, exclusion, score_fn, M, rng, *, n_items):
        calls.append(u)
        return original(u, exclusion, score_fn, M, rng, n_items=n_items)

    monkeypatch.setattr(sampler_module, "sample_dynamic", spy)
    exclusion = BipartiteGraph.from_lists([list(range(499)), [0]], n_items=500)
    sampler = NegativeSampler(NegativeSamplerConfig(kind=SamplerKind.DYNAMIC, candidate_count=4), exclusion)
    model = init_embeddings(2, 500, 4, seed=1)
    users = np.array([0, 1, 0, 1])
    negatives = sampler.sample(users, np.random.default_rng(13), model)
    assert negatives[users == 0].tolist() == [499, 499]
    assert not sampler.is_excluded(users, negatives).any()
    assert set(calls) == {0}
