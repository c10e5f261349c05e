import numpy as np
import pytest

from modules import train_eval
from modules.config import TrainConfig
from modules.dataset import BipartiteGraph, SplitDataset
from modules.graph import fuse_graphs
from modules.model import EmbeddingModel, init_embeddings
from modules.pipeline import build_sampler, construct_psp
from modules.psp import PspMode, UserWeights, WeightScheme, build_psp
from modules.sampler import NegativeSampler
from modules.train_eval import EarlyStopping, evaluate, margin_probe, segment_report, train
from modules.utils import TrainingError

from .helpers import make_dataset


def test_early_stopping_with_patience_one():
    stopper = EarlyStopping(patience=1)
    assert stopper.update(0.5) == (True, False)
    assert stopper.update(0.4) == (False, True)


def test_early_stopping_counts_evaluations_without_improvement():
    stopper = EarlyStopping(patience=3)
    outcomes = [stopper.update(score) for score in (0.1, 0.2, 0.2, 0.15, 0.3, 0.1, 0.1, 0.1)]
    assert [improved for improved, _ in outcomes] == [True, True, False, False, True, False, False, False]
    assert [stop for _, stop in outcomes] == [False] * 7 + [True]
    with pytest.raises(ValueError):
        EarlyStopping(patience=0)


def _scored_model(score_rows):
    # one-hot users so that model scores equal the given rows
    scores = np.asarray(score_rows, dtype=np.float64)
    return EmbeddingModel(user_emb=np.eye(scores.shape[0]), item_emb=scores.T.copy())


def test_hand_counted_recall_and_precision():
    scores = np.linspace(1.0, 0.0, 30)
    scores[[3, 7]] = [5.0, 4.0]
    model = _scored_model([scores])
    eval_set = make_dataset([(0, 3), (0, 7)], 1, 30)
    train_graph = BipartiteGraph.from_lists([[]], n_items=30)
    report = evaluate(model, eval_set, train_graph, [20])
    assert report.recall[20] == pytest.approx(1.0)
    assert report.precision[20] == pytest.approx(0.1)
    assert report.n_evaluable_users == 1


def test_adversarial_ranking_scores_zero():
    scores = np.ones(30)
    scores[[3, 7]] = -1.0
    report = evaluate(
        _scored_model([scores]),
        make_dataset([(0, 3), (0, 7)], 1, 30),
        BipartiteGraph.from_lists([[]], n_items=30),
        [20],
    )
    assert report.recall[20] == 0.0 and report.precision[20] == 0.0


def _oracle(scores, train_sets, eval_sets, ks):
    recall = {k: [] for k in ks}
    precision = {k: [] for k in ks}
    for u, truth in enumerate(eval_sets):
        if not truth:
            continue
        ranked = sorted((p for p in range(scores.shape[1]) if p not in train_sets[u]), key=lambda p: (-scores[u, p], p))
        for k in ks:
            hits = len(set(ranked[:k]) & truth)
            recall[k].append(hits / len(truth))
            precision[k].append(hits / k)
    return {k: np.mean(v) for k, v in recall.items()}, {k: np.mean(v) for k, v in precision.items()}


def test_metrics_match_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n_users, n_items = int(rng.integers(2, 11)), int(rng.integers(5, 25))
        scores = rng.standard_normal((n_users, n_items))
        train_sets = [set(rng.choice(n_items, size=rng.integers(0, 4), replace=False).tolist()) for _ in range(n_users)]
        eval_sets = [
            set(rng.choice(sorted(set(range(n_items)) - train), size=rng.integers(0, 3), replace=False).tolist())
            for train in train_sets
        ]
        eval_sets[0] = eval_sets[0] or {p for p in range(n_items) if p not in train_sets[0]}
        ks = [1, 3, 5, 30]
        report = evaluate(
            _scored_model(scores),
            make_dataset([(u, p) for u, items in enumerate(eval_sets) for p in sorted(items)], n_users, n_items),
            BipartiteGraph.from_lists([sorted(s) for s in train_sets], n_items=n_items),
            ks,
            batch_users=3,
        )
        expected_recall, expected_precision = _oracle(scores, train_sets, eval_sets, ks)
        for k in ks:
            assert abs(report.recall[k] - expected_recall[k]) < 1e-12
            assert abs(report.precision[k] - expected_precision[k]) < 1e-12
        assert report.n_evaluable_users == sum(1 for s in eval_sets if s)


def test_evaluation_is_pure():
    rng = np.random.default_rng(1)
    model = _scored_model(rng.standard_normal((6, 12)))
    eval_set = make_dataset([(u, (u * 5) % 12) for u in range(6)], 6, 12)
    train_graph = BipartiteGraph.from_lists([[(u + 1) % 12] for u in range(6)], n_items=12)
    first = evaluate(model, eval_set, train_graph, [2, 4])
    second = evaluate(model, eval_set, train_graph, [2, 4])
    assert first.to_dict() == second.to_dict()
    assert first.recall[2] <= first.recall[4]


def test_train_items_are_never_recommended():
    scores = np.array([[9.0, 8.0, 1.0, 0.0]])
    report = evaluate(
        _scored_model(scores),
        make_dataset([(0, 2)], 1, 4),
        BipartiteGraph.from_lists([[0, 1]], n_items=4),
        [1],
    )
    assert report.recall[1] == 1.0


def test_segments():
    rng = np.random.default_rng(2)
    model = _scored_model(rng.standard_normal((5, 8)))
    eval_set = make_dataset([(u, 7 - u) for u in range(5)], 5, 8)
    train_graph = BipartiteGraph.from_lists([[0, 1], [0], [0, 1, 2], [], [1]], n_items=8)
    full = evaluate(model, eval_set, train_graph, [3])

    everyone = segment_report(model, eval_set, train_graph, 5, [3])
    assert everyone["inactive"].to_dict() == full.to_dict()
    assert everyone["other"].n_evaluable_users == 0

    nobody = segment_report(model, eval_set, train_graph, 0, [3])
    assert nobody["inactive"].n_evaluable_users == 0
    assert nobody["inactive"].recall[3] == 0.0
    assert nobody["other"].to_dict() == full.to_dict()

    # degrees 2,1,3,0,1 -> users 3, 1, 4 are the least active
    three = segment_report(model, eval_set, train_graph, 3, [3])
    assert three["inactive"].n_evaluable_users == 3
    with pytest.raises(ValueError):
        segment_report(model, eval_set, train_graph, 6, [3])


def _disjoint_batch(rng, n_users, n_items, size):
    users = rng.choice(n_users, size=size, replace=False)
    items = rng.choice(n_items, size=2 * size, replace=False)
    return np.stack([users, items[:size], items[size:]], axis=1)


def test_sgd_step_increases_mean_margin():
    rng = np.random.default_rng(3)
    increased = 0
    for trial in range(100):
        model = init_embeddings(400, 400, 16, seed=trial)
        batch = _disjoint_batch(rng, 400, 400, 32)
        probe = margin_probe(model, batch, np.ones(400), eta=1e-3)
        increased += probe.mean_after > probe.mean_before
    assert increased >= 99


def test_margin_gain_is_linear_in_step_size():
    rng = np.random.default_rng(4)
    model = init_embeddings(200, 200, 8, seed=0)
    batch = _disjoint_batch(rng, 200, 200, 32)
    small = margin_probe(model, batch, np.ones(200), eta=5e-5).mean_gain
    large = margin_probe(model, batch, np.ones(200), eta=1e-4).mean_gain
    assert 1.9 <= large / small <= 2.1


def test_margin_gain_scales_with_user_weight():
    rng = np.random.default_rng(5)
    ratios = []
    for trial in range(20):
        model = init_embeddings(512, 1024, 16, seed=100 + trial)
        batch = _disjoint_batch(rng, 512, 1024, 256)
        t = np.ones(512)
        t[batch[128:, 0]] = 2.0
        probe = margin_probe(model, batch, UserWeights(t, WeightScheme.NONE, 1.0, 1e4), eta=1e-3)
        ratios.append(probe.gain_by_weight[2.0] / probe.gain_by_weight[1.0])
    assert 1.8 <= np.mean(ratios) <= 2.2


def test_zero_step_changes_no_margin():
    model = init_embeddings(10, 10, 4, seed=1)
    batch = np.array([[0, 1, 2], [3, 4, 5]])
    probe = margin_probe(model, batch, np.ones(10), eta=0.0)
    assert probe.mean_after == probe.mean_before
    np.testing.assert_array_equal(probe.gain, 0.0)
    with pytest.raises(ValueError):
        margin_probe(model, batch, np.ones(10), eta=0.1)


def _quick_config(**overrides):
    base = {"q": 4, "d": 8, "lr": 0.01, "batch_size": 64, "max_epochs": 4, "patience": 2, "ks": [5, 10]}
    base.update(overrides)
    return TrainConfig.from_mapping(base)


def test_training_is_deterministic(small_synthetic):
    split, _ = small_synthetic
    config = _quick_config()
    runs = []
    for _ in range(2):
        artifacts = construct_psp(split, config)
        model, history = train(config, split, artifacts.psp, artifacts.weights, build_sampler(config, artifacts))
        runs.append((model, history))
    assert runs[0][1].records == runs[1][1].records
    np.testing.assert_array_equal(runs[0][0].user_emb, runs[1][0].user_emb)


def test_training_returns_the_best_checkpoint(small_synthetic):
    split, _ = small_synthetic
    config = _quick_config(max_epochs=6, patience=6)
    artifacts = construct_psp(split, config)
    model, history = train(config, split, artifacts.psp, artifacts.weights, build_sampler(config, artifacts))
    evaluations = history.evaluations()
    assert len(evaluations) == 6
    best = max(record["val_recall"]["5"] for record in evaluations)
    assert history.best_score == pytest.approx(best)
    report = evaluate(model, split.val, artifacts.graph, [5])
    assert report.recall[5] == pytest.approx(history.best_score)


def test_eval_every_controls_validation(small_synthetic):
    split, _ = small_synthetic
    config = _quick_config(max_epochs=4, eval_every=2)
    artifacts = construct_psp(split, config)
    _, history = train(config, split, artifacts.psp, artifacts.weights, build_sampler(config, artifacts))
    assert [r["epoch"] for r in history.evaluations()] == [2, 4]
    assert len(history.records) == 4


def test_patience_one_stops_after_two_worsening_evaluations(small_synthetic, monkeypatch):
    split, _ = small_synthetic
    scores = iter([0.5, 0.4, 0.3, 0.2, 0.1, 0.0])

    def worsening(model, eval_set, train_graph, ks, **kwargs):
        value = next(scores)
        return train_eval.EvalReport(recall={k: value for k in ks}, precision={k: value for k in ks}, n_evaluable_users=1)

    monkeypatch.setattr(train_eval, "evaluate", worsening)
    config = _quick_config(max_epochs=6, patience=1)
    artifacts = construct_psp(split, config)
    _, history = train(config, split, artifacts.psp, artifacts.weights, build_sampler(config, artifacts))
    assert [r["epoch"] for r in history.evaluations()] == [1, 2]
    assert history.stopped_epoch == 2
    assert history.best_epoch == 1
    assert history.best_score == 0.5


def test_empty_psp_is_rejected(tiny_split):
    graph = BipartiteGraph.from_lists([[] for _ in range(4)], n_items=6)
    empty = build_psp(fuse_graphs(graph, graph, 2), PspMode.W_EW)
    config = _quick_config()
    sampler_graph = BipartiteGraph.from_lists([[0]] * 4, n_items=6)
    with pytest.raises(TrainingError):
        train(config, tiny_split, empty, UserWeights.uniform(4), NegativeSampler(config.sampler_config(), sampler_graph))


def test_training_without_validation_runs_every_epoch(tiny_split):
    split = SplitDataset(train=tiny_split.train, val=make_dataset([], 4, 6), test=tiny_split.test, split_seed=0)
    config = _quick_config(q=2, max_epochs=3, batch_size=4)
    artifacts = construct_psp(split, config)
    _, history = train(config, split, artifacts.psp, artifacts.weights, build_sampler(config, artifacts))
    assert history.stopped_epoch == 3
    assert history.best_epoch is None
