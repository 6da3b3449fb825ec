"""Metrics, AUC oracle, timestep randomization, latency statistics and reports."""
import json
from itertools import product

import numpy as np
import pytest

import services.evaluator as evaluator
from core.errors import ConfigError, ParameterError
from services.benchmark import LatencyStats, benchmark_latency, latency_stats
from services.evaluator import (
    MetricsReport, evaluate, export_report, load_report, permute_timesteps,
    prediction_agreement, roc_auc_ovr,
)
from services.model_zoo import build_cnn, build_transformer
from services.signal_data import Dataset, SIGNAL_LEN, normalize_dataset, synthesize_dataset


class ConstantModel:
    """Stands in for a model whose probabilities are fixed per sample."""

    architecture = "CNN"

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float32)
        self.num_classes = self.probs.shape[1]


@pytest.fixture
def fixed_predictions(monkeypatch):
    def install(probs):
        model = ConstantModel(probs)
        monkeypatch.setattr(evaluator, "predict", lambda m, x, batch_size=256: m.probs[:len(x)])
        return model
    return install


def _dataset(labels, num_classes):
    rng = np.random.default_rng(0)
    return Dataset(rng.standard_normal((len(labels), SIGNAL_LEN, 2)), labels, num_classes)


def _pair_count_auc(pos, neg):
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in product(pos, neg))
    return wins / (len(pos) * len(neg))


# --- accuracy / confusion ---

def test_always_class_zero(fixed_predictions):
    n = 5
    model = fixed_predictions(np.tile([0.9, 0.1], (2 * n, 1)))
    report = evaluate(model, _dataset([0] * n + [1] * n, 2))
    assert report.accuracy == 0.5
    np.testing.assert_array_equal(report.confusion, [[n, 0], [n, 0]])


def test_perfect_predictions(fixed_predictions):
    labels = [0, 1, 2, 2, 1]
    model = fixed_predictions(np.eye(3)[labels])
    report = evaluate(model, _dataset(labels, 3))
    assert report.accuracy == 1.0
    np.testing.assert_array_equal(report.confusion, np.diag([1, 2, 2]))


def test_ties_go_to_lowest_class(fixed_predictions):
    model = fixed_predictions([[0.4, 0.4, 0.2]])
    report = evaluate(model, _dataset([1], 3))
    assert report.confusion[1, 0] == 1


def test_accuracy_matches_counting_loop(fixed_predictions, np_rng):
    labels = np_rng.integers(0, 4, size=40)
    probs = np_rng.dirichlet(np.ones(4), size=40)
    report = evaluate(fixed_predictions(probs), _dataset(labels, 4))
    hits = 0
    for row, label in zip(probs.astype(np.float32), labels):
        hits += int(np.argmax(row) == label)
    assert report.accuracy == pytest.approx(hits / 40)
    assert report.num_samples == 40
    np.testing.assert_array_equal(report.confusion.sum(axis=1), np.bincount(labels, minlength=4))


def test_class_mismatch():
    with pytest.raises(ConfigError):
        evaluate(build_cnn(3), _dataset([0, 1], 2))


# --- AUC ---

def test_auc_examples():
    scores = np.array([0.9, 0.8, 0.1, 0.2])
    labels = [1, 1, 0, 0]
    per_class, _ = roc_auc_ovr(np.stack([1 - scores, scores], axis=1), labels)
    assert per_class[1] == 1.0
    per_class, _ = roc_auc_ovr(np.stack([scores, 1 - scores], axis=1), labels)
    assert per_class[1] == 0.0

    s = np.array([0.8, 0.7, 0.4, 0.3])
    per_class, macro = roc_auc_ovr(np.stack([1 - s, s], axis=1), [1, 0, 1, 0])
    assert per_class[1] == 0.75
    assert macro == pytest.approx(0.75)


def test_auc_matches_pair_counting(np_rng):
    for _ in range(10):
        n = int(np_rng.integers(4, 21))
        labels = np_rng.integers(0, 3, size=n)
        labels[:3] = [0, 1, 2]
        scores = np.round(np_rng.random((n, 3)), 1)  # rounding forces ties
        per_class, macro = roc_auc_ovr(scores, labels)
        for c in range(3):
            expected = _pair_count_auc(scores[labels == c, c], scores[labels != c, c])
            assert per_class[c] == pytest.approx(expected)
        assert macro == pytest.approx(np.mean(per_class))


def test_auc_invariant_to_monotone_transform(np_rng):
    labels = np_rng.integers(0, 2, size=20)
    labels[:2] = [0, 1]
    scores = np_rng.random((20, 2))
    a, _ = roc_auc_ovr(scores, labels)
    b, _ = roc_auc_ovr(np.exp(3 * scores) - 7, labels)
    np.testing.assert_allclose(a, b)


def test_missing_class_auc_is_undefined():
    per_class, macro = roc_auc_ovr(np.array([[0.7, 0.2, 0.1], [0.2, 0.7, 0.1]]), [0, 1])
    assert np.isnan(per_class[2])
    assert macro == pytest.approx(np.mean(per_class[:2]))


# --- timestep randomization ---

def test_identity_permutation_leaves_dataset_unchanged(monkeypatch):
    ds = _dataset([0, 1, 1], 2)
    monkeypatch.setattr(evaluator, "rng_permutation", lambda rng, n: list(range(n)))
    np.testing.assert_array_equal(permute_timesteps(ds, seed=1).iq, ds.iq)


def test_permutation_preserves_samples_and_labels():
    ds = _dataset([0, 1, 1, 0], 2)
    out = permute_timesteps(ds, seed=5)
    np.testing.assert_array_equal(out.labels, ds.labels)
    assert not np.array_equal(out.iq, ds.iq)
    for before, after in zip(ds.iq, out.iq):
        np.testing.assert_array_equal(np.sort(before.view("<f4,<f4").ravel()), np.sort(after.view("<f4,<f4").ravel()))
    np.testing.assert_array_equal(permute_timesteps(ds, seed=5).iq, out.iq)


def test_shared_permutation_uses_one_order():
    ds = _dataset([0, 1], 2)
    ds.iq[:, :, 0] = np.arange(SIGNAL_LEN)
    out = permute_timesteps(ds, seed=2, shared_permutation=True)
    np.testing.assert_array_equal(out.iq[0, :, 0], out.iq[1, :, 0])


def test_transformer_predictions_survive_randomization():
    ds = normalize_dataset(synthesize_dataset(3, 4, seed=0))
    model = build_transformer(3, seed=0)
    shuffled = permute_timesteps(ds, seed=9)
    assert evaluate(model, ds).confusion.tolist() == evaluate(model, shuffled).confusion.tolist()
    assert prediction_agreement(model, model, ds) == 1.0


# --- latency ---

def test_latency_stats_formula():
    stats = latency_stats([1.0, 2.0, 3.0])
    assert stats.mean_ms == 2.0
    assert stats.std_ms == 1.0
    assert stats.ci95_ms == pytest.approx(1.1316, abs=1e-4)
    assert stats.runs == 3
    with pytest.raises(ParameterError):
        latency_stats([1.0])


def test_benchmark_report_schema():
    stats = benchmark_latency(build_cnn(3), np.zeros((256, 2, 1), np.float32), runs=5)
    assert set(stats.to_dict()) == {"mean_ms", "std_ms", "ci95_ms", "runs"}
    assert stats.runs == 5 and stats.mean_ms > 0
    with pytest.raises(ParameterError):
        benchmark_latency(build_cnn(3), np.zeros((256, 2, 1), np.float32), runs=1)
    with pytest.raises(ParameterError):
        benchmark_latency(build_cnn(3), np.zeros((256, 2, 1), np.float32), runs=5, warmup=2)


# --- reports ---

def _report(latency=None):
    return MetricsReport(0.75, [[2, 1], [0, 1]], [0.8, float("nan")], 0.8, latency)


@pytest.mark.parametrize("fmt", ["json", "csv"])
def test_report_round_trip(tmp_path, fmt):
    for report in (_report(), _report(LatencyStats(1.2345, 0.5, 0.031, 1000))):
        path = export_report(report, str(tmp_path / f"report.{fmt}"), fmt)
        assert load_report(path) == report


def test_json_schema(tmp_path):
    path = export_report(_report(), str(tmp_path / "r.json"))
    with open(path) as f:
        payload = json.load(f)
    assert set(payload) == {"accuracy", "confusion", "auc_per_class", "auc_macro"}
    assert payload["confusion"] == [[2, 1], [0, 1]]
    assert payload["auc_per_class"][1] is None

    path = export_report(_report(LatencyStats(1.0, 0.1, 0.01, 10)), str(tmp_path / "l.json"))
    with open(path) as f:
        assert json.load(f)["latency"] == {"mean_ms": 1.0, "std_ms": 0.1, "ci95_ms": 0.01, "runs": 10}


def test_unknown_report_format(tmp_path):
    with pytest.raises(ParameterError):
        export_report(_report(), str(tmp_path / "r.txt"), "xml")
