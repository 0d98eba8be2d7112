import json

import numpy as np
import pytest

from kneecast.errors import ContractError, MetricError, ShapeError
from kneecast.metrics import evaluate_metrics, persistence_baseline, truth_matrix


def test_perfect_prediction():
    truth = np.random.default_rng(0).uniform(0, 60, size=(20, 5))
    r = evaluate_metrics(truth.copy(), truth)
    assert r.nmae == 0.0 and r.nrmse == 0.0 and r.r2 == 1.0
    assert r.n_examples == 20 and r.horizon == 5


def test_constant_offset():
    # +2 deg offset over a 40 deg range: nmae = nrmse = 0.05, r2 < 1.
    truth = np.linspace(0, 40, 50)[:, None]
    pred = truth + 2.0
    r = evaluate_metrics(pred, truth)
    assert r.nmae == pytest.approx(0.05)
    assert r.nrmse == pytest.approx(0.05)
    assert r.r2 < 1.0
    assert r.normalization_range_deg == pytest.approx(40.0)


def test_mean_predictor_gives_zero_r2():
    truth = np.random.default_rng(1).uniform(10, 50, size=(100, 1))
    pred = np.full_like(truth, truth.mean())
    r = evaluate_metrics(pred, truth)
    assert r.r2 == pytest.approx(0.0, abs=1e-12)


def test_errors():
    with pytest.raises(ShapeError):
        evaluate_metrics(np.zeros((3, 2)), np.zeros((2, 3)))
    with pytest.raises(MetricError):
        evaluate_metrics(np.zeros((5, 1)), np.full((5, 1), 7.0))  # constant truth
    with pytest.raises(ContractError):
        evaluate_metrics(np.zeros((1, 2)), np.zeros((1, 2)))


def test_scale_equivariance():
    rng = np.random.default_rng(2)
    truth = rng.uniform(-30, 60, size=(40, 3))
    pred = truth + rng.normal(size=truth.shape)
    a = evaluate_metrics(pred, truth)
    b = evaluate_metrics(pred * 3.7, truth * 3.7)
    assert a.nmae == pytest.approx(b.nmae)
    assert a.nrmse == pytest.approx(b.nrmse)
    assert a.r2 == pytest.approx(b.r2)


def test_nrmse_at_least_nmae_on_random_instances():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        n = int(rng.integers(2, 12))
        h = int(rng.integers(1, 6))
        truth = rng.normal(size=(n, h)) * rng.uniform(0.5, 30)
        if truth.max() == truth.min():
            continue
        pred = truth + rng.normal(size=(n, h)) * rng.uniform(0, 5)
        r = evaluate_metrics(pred, truth)
        assert r.nrmse >= r.nmae - 1e-15


def test_per_step_breakdown():
    rng = np.random.default_rng(4)
    truth = rng.uniform(0, 50, size=(30, 4))
    pred = truth + rng.normal(size=truth.shape)
    r = evaluate_metrics(pred, truth)
    assert len(r.per_step["nmae"]) == 4
    assert len(r.per_step["r2"]) == 4
    # pooled nmae is the mean of per-step nmae (same normalization)
    assert np.mean(r.per_step["nmae"]) == pytest.approx(r.nmae)
    single = evaluate_metrics(pred[:, :1], truth[:, :1])
    assert single.per_step is None


def test_report_serialization():
    truth = np.linspace(0, 40, 30)[:, None] + np.zeros((30, 2))
    pred = truth + 1.0
    r = evaluate_metrics(pred, truth)
    d = json.loads(r.to_json())
    assert d["nmae"] == pytest.approx(r.nmae)
    table = r.text_table()
    assert "nmae" in table and "step" in table


def test_persistence_baseline():
    class Ex:
        def __init__(self, last, target):
            self.last_knee_deg = last
            self.target = np.asarray(target, dtype=float)
            self.horizon = len(target)

    examples = [Ex(10.0, [11.0, 12.0]), Ex(20.0, [19.0, 18.0])]
    base = persistence_baseline(examples)
    np.testing.assert_array_equal(base, [[10.0, 10.0], [20.0, 20.0]])
    np.testing.assert_array_equal(truth_matrix(examples), [[11, 12], [19, 18]])
