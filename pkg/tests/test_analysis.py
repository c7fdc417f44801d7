import math

import numpy as np
import pytest

from conftest import make_layer, random_model
from oracles import argmax_lowest, naive_counts, naive_importance
from rqmoe.analysis import (ImportanceReport, bottom_mean_score, find_heavy_hitters, sample_calibration,
                            wanda_expert_scores)
from rqmoe.model import MoeModel
from rqmoe.numerics import Matrix


def test_calibration_examples():
    x = Matrix(np.arange(20.0).reshape(10, 2))
    assert sample_calibration(x, 1.0, 3) == x
    one = sample_calibration(x, 0.1, 3)
    assert one.rows == 1
    assert sample_calibration(x, 0.3, 3).rows == 3
    a, b = sample_calibration(x, 0.5, 11), sample_calibration(x, 0.5, 11)
    assert a == b
    rows = [tuple(r) for r in a.tolist()]
    assert rows == sorted(rows)
    with pytest.raises(ValueError):
        sample_calibration(Matrix(np.zeros((0, 2))), 0.5, 1)
    with pytest.raises(ValueError):
        sample_calibration(x, 0.0, 1)


def test_calibration_seeds_differ():
    x = Matrix(np.arange(200.0).reshape(100, 2))
    picks = {tuple(sample_calibration(x, 0.1, s).array[:, 0]) for s in range(10)}
    assert len(picks) > 1


def test_heavy_hitter_constructed_dominance():
    layer = make_layer(np.zeros((4, 2)), [np.eye(2)] * 4, k=1, bias=[0, 0, 5.0, 0])
    model = MoeModel([layer, make_layer(np.zeros((4, 2)), [np.eye(2)] * 4, k=1, bias=[0, 0, 5.0, 0])])
    assert find_heavy_hitters(model, np.random.default_rng(0).normal(size=(20, 2))) == [2, 2]


def test_heavy_hitter_tie_break():
    # x[0] > 0 picks expert 1, x[0] < 0 picks expert 3; two tokens each
    layer = make_layer([[0, 0], [10, 0], [0, 0], [-10, 0]], [np.eye(2)] * 4, k=1)
    x = [[1.0, 0.0], [-1.0, 0.0], [2.0, 0.0], [-2.0, 0.0]]
    assert find_heavy_hitters(MoeModel([layer]), x) == [1]


def test_heavy_hitters_match_recount(rng):
    for _ in range(30):
        model = random_model(rng, bias=True)
        x = rng.normal(size=(int(rng.integers(1, 40)), model.d_in))
        expected = [argmax_lowest(c) for c in naive_counts(model, x.tolist())]
        assert find_heavy_hitters(model, x) == expected


def test_wanda_hand_example():
    w = np.array([[0.5, 1.0], [2.0, 0.1]])
    # S = |W| * [1, 2] = [[0.5, 2.0], [2.0, 0.2]]; bottom-1 per row {0.5, 0.2}
    assert bottom_mean_score(w, np.array([1.0, 2.0]), 0.5) == pytest.approx(0.35, abs=1e-15)
    assert bottom_mean_score(np.zeros((2, 2)), np.array([1.0, 2.0]), 0.5) == 0.0
    # s = 1 averages the full score matrix
    assert bottom_mean_score(w, np.array([1.0, 2.0]), 1.0) == pytest.approx(4.7 / 4, abs=1e-15)
    # t is clamped to at least one entry per row
    assert bottom_mean_score(w, np.array([1.0, 2.0]), 0.01) == pytest.approx(0.35, abs=1e-15)


def test_wanda_zero_expert_scores_zero():
    layer = make_layer(np.zeros((3, 2)), [np.eye(2), np.zeros((2, 2)), np.eye(2)], k=1)
    rep = wanda_expert_scores(MoeModel([layer]), np.ones((4, 2)))
    assert rep.scores[0][1] == 0.0


def test_wanda_matches_naive(rng):
    for _ in range(20):
        model = random_model(rng, bias=True)
        x = rng.normal(size=(int(rng.integers(1, 30)), model.d_in))
        s = float(rng.choice([0.1, 0.25, 0.5, 0.75, 1.0]))
        got = wanda_expert_scores(model, x, s)
        want = naive_importance(model, x.tolist(), s)
        assert np.allclose(got.scores, want, rtol=0, atol=1e-10)
        assert got.chosen == [argmax_lowest(r) for r in got.scores]


def test_wanda_unused_expert_uses_layer_inputs():
    # expert 1 never wins; its norms come from all inputs
    layer = make_layer([[1.0, 0.0], [-50.0, 0.0]], [np.eye(2), np.eye(2)], k=1)
    x = np.array([[1.0, 3.0], [2.0, 4.0]])
    rep = wanda_expert_scores(MoeModel([layer]), x, 1.0)
    norms = [math.sqrt(5), 5.0]
    assert rep.scores[0][1] == pytest.approx((norms[0] + norms[1]) / 4)


def test_wanda_layer_activation_mode():
    layer = make_layer([[1.0, 0.0], [-1.0, 0.0]], [np.eye(2), np.eye(2)], k=1)
    x = np.array([[1.0, 3.0], [-2.0, 4.0], [5.0, 0.0]])
    rep = wanda_expert_scores(MoeModel([layer]), x, 1.0, activations="layer")
    assert rep.scores[0][0] == rep.scores[0][1]
    with pytest.raises(ValueError):
        wanda_expert_scores(MoeModel([layer]), x, 1.0, activations="bogus")


def test_wanda_weight_scaling_is_per_expert(rng):
    model = random_model(rng, p=1, m=4, k=1)
    x = rng.normal(size=(30, model.d_in))
    base = wanda_expert_scores(model, x).scores[0]
    layer = model.layers[0]
    scaled = [layer.instances[e].dense() * (3.0 if e == 2 else 1.0) for e in range(4)]
    other = MoeModel([make_layer(layer.router.weights.array, scaled, 1)])
    got = wanda_expert_scores(other, x).scores[0]
    assert got[2] == pytest.approx(3 * base[2], rel=1e-12)
    assert [got[e] for e in (0, 1, 3)] == [base[e] for e in (0, 1, 3)]


def test_wanda_argmax_invariant_under_activation_scaling(rng):
    for _ in range(20):
        model = random_model(rng, p=1)
        x = rng.normal(size=(25, model.d_in))
        c = float(rng.uniform(0.1, 10))
        a, b = wanda_expert_scores(model, x), wanda_expert_scores(model, x * c)
        assert np.allclose(np.array(b.scores), c * np.array(a.scores), rtol=1e-12)
        assert a.chosen == b.chosen


def test_wanda_argument_errors():
    model = MoeModel([make_layer(np.zeros((2, 2)), [np.eye(2)] * 2)])
    with pytest.raises(ValueError):
        wanda_expert_scores(model, np.ones((2, 2)), 0.0)
    with pytest.raises(ValueError):
        wanda_expert_scores(model, np.ones((2, 2)), 1.5)
    with pytest.raises(ValueError):
        wanda_expert_scores(model, np.zeros((0, 2)))


def test_importance_report_round_trip():
    rep = ImportanceReport([[0.1, 0.2], [0.3, 0.0]], [1, 0], 0.5, {"seed": 4})
    assert ImportanceReport.from_dict(rep.to_dict()) == rep
