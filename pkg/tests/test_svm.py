import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seisdiag import svm
from seisdiag.errors import DimensionError, InvalidInput, NonConvergence, ParseError, ValidationError
from seisdiag.svm import SvmHyperParams, TrainingSet

from .oracles import qp_bias, qp_dual


def random_problem(rng, n_max=30, d_max=8):
    n = int(rng.integers(4, n_max + 1))
    d = int(rng.integers(1, d_max + 1))
    x = rng.normal(size=(n, d))
    y = np.where(rng.random(n) < 0.5, 1, -1)
    if np.unique(y).size < 2:
        y[0] = -y[1]
    probs = rng.uniform(0.05, 1.0, n)
    hp = SvmHyperParams(
        float(np.exp(rng.uniform(np.log(0.5), np.log(5)))),
        float(np.exp(rng.uniform(np.log(0.1), np.log(10)))),
        float(np.exp(rng.uniform(np.log(0.05), np.log(2)))),
    )
    return TrainingSet.from_probabilities(x, y, probs), hp


def standardized_kernel(data, theta3):
    means, scales = svm.fit_standardization(data.features)
    xs = (data.features - means) / scales
    return xs, svm.rbf_matrix(xs, xs, theta3)


# ---------------------------------------------------------------- kernel

def test_rbf_kernel_examples():
    x = np.array([0.3, -1.2])
    assert svm.rbf_kernel(x, x, 2.0) == 1.0
    assert svm.rbf_kernel([0.0], [1.0], math.log(2)) == pytest.approx(0.5, rel=1e-15)
    assert svm.rbf_kernel([0.0], [1.0], 1e4) < 1e-12
    with pytest.raises(DimensionError):
        svm.rbf_kernel([0.0], [1.0, 2.0], 1.0)


# ------------------------------------------------------------ box bounds

def test_box_bounds_examples():
    y = np.array([1, -1, 1, -1])
    c = svm.sample_box_bounds(y, np.ones(4), SvmHyperParams(4, 0.5, 1))
    assert c.tolist() == [2.0, 0.5, 2.0, 0.5]
    c = svm.sample_box_bounds(y, np.ones(4), SvmHyperParams(1, 0.5, 1))
    assert c.tolist() == [0.5] * 4
    w = np.array([2.0, 1.0, 1.0, 1.0])
    doubled = svm.sample_box_bounds(y, w, SvmHyperParams(4, 0.5, 1))
    assert doubled.tolist() == [4.0, 0.5, 2.0, 0.5]


def test_training_set_weight_normalization():
    ts = TrainingSet.from_probabilities(np.zeros((4, 1)), [1, -1, 1, -1], [0.1, 0.2, 0.3, 0.4])
    assert ts.weights.mean() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValidationError):
        TrainingSet(np.zeros((2, 1)), [1, -1], [1.0, 2.0])
    with pytest.raises(ValidationError):
        TrainingSet(np.zeros((2, 1)), [1, 0], [1.0, 1.0])


# --------------------------------------------------------------- training

def test_two_point_symmetry():
    data = TrainingSet(np.array([[-1.0], [1.0]]), [-1, 1], [1.0, 1.0])
    model = svm.train(data, SvmHyperParams(1, 10, 1))
    alpha = model.info["alpha"]
    assert alpha[0] == pytest.approx(alpha[1], rel=1e-12)
    assert model.bias == pytest.approx(0.0, abs=1e-12)
    assert svm.predict(model, [0.0]) == "N"  # tie at exactly zero
    assert svm.predict(model, [0.01]) == "D"
    assert svm.predict(model, [-0.01]) == "N"


def test_matches_qp_oracle_on_random_sets():
    rng = np.random.default_rng(11)
    for _ in range(20):
        data, hp = random_problem(rng)
        model = svm.train(data, hp)
        xs, k = standardized_kernel(data, hp.theta3)
        box = svm.sample_box_bounds(data.labels, data.weights, hp)
        alpha_o, obj_o = qp_dual(k, data.labels, box)
        obj = svm.dual_objective(model.info["alpha"], data.labels, k)
        assert obj == pytest.approx(obj_o, rel=1e-6)
        b_o = qp_bias(alpha_o, data.labels, k, box)
        if b_o is None:
            continue
        grid = rng.normal(size=(200, data.features.shape[1])) * 1.5
        dv = svm.decision_values(model, grid)
        kg = svm.rbf_matrix(model.standardize(grid), xs, hp.theta3)
        dv_o = kg @ (alpha_o * data.labels) + b_o
        np.testing.assert_allclose(dv, dv_o, atol=1e-4)


def test_dual_feasibility_and_kkt_gap():
    rng = np.random.default_rng(3)
    for _ in range(10):
        data, hp = random_problem(rng, n_max=60)
        model = svm.train(data, hp)
        alpha, box = model.info["alpha"], model.info["box"]
        assert np.all(alpha >= 0) and np.all(alpha <= box)
        assert abs(np.sum(alpha * data.labels)) <= 1e-6
        assert model.info["gap"] <= 1e-3
        assert np.all((model.coef != 0))
        assert np.all(np.abs(model.coef) <= box[alpha > 0] + 1e-15)


def test_dual_objective_monotone_over_updates():
    rng = np.random.default_rng(8)
    data, hp = random_problem(rng, n_max=40)
    trace = []
    svm.train(data, hp, trace=trace)
    assert len(trace) > 1
    assert np.all(np.diff(trace) >= -1e-12 * max(1.0, abs(trace[-1])))


def test_training_decisions_reproduced():
    rng = np.random.default_rng(2)
    data, hp = random_problem(rng, n_max=50)
    model = svm.train(data, hp)
    np.testing.assert_allclose(svm.decision_values(model, data.features), model.info["train_decision"],
                               atol=1e-8)


def test_standardization_statistics():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 3)) * [1.0, 1e4, 1.0] + [0.0, 5e3, 7.0]
    x[:, 2] = 7.0
    means, scales = svm.fit_standardization(x)
    xs = (x - means) / scales
    np.testing.assert_allclose(xs[:, :2].mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(xs[:, :2].std(0), 1, rtol=1e-12)
    assert scales[2] == 1.0


def test_single_class_gives_constant_model():
    data = TrainingSet(np.random.default_rng(0).normal(size=(5, 2)), [1] * 5, [1.0] * 5)
    model = svm.train(data, SvmHyperParams(1, 1, 1))
    assert model.is_constant and model.constant_class == svm.DAMAGE
    assert svm.predict(model, [100.0, -3.0]) == "D"
    assert svm.decision_value(model, [0.0, 0.0]) == math.inf
    neg = svm.train(TrainingSet(np.zeros((3, 2)), [-1] * 3, [1.0] * 3), SvmHyperParams(1, 1, 1))
    assert svm.predict(neg, [0.0, 0.0]) == "N"


def test_invalid_training_input():
    with pytest.raises(InvalidInput):
        svm.train(TrainingSet(np.array([[np.nan], [1.0]]), [1, -1], [1.0, 1.0]), SvmHyperParams(1, 1, 1))
    with pytest.raises(ValidationError):
        SvmHyperParams(0, 1, 1)


def test_iteration_cap_raises_with_diagnostics():
    rng = np.random.default_rng(5)
    data, hp = random_problem(rng)
    with pytest.raises(NonConvergence) as info:
        svm.train(data, hp, max_updates=1)
    assert info.value.diagnostics["updates"] == 1


def test_decision_value_of_lone_support_vector():
    model = svm.SvmModel(np.array([[0.5, -0.5]]), np.array([1.0]), 0.0, 0.7, np.zeros(2), np.ones(2))
    assert svm.decision_value(model, [0.5, -0.5]) == 1.0
    with pytest.raises(DimensionError):
        svm.decision_value(model, [0.5])


def test_predict_sign_rule():
    model = svm.SvmModel(np.zeros((0, 1)), np.zeros(0), 0.3, 1.0, np.zeros(1), np.ones(1))
    assert svm.predict(model, [1.0]) == "D"
    zero = svm.SvmModel(np.zeros((0, 1)), np.zeros(0), 0.0, 1.0, np.zeros(1), np.ones(1))
    assert svm.predict(zero, [1.0]) == "N"


def test_kernel_row_cache_matches_full_matrix():
    rng = np.random.default_rng(9)
    data, hp = random_problem(rng, n_max=30)
    full = svm.train(data, hp)
    tiny = svm.train(data, hp, cache_mb=1e-6)  # forces the two-row LRU path
    np.testing.assert_allclose(full.info["alpha"], tiny.info["alpha"], atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 100.0))
def test_weight_and_theta2_rescaling_leaves_predictions_unchanged(seed, c):
    rng = np.random.default_rng(seed)
    data, hp = random_problem(rng, n_max=20)
    base = svm.train(data, hp)
    # only the product theta2 * B_r enters the box; scale B by c and theta2 by 1/c
    scaled_hp = SvmHyperParams(hp.theta1, hp.theta2 / c, hp.theta3)
    c_box = svm.sample_box_bounds(data.labels, data.weights * c, scaled_hp)
    np.testing.assert_allclose(c_box, base.info["box"], rtol=1e-12)
    xs = (data.features - base.means) / base.scales
    alpha, grad, _, _ = svm.smo(data.labels, c_box, svm._KernelRows(xs, hp.theta3, 256))
    bias = svm._bias(alpha, data.labels, grad, c_box)
    probe = rng.normal(size=(50, data.features.shape[1]))
    k = svm.rbf_matrix(base.standardize(probe), xs, hp.theta3)
    dv = k @ (alpha * data.labels) + bias
    dv_base = svm.decision_values(base, probe)
    np.testing.assert_allclose(dv, dv_base, atol=1e-6)
    clear = np.abs(dv_base) > 1e-6
    assert np.array_equal(dv[clear] > 0, dv_base[clear] > 0)


# -------------------------------------------------------------- documents

def test_round_trip_two_point_model():
    data = TrainingSet(np.array([[-1.0], [1.0]]), [-1, 1], [1.0, 1.0])
    model = svm.train(data, SvmHyperParams(1, 10, 1))
    again = svm.deserialize(svm.serialize(model))
    probes = np.random.default_rng(1).uniform(-3, 3, size=(100, 1))
    assert np.array_equal(svm.decision_values(model, probes), svm.decision_values(again, probes))
    assert [svm.predict(model, p) for p in probes] == [svm.predict(again, p) for p in probes]


def test_round_trip_random_model_bitwise():
    rng = np.random.default_rng(12)
    data, hp = random_problem(rng)
    model = svm.train(data, hp)
    again = svm.deserialize(svm.serialize(model))
    probes = rng.normal(size=(100, data.features.shape[1]))
    assert np.array_equal(svm.decision_values(model, probes), svm.decision_values(again, probes))


def test_constant_model_round_trip():
    model = svm.constant_model(svm.NO_DAMAGE, 3)
    doc = json.loads(svm.serialize(model))
    assert doc["constant_class"] == "N"
    assert svm.predict(svm.deserialize(svm.serialize(model)), [1.0, 2.0, 3.0]) == "N"


def test_document_schema_fields():
    data = TrainingSet(np.array([[-1.0], [1.0]]), [-1, 1], [1.0, 1.0])
    doc = json.loads(svm.serialize(svm.train(data, SvmHyperParams(1, 10, 1))))
    assert set(doc) == {"format_version", "theta3", "bias", "standardization", "support_vectors", "coefficients"}
    assert set(doc["standardization"]) == {"means", "scales"}


def test_malformed_documents():
    data = TrainingSet(np.array([[-1.0], [1.0]]), [-1, 1], [1.0, 1.0])
    text = svm.serialize(svm.train(data, SvmHyperParams(1, 10, 1)))
    with pytest.raises(ParseError):
        svm.deserialize(text[: len(text) // 2])
    doc = json.loads(text)
    doc["format_version"] = 99
    with pytest.raises(ParseError, match="99"):
        svm.deserialize(json.dumps(doc))
    del doc["format_version"]
    with pytest.raises(ParseError):
        svm.deserialize(json.dumps(doc))
