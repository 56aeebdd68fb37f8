import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from improvkit.effort import EffortBudget
from improvkit.errors import DataError
from improvkit.models import (GlmScorer, MlpScorer, bce_grad_score, bce_loss,
                              deserialize_model, serialize_model, sigmoid)

FD_H = 1e-6


def central_diff(f, x, h=FD_H):
    return (f(x + h) - f(x - h)) / (2 * h)


class TestGlm:
    def test_zero_model_scores_half(self):
        model = GlmScorer.zeros(3)
        np.testing.assert_array_equal(model.scores(np.ones((4, 3))), 0.5)

    def test_scores_strictly_inside_unit_interval(self):
        model = GlmScorer(np.array([10.0]), 0.0)
        s = model.scores(np.array([[-3.0], [3.0]]))
        assert 0.0 < s[0] < s[1] < 1.0

    def test_monotone_along_weight_direction(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=4)
        model = GlmScorer(w, 0.3)
        x = rng.normal(size=(10, 4))
        stepped = x + 0.1 * w
        assert (model.scores(stepped) > model.scores(x)).all()

    def test_single_sample_hand_gradient(self):
        # d mean-BCE / d w for one sample is (s - y) x, and (s - y) for bias
        w = np.array([0.4, -1.2])
        model = GlmScorer(w, 0.1)
        x = np.array([[1.5, -0.7]])
        y = np.array([1])
        s = model.scores(x)
        gw, gb = model.backprop_params(x, bce_grad_score(y, s), s)
        np.testing.assert_allclose(gw, (s - 1) * x[0], rtol=1e-12)
        np.testing.assert_allclose(gb, s - 1, rtol=1e-12)

    def test_grad_input_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        model = GlmScorer(rng.normal(size=3), float(rng.normal()))
        x = rng.normal(size=(6, 3))
        ana = model.grad_input(x)
        for i in range(6):
            for j in range(3):
                def f(v, i=i, j=j):
                    xp = x.copy()
                    xp[i, j] = v
                    return model.scores(xp)[i]
                num = central_diff(f, x[i, j])
                assert abs(num - ana[i, j]) <= 1e-7


class TestMlp:
    def test_zero_weights_scores_half_and_zero_grad(self):
        model = MlpScorer([np.zeros((3, 4)), np.zeros((4, 1))],
                          [np.zeros(4), np.zeros(1)])
        x = np.random.default_rng(0).normal(size=(5, 3))
        np.testing.assert_array_equal(model.scores(x), 0.5)
        np.testing.assert_array_equal(model.grad_input(x), 0.0)

    def test_init_bounds_and_determinism(self):
        a = MlpScorer.init(9, (4,), seed=11)
        b = MlpScorer.init(9, (4,), seed=11)
        for pa, pb in zip(a.param_arrays(), b.param_arrays()):
            np.testing.assert_array_equal(pa, pb)
        assert np.abs(a.layer_weights[0]).max() <= 1.0 / 3.0  # fan_in 9
        assert np.abs(a.layer_weights[1]).max() <= 0.5  # fan_in 4
        c = MlpScorer.init(9, (4,), seed=12)
        assert not np.array_equal(a.layer_weights[0], c.layer_weights[0])

    def test_shape_validation(self):
        with pytest.raises(DataError, match="single unit"):
            MlpScorer([np.zeros((2, 3))], [np.zeros(3)])
        with pytest.raises(DataError, match="inconsistent"):
            MlpScorer([np.zeros((2, 3)), np.zeros((3, 1))],
                      [np.zeros(4), np.zeros(1)])

    def test_param_gradients_match_finite_differences(self):
        rng = np.random.default_rng(2)
        model = MlpScorer.init(3, (4,), seed=5)
        x = rng.normal(size=(20, 3))
        y = rng.integers(0, 2, size=20)

        def loss():
            return float(bce_loss(y, model.scores(x)).mean())

        s = model.scores(x)
        grads = model.backprop_params(x, bce_grad_score(y, s) / 20, s)
        for p, g in zip(model.param_arrays(), grads):
            flat_p, flat_g = p.reshape(-1), np.asarray(g).reshape(-1)
            for j in range(flat_p.size):
                orig = flat_p[j]
                flat_p[j] = orig + FD_H
                up = loss()
                flat_p[j] = orig - FD_H
                down = loss()
                flat_p[j] = orig
                num = (up - down) / (2 * FD_H)
                assert abs(num - flat_g[j]) <= 1e-4 * max(1.0, abs(num))

    def test_input_gradients_match_finite_differences_off_kinks(self):
        rng = np.random.default_rng(3)
        model = MlpScorer.init(2, (4,), seed=7)
        x = rng.normal(size=(8, 2))
        # keep probes away from ReLU kinks so central differences are clean
        pre = x @ model.layer_weights[0] + model.layer_biases[0]
        keep = np.abs(pre).min(axis=1) > 1e-3
        x = x[keep]
        ana = model.grad_input(x)
        for i in range(x.shape[0]):
            for j in range(2):
                def f(v, i=i, j=j):
                    xp = x.copy()
                    xp[i, j] = v
                    return model.scores(xp)[i]
                num = central_diff(f, x[i, j])
                assert abs(num - ana[i, j]) <= 1e-4 * max(1.0, abs(num))


class TestSerialization:
    def test_glm_round_trip_is_exact_and_stable(self):
        rng = np.random.default_rng(4)
        model = GlmScorer(rng.normal(size=5), float(rng.normal()))
        budget = EffortBudget("l2_weighted", 0.75, (1.0, 2.0, 0.5, 1.5, 1.0))
        text = serialize_model(model, budget)
        back, budget_back = deserialize_model(text)
        np.testing.assert_array_equal(back.weights, model.weights)
        assert back.bias == model.bias
        assert budget_back == budget
        assert serialize_model(back, budget_back) == text

    def test_mlp_round_trip_is_exact(self):
        model = MlpScorer.init(3, (4, 2), seed=9)
        text = serialize_model(model)
        back, budget = deserialize_model(text)
        assert budget is None
        for pa, pb in zip(model.param_arrays(), back.param_arrays()):
            np.testing.assert_array_equal(pa, pb)

    def test_bad_header_and_missing_fields(self):
        with pytest.raises(DataError, match="bad header"):
            deserialize_model("something else\n")
        text = serialize_model(GlmScorer.zeros(2)).replace("bias = ", "bads = ")
        with pytest.raises(DataError, match="missing field"):
            deserialize_model(text)


def test_bce_loss_matches_hand_values():
    y = np.array([1, 0])
    s = np.array([0.8, 0.8])
    np.testing.assert_allclose(bce_loss(y, s), [-np.log(0.8), -np.log(0.2)],
                               rtol=1e-12)


@given(st.floats(min_value=-60, max_value=60))
@settings(max_examples=60, deadline=None)
def test_sigmoid_symmetry(t):
    assert abs(sigmoid(np.array([t])) + sigmoid(np.array([-t])) - 1.0) < 1e-12
