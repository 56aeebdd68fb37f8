import numpy as np
import pytest

from improvkit.data import FeaturePartition
from improvkit.effort import EffortBudget
from improvkit.errors import ConfigError
from improvkit.models import GlmScorer
from improvkit.penalties import PenaltyConfig, penalty_value_and_grad

PART1 = FeaturePartition(improvable=(0,))
PART3 = FeaturePartition(improvable=(0, 1, 2))


def _random_batch(seed, n=24, d=3):
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=1.5, size=(n, d))
    groups = rng.integers(0, 2, size=n)
    model = GlmScorer(rng.normal(size=d), -0.3)
    return model, x, groups


def test_config_validation():
    with pytest.raises(ConfigError, match="penalty tag"):
        PenaltyConfig("gap").validate()
    with pytest.raises(ConfigError, match="bandwidth"):
        PenaltyConfig("kde", bandwidth=0.0).validate()


def test_none_tag_is_free():
    model, x, groups = _random_batch(0)
    res = penalty_value_and_grad(model, x, groups, EffortBudget("linf", 0.4),
                                 PenaltyConfig("none"), PART3)
    assert res.value == 0.0
    assert res.flags == ()
    for g in res.param_grads:
        np.testing.assert_array_equal(g, 0.0)


def test_values_are_nonnegative():
    budget = EffortBudget("linf", 0.4)
    for seed in range(5):
        model, x, groups = _random_batch(seed)
        for tag in ("cov", "kde", "loss", "be_loss"):
            res = penalty_value_and_grad(model, x, groups, budget,
                                         PenaltyConfig(tag), PART3)
            assert res.value >= 0.0


def test_all_accepted_batch_is_degenerate():
    model = GlmScorer(np.array([1.0]), 5.0)  # everything scores near 1
    x = np.zeros((4, 1))
    res = penalty_value_and_grad(model, x, np.array([0, 0, 1, 1]),
                                 EffortBudget("linf", 0.5),
                                 PenaltyConfig("kde"), PART1)
    assert res.value == 0.0
    assert res.flags == ("degenerate_batch",)


def test_single_group_batch_has_no_gap():
    model, x, _ = _random_batch(1)
    groups = np.zeros(x.shape[0], dtype=int)
    res = penalty_value_and_grad(model, x, groups, EffortBudget("linf", 0.4),
                                 PenaltyConfig("kde"), PART3)
    assert res.value == 0.0
    assert res.flags == ()


def test_group_without_rejected_rows_is_flagged():
    model = GlmScorer(np.array([1.0]), 0.0)
    x = np.array([[-1.0], [-2.0], [1.0], [2.0]])
    groups = np.array([0, 0, 1, 1])  # group 1 is fully accepted
    res = penalty_value_and_grad(model, x, groups, EffortBudget("linf", 0.1),
                                 PenaltyConfig("kde"), PART1)
    assert "no_rejected_in_group_1" in res.flags
    assert res.value == 0.0  # the only populated group equals the pool


def test_cov_needs_binary_groups():
    model, x, _ = _random_batch(2)
    groups = np.array([0, 1, 2] * 8)
    with pytest.raises(ConfigError, match="binary"):
        penalty_value_and_grad(model, x, groups, EffortBudget("linf", 0.4),
                               PenaltyConfig("cov"), PART3)


def test_cov_is_bounded_by_a_quarter():
    # |cov(z, s)| <= 2 zbar (1 - zbar) <= 1/2 for binary z and s in (0, 1)
    for seed in range(8):
        model, x, groups = _random_batch(seed)
        res = penalty_value_and_grad(model, x, groups, EffortBudget("linf", 0.4),
                                     PenaltyConfig("cov"), PART3)
        assert res.value <= 0.25 + 1e-12


def test_row_permutation_changes_nothing():
    model, x, groups = _random_batch(3)
    budget = EffortBudget("linf", 0.4)
    perm = np.random.default_rng(4).permutation(x.shape[0])
    for tag in ("cov", "kde", "loss", "be_loss"):
        cfg = PenaltyConfig(tag)
        base = penalty_value_and_grad(model, x, groups, budget, cfg, PART3)
        shuf = penalty_value_and_grad(model, x[perm], groups[perm], budget, cfg, PART3)
        np.testing.assert_allclose(shuf.value, base.value, rtol=1e-12)
        for gb, gs in zip(base.param_grads, shuf.param_grads):
            np.testing.assert_allclose(gs, gb, rtol=1e-10, atol=1e-14)


def test_kde_sharpens_to_hard_counts_as_bandwidth_shrinks():
    # after lifting by delta=1 the logit threshold sits at x = -1, so the
    # improvable fractions are 1/2 (group 0) and 2/3 (group 1), pool 3/5,
    # giving |1/2 - 3/5| + |2/3 - 3/5| = 1/6
    model = GlmScorer(np.array([1.0]), 0.0)
    x = np.array([[-0.5], [-2.0], [-0.3], [-0.4], [-1.9], [1.0], [1.0]])
    groups = np.array([0, 0, 1, 1, 1, 0, 1])
    res = penalty_value_and_grad(model, x, groups, EffortBudget("linf", 1.0),
                                 PenaltyConfig("kde", bandwidth=1e-3), PART1)
    np.testing.assert_allclose(res.value, 1.0 / 6.0, atol=1e-9)
    wide = penalty_value_and_grad(model, x, groups, EffortBudget("linf", 1.0),
                                  PenaltyConfig("kde", bandwidth=1.0), PART1)
    assert wide.value < res.value  # smoothing shrinks the measured gap


def test_be_loss_scales_loss_by_the_common_rejection_rate():
    # both groups reject exactly half their rows, so conditioning on the
    # group alone halves every gap term
    model = GlmScorer(np.array([1.0]), 0.0)
    x = np.array([[-1.0], [-2.0], [1.0], [2.0],
                  [-0.5], [-1.5], [-2.5], [-3.5], [0.5], [1.5], [2.5], [3.5]])
    groups = np.array([0] * 4 + [1] * 8)
    budget = EffortBudget("linf", 0.3)
    loss = penalty_value_and_grad(model, x, groups, budget,
                                  PenaltyConfig("loss"), PART1)
    be = penalty_value_and_grad(model, x, groups, budget,
                                PenaltyConfig("be_loss"), PART1)
    np.testing.assert_allclose(be.value, 0.5 * loss.value, rtol=1e-12)


class TestParameterGradients:
    """Central differences on the recomputed penalty, exploiting the live
    param_arrays references. Valid because no score sits near 0.5 and no
    group gap sits near zero for the pinned batch."""

    H = 1e-6

    def _numeric(self, model, compute):
        commit = getattr(model, "commit_params", lambda: None)
        grads = []
        for p in model.param_arrays():
            g = np.zeros_like(p)
            flat, gf = p.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + self.H
                commit()
                up = compute()
                flat[i] = orig - self.H
                commit()
                dn = compute()
                flat[i] = orig
                commit()
                gf[i] = (up - dn) / (2.0 * self.H)
            grads.append(g)
        return grads

    @pytest.mark.parametrize("tag", ["cov", "kde", "loss", "be_loss"])
    def test_glm_grads_match_central_differences(self, tag):
        model, x, groups = _random_batch(7)
        budget = EffortBudget("linf", 0.4)
        cfg = PenaltyConfig(tag)
        margin = np.abs(model.scores(x) - 0.5).min()
        assert margin > 1e-3, "pinned batch must keep scores away from 0.5"

        def compute():
            return penalty_value_and_grad(model, x, groups, budget, cfg, PART3).value

        analytic = penalty_value_and_grad(model, x, groups, budget, cfg, PART3).param_grads
        numeric = self._numeric(model, compute)
        for a, n in zip(analytic, numeric):
            np.testing.assert_allclose(a, n, rtol=1e-5, atol=1e-8)
