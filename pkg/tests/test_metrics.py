import math

import numpy as np
import pytest

from improvkit.data import (Dataset, FeaturePartition, SyntheticConfig,
                            generate_synthetic)
from improvkit.effort import EffortBudget
from improvkit.errors import EvaluationError
from improvkit.metrics import (DisparityReport, be_disparity, dp_disparity,
                               ei_disparity, eo_disparity, eod_disparity,
                               er_disparity, error_rate, full_report)
from improvkit.models import GlmScorer
from improvkit.oracles import GroupAwareLinearClassifier

PART1 = FeaturePartition(improvable=(0,))


def _dataset_1d(x, y, z):
    return Dataset(np.asarray(x, dtype=float)[:, None], np.asarray(y, dtype=int),
                   np.asarray(z, dtype=int), PART1)


class TestHandComputedGaps:
    def test_dp_is_the_worst_gap_to_the_pool(self, banded_dataset):
        model, ds = banded_dataset({0: (2, 3, 5), 1: (6, 2, 2)}, delta=0.5)
        # accept rates 0.2 and 0.6 around a pool of 0.4
        assert dp_disparity(model, ds) == pytest.approx(0.2, abs=1e-12)

    def test_ei_counts_improvable_among_rejected(self, banded_dataset, linf_budget):
        model, ds = banded_dataset({0: (2, 3, 5), 1: (6, 2, 2)}, delta=0.5)
        # improvable fractions 3/8 and 2/4 around a pool of 5/12
        expected = max(abs(3 / 8 - 5 / 12), abs(1 / 2 - 5 / 12))
        assert ei_disparity(model, ds, linf_budget) == pytest.approx(expected, abs=1e-12)

    def test_be_conditions_on_the_group_alone(self, banded_dataset, linf_budget):
        model, ds = banded_dataset({0: (2, 3, 5), 1: (6, 2, 2)}, delta=0.5)
        # joint rates 3/10 and 2/10 around a pool of 1/4
        assert be_disparity(model, ds, linf_budget) == pytest.approx(0.05, abs=1e-12)

    def test_eo_and_eod_from_known_confusion_counts(self):
        x = [1, 1, -1, 1, -1, 1, -1, -1, -1]
        y = [1, 1, 1, 0, 0, 1, 1, 0, 0]
        z = [0, 0, 0, 0, 0, 1, 1, 1, 1]
        ds = _dataset_1d(x, y, z)
        model = GlmScorer(np.array([1.0]), 0.0)
        # tpr 2/3 vs 1/2 around 3/5; fpr 1/2 vs 0 around 1/4
        assert eo_disparity(model, ds) == pytest.approx(0.1, abs=1e-12)
        assert eod_disparity(model, ds) == pytest.approx(0.25, abs=1e-12)

    def test_er_means_the_minimal_radius(self, linf_budget):
        ds = _dataset_1d([-1, -3, 2, -1, 2], [0, 0, 1, 0, 1], [0, 0, 0, 1, 1])
        model = GlmScorer(np.array([1.0]), 0.0)
        # group means 2 and 1 around a pool of 5/3
        assert er_disparity(model, ds, linf_budget) == pytest.approx(2 / 3, abs=1e-9)

    def test_error_rate_counts_disagreements(self):
        ds = _dataset_1d([1, -1, 1, -1], [1, 1, 0, 0], [0, 0, 1, 1])
        model = GlmScorer(np.array([1.0]), 0.0)
        assert error_rate(model, ds) == 0.5


class TestConditioningEdges:
    def test_no_rejected_rows_is_an_error_for_ei_and_er(self, linf_budget):
        ds = _dataset_1d([1, 2, 3], [1, 1, 1], [0, 1, 0])
        model = GlmScorer(np.array([1.0]), 0.0)
        with pytest.raises(EvaluationError, match="rejected"):
            ei_disparity(model, ds, linf_budget)
        with pytest.raises(EvaluationError, match="rejected"):
            er_disparity(model, ds, linf_budget)

    def test_group_with_no_rejected_rows_is_skipped(self, linf_budget):
        ds = _dataset_1d([-0.2, -0.3, 1.0, 2.0], [0, 0, 1, 1], [0, 0, 1, 1])
        model = GlmScorer(np.array([1.0]), 0.0)
        skipped = []
        value = ei_disparity(model, ds, linf_budget, skipped=skipped)
        assert ("ei", 1) in skipped
        assert value == 0.0  # the only populated group coincides with the pool

    def test_missing_label_side_fails_eod_but_not_eo(self):
        ds = _dataset_1d([1, -1, 1, -1], [1, 1, 1, 1], [0, 0, 1, 1])
        model = GlmScorer(np.array([1.0]), 0.0)
        assert eo_disparity(model, ds) == pytest.approx(0.0)
        with pytest.raises(EvaluationError, match="fpr"):
            eod_disparity(model, ds)

    def test_unreachable_rows_are_capped_and_reported(self, linf_budget):
        x = np.array([[-1.0, 0.0], [-2.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
        ds = Dataset(x, np.array([0, 0, 1, 1]), np.array([0, 1, 0, 1]),
                     FeaturePartition(improvable=(1,), immutable=(0,)))
        model = GlmScorer(np.array([1.0, 0.0]), 0.0)  # effort cannot move x0
        skipped = []
        value = er_disparity(model, ds, linf_budget, skipped=skipped,
                             delta_max=9.0)
        assert ("er_capped_rows", 2) in skipped
        assert value == 0.0  # both groups hit the same cap


class TestGroupAwareScorers:
    def test_per_group_intercepts_shift_the_boundary(self):
        clf = GroupAwareLinearClassifier(np.pi / 2, 0.0, 1.0)
        x = np.array([[0.5, 0.0], [0.5, 0.0], [1.5, 0.0], [1.5, 0.0]])
        ds = Dataset(x, np.array([1, 1, 1, 1]), np.array([0, 1, 0, 1]),
                     FeaturePartition(improvable=(0, 1)))
        details = {}
        dp_disparity(clf, ds, details=details)
        # group 0 accepts x0 >= 0 (both rows), group 1 needs x0 >= 1 (one row)
        assert details["accept"] == {0: 1.0, 1: 0.5}

    def test_er_uses_the_matching_group_branch(self, linf_budget):
        clf = GroupAwareLinearClassifier(np.pi / 2, 0.0, 1.0)
        x = np.array([[-1.0, 0.0], [-1.0, 0.0], [5.0, 0.0]])
        ds = Dataset(x, np.array([0, 0, 1]), np.array([0, 1, 0]),
                     FeaturePartition(improvable=(0, 1)))
        details = {}
        er_disparity(clf, ds, linf_budget, details=details)
        # same point, but group 1 sits one unit further from its boundary
        assert details["er"][0] == pytest.approx(1.0, abs=1e-9)
        assert details["er"][1] == pytest.approx(2.0, abs=1e-9)

    def test_symmetric_mixture_has_no_bounded_effort_gap(self):
        # mirrored means across groups with a boundary along the symmetry
        # axis: both groups improve at the same rate in distribution
        means = {(0, 0): (-2.0, -1.0), (0, 1): (-1.0, -2.0),
                 (1, 0): (1.0, 2.0), (1, 1): (2.0, 1.0)}
        covs = {k: (0.25, 0.25) for k in means}
        cfg = SyntheticConfig(n_samples=20000, p_z=0.5, p_y_given_z=(0.5, 0.5),
                              cluster_means=means, cluster_covs=covs,
                              group_feature=False)
        ds = generate_synthetic(cfg, seed=7)
        clf = GroupAwareLinearClassifier(math.pi / 4, 0.0, 0.0)
        assert be_disparity(clf, ds, EffortBudget("linf", 1.5)) <= 0.01


def test_one_far_outlier_moves_er_but_barely_moves_ei(linf_budget):
    base_x = [-0.2, -2.0, 1.0, -0.3, -1.8, 1.0]
    base_y = [0, 0, 1, 0, 0, 1]
    base_z = [0, 0, 0, 1, 1, 1]
    model = GlmScorer(np.array([1.0]), 0.0)
    before = _dataset_1d(base_x, base_y, base_z)
    after = _dataset_1d(base_x + [-50.0], base_y + [0], base_z + [0])
    er_shift = abs(er_disparity(model, after, linf_budget)
                   - er_disparity(model, before, linf_budget))
    ei_shift = abs(ei_disparity(model, after, linf_budget)
                   - ei_disparity(model, before, linf_budget))
    assert er_shift > 5.0  # the 50-unit recourse floods the group mean
    assert ei_shift <= 1 / 3  # one extra count among three rejected rows


class TestFullReport:
    def test_matches_the_individual_metrics(self, banded_dataset, linf_budget):
        model, ds = banded_dataset({0: (2, 3, 5), 1: (6, 2, 2)}, delta=0.5)
        rep = full_report(model, ds, linf_budget)
        assert rep.dp == dp_disparity(model, ds)
        assert rep.ei == ei_disparity(model, ds, linf_budget)
        assert rep.be == be_disparity(model, ds, linf_budget)
        assert rep.er == er_disparity(model, ds, linf_budget)
        assert rep.error_rate == error_rate(model, ds)
        assert rep.notes == ()
        assert "ei" in rep.per_group and "accept" in rep.per_group

    def test_undefined_notions_become_nan_with_notes(self, banded_dataset, linf_budget):
        model, ds = banded_dataset({0: (3, 0, 0), 1: (2, 0, 0)}, delta=0.5)
        rep = full_report(model, ds, linf_budget)
        assert math.isnan(rep.ei) and math.isnan(rep.er) and math.isnan(rep.eod)
        assert rep.dp == 0.0 and rep.be == 0.0 and rep.error_rate == 0.0
        assert len(rep.notes) == 3

    def test_text_and_csv_round_trips(self, banded_dataset, linf_budget):
        model, ds = banded_dataset({0: (2, 3, 5), 1: (6, 2, 2)}, delta=0.5)
        rep = full_report(model, ds, linf_budget)
        csv = rep.to_csv().splitlines()
        assert csv[0] == ",".join(DisparityReport.FIELDS)
        assert len(csv[1].split(",")) == len(DisparityReport.FIELDS)
        text = rep.to_text()
        for name in DisparityReport.FIELDS:
            assert f"{name} = " in text
