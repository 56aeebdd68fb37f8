import numpy as np
import pytest

from improvkit.data import Dataset, FeaturePartition
from improvkit.effort import EffortBudget
from improvkit.models import GlmScorer


@pytest.fixture
def linf_budget():
    return EffortBudget("linf", 0.5)


@pytest.fixture
def banded_dataset():
    """Factory for 1-d two-group datasets with exact category counts.

    counts[z] = (accepted, improvable_rejected, stuck_rejected). Returns a
    (GlmScorer, Dataset) pair where the scorer accepts at x >= 0 and a Linf
    budget of `delta` flips exactly the improvable band.
    """

    def build(counts, delta, seed=0):
        rng = np.random.default_rng(seed)
        margin = 0.05 * delta
        xs, zs = [], []
        for z, (acc, imp, stuck) in sorted(counts.items()):
            xs.append(rng.uniform(margin, 3.0, acc))
            xs.append(rng.uniform(-delta + margin, -margin, imp))
            xs.append(rng.uniform(-delta - 3.0, -delta - margin, stuck))
            zs.append(np.full(acc + imp + stuck, z))
        x = np.concatenate(xs)[:, None]
        z = np.concatenate(zs).astype(int)
        y = (x[:, 0] > 0).astype(int)
        ds = Dataset(x, y, z, FeaturePartition(improvable=(0,)))
        return GlmScorer(np.array([1.0]), 0.0), ds

    return build
