"""Differentiable unfairness penalties over a batch.

Each penalty looks at the rejected rows of the batch (score below 0.5), lifts
them with the best response under the effort budget, and measures how
unevenly the lifted scores sit across groups. The returned gradient is with
respect to the model parameters, holding the best-response moves and the
rejected index set fixed (the envelope rule: the inner maximizer is treated
as a constant).

Tags: "cov" (covariance surrogate, binary groups only), "kde" (smoothed
improvability-probability gaps), "loss" (per-group cross-entropy gaps over
rejected rows), "be_loss" (same gaps weighted by group share, conditioning on
the group alone), "none".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .effort import EffortBudget, PgdConfig, best_response_batch
from .errors import ConfigError
from .models import LOSS_EPS

PENALTY_TAGS = ("none", "cov", "kde", "loss", "be_loss")
SQRT2 = float(np.sqrt(2.0))
SQRT2PI = float(np.sqrt(2.0 * np.pi))


@dataclass(frozen=True)
class PenaltyConfig:
    tag: str = "none"
    bandwidth: float = 0.1  # kde only

    def validate(self) -> None:
        if self.tag not in PENALTY_TAGS:
            raise ConfigError(f"unknown penalty tag {self.tag!r}")
        if self.bandwidth <= 0:
            raise ConfigError("kde bandwidth must be positive")


@dataclass
class PenaltyResult:
    value: float
    param_grads: list[np.ndarray] | None
    flags: tuple[str, ...] = ()


def _gaussian_q(u: np.ndarray) -> np.ndarray:
    return 0.5 * erfc(np.asarray(u, dtype=float) / SQRT2)


def _zero_like_params(model) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in model.param_arrays()]


def penalty_value_and_grad(model, x: np.ndarray, groups: np.ndarray, budget: EffortBudget,
                           config: PenaltyConfig, partition,
                           pgd: PgdConfig | None = None,
                           scores: np.ndarray | None = None) -> PenaltyResult:
    """Compute the penalty and its parameter gradient on one batch.

    scores, when given, must be the model's scores on x; the training loop
    passes them to avoid a second forward pass per batch.
    """
    config.validate()
    if config.tag == "none":
        return PenaltyResult(0.0, _zero_like_params(model), ())

    x = np.asarray(x, dtype=float)
    groups = np.asarray(groups)
    if scores is None:
        scores = model.scores(x)
    rejected = scores < 0.5
    if not rejected.any():
        return PenaltyResult(0.0, _zero_like_params(model), ("degenerate_batch",))

    x_rej = x[rejected]
    g_rej = groups[rejected]
    delta, smax = best_response_batch(model, x_rej, budget, partition, pgd)
    x_lift = x_rej + delta
    n_rej = smax.shape[0]

    flags: list[str] = []
    if config.tag == "cov":
        if np.unique(groups).shape[0] > 2 or groups.max(initial=0) > 1:
            raise ConfigError("the cov penalty requires binary group ids 0/1")
        zbar = g_rej.mean()
        centered = g_rej - zbar
        c = float(centered @ smax) / n_rej
        value = c * c
        dsmax = 2.0 * c * centered / n_rej
    elif config.tag == "kde":
        h = config.bandwidth
        u = (0.5 - smax) / h
        q = _gaussian_q(u)
        phi_over_h = np.exp(-0.5 * u * u) / (SQRT2PI * h)  # d q / d smax
        pooled = q.mean()
        dsmax = np.zeros(n_rej)
        value = 0.0
        sign_sum = 0.0
        for g in np.unique(groups):
            in_g = g_rej == g
            if not in_g.any():
                flags.append(f"no_rejected_in_group_{g}")
                continue
            gap = q[in_g].mean() - pooled
            sgn = np.sign(gap)
            value += abs(gap)
            sign_sum += sgn
            dsmax[in_g] += sgn * phi_over_h[in_g] / in_g.sum()
        dsmax -= sign_sum * phi_over_h / n_rej
    elif config.tag in ("loss", "be_loss"):
        sc = np.clip(smax, LOSS_EPS, 1.0 - LOSS_EPS)
        nll = -np.log(sc)
        dnll = np.where((smax > LOSS_EPS) & (smax < 1.0 - LOSS_EPS), -1.0 / sc, 0.0)
        if config.tag == "loss":
            # per-group mean over that group's rejected rows
            denom_of = {g: int((g_rej == g).sum()) for g in np.unique(groups)}
            pool_n = n_rej
        else:
            # be_loss conditions on the group alone: divide by the full group
            # size, so the pooled term averages over the whole batch
            denom_of = {g: int((groups == g).sum()) for g in np.unique(groups)}
            pool_n = groups.shape[0]
        # either way the share-weighted mean of the group terms telescopes to
        # a flat sum over rejected rows
        pooled = nll.sum() / pool_n
        dsmax = np.zeros(n_rej)
        value = 0.0
        sign_sum = 0.0
        for g in np.unique(groups):
            in_g = g_rej == g
            if not in_g.any():
                flags.append(f"no_rejected_in_group_{g}")
                continue
            gap = nll[in_g].sum() / denom_of[g] - pooled
            sgn = np.sign(gap)
            value += abs(gap)
            sign_sum += sgn
            dsmax[in_g] += sgn * dnll[in_g] / denom_of[g]
        dsmax -= sign_sum * dnll / pool_n
    else:  # pragma: no cover - tags are validated above
        raise ConfigError(config.tag)

    grads = model.backprop_params(x_lift, dsmax, scores=smax)
    return PenaltyResult(float(value), grads, tuple(flags))
