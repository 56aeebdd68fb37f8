"""Analytic ground truth to test the empirical pipeline against.

Three tools:

  * GroupAwareLinearClassifier and closed-form error / improvability-gap
    formulas under the two-group Gaussian mixture (tail probabilities via the
    Q function, so they are exact up to erfc rounding).
  * optimal_tradeoff: a grid-plus-refinement scan of that family producing
    the best achievable (error, disparity) curve as the disparity cap sweeps
    from 0 up to the unconstrained optimum's disparity.
  * worked_example_oracle: two fully worked one-dimensional piecewise-uniform
    populations with every quantity in exact rational arithmetic, including
    one improvement round and the resulting total-variation distances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfc

from .data import SyntheticConfig
from .errors import ConfigError, EvaluationError, NumericalError
from .models import GlmScorer

SQRT2 = math.sqrt(2.0)
TINY = 1e-12


def gaussian_q(u):
    """Upper tail of the standard normal."""
    return 0.5 * erfc(np.asarray(u, dtype=float) / SQRT2)


class GroupAwareLinearClassifier:
    """One unit-norm linear score with a per-group intercept.

    Accepts a point of group z when w . x >= b_z, with w = (sin theta,
    cos theta). glm_for_group turns each branch into a plain logistic scorer
    whose 0.5 level set is that boundary.
    """

    kind = "group_aware_linear"

    def __init__(self, theta: float, b0: float, b1: float):
        self.theta = float(theta)
        self.b = (float(b0), float(b1))
        self.weights = np.array([math.sin(self.theta), math.cos(self.theta)])

    def glm_for_group(self, z: int) -> GlmScorer:
        return GlmScorer(self.weights, -self.b[z])


def _cell_stats(config: SyntheticConfig, weights: np.ndarray):
    """Projected mean and std of w . x per (y, z) cell."""
    stats = {}
    for (y, z), mean in config.cluster_means.items():
        cov = np.asarray(config.cluster_covs[(y, z)], dtype=float)
        m = float(weights @ np.asarray(mean, dtype=float))
        s = float(np.sqrt(weights @ (cov * weights)))
        stats[(y, z)] = (m, s)
    return stats


def _group_probs(config: SyntheticConfig):
    return {0: 1.0 - config.p_z, 1: config.p_z}


def qform_error(clf: GroupAwareLinearClassifier, config: SyntheticConfig) -> float:
    """Exact misclassification rate of the classifier under the mixture."""
    config.validate()
    if config.n_features != 2:
        raise ConfigError("closed forms require two feature dimensions")
    stats = _cell_stats(config, clf.weights)
    p_z = _group_probs(config)
    err = 0.0
    for z in (0, 1):
        p1 = config.p_y_given_z[z]
        m0, s0 = stats[(0, z)]
        m1, s1 = stats[(1, z)]
        false_accept = gaussian_q((clf.b[z] - m0) / s0)
        false_reject = gaussian_q((m1 - clf.b[z]) / s1)
        err += p_z[z] * ((1.0 - p1) * false_accept + p1 * false_reject)
    return float(err)


def _qform_ei_terms(clf, config, delta: float):
    """Per-group (numerator, denominator) of the improvability fraction.

    Denominator: rejection probability. Numerator: probability of landing in
    the band a full-budget push can cross, i.e. the projected score in
    [b_z - delta * ||w||_1, b_z).
    """
    stats = _cell_stats(config, clf.weights)
    gain = delta * float(np.abs(clf.weights).sum())
    nums, dens = {}, {}
    for z in (0, 1):
        p1 = config.p_y_given_z[z]
        num = den = 0.0
        for y, py in ((0, 1.0 - p1), (1, p1)):
            m, s = stats[(y, z)]
            reject = gaussian_q((m - clf.b[z]) / s)
            reject_after = gaussian_q((m - (clf.b[z] - gain)) / s)
            den += py * reject
            num += py * (reject - reject_after)
        nums[z], dens[z] = num, den
    return nums, dens


def qform_ei_disparity(clf: GroupAwareLinearClassifier, config: SyntheticConfig,
                       delta: float) -> float:
    """Exact worst gap between a group's improvability fraction and the pooled one."""
    config.validate()
    if config.n_features != 2:
        raise ConfigError("closed forms require two feature dimensions")
    nums, dens = _qform_ei_terms(clf, config, delta)
    p_z = _group_probs(config)
    pool_num = sum(p_z[z] * nums[z] for z in (0, 1))
    pool_den = sum(p_z[z] * dens[z] for z in (0, 1))
    if pool_den < TINY or any(dens[z] < TINY for z in (0, 1)):
        raise EvaluationError("a group rejects almost nothing: improvability undefined")
    pooled = pool_num / pool_den
    return max(abs(nums[z] / dens[z] - pooled) for z in (0, 1))


# ---------------------------------------------------------------------------
# The error / disparity tradeoff curve.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TradeoffPoint:
    cap: float
    error: float
    disparity: float
    theta: float
    b0: float
    b1: float


@dataclass
class TradeoffCurve:
    delta: float
    points: list  # TradeoffPoint, ordered by cap

    def error_at_disparity(self, disparity: float) -> float:
        """Smallest curve error among points with disparity <= the argument
        (conservative piecewise-constant interpolation)."""
        feasible = [p.error for p in self.points if p.disparity <= disparity + 1e-12]
        if not feasible:
            return math.inf
        return min(feasible)


def _scan_arrays(config, delta, thetas, b0s, b1s):
    """Vectorized error and disparity over the (theta, b0, b1) grid."""
    p_z = _group_probs(config)
    n_t, n0, n1 = len(thetas), len(b0s), len(b1s)
    err = np.zeros((n_t, n0, n1))
    num = {0: np.zeros((n_t, n0)), 1: np.zeros((n_t, n1))}
    den = {0: np.zeros((n_t, n0)), 1: np.zeros((n_t, n1))}
    err_z = {0: np.zeros((n_t, n0)), 1: np.zeros((n_t, n1))}
    w = np.stack([np.sin(thetas), np.cos(thetas)], axis=1)  # (n_t, 2)
    gain = delta * np.abs(w).sum(axis=1)  # (n_t,)
    for z, bs in ((0, b0s), (1, b1s)):
        p1 = config.p_y_given_z[z]
        b = bs[None, :]  # (1, nb)
        for y, py in ((0, 1.0 - p1), (1, p1)):
            mean = np.asarray(config.cluster_means[(y, z)], dtype=float)
            cov = np.asarray(config.cluster_covs[(y, z)], dtype=float)
            m = (w @ mean)[:, None]  # (n_t, 1)
            s = np.sqrt((w * w) @ cov)[:, None]
            reject = gaussian_q((m - b) / s)
            reject_after = gaussian_q((m - (b - gain[:, None])) / s)
            den[z] += py * reject
            num[z] += py * (reject - reject_after)
            err_z[z] += py * (reject if y == 1 else 1.0 - reject)
    err = p_z[0] * err_z[0][:, :, None] + p_z[1] * err_z[1][:, None, :]
    pool_num = p_z[0] * num[0][:, :, None] + p_z[1] * num[1][:, None, :]
    pool_den = p_z[0] * den[0][:, :, None] + p_z[1] * den[1][:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        pooled = pool_num / pool_den
        ei0 = num[0][:, :, None] / den[0][:, :, None]
        ei1 = num[1][:, None, :] / den[1][:, None, :]
        disp = np.maximum(np.abs(ei0 - pooled), np.abs(ei1 - pooled))
    bad = (np.broadcast_to(den[0][:, :, None], disp.shape) < TINY) \
        | (np.broadcast_to(den[1][:, None, :], disp.shape) < TINY) | (pool_den < TINY)
    disp = np.where(bad, np.nan, disp)
    return err, disp


def _pick(err, disp, thetas, b0s, b1s, cap):
    """Feasible-min-error point, falling back to least-disparity when the cap
    excludes everything; returns (error, disparity, theta, b0, b1) or None."""
    ok = np.isfinite(disp)
    if not ok.any():
        return None
    feasible = ok & (disp <= cap + 1e-12) if cap is not None else ok
    if not feasible.any():
        feasible = ok & (disp == np.nanmin(disp))
    e = np.where(feasible, err, np.inf)
    flat = int(np.argmin(e))
    i, j, k = np.unravel_index(flat, err.shape)
    return (float(err[i, j, k]), float(disp[i, j, k]),
            float(thetas[i]), float(b0s[j]), float(b1s[k]))


def _point_at(config, delta, theta, b0, b1):
    """(error, disparity, theta, b0, b1) for one classifier, or None when the
    disparity is undefined there."""
    clf = GroupAwareLinearClassifier(theta, b0, b1)
    try:
        d = qform_ei_disparity(clf, config, delta)
    except EvaluationError:
        return None
    return (qform_error(clf, config), d, float(theta), float(b0), float(b1))


def _polish_candidates(config, delta, cap, seed_point):
    """Constraint-activation candidates grown from a seed classifier.

    At the optimum the disparity cap binds, so from the seed's (theta, b_fix)
    we root-solve the free intercept until the signed per-group gap crosses
    zero, then (for cap > 0) until the disparity itself equals the cap. Every
    candidate is an exactly evaluated classifier; infeasible or unbracketable
    ones are dropped.
    """
    _, _, theta, b0, b1 = seed_point
    out = []
    for free in (0, 1):
        def gap(b_free):
            bs = (b_free, b1) if free == 0 else (b0, b_free)
            clf = GroupAwareLinearClassifier(theta, *bs)
            try:
                num, den = _qform_ei_terms(clf, config, delta)
            except EvaluationError:
                return math.nan
            if den[0] < TINY or den[1] < TINY:
                return math.nan
            return num[0] / den[0] - num[1] / den[1]

        center = b0 if free == 0 else b1
        g_center = gap(center)
        if not math.isfinite(g_center):
            continue
        bracket = None
        for width in (0.05, 0.1, 0.2, 0.5, 1.0, 2.0):
            for other in (center - width, center + width):
                g_other = gap(other)
                if math.isfinite(g_other) and np.sign(g_other) * np.sign(g_center) < 0:
                    bracket = (min(center, other), max(center, other))
                    break
            if bracket:
                break
        if bracket is None:
            continue
        b_zero = brentq(gap, bracket[0], bracket[1], xtol=1e-14)

        def at(b_free):
            bs = (b_free, b1) if free == 0 else (b0, b_free)
            return _point_at(config, delta, theta, *bs)

        zero_point = at(b_zero)
        if zero_point is not None:
            out.append(zero_point)
        if cap > 0.0:
            # walk back from the zero crossing toward the seed until the
            # disparity reaches the cap: those are the binding solutions
            def excess(b_free):
                p = at(b_free)
                return math.nan if p is None else p[1] - cap
            for end in (center, 2.0 * b_zero - center):
                lo, hi = min(b_zero, end), max(b_zero, end)
                e_lo, e_hi = excess(lo), excess(hi)
                if math.isfinite(e_lo) and math.isfinite(e_hi) and e_lo * e_hi < 0:
                    b_cap = brentq(excess, lo, hi, xtol=1e-14)
                    p = at(b_cap)
                    if p is not None:
                        out.append(p)
    return [p for p in out if p[1] <= cap + 1e-12]


def _refined_pick(config, delta, cap, seed_point, spacings):
    """Two local refinements around a coarse-grid winner."""
    best = seed_point
    d_theta, d_b0, d_b1 = spacings
    for _ in range(2):
        thetas = np.linspace(best[2] - d_theta, best[2] + d_theta, 21)
        b0s = np.linspace(best[3] - d_b0, best[3] + d_b0, 21)
        b1s = np.linspace(best[4] - d_b1, best[4] + d_b1, 21)
        err, disp = _scan_arrays(config, delta, thetas, b0s, b1s)
        cand = _pick(err, disp, thetas, b0s, b1s, cap)
        if cand is not None and (cand[1] <= cap + 1e-12 or cand[1] <= best[1]):
            if cand[1] <= cap + 1e-12 and best[1] <= cap + 1e-12:
                best = min(best, cand, key=lambda p: p[0])
            elif cand[1] <= cap + 1e-12 or cand[1] < best[1]:
                best = cand
        d_theta, d_b0, d_b1 = d_theta / 10.0, d_b0 / 10.0, d_b1 / 10.0
    return best


def optimal_tradeoff(config: SyntheticConfig, delta: float, n_caps: int = 20,
                     caps=None) -> TradeoffCurve:
    """Best group-aware linear classifier per disparity cap.

    One coarse scan is shared by every cap (error and disparity do not depend
    on the cap); each cap then gets two local refinements, seeded with the
    previous cap's solution so the error curve cannot increase. That
    monotonicity is asserted before returning.
    """
    config.validate()
    if config.n_features != 2:
        raise ConfigError("closed forms require two feature dimensions")
    if delta < 0:
        raise ConfigError("delta must be non-negative")
    thetas = np.linspace(0.0, 2.0 * math.pi, 181, endpoint=False)
    b0s = np.linspace(-3.0, 3.0, 61)
    b1s = np.linspace(-3.0, 3.0, 61)
    spacings = (float(thetas[1] - thetas[0]), float(b0s[1] - b0s[0]), float(b1s[1] - b1s[0]))
    err, disp = _scan_arrays(config, delta, thetas, b0s, b1s)

    unconstrained = _pick(err, disp, thetas, b0s, b1s, cap=None)
    if unconstrained is None:
        raise NumericalError("the scan produced no evaluable classifier")
    unconstrained = _refined_pick(config, delta, math.inf, unconstrained, spacings)
    if caps is None:
        caps = np.linspace(0.0, unconstrained[1], n_caps)

    cap_list = sorted(float(c) for c in caps)
    best_at = []
    for cap in cap_list:
        coarse = _pick(err, disp, thetas, b0s, b1s, cap)
        best_at.append(_refined_pick(config, delta, cap, coarse, spacings))

    # Walk down from the loose end: each cap tries binding-constraint
    # solutions grown from the next-looser cap's winner (and its own), which
    # rescues caps whose grid winner sat in a degenerate far-tail basin.
    for i in range(len(cap_list) - 1, -1, -1):
        cap = cap_list[i]
        seeds = [best_at[i]]
        if i + 1 < len(cap_list):
            seeds.append(best_at[i + 1])
        for seed in seeds:
            for cand in _polish_candidates(config, delta, cap, seed):
                if cand[1] <= cap + 1e-12 and cand[0] < best_at[i][0]:
                    best_at[i] = cand

    # Walk up: a tighter cap's solution is feasible for every looser cap, so
    # carry it forward whenever it wins; the curve ends up non-increasing.
    for i in range(1, len(cap_list)):
        prev = best_at[i - 1]
        if prev[1] <= cap_list[i] + 1e-12 and prev[0] < best_at[i][0]:
            best_at[i] = prev

    points = [TradeoffPoint(cap, b[0], b[1], b[2], b[3], b[4])
              for cap, b in zip(cap_list, best_at)]
    for earlier, later in zip(points, points[1:]):
        if later.error > earlier.error + 1e-12:
            raise NumericalError("tradeoff error curve is not non-increasing")
    return TradeoffCurve(delta, points)


# ---------------------------------------------------------------------------
# Exact piecewise-uniform worked examples.
# ---------------------------------------------------------------------------


def _frac(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, int):
        return Fraction(v)
    if isinstance(v, str):
        return Fraction(v)
    raise ConfigError(f"exact arithmetic needs int, str, or Fraction, got {type(v).__name__}")


class PiecewiseUniform:
    """A density that is constant on finitely many disjoint intervals, with
    Fraction endpoints and heights. All queries are exact."""

    def __init__(self, segments):
        cleaned = []
        for lo, hi, dens in segments:
            lo, hi, dens = _frac(lo), _frac(hi), _frac(dens)
            if hi <= lo:
                raise ConfigError("segment endpoints must be increasing")
            if dens < 0:
                raise ConfigError("densities cannot be negative")
            if dens > 0:
                cleaned.append((lo, hi, dens))
        cleaned.sort()
        for (_, hi1, _), (lo2, _, _) in zip(cleaned, cleaned[1:]):
            if lo2 < hi1:
                raise ConfigError("segments overlap")
        merged = []
        for seg in cleaned:
            if merged and merged[-1][1] == seg[0] and merged[-1][2] == seg[2]:
                merged[-1] = (merged[-1][0], seg[1], seg[2])
            else:
                merged.append(list(seg))
        self.segments = tuple((lo, hi, dens) for lo, hi, dens in merged)

    def total_mass(self) -> Fraction:
        return sum((d * (hi - lo) for lo, hi, d in self.segments), Fraction(0))

    def mass_between(self, a, b) -> Fraction:
        a, b = _frac(a), _frac(b)
        if b < a:
            a, b = b, a
        total = Fraction(0)
        for lo, hi, d in self.segments:
            left, right = max(lo, a), min(hi, b)
            if right > left:
                total += d * (right - left)
        return total

    def mass_below(self, t) -> Fraction:
        t = _frac(t)
        total = Fraction(0)
        for lo, hi, d in self.segments:
            if t <= lo:
                break
            total += d * (min(hi, t) - lo)
        return total

    def first_moment_below(self, t) -> Fraction:
        """Integral of x * density over (-inf, t)."""
        t = _frac(t)
        total = Fraction(0)
        for lo, hi, d in self.segments:
            if t <= lo:
                break
            right = min(hi, t)
            total += d * (right * right - lo * lo) / 2
        return total

    def improve(self, tau, delta) -> "PiecewiseUniform":
        """Shift all mass in [tau - delta, tau) to the right by delta.

        Everyone close enough below the bar clears it with a full-budget push;
        the density is rebuilt exactly on the refined breakpoint grid.
        """
        tau, delta = _frac(tau), _frac(delta)
        if delta <= 0:
            return PiecewiseUniform(self.segments)
        win_lo, win_hi = tau - delta, tau

        def density_at(piece_lo, piece_hi):
            # constant on (piece_lo, piece_hi) by construction of the breakpoints
            mid_num = piece_lo + piece_hi
            d = Fraction(0)
            for lo, hi, dens in self.segments:
                if 2 * lo < mid_num < 2 * hi:
                    d = dens
                    break
            return d

        bps = set()
        for lo, hi, _ in self.segments:
            bps.update((lo, hi, lo + delta, hi + delta))
        bps.update((win_lo, win_hi, win_lo + delta, win_hi + delta))
        bps = sorted(bps)
        out = []
        for lo, hi in zip(bps, bps[1:]):
            d = density_at(lo, hi)
            mid2 = lo + hi
            in_window = 2 * win_lo <= mid2 < 2 * win_hi
            moved_in = 2 * win_lo <= mid2 - 2 * delta < 2 * win_hi
            new_d = d
            if in_window:
                new_d -= d
            if moved_in:
                new_d += density_at(lo - delta, hi - delta)
            if new_d > 0:
                out.append((lo, hi, new_d))
        result = PiecewiseUniform(out)
        if result.total_mass() != self.total_mass():
            raise NumericalError("improvement step lost mass")  # pragma: no cover
        return result

    def tv(self, other: "PiecewiseUniform") -> Fraction:
        bps = sorted({p for lo, hi, _ in self.segments + other.segments for p in (lo, hi)})

        def dens(pw, lo, hi):
            mid2 = lo + hi
            for slo, shi, d in pw.segments:
                if 2 * slo < mid2 < 2 * shi:
                    return d
            return Fraction(0)

        total = Fraction(0)
        for lo, hi in zip(bps, bps[1:]):
            total += abs(dens(self, lo, hi) - dens(other, lo, hi)) * (hi - lo)
        return total / 2


@dataclass(frozen=True)
class ExamplePolicyOutcome:
    thresholds: tuple  # (Fraction, Fraction)
    error: Fraction
    disparity: Fraction
    tv_after: Fraction


@dataclass(frozen=True)
class WorkedExampleReport:
    example: str
    m: Fraction
    delta: Fraction
    cuts: tuple  # qualification cut per group
    group_weights: tuple
    tv_before: Fraction
    outcomes: dict  # policy tag -> ExamplePolicyOutcome

    def to_text(self) -> str:
        lines = [
            f"example = {self.example}",
            f"m = {self.m}",
            f"delta = {self.delta}",
            f"cut_0 = {self.cuts[0]}",
            f"cut_1 = {self.cuts[1]}",
            f"weight_0 = {self.group_weights[0]}",
            f"weight_1 = {self.group_weights[1]}",
            f"tv_before = {self.tv_before}",
        ]
        for tag, out in self.outcomes.items():
            lines.append(f"{tag}.tau0 = {out.thresholds[0]}")
            lines.append(f"{tag}.tau1 = {out.thresholds[1]}")
            lines.append(f"{tag}.error = {out.error}")
            lines.append(f"{tag}.disparity = {out.disparity}")
            lines.append(f"{tag}.tv_after = {out.tv_after}")
        return "\n".join(lines) + "\n"


def _example_setup(example: str, m: Fraction):
    half = m / 2
    if example == "d1":
        p0 = PiecewiseUniform([(-m, half, Fraction(1, 2) / m),
                               (half, 3 * half, Fraction(1, 4) / m)])
        p1 = PiecewiseUniform([(-m, m, Fraction(1, 2) / m)])
        cuts = (half, Fraction(0))
        weights = (Fraction(1, 4), Fraction(3, 4))
        policies = ("erm", "be", "ei")
    elif example == "d2":
        third = Fraction(1, 3) / m
        p0 = PiecewiseUniform([(-10 * m, -9 * m, third), (-half, half, 2 * third)])
        p1 = PiecewiseUniform([(-m, half, 2 * third)])
        cuts = (Fraction(0), Fraction(0))
        weights = (Fraction(1, 2), Fraction(1, 2))
        policies = ("erm", "er", "ei")
    else:
        raise ConfigError(f"unknown worked example {example!r} (want d1 or d2)")
    return p0, p1, cuts, weights, policies


def _example_disparity(policy: str, densities, taus, delta: Fraction):
    """Exact pairwise disparity for the worked examples; None when undefined."""
    if policy == "erm":
        return Fraction(0)
    stats = []
    for pw, tau in zip(densities, taus):
        below = pw.mass_below(tau)
        if policy == "be":
            stats.append(pw.mass_between(tau - delta, tau))
            continue
        if below == 0:
            return None
        if policy == "ei":
            stats.append(pw.mass_between(tau - delta, tau) / below)
        elif policy == "er":
            stats.append(tau - pw.first_moment_below(tau) / below)
        else:
            raise ConfigError(f"policy {policy!r} is not part of the worked examples")
    return abs(stats[0] - stats[1])


def worked_example_oracle(example: str, m) -> WorkedExampleReport:
    """Solve both worked examples exactly on a rational threshold grid.

    The fair policies pick the error-minimizing threshold pair among those
    with exactly zero disparity; erm minimizes the error alone. Thresholds
    range over multiples of m/4 spanning each group's support, padded by the
    improvement budget delta = m/2 on both sides.
    """
    m = _frac(m)
    if m <= 0:
        raise ConfigError("m must be positive")
    delta = m / 2
    p0, p1, cuts, weights, policies = _example_setup(example, m)
    for pw in (p0, p1):
        if pw.total_mass() != 1:
            raise NumericalError("example density does not integrate to one")  # pragma: no cover

    step = m / 4
    grids = []
    for pw in (p0, p1):
        lo = min(seg[0] for seg in pw.segments) - delta
        hi = max(seg[1] for seg in pw.segments) + delta
        count = int((hi - lo) / step)
        grids.append([lo + step * k for k in range(count + 1)])

    def error_of(taus):
        return sum(w * pw.mass_between(t, c)
                   for w, pw, t, c in zip(weights, (p0, p1), taus, cuts))

    outcomes = {}
    for policy in policies:
        best = None
        for t0 in grids[0]:
            for t1 in grids[1]:
                disp = _example_disparity(policy, (p0, p1), (t0, t1), delta)
                if disp is None:
                    continue
                err = error_of((t0, t1))
                key = (err, t0, t1) if policy == "erm" else (disp != 0, err, t0, t1)
                if best is None or key < best[0]:
                    best = (key, (t0, t1), err, disp)
        if best is None or (policy != "erm" and best[3] != 0):
            raise NumericalError(
                f"no zero-disparity thresholds on the grid for policy {policy!r}"
            )
        taus = best[1]
        improved0 = p0.improve(taus[0], delta)
        improved1 = p1.improve(taus[1], delta)
        outcomes[policy] = ExamplePolicyOutcome(taus, best[2], best[3],
                                                improved0.tv(improved1))
    return WorkedExampleReport(example, m, delta, cuts, weights, p0.tv(p1), outcomes)
