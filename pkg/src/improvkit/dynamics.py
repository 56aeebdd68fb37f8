"""Two-group feedback dynamics over 1-d Gaussian score distributions.

Each round: qualification is the top alpha quantile of the pooled feature
distribution; a policy picks per-group acceptance thresholds subject to an
error cap; rejected members below their threshold exert effort that grows as
they approach the bar; each group's feature distribution is then refit as a
Gaussian and the groups drift. The total-variation distance between the two
group densities tracks whether the policy pulls the groups together.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtr

from .errors import ConfigError, NumericalError

POLICIES = ("erm", "dp", "ei", "be", "er", "ilfcr")
EFFORT_KINDS = ("inverse_square", "log_capped")
GRID_POINTS = 161
REFINE_ROUNDS = 2
REFINE_POINTS = 21
QUAD_TOL = 1e-8
TINY_MASS = 1e-12


@dataclass(frozen=True)
class GroupState:
    """Per-group feature distributions: x | z ~ Normal(mu[z], sigma[z]^2)."""

    mu: tuple[float, float]
    sigma: tuple[float, float]

    def validate(self) -> None:
        if any(s <= 0 or not math.isfinite(s) for s in self.sigma):
            raise ConfigError("sigmas must be positive and finite")
        if any(not math.isfinite(m) for m in self.mu):
            raise ConfigError("mus must be finite")


@dataclass(frozen=True)
class DynamicsConfig:
    init: GroupState
    alpha: float = 0.2  # qualified fraction of the pooled distribution
    cap: float = 0.1  # error-rate cap for the policy solver
    beta: float = 0.25  # effort offset: effort peaks at 1/beta^2 just below the bar
    rounds: int = 10
    policy: str = "ei"
    effort: str = "inverse_square"

    def validate(self) -> None:
        self.init.validate()
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie strictly between 0 and 1")
        if self.cap < 0:
            raise ConfigError("cap must be non-negative")
        if self.beta <= 0:
            raise ConfigError("beta must be positive")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}")
        if self.effort not in EFFORT_KINDS:
            raise ConfigError(f"unknown effort kind {self.effort!r}")


def _phi(u: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * np.square(u)) / math.sqrt(2.0 * math.pi)


def qualification_cut(state: GroupState, alpha: float) -> float:
    """The (1 - alpha) quantile of the equal-weight two-group mixture."""
    mus, sigmas = np.asarray(state.mu), np.asarray(state.sigma)

    def upper_mass(t: float) -> float:
        return float(0.5 * (1.0 - ndtr((t - mus) / sigmas)).sum())

    lo = float((mus - 12.0 * sigmas).min())
    hi = float((mus + 12.0 * sigmas).max())
    # upper_mass falls from ~1 to ~0 over [lo, hi]; bisect for alpha
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if upper_mass(mid) > alpha:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-10:
            break
    return 0.5 * (lo + hi)


def effort_gain(x: np.ndarray, tau: float, beta: float, kind: str) -> np.ndarray:
    """Effort exerted at feature value x under acceptance threshold tau.

    inverse_square: 1 / (tau - x + beta)^2 below the bar, 0 at or above it.
    log_capped: log of that, floored at 0, which zeroes effort for anyone
    further than 1 - beta below the bar.
    """
    x = np.asarray(x, dtype=float)
    below = x < tau
    gap = np.where(below, tau - x + beta, 1.0)
    raw = 1.0 / (gap * gap)
    if kind == "log_capped":
        raw = np.maximum(np.log(raw), 0.0)
    return np.where(below, raw, 0.0)


def _effort_window(mu: float, sigma: float, tau: float, beta: float, kind: str):
    """Integration window and interior breakpoints for effort integrals."""
    lo = mu - 8.0 * sigma
    hi = min(tau, mu + 8.0 * sigma)
    if kind == "log_capped":
        lo = max(lo, tau + beta - 1.0)  # effort is exactly zero below this
    if hi <= lo:
        return None
    return lo, hi


def _group_effort_moments(mu: float, sigma: float, tau: float, beta: float, kind: str):
    """(A, B, C) = E[nu], E[(x - mu) nu], E[nu^2] over x ~ N(mu, sigma^2)."""
    window = _effort_window(mu, sigma, tau, beta, kind)
    if window is None:
        return 0.0, 0.0, 0.0
    lo, hi = window

    def dens(x):
        return _phi((x - mu) / sigma) / sigma

    def nu(x):
        return effort_gain(np.asarray(x), tau, beta, kind)

    a = quad(lambda x: nu(x) * dens(x), lo, hi, epsabs=QUAD_TOL, limit=200)[0]
    b = quad(lambda x: (x - mu) * nu(x) * dens(x), lo, hi, epsabs=QUAD_TOL, limit=200)[0]
    c = quad(lambda x: nu(x) ** 2 * dens(x), lo, hi, epsabs=QUAD_TOL, limit=200)[0]
    return float(a), float(b), float(c)


def mean_effort(state: GroupState, thresholds: tuple[float, float], beta: float,
                kind: str) -> float:
    """Population mean effort: the equal-weight group average of E[nu]."""
    total = 0.0
    for z in (0, 1):
        total += _group_effort_moments(state.mu[z], state.sigma[z], thresholds[z],
                                       beta, kind)[0]
    return 0.5 * total


def step_state(state: GroupState, thresholds: tuple[float, float], beta: float,
               kind: str) -> GroupState:
    """Apply one round of effort and refit each group as a Gaussian.

    The moved variable is T(x) = x + nu(x) for x below the bar. Its first two
    moments come from the effort integrals:
        mu'      = mu + E[nu]
        sigma'^2 = sigma^2 + (mu - mu')^2 + 2 E[(x - mu) nu] + 2 (mu - mu') E[nu] + E[nu^2]
    which is E[(T(x) - mu')^2] expanded around mu.
    """
    new_mu, new_sigma = [], []
    for z in (0, 1):
        mu, sigma = state.mu[z], state.sigma[z]
        a, b, c = _group_effort_moments(mu, sigma, thresholds[z], beta, kind)
        mu2 = mu + a
        shift = mu - mu2  # equals -a
        var = sigma * sigma + shift * shift + 2.0 * b + 2.0 * shift * a + c
        if var <= 0:
            raise NumericalError("refit produced a non-positive variance")
        new_mu.append(mu2)
        new_sigma.append(math.sqrt(var))
    return GroupState(tuple(new_mu), tuple(new_sigma))


def threshold_error(state: GroupState, thresholds: tuple[float, float], chi: float) -> float:
    """Misclassification rate of threshold acceptance vs the chi qualification cut."""
    err = 0.0
    for z in (0, 1):
        u1 = (thresholds[z] - state.mu[z]) / state.sigma[z]
        u2 = (chi - state.mu[z]) / state.sigma[z]
        err += 0.5 * abs(float(ndtr(u1) - ndtr(u2)))
    return err


# ---------------------------------------------------------------------------
# Closed-form per-policy disparities. All are exact under the Gaussian state;
# the solver vectorizes them over threshold grids.
# ---------------------------------------------------------------------------


def _accept_prob(state, tau, z):
    return 1.0 - ndtr((np.asarray(tau) - state.mu[z]) / state.sigma[z])


def _reject_prob(state, tau, z):
    return ndtr((np.asarray(tau) - state.mu[z]) / state.sigma[z])


def _improvable_frac(state, tau, z, delta):
    """P(x >= tau - delta | x < tau, z); NaN where the rejection mass vanishes."""
    tau = np.asarray(tau, dtype=float)
    below = ndtr((tau - state.mu[z]) / state.sigma[z])
    below_shift = ndtr((tau - delta - state.mu[z]) / state.sigma[z])
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = 1.0 - below_shift / below
    return np.where(below >= TINY_MASS, frac, np.nan)


def _mean_recourse(state, tau, z):
    """E[tau - x | x < tau, z]; NaN where the rejection mass vanishes."""
    tau = np.asarray(tau, dtype=float)
    a = (tau - state.mu[z]) / state.sigma[z]
    mass = ndtr(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        rec = (tau - state.mu[z]) + state.sigma[z] * _phi(a) / mass
    return np.where(mass >= TINY_MASS, rec, np.nan)


def _ilfcr_gap(state, tau0, tau1):
    """Worst-case recourse-cost gap over standardized effort levels in [-3, 3].

    Cost for group z at level u is max(tau_z - mu_z - sigma_z u, 0), piecewise
    linear in u, so the max over u of the absolute gap is attained at an
    interval endpoint or a kink.
    """
    tau0 = np.asarray(tau0, dtype=float)
    tau1 = np.asarray(tau1, dtype=float)
    k0 = np.clip((tau0 - state.mu[0]) / state.sigma[0], -3.0, 3.0)
    k1 = np.clip((tau1 - state.mu[1]) / state.sigma[1], -3.0, 3.0)
    gap = None
    for u in (np.full_like(tau0, -3.0), np.full_like(tau0, 3.0), k0, k1):
        c0 = np.maximum(tau0 - state.mu[0] - state.sigma[0] * u, 0.0)
        c1 = np.maximum(tau1 - state.mu[1] - state.sigma[1] * u, 0.0)
        g = np.abs(c0 - c1)
        gap = g if gap is None else np.maximum(gap, g)
    return gap


def policy_disparity(policy: str, state: GroupState, thresholds, delta: float):
    """The disparity a policy constrains, as a function of the thresholds.

    Accepts scalars or broadcastable arrays (tau0, tau1). NaN marks threshold
    pairs where the notion's conditioning mass vanishes.
    """
    tau0, tau1 = thresholds
    if policy == "erm":
        return np.zeros(np.broadcast(np.asarray(tau0), np.asarray(tau1)).shape)
    if policy == "dp":
        return np.abs(_accept_prob(state, tau0, 0) - _accept_prob(state, tau1, 1))
    if policy == "ei":
        return np.abs(_improvable_frac(state, tau0, 0, delta)
                      - _improvable_frac(state, tau1, 1, delta))
    if policy == "be":
        be0 = _reject_prob(state, tau0, 0) - _reject_prob(state, np.asarray(tau0) - delta, 0)
        be1 = _reject_prob(state, tau1, 1) - _reject_prob(state, np.asarray(tau1) - delta, 1)
        return np.abs(be0 - be1)
    if policy == "er":
        return np.abs(_mean_recourse(state, tau0, 0) - _mean_recourse(state, tau1, 1))
    if policy == "ilfcr":
        return _ilfcr_gap(state, tau0, tau1)
    raise ConfigError(f"unknown policy {policy!r}")


def _grid_error(state, tau0, tau1, chi):
    e0 = 0.5 * np.abs(ndtr((np.asarray(tau0) - state.mu[0]) / state.sigma[0])
                      - ndtr((chi - state.mu[0]) / state.sigma[0]))
    e1 = 0.5 * np.abs(ndtr((np.asarray(tau1) - state.mu[1]) / state.sigma[1])
                      - ndtr((chi - state.mu[1]) / state.sigma[1]))
    return e0 + e1


def _select(tau0, tau1, disparity, error, feasible, erm: bool):
    """Lexicographic pick over flattened grids; None when nothing is feasible.

    ERM ranks by (error, tau0, tau1); the fair policies rank by
    (disparity, error, tau0, tau1).
    """
    ok = feasible & np.isfinite(error)
    if not erm:
        ok &= np.isfinite(disparity)
    if not ok.any():
        return None
    keys = (error,) if erm else (disparity, error)
    mask = ok
    for key in keys:
        best = key[mask].min()
        mask = mask & (key == best)
    for axis in (tau0, tau1):
        best = axis[mask].min()
        mask = mask & (axis == best)
    i = int(np.flatnonzero(mask)[0])
    return tau0[i], tau1[i], disparity[i], error[i]


def solve_thresholds(policy: str, state: GroupState, alpha: float, cap: float,
                     delta: float) -> tuple[float, float]:
    """Grid search with two local refinements for the policy's thresholds.

    Fair policies minimize their disparity subject to error <= cap (ilfcr uses
    alpha/2 as its cap); erm minimizes the error alone. Raises NumericalError
    with the smallest achievable error when the cap cannot be met.
    """
    state.validate()
    if policy not in POLICIES:
        raise ConfigError(f"unknown policy {policy!r}")
    chi = qualification_cut(state, alpha)
    cap_eff = alpha / 2.0 if policy == "ilfcr" else cap
    erm = policy == "erm"

    axes = [np.linspace(state.mu[z] - 4.0 * state.sigma[z],
                        state.mu[z] + 4.0 * state.sigma[z], GRID_POINTS)
            for z in (0, 1)]
    steps = [float(ax[1] - ax[0]) for ax in axes]
    best = None
    min_error_seen = math.inf
    for round_idx in range(REFINE_ROUNDS + 1):
        t0, t1 = np.meshgrid(axes[0], axes[1], indexing="ij")
        t0, t1 = t0.ravel(), t1.ravel()
        error = _grid_error(state, t0, t1, chi)
        disparity = policy_disparity(policy, state, (t0, t1), delta)
        min_error_seen = min(min_error_seen, float(np.nanmin(error)))
        picked = _select(t0, t1, disparity, error, error <= cap_eff + 1e-12, erm)
        if picked is None:
            raise NumericalError(
                f"no thresholds meet the error cap {cap_eff:.6g} for policy "
                f"{policy!r}; smallest achievable error is {min_error_seen:.6g}"
            )
        best = picked
        if round_idx == REFINE_ROUNDS:
            break
        axes = [np.linspace(best[z] - steps[z], best[z] + steps[z], REFINE_POINTS)
                for z in (0, 1)]
        steps = [float(ax[1] - ax[0]) for ax in axes]
    return float(best[0]), float(best[1])


def tv_distance(state: GroupState) -> float:
    """Total variation between the two group densities.

    Integrates |phi_0 - phi_1| / 2 by adaptive quadrature with breakpoints at
    the density crossings (roots of a quadratic in x).
    """
    m0, m1 = state.mu
    s0, s1 = state.sigma
    lo = min(m0 - 8.0 * s0, m1 - 8.0 * s1)
    hi = max(m0 + 8.0 * s0, m1 + 8.0 * s1)

    # log phi_0 = log phi_1 is a*x^2 + b*x + c = 0
    a = 0.5 / (s1 * s1) - 0.5 / (s0 * s0)
    b = m0 / (s0 * s0) - m1 / (s1 * s1)
    c = (m1 * m1) / (2.0 * s1 * s1) - (m0 * m0) / (2.0 * s0 * s0) + math.log(s1 / s0)
    roots = []
    if abs(a) < 1e-300:
        if abs(b) > 0:
            roots = [-c / b]
    else:
        disc = b * b - 4.0 * a * c
        if disc >= 0:
            sq = math.sqrt(disc)
            roots = [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]
    points = sorted(r for r in roots if lo < r < hi)

    def integrand(x):
        return abs(_phi((x - m0) / s0) / s0 - _phi((x - m1) / s1) / s1)

    val = quad(integrand, lo, hi, epsabs=QUAD_TOL, limit=400,
               points=points or None)[0]
    return 0.5 * float(val)


# ---------------------------------------------------------------------------
# The simulation loop.
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    policy: str
    states: list  # GroupState, length rounds + 1
    thresholds: list  # (tau0, tau1), length rounds
    deltas: list  # mean effort per round, length rounds
    errors: list  # error at the solved thresholds, length rounds
    tv: list  # TV distance per state, length rounds + 1


def run_simulation(config: DynamicsConfig) -> Trajectory:
    """Iterate solve-thresholds / exert-effort / refit for the configured policy.

    Round t's mean effort (which the ei and be notions need as the improvement
    budget) is measured against the previous round's thresholds; round 0 uses
    the erm thresholds of the initial state.
    """
    config.validate()
    state = config.init
    prev_thresholds = solve_thresholds("erm", state, config.alpha, config.cap, 0.0)
    states = [state]
    tv = [tv_distance(state)]
    thresholds, deltas, errors = [], [], []
    for _ in range(config.rounds):
        chi = qualification_cut(state, config.alpha)
        delta_t = mean_effort(state, prev_thresholds, config.beta, config.effort)
        taus = solve_thresholds(config.policy, state, config.alpha, config.cap, delta_t)
        thresholds.append(taus)
        deltas.append(delta_t)
        errors.append(threshold_error(state, taus, chi))
        state = step_state(state, taus, config.beta, config.effort)
        states.append(state)
        tv.append(tv_distance(state))
        prev_thresholds = taus
    return Trajectory(config.policy, states, thresholds, deltas, errors, tv)


TRAJECTORY_COLUMNS = ("round", "policy", "mu0", "sigma0", "mu1", "sigma1",
                      "tau0", "tau1", "delta_t", "tv", "error")


def trajectory_csv(traj: Trajectory) -> str:
    """One row per round plus a final row for the terminal state (its
    threshold, effort, and error cells stay empty)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRAJECTORY_COLUMNS)
    n_rounds = len(traj.thresholds)
    for t, state in enumerate(traj.states):
        if t < n_rounds:
            tail = [f"{traj.thresholds[t][0]:.10g}", f"{traj.thresholds[t][1]:.10g}",
                    f"{traj.deltas[t]:.10g}", f"{traj.tv[t]:.10g}",
                    f"{traj.errors[t]:.10g}"]
        else:
            tail = ["", "", "", f"{traj.tv[t]:.10g}", ""]
        writer.writerow([t, traj.policy,
                         f"{state.mu[0]:.10g}", f"{state.sigma[0]:.10g}",
                         f"{state.mu[1]:.10g}", f"{state.sigma[1]:.10g}"] + tail)
    return buf.getvalue()
