"""Best-response effort: how far a rejected applicant can push their score.

Effort moves only the improvable feature columns and is limited by a norm
ball of radius delta: either Linf or a diagonally weighted L2 norm
mu(v) = sqrt(v' C v). For a linear scorer the maximizer is closed form; for
anything else a projected-gradient ascent does the job and is validated
against the closed form on linear scorers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError

NORM_KINDS = ("linf", "l2_weighted")
FEASIBILITY_SLACK = 1e-9


@dataclass(frozen=True)
class EffortBudget:
    """Effort ball: norm_kind in {"linf", "l2_weighted"}, radius delta.

    cost_diag holds the positive diagonal of C for the weighted L2 norm, one
    entry per improvable column (None means the identity). It is ignored for
    Linf.
    """

    norm_kind: str
    delta: float
    cost_diag: tuple[float, ...] | None = None

    def validate(self, n_improvable: int | None = None) -> None:
        if self.norm_kind not in NORM_KINDS:
            raise ConfigError(f"unknown norm kind {self.norm_kind!r}")
        if not np.isfinite(self.delta) or self.delta < 0:
            raise ConfigError("delta must be a finite non-negative number")
        if self.cost_diag is not None:
            if any(c <= 0 or not np.isfinite(c) for c in self.cost_diag):
                raise ConfigError("cost_diag entries must be positive and finite")
            if n_improvable is not None and len(self.cost_diag) != n_improvable:
                raise ConfigError(
                    f"cost_diag has {len(self.cost_diag)} entries for "
                    f"{n_improvable} improvable columns"
                )

    def cost_vector(self, n_improvable: int) -> np.ndarray:
        if self.cost_diag is None:
            return np.ones(n_improvable)
        self.validate(n_improvable)
        return np.asarray(self.cost_diag, dtype=float)


@dataclass(frozen=True)
class PgdConfig:
    steps: int = 20
    step_size: float | None = None  # None means delta / 5
    restarts: int = 1
    init: str = "zero"  # "zero" or "random"
    seed: int = 0

    def validate(self) -> None:
        if self.steps < 1 or self.restarts < 1:
            raise ConfigError("pgd needs steps >= 1 and restarts >= 1")
        if self.init not in ("zero", "random"):
            raise ConfigError(f"unknown pgd init {self.init!r}")
        if self.step_size is not None and self.step_size <= 0:
            raise ConfigError("pgd step_size must be positive")


@dataclass(frozen=True)
class BestResponse:
    delta_x: np.ndarray  # (d,), zero outside improvable columns
    max_score: float


def effort_norm(budget: EffortBudget, v: np.ndarray) -> float:
    """Norm of an improvable-subspace vector under the budget's norm."""
    v = np.asarray(v, dtype=float)
    if budget.norm_kind == "linf":
        return float(np.abs(v).max()) if v.size else 0.0
    c = budget.cost_vector(v.shape[-1])
    return float(np.sqrt(v @ (c * v)))


def _improvable(partition) -> np.ndarray:
    return np.asarray(partition.improvable, dtype=int)


def glm_logit_gain(weights_improvable: np.ndarray, budget: EffortBudget):
    """Closed-form maximizer over the effort ball for a linear logit.

    Returns (step, gain): the optimal shift of the improvable coordinates and
    the resulting logit increase. A zero improvable weight vector means no
    move helps, so the step is zero.
    """
    w = np.asarray(weights_improvable, dtype=float)
    if budget.norm_kind == "linf":
        gain = budget.delta * np.abs(w).sum()
        step = budget.delta * np.sign(w)
    else:
        c = budget.cost_vector(w.shape[0])
        u = w / c
        norm = np.sqrt(w @ u)
        if norm <= 0.0:
            return np.zeros_like(w), 0.0
        step = budget.delta * u / norm
        gain = budget.delta * norm
    return step, float(gain)


def best_response_glm_batch(model, x: np.ndarray, budget: EffortBudget, partition):
    """Vectorized closed form for a GLM. Returns (delta_x (n, d), max_scores (n,))."""
    from .models import sigmoid  # local import keeps the module dependency one-way

    budget.validate()
    x = np.asarray(x, dtype=float)
    idx = _improvable(partition)
    step, gain = glm_logit_gain(model.weights[idx], budget)
    delta_x = np.zeros_like(x)
    delta_x[:, idx] = step
    return delta_x, sigmoid(model.logits(x) + gain)


def best_response_glm(model, x: np.ndarray, budget: EffortBudget, partition) -> BestResponse:
    delta, smax = best_response_glm_batch(model, np.asarray(x, dtype=float)[None, :], budget, partition)
    return BestResponse(delta[0], float(smax[0]))


def _project(budget: EffortBudget, delta: np.ndarray) -> np.ndarray:
    """Project rows of delta onto the effort ball."""
    if budget.norm_kind == "linf":
        return np.clip(delta, -budget.delta, budget.delta)
    c = budget.cost_vector(delta.shape[1])
    norms = np.sqrt((delta * delta * c).sum(axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > budget.delta, budget.delta / norms, 1.0)
    return delta * scale[:, None]


def _ascent_step(budget: EffortBudget, grad: np.ndarray, gamma: float) -> np.ndarray:
    """Steepest-ascent step of length gamma under the budget norm.

    Linf: gamma * sign(grad). Weighted L2: gamma * C^-1 grad, rescaled to unit
    weighted norm. Rows with zero gradient do not move.
    """
    if budget.norm_kind == "linf":
        return gamma * np.sign(grad)
    c = budget.cost_vector(grad.shape[1])
    u = grad / c
    norms = np.sqrt((grad * u).sum(axis=1))
    safe = np.where(norms > 0.0, norms, 1.0)
    return gamma * u / safe[:, None] * (norms > 0.0)[:, None]


def _random_start(budget: EffortBudget, shape, rng) -> np.ndarray:
    box = rng.uniform(-budget.delta, budget.delta, size=shape)
    return _project(budget, box)


def best_response_pgd_batch(model, x: np.ndarray, budget: EffortBudget, partition,
                            config: PgdConfig | None = None):
    """Projected gradient ascent on the score over the effort ball.

    Returns (delta_x (n, d), max_scores (n,)). With zero init this recovers
    the GLM closed form exactly for linear scorers, since the steepest-ascent
    direction is then constant across steps.
    """
    config = config or PgdConfig()
    config.validate()
    budget.validate()
    x = np.asarray(x, dtype=float)
    idx = _improvable(partition)
    n = x.shape[0]
    gamma = config.step_size if config.step_size is not None else budget.delta / 5.0
    rng = np.random.default_rng(config.seed)

    best_delta = np.zeros((n, len(idx)))
    best_score = model.scores(x)  # no-move baseline
    x_work = x.copy()
    for restart in range(config.restarts):
        if restart == 0 and config.init == "zero":
            delta = np.zeros((n, len(idx)))
        else:
            delta = _random_start(budget, (n, len(idx)), rng)
        for _ in range(config.steps):
            x_work[:, idx] = x[:, idx] + delta
            grad = model.grad_input(x_work)[:, idx]
            delta = _project(budget, delta + _ascent_step(budget, grad, gamma))
        x_work[:, idx] = x[:, idx] + delta
        score = model.scores(x_work)
        better = score > best_score
        best_delta[better] = delta[better]
        best_score = np.where(better, score, best_score)

    delta_x = np.zeros_like(x)
    delta_x[:, idx] = best_delta
    return delta_x, best_score


def best_response_pgd(model, x: np.ndarray, budget: EffortBudget, partition,
                      config: PgdConfig | None = None) -> BestResponse:
    delta, smax = best_response_pgd_batch(model, np.asarray(x, dtype=float)[None, :],
                                          budget, partition, config)
    return BestResponse(delta[0], float(smax[0]))


def best_response_batch(model, x: np.ndarray, budget: EffortBudget, partition,
                        pgd: PgdConfig | None = None):
    """Dispatch: closed form for GLMs unless a PgdConfig is forced, else PGD."""
    if getattr(model, "kind", None) == "glm" and pgd is None:
        return best_response_glm_batch(model, x, budget, partition)
    return best_response_pgd_batch(model, x, budget, partition, pgd)


@dataclass(frozen=True)
class RecourseResult:
    distance: float
    capped: bool = False


def recourse_distance(model, x: np.ndarray, budget: EffortBudget, partition,
                      delta_max: float | None = None,
                      pgd: PgdConfig | None = None) -> RecourseResult:
    """Smallest effort radius that lifts x to an accepted score.

    Accepted points need no effort (distance 0). For a GLM the answer is the
    logit deficit divided by the dual norm of the improvable weights; when
    those weights vanish the point is unreachable and the result is capped at
    delta_max. Non-GLM scorers are handled by bisection on the radius to an
    absolute tolerance of 1e-4, capped at delta_max (flagged when the cap
    binds). delta_max is required for the capped paths.
    """
    budget.validate()
    x = np.asarray(x, dtype=float)
    idx = _improvable(partition)

    if getattr(model, "kind", None) == "glm":
        logit = float(model.logits(x[None, :])[0])
        if logit >= 0.0:
            return RecourseResult(0.0)
        w = model.weights[idx]
        if budget.norm_kind == "linf":
            dual = float(np.abs(w).sum())
        else:
            c = budget.cost_vector(len(idx))
            dual = float(np.sqrt(w @ (w / c)))
        if dual <= 0.0:
            if delta_max is None:
                raise NumericalError("recourse is unreachable and no delta_max was given")
            return RecourseResult(float(delta_max), capped=True)
        return RecourseResult(-logit / dual)

    if float(model.scores(x[None, :])[0]) >= 0.5:
        return RecourseResult(0.0)
    if delta_max is None or delta_max <= 0:
        raise NumericalError("non-GLM recourse needs a positive delta_max")

    def reaches(radius: float) -> bool:
        trial = EffortBudget(budget.norm_kind, radius, budget.cost_diag)
        _, smax = best_response_pgd_batch(model, x[None, :], trial, partition, pgd)
        return float(smax[0]) >= 0.5

    if not reaches(delta_max):
        return RecourseResult(float(delta_max), capped=True)
    lo, hi = 0.0, float(delta_max)
    while hi - lo > 1e-4:
        mid = 0.5 * (lo + hi)
        if reaches(mid):
            hi = mid
        else:
            lo = mid
    return RecourseResult(hi)


def assert_feasible(budget: EffortBudget, delta_x: np.ndarray, partition) -> None:
    """Raise if a proposed move leaves the effort ball or touches frozen columns."""
    delta_x = np.atleast_2d(np.asarray(delta_x, dtype=float))
    idx = _improvable(partition)
    frozen = np.ones(delta_x.shape[1], dtype=bool)
    frozen[idx] = False
    if np.abs(delta_x[:, frozen]).max(initial=0.0) > 0.0:
        raise NumericalError("effort moved a non-improvable column")
    for row in delta_x:
        if effort_norm(budget, row[idx]) > budget.delta + FEASIBILITY_SLACK:
            raise NumericalError("effort exceeds the budget radius")
