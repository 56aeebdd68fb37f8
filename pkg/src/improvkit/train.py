"""Penalized training: minimize (1 - lam) * cross-entropy + lam * penalty.

The penalty's inner best-response maximization is re-solved every step on the
current batch; its maximizer is then held fixed while the gradient flows
through the scores (envelope rule). Adam is the default optimizer; plain SGD
is available for comparison.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, split
from .effort import EffortBudget, PgdConfig
from .errors import ConfigError, EvaluationError, NumericalError
from .metrics import ei_disparity, error_rate, full_report
from .models import GlmScorer, MlpScorer, bce_grad_score, bce_loss
from .penalties import PenaltyConfig, penalty_value_and_grad

STAGE1_LAMBDAS = (0.0, 0.2, 0.4, 0.6, 0.8, 0.9)
STAGE2_OFFSETS = (-0.1, -0.05, 0.0, 0.05, 0.1)
LEARNING_RATE_GRID = (1e-4, 1e-3, 1e-2, 1e-1)
DEFAULT_EPOCHS = {"glm": 300, "mlp": 500}
ERROR_SLACK = 0.05  # a lambda is admissible if val error stays within this of the lam=0 error

SWEEP_COLUMNS = ("lambda", "seed", "split", "error", "ei", "dp", "eo", "eod", "be", "er")


_U64 = (1 << 64) - 1


def derive_seed(base: int, *parts) -> int:
    """Deterministic sub-seed: a splitmix64 walk over the base and tag bytes."""
    mixed = base & _U64
    for token in [str(p) for p in parts] + ["end"]:
        for byte in token.encode():
            mixed = (mixed + 0x9E3779B97F4A7C15 + byte) & _U64
            z = mixed
            z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
            mixed = z ^ (z >> 31)
    return mixed & 0x7FFFFFFFFFFFFFFF


@dataclass(frozen=True)
class TrainConfig:
    budget: EffortBudget
    model: str = "glm"  # "glm" or "mlp"
    hidden: tuple[int, ...] = (4,)
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    lam: float = 0.0
    pgd: PgdConfig | None = None  # None lets GLMs use the closed form
    epochs: int | None = None  # None means 300 for glm, 500 for mlp
    batch_size: int = 0  # 0 means full batch
    learning_rate: float = 1e-2
    optimizer: str = "adam"
    seed: int = 0

    def validate(self) -> None:
        if self.model not in DEFAULT_EPOCHS:
            raise ConfigError(f"unknown model kind {self.model!r}")
        if not 0.0 <= self.lam < 1.0:
            raise ConfigError("lam must lie in [0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 0:
            raise ConfigError("batch_size must be >= 0 (0 means full batch)")
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.model == "mlp" and any(h < 1 for h in self.hidden):
            raise ConfigError("hidden layer widths must be positive")
        self.budget.validate()
        self.penalty.validate()
        if self.pgd is not None:
            self.pgd.validate()


@dataclass
class TrainResult:
    model: object
    config: TrainConfig
    history: list  # per-epoch dicts: epoch, objective, loss_term, penalty_value
    train_error: float
    flags: tuple[str, ...] = ()


class _Adam:
    def __init__(self, params: list[np.ndarray], lr: float):
        self.lr = lr
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


class _Sgd:
    def __init__(self, params, lr: float):
        self.lr = lr

    def step(self, params, grads) -> None:
        for p, g in zip(params, grads):
            p -= self.lr * g


def _make_model(config: TrainConfig, n_features: int):
    if config.model == "glm":
        return GlmScorer.zeros(n_features)
    return MlpScorer.init(n_features, tuple(config.hidden), derive_seed(config.seed, "init"))


def _pgd_for(config: TrainConfig) -> PgdConfig | None:
    if config.pgd is not None:
        return config.pgd
    return None if config.model == "glm" else PgdConfig()


def train(dataset: Dataset, config: TrainConfig) -> TrainResult:
    config.validate()
    x, y, z = dataset.features, dataset.labels, dataset.groups
    n = dataset.n_samples
    model = _make_model(config, dataset.n_features)
    params = model.param_arrays()
    opt_cls = _Adam if config.optimizer == "adam" else _Sgd
    opt = opt_cls(params, config.learning_rate)
    epochs = config.epochs if config.epochs is not None else DEFAULT_EPOCHS[config.model]
    batch = config.batch_size if config.batch_size > 0 else n
    rng = np.random.default_rng(derive_seed(config.seed, "batches"))
    pgd = _pgd_for(config)
    lam = config.lam
    use_penalty = lam > 0.0 and config.penalty.tag != "none"

    history = []
    flags: set[str] = set()
    for epoch in range(epochs):
        order = np.arange(n) if batch >= n else rng.permutation(n)
        loss_sum = 0.0
        pen_sum = 0.0
        n_batches = 0
        for start in range(0, n, batch):
            rows = order[start:start + batch]
            xb, yb, zb = x[rows], y[rows], z[rows]
            scores = model.scores(xb)
            loss_term = float(bce_loss(yb, scores).mean())
            dscore = (1.0 - lam) * bce_grad_score(yb, scores) / rows.shape[0]
            grads = model.backprop_params(xb, dscore, scores=scores)
            pen_value = 0.0
            if use_penalty:
                pen = penalty_value_and_grad(model, xb, zb, config.budget,
                                             config.penalty, dataset.partition, pgd,
                                             scores=scores)
                pen_value = pen.value
                flags.update(pen.flags)
                for g, pg in zip(grads, pen.param_grads):
                    g += lam * pg
            objective = (1.0 - lam) * loss_term + lam * pen_value
            if not np.isfinite(objective) or any(not np.isfinite(g).all() for g in grads):
                raise NumericalError(
                    f"non-finite objective or gradient at epoch {epoch}, "
                    f"batch starting at row {start}"
                )
            opt.step(params, grads)
            model.commit_params()
            loss_sum += loss_term
            pen_sum += pen_value
            n_batches += 1
        history.append({
            "epoch": epoch,
            "objective": (1.0 - lam) * loss_sum / n_batches + lam * pen_sum / n_batches,
            "loss_term": loss_sum / n_batches,
            "penalty_value": pen_sum / n_batches,
        })
    for p in params:
        if not np.isfinite(p).all():
            raise NumericalError("non-finite parameters after training")
    return TrainResult(model, config, history, error_rate(model, dataset), tuple(sorted(flags)))


# ---------------------------------------------------------------------------
# Two-step cross-validated lambda selection.
# ---------------------------------------------------------------------------


@dataclass
class CvEntry:
    lam: float
    error: float
    ei: float
    folds_used: int
    flags: tuple[str, ...] = ()


@dataclass
class CvResult:
    best_lambda: float
    baseline_error: float
    table: list  # CvEntry, sorted by lambda
    stage2_lambdas: tuple


def _fold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    return [perm[i::k] for i in range(k)]


def cross_validate(dataset: Dataset, config: TrainConfig, k: int = 5,
                   stage1: tuple = STAGE1_LAMBDAS) -> CvResult:
    """Pick lambda on a coarse grid, then refine around the winner.

    A lambda is admissible when its mean validation error stays within 0.05 of
    the lam=0 error; among admissible values the one with the smallest mean
    validation EI gap wins, ties going to the smaller lambda.
    """
    if k < 2 or k > dataset.n_samples:
        raise ConfigError("fold count must be between 2 and the sample count")
    folds = _fold_indices(dataset.n_samples, k, derive_seed(config.seed, "folds"))
    all_rows = np.arange(dataset.n_samples)
    cache: dict[float, CvEntry] = {}

    def eval_lambda(lam: float) -> CvEntry:
        key = round(lam, 10)
        if key in cache:
            return cache[key]
        errors, eis, flags = [], [], []
        for fold_id, val_rows in enumerate(folds):
            train_rows = np.setdiff1d(all_rows, val_rows, assume_unique=True)
            cfg = replace(config, lam=lam, seed=derive_seed(config.seed, "fold", fold_id))
            result = train(dataset.subset(train_rows), cfg)
            val = dataset.subset(val_rows)
            errors.append(error_rate(result.model, val))
            try:
                eis.append(ei_disparity(result.model, val, config.budget, _pgd_for(config)))
            except EvaluationError:
                flags.append(f"fold_{fold_id}_no_rejected")
        if not eis:
            entry = CvEntry(key, float(np.mean(errors)), float("inf"), 0, tuple(flags))
        else:
            entry = CvEntry(key, float(np.mean(errors)), float(np.mean(eis)),
                            len(eis), tuple(flags))
        cache[key] = entry
        return entry

    for lam in stage1:
        eval_lambda(lam)
    baseline = eval_lambda(0.0).error

    def pick() -> CvEntry:
        admissible = [e for e in cache.values() if e.error <= baseline + ERROR_SLACK]
        return min(admissible, key=lambda e: (e.ei, e.lam))

    center = pick().lam
    stage2 = tuple(sorted({round(max(center + off, 0.0), 10) for off in STAGE2_OFFSETS
                           if max(center + off, 0.0) < 1.0}))
    for lam in stage2:
        eval_lambda(lam)
    best = pick()
    table = sorted(cache.values(), key=lambda e: e.lam)
    return CvResult(best.lam, baseline, table, stage2)


# ---------------------------------------------------------------------------
# Pareto sweep over (lambda, seed).
# ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    rows: list  # dicts matching SWEEP_COLUMNS
    frontier: list  # the non-dominated test rows under (error, ei)


def _sweep_row(lam: float, seed: int, split_name: str, report) -> dict:
    return {
        "lambda": lam, "seed": seed, "split": split_name,
        "error": report.error_rate, "ei": report.ei, "dp": report.dp,
        "eo": report.eo, "eod": report.eod, "be": report.be, "er": report.er,
    }


def run_sweep_cell(dataset: Dataset, config: TrainConfig, lam: float, seed: int,
                   test_fraction: float = 0.2) -> list[dict]:
    """One (lambda, seed) cell: split, train, report train and test rows."""
    tr, te = split(dataset, test_fraction, derive_seed(seed, "sweep_split"))
    cfg = replace(config, lam=lam, seed=seed)
    result = train(tr, cfg)
    pgd = _pgd_for(config)
    return [
        _sweep_row(lam, seed, "train", full_report(result.model, tr, config.budget, pgd)),
        _sweep_row(lam, seed, "test", full_report(result.model, te, config.budget, pgd)),
    ]


def pareto_frontier(rows: list[dict]) -> list[dict]:
    """Non-dominated subset under minimizing (error, ei), sorted by error."""
    test_rows = [r for r in rows if r["split"] == "test" and np.isfinite(r["ei"])]
    frontier = []
    for r in test_rows:
        dominated = any(
            (o["error"] <= r["error"] and o["ei"] <= r["ei"])
            and (o["error"] < r["error"] or o["ei"] < r["ei"])
            for o in test_rows
        )
        if not dominated:
            frontier.append(r)
    return sorted(frontier, key=lambda r: (r["error"], r["ei"]))


def pareto_sweep(dataset: Dataset, config: TrainConfig, lambdas, seeds,
                 test_fraction: float = 0.2) -> SweepResult:
    rows = []
    for seed in seeds:
        for lam in lambdas:
            rows.extend(run_sweep_cell(dataset, config, lam, seed, test_fraction))
    return SweepResult(rows, pareto_frontier(rows))


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for r in rows:
        writer.writerow([r["lambda"], r["seed"], r["split"]]
                        + [f"{r[c]:.6f}" for c in SWEEP_COLUMNS[3:]])
    return buf.getvalue()
