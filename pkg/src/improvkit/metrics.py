"""Group disparity metrics.

Every notion reports the worst absolute gap between a group's statistic and
the pooled statistic over all rows ("max gap to pool"). Acceptance means
score >= 0.5. "Improvable" means the best response within the effort budget
reaches an accepted score.

Conditioned notions skip groups whose conditioning set is empty and record
them in the report; if the conditioning set is empty for the whole dataset
the metric raises EvaluationError.

Group-aware scorers (one linear score, per-group intercepts, as produced by
the closed-form tradeoff oracle) are supported through a glm_for_group(g)
method; plain scorers just expose scores / logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .effort import EffortBudget, PgdConfig, best_response_batch, recourse_distance
from .errors import EvaluationError


def _row_scores(model, x: np.ndarray, groups: np.ndarray) -> np.ndarray:
    if hasattr(model, "glm_for_group"):
        out = np.empty(x.shape[0])
        for g in np.unique(groups):
            rows = groups == g
            out[rows] = model.glm_for_group(int(g)).scores(x[rows])
        return out
    return model.scores(x)


def _row_best_response(model, x, groups, budget, partition, pgd):
    if hasattr(model, "glm_for_group"):
        delta = np.zeros_like(x)
        smax = np.empty(x.shape[0])
        for g in np.unique(groups):
            rows = groups == g
            d, s = best_response_batch(model.glm_for_group(int(g)), x[rows], budget,
                                       partition, pgd)
            delta[rows] = d
            smax[rows] = s
        return delta, smax
    return best_response_batch(model, x, budget, partition, pgd)


def _max_gap_to_pool(per_group: dict[int, float], pooled: float) -> float:
    return max(abs(v - pooled) for v in per_group.values())


def error_rate(model, dataset: Dataset) -> float:
    scores = _row_scores(model, dataset.features, dataset.groups)
    predicted = scores >= 0.5
    return float((predicted != (dataset.labels == 1)).mean())


def dp_disparity(model, dataset: Dataset, details: dict | None = None) -> float:
    """Demographic parity: acceptance-rate gaps."""
    scores = _row_scores(model, dataset.features, dataset.groups)
    accepted = scores >= 0.5
    per_group = {int(g): float(accepted[dataset.groups == g].mean()) for g in dataset.group_ids()}
    pooled = float(accepted.mean())
    if details is not None:
        details["accept"] = per_group
    return _max_gap_to_pool(per_group, pooled)


def _rate_given(mask: np.ndarray, accepted: np.ndarray, groups: np.ndarray,
                label: str, details: dict | None, skipped: list):
    """Acceptance rate conditioned on mask, per group and pooled."""
    if not mask.any():
        raise EvaluationError(f"no rows satisfy the {label} condition")
    per_group = {}
    for g in np.unique(groups):
        sel = mask & (groups == g)
        if not sel.any():
            skipped.append((label, int(g)))
            continue
        per_group[int(g)] = float(accepted[sel].mean())
    pooled = float(accepted[mask].mean())
    if details is not None:
        details[label] = per_group
    return _max_gap_to_pool(per_group, pooled)


def eo_disparity(model, dataset: Dataset, details: dict | None = None,
                 skipped: list | None = None) -> float:
    """Equal opportunity: acceptance-rate gaps among truly qualified rows."""
    scores = _row_scores(model, dataset.features, dataset.groups)
    skipped = [] if skipped is None else skipped
    return _rate_given(dataset.labels == 1, scores >= 0.5, dataset.groups,
                       "tpr", details, skipped)


def eod_disparity(model, dataset: Dataset, details: dict | None = None,
                  skipped: list | None = None) -> float:
    """Equalized odds: the worse of the y=1 and y=0 conditional gaps."""
    scores = _row_scores(model, dataset.features, dataset.groups)
    accepted = scores >= 0.5
    skipped = [] if skipped is None else skipped
    gaps = []
    for label, mask in (("tpr", dataset.labels == 1), ("fpr", dataset.labels == 0)):
        gaps.append(_rate_given(mask, accepted, dataset.groups, label, details, skipped))
    return max(gaps)


def ei_disparity(model, dataset: Dataset, budget: EffortBudget,
                 pgd: PgdConfig | None = None, details: dict | None = None,
                 skipped: list | None = None) -> float:
    """Equal improvability: among rejected rows, the chance that in-budget
    effort reaches acceptance, compared across groups."""
    x, groups = dataset.features, dataset.groups
    scores = _row_scores(model, x, groups)
    rejected = scores < 0.5
    if not rejected.any():
        raise EvaluationError("no rejected rows: improvability is undefined")
    _, smax = _row_best_response(model, x[rejected], groups[rejected], budget,
                                 dataset.partition, pgd)
    improvable = smax >= 0.5
    g_rej = groups[rejected]
    skipped = [] if skipped is None else skipped
    per_group = {}
    for g in dataset.group_ids():
        sel = g_rej == g
        if not sel.any():
            skipped.append(("ei", int(g)))
            continue
        per_group[int(g)] = float(improvable[sel].mean())
    pooled = float(improvable.mean())
    if details is not None:
        details["ei"] = per_group
    return _max_gap_to_pool(per_group, pooled)


def be_disparity(model, dataset: Dataset, budget: EffortBudget,
                 pgd: PgdConfig | None = None, details: dict | None = None) -> float:
    """Bounded effort: gaps in the joint rate of being rejected but able to
    reach acceptance in budget. Conditioned on the group alone, so no group
    is ever skipped."""
    x, groups = dataset.features, dataset.groups
    scores = _row_scores(model, x, groups)
    rejected = scores < 0.5
    event = np.zeros(dataset.n_samples, dtype=bool)
    if rejected.any():
        _, smax = _row_best_response(model, x[rejected], groups[rejected], budget,
                                     dataset.partition, pgd)
        event[np.flatnonzero(rejected)] = smax >= 0.5
    per_group = {int(g): float(event[groups == g].mean()) for g in dataset.group_ids()}
    pooled = float(event.mean())
    if details is not None:
        details["be"] = per_group
    return _max_gap_to_pool(per_group, pooled)


def er_disparity(model, dataset: Dataset, budget: EffortBudget,
                 pgd: PgdConfig | None = None, details: dict | None = None,
                 skipped: list | None = None, delta_max: float | None = None) -> float:
    """Effort to recourse: gaps in the mean effort radius a rejected row needs
    to reach acceptance. Rows that stay unreachable are counted at delta_max
    (10x the widest feature range unless given) and flagged."""
    x, groups = dataset.features, dataset.groups
    scores = _row_scores(model, x, groups)
    rejected = scores < 0.5
    if not rejected.any():
        raise EvaluationError("no rejected rows: recourse is undefined")
    if delta_max is None:
        spans = x.max(axis=0) - x.min(axis=0)
        delta_max = 10.0 * float(spans.max()) if spans.max() > 0 else 10.0
    skipped = [] if skipped is None else skipped

    idx = np.flatnonzero(rejected)
    dist = np.empty(idx.shape[0])
    capped = 0
    for k, i in enumerate(idx):
        scorer = model.glm_for_group(int(groups[i])) if hasattr(model, "glm_for_group") else model
        res = recourse_distance(scorer, x[i], budget, dataset.partition,
                                delta_max=delta_max, pgd=pgd)
        dist[k] = res.distance
        capped += res.capped
    if capped and skipped is not None:
        skipped.append(("er_capped_rows", capped))

    g_rej = groups[rejected]
    per_group = {}
    for g in dataset.group_ids():
        sel = g_rej == g
        if not sel.any():
            skipped.append(("er", int(g)))
            continue
        per_group[int(g)] = float(dist[sel].mean())
    pooled = float(dist.mean())
    if details is not None:
        details["er"] = per_group
    return _max_gap_to_pool(per_group, pooled)


@dataclass
class DisparityReport:
    error_rate: float
    ei: float
    dp: float
    eo: float
    eod: float
    be: float
    er: float
    per_group: dict = field(default_factory=dict)
    skipped: tuple = ()
    notes: tuple = ()

    FIELDS = ("error_rate", "ei", "dp", "eo", "eod", "be", "er")

    def to_text(self) -> str:
        lines = [f"{name} = {getattr(self, name):.6f}" for name in self.FIELDS]
        for metric, groups in sorted(self.per_group.items()):
            for g, v in sorted(groups.items()):
                lines.append(f"{metric}.group_{g} = {v:.6f}")
        for item in self.skipped:
            lines.append(f"skipped = {item[0]}:{item[1]}")
        for note in self.notes:
            lines.append(f"note = {note}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        header = ",".join(self.FIELDS)
        row = ",".join(f"{getattr(self, name):.6f}" for name in self.FIELDS)
        return header + "\n" + row + "\n"


def full_report(model, dataset: Dataset, budget: EffortBudget,
                pgd: PgdConfig | None = None) -> DisparityReport:
    """Evaluate every notion; a notion that cannot be evaluated on this data
    becomes NaN with a note instead of aborting the others."""
    details: dict = {}
    skipped: list = []
    notes: list[str] = []
    values = {}
    tasks = {
        "error_rate": lambda: error_rate(model, dataset),
        "ei": lambda: ei_disparity(model, dataset, budget, pgd, details, skipped),
        "dp": lambda: dp_disparity(model, dataset, details),
        "eo": lambda: eo_disparity(model, dataset, details, skipped),
        "eod": lambda: eod_disparity(model, dataset, details, skipped),
        "be": lambda: be_disparity(model, dataset, budget, pgd, details),
        "er": lambda: er_disparity(model, dataset, budget, pgd, details, skipped),
    }
    for name, task in tasks.items():
        try:
            values[name] = float(task())
        except EvaluationError as exc:
            values[name] = float("nan")
            notes.append(f"{name}: {exc}")
    skipped_unique = tuple(dict.fromkeys(skipped))  # eo and eod share the tpr scan
    return DisparityReport(per_group=details, skipped=skipped_unique,
                           notes=tuple(notes), **values)
