"""Datasets: synthetic two-group Gaussian mixtures, CSV ingestion, splits.

A Dataset bundles a float feature matrix with binary labels, integer group
ids, and a partition of the feature columns into improvable / manipulable /
immutable index sets. Nothing downstream mutates a Dataset.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

# Default mixture used throughout the benchmarks: two groups, two labels,
# one Gaussian cluster per (label, group) cell.
DEFAULT_CLUSTER_MEANS = {
    (0, 0): (-0.1, -0.2),
    (0, 1): (-0.2, -0.3),
    (1, 0): (0.1, 0.4),
    (1, 1): (0.4, 0.3),
}
DEFAULT_CLUSTER_COVS = {
    (0, 0): (0.4, 0.4),
    (0, 1): (0.2, 0.2),
    (1, 0): (0.2, 0.2),
    (1, 1): (0.1, 0.1),
}


@dataclass(frozen=True)
class FeaturePartition:
    """Disjoint split of feature column indices by how an applicant can move them.

    improvable: genuine effort changes both the feature and the underlying
    qualification. manipulable: the feature can be gamed without any real
    change. immutable: cannot be moved at all. Best-response effort is spent
    on improvable columns only.
    """

    improvable: tuple[int, ...]
    manipulable: tuple[int, ...] = ()
    immutable: tuple[int, ...] = ()

    def validate(self, n_features: int) -> None:
        all_idx = list(self.improvable) + list(self.manipulable) + list(self.immutable)
        if len(set(all_idx)) != len(all_idx):
            raise ConfigError("feature partition has overlapping index sets")
        if sorted(all_idx) != list(range(n_features)):
            raise ConfigError(
                f"feature partition must cover all {n_features} columns exactly, "
                f"got indices {sorted(all_idx)}"
            )
        if not self.improvable:
            raise ConfigError("feature partition needs at least one improvable column")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) ints in {0, 1}
    groups: np.ndarray  # (n,) small non-negative ints
    partition: FeaturePartition
    column_names: tuple[str, ...] = ()

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        groups = np.asarray(self.groups, dtype=np.int64)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise DataError(f"features must be a non-empty 2-d array, got shape {feats.shape}")
        n, d = feats.shape
        if labels.shape != (n,) or groups.shape != (n,):
            raise DataError("labels and groups must be 1-d arrays matching the row count")
        if not np.isfinite(feats).all():
            raise DataError("features contain non-finite values")
        if not np.isin(labels, (0, 1)).all():
            raise DataError("labels must be 0 or 1")
        if (groups < 0).any():
            raise DataError("group ids must be non-negative integers")
        self.partition.validate(d)
        names = tuple(self.column_names) if self.column_names else tuple(f"x{j + 1}" for j in range(d))
        if len(names) != d:
            raise DataError(f"expected {d} column names, got {len(names)}")
        for arr in (feats, labels, groups):
            arr.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "column_names", names)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def group_ids(self) -> np.ndarray:
        return np.unique(self.groups)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            self.features[idx],
            self.labels[idx],
            self.groups[idx],
            self.partition,
            self.column_names,
        )


@dataclass(frozen=True)
class SyntheticConfig:
    """Two-group, two-label Gaussian mixture.

    p_z is P(z=1); p_y_given_z[z] is P(y=1 | z). cluster_means / cluster_covs
    map (y, z) to the mean vector and diagonal covariance of that cell.

    With group_feature=True (the default) the group id is appended to the
    feature matrix as a trailing immutable column named "z", so trained
    models can carry a per-group intercept. The Gaussian columns stay
    improvable either way.
    """

    n_samples: int = 20_000
    p_z: float = 0.4
    p_y_given_z: tuple[float, float] = (0.3, 0.5)
    cluster_means: dict = field(default_factory=lambda: dict(DEFAULT_CLUSTER_MEANS))
    cluster_covs: dict = field(default_factory=lambda: dict(DEFAULT_CLUSTER_COVS))
    group_feature: bool = True

    def validate(self) -> None:
        if self.n_samples < 1:
            raise ConfigError("n_samples must be positive")
        if not 0.0 < self.p_z < 1.0:
            raise ConfigError("p_z must lie strictly between 0 and 1")
        for p in self.p_y_given_z:
            if not 0.0 <= p <= 1.0:
                raise ConfigError("p_y_given_z entries must lie in [0, 1]")
        cells = {(y, z) for y in (0, 1) for z in (0, 1)}
        if set(self.cluster_means) != cells or set(self.cluster_covs) != cells:
            raise ConfigError("cluster_means and cluster_covs need all four (y, z) cells")
        dims = {len(v) for v in self.cluster_means.values()}
        dims |= {len(v) for v in self.cluster_covs.values()}
        if len(dims) != 1:
            raise ConfigError("all cluster means/covs must share one dimension")
        if any(c <= 0 for cov in self.cluster_covs.values() for c in cov):
            raise ConfigError("cluster variances must be positive")

    @property
    def n_features(self) -> int:
        return len(next(iter(self.cluster_means.values())))


def generate_synthetic(config: SyntheticConfig, seed: int) -> Dataset:
    """Sample a Dataset from the mixture.

    The Gaussian columns are improvable. When config.group_feature is set the
    group id rides along as a trailing immutable feature column.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    n = config.n_samples
    d = config.n_features
    z = (rng.random(n) < config.p_z).astype(np.int64)
    p_y = np.where(z == 1, config.p_y_given_z[1], config.p_y_given_z[0])
    y = (rng.random(n) < p_y).astype(np.int64)
    x = np.empty((n, d))
    for (yy, zz), mean in config.cluster_means.items():
        mask = (y == yy) & (z == zz)
        std = np.sqrt(np.asarray(config.cluster_covs[(yy, zz)], dtype=float))
        x[mask] = np.asarray(mean, dtype=float) + rng.standard_normal((mask.sum(), d)) * std
    improvable = tuple(range(d))
    if config.group_feature:
        x = np.column_stack([x, z.astype(np.float64)])
        partition = FeaturePartition(improvable=improvable, immutable=(d,))
        names = tuple(f"x{j + 1}" for j in range(d)) + ("z",)
        return Dataset(x, y, z, partition, names)
    partition = FeaturePartition(improvable=improvable)
    return Dataset(x, y, z, partition)


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Shuffle rows and split off a test set of round(n * test_fraction) rows.

    The test size is clamped to [1, n-1] so both sides stay non-empty.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must lie strictly between 0 and 1")
    n = dataset.n_samples
    if n < 2:
        raise DataError("need at least 2 rows to split")
    n_test = int(round(n * test_fraction))
    n_test = min(max(n_test, 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset(perm[n_test:]), dataset.subset(perm[:n_test])


# ---------------------------------------------------------------------------
# CSV ingestion. The schema is a small key = value text file:
#
#   label = approved            # required: binary label column
#   group = region              # group id column, or instead:
#   group_rule = age >= 40      # threshold rule making group 1 vs 0
#   improvable = savings,debt   # required: at least one column
#   manipulable = num_accounts  # optional
#   immutable = age             # optional; unlisted feature columns land here
#   categories.grade = low,mid,high   # ordered levels -> 1,2,3
#   scale = minmax              # optional: per-column min-max to [0, 1]
#
# Feature columns are every CSV column except the label and a dedicated group
# column. A group_rule column stays in the features.
# ---------------------------------------------------------------------------


@dataclass
class CsvSchema:
    label: str
    group: str | None = None
    group_rule: tuple[str, float] | None = None  # (column, threshold), group 1 iff value >= threshold
    improvable: tuple[str, ...] = ()
    manipulable: tuple[str, ...] = ()
    immutable: tuple[str, ...] = ()
    categories: dict = field(default_factory=dict)  # column -> tuple of ordered level names
    scale: str = "none"


def parse_schema(path: str) -> CsvSchema:
    fields: dict[str, str] = {}
    categories: dict[str, tuple[str, ...]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key.startswith("categories."):
                col = key[len("categories."):]
                categories[col] = tuple(v.strip() for v in value.split(","))
            else:
                fields[key] = value

    if "label" not in fields:
        raise ConfigError(f"{path}: schema needs a 'label' key")
    group = fields.pop("group", None)
    group_rule = None
    if "group_rule" in fields:
        if group is not None:
            raise ConfigError(f"{path}: give either 'group' or 'group_rule', not both")
        rule = fields.pop("group_rule")
        if ">=" not in rule:
            raise ConfigError(f"{path}: group_rule must look like 'column >= value'")
        col, thresh = (part.strip() for part in rule.split(">=", 1))
        try:
            group_rule = (col, float(thresh))
        except ValueError:
            raise ConfigError(f"{path}: group_rule threshold {thresh!r} is not a number") from None
    if group is None and group_rule is None:
        raise ConfigError(f"{path}: schema needs 'group' or 'group_rule'")

    def split_cols(key: str) -> tuple[str, ...]:
        value = fields.pop(key, "")
        return tuple(c.strip() for c in value.split(",") if c.strip())

    schema = CsvSchema(
        label=fields.pop("label"),
        group=group,
        group_rule=group_rule,
        improvable=split_cols("improvable"),
        manipulable=split_cols("manipulable"),
        immutable=split_cols("immutable"),
        categories=categories,
        scale=fields.pop("scale", "none"),
    )
    if schema.scale not in ("none", "minmax"):
        raise ConfigError(f"{path}: unknown scale {schema.scale!r}")
    if not schema.improvable:
        raise ConfigError(f"{path}: schema needs at least one improvable column")
    if fields:
        raise ConfigError(f"{path}: unknown schema keys {sorted(fields)}")
    return schema


def load_csv(path: str, schema: CsvSchema | str) -> Dataset:
    """Load a CSV with a header row into a Dataset according to the schema.

    Ordered categorical columns map their levels to 1, 2, ... in schema order.
    Values are used as written otherwise; scale = minmax rescales each feature
    column to [0, 1] after parsing.
    """
    if isinstance(schema, str):
        schema = parse_schema(schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = [[cell.strip() for cell in row] for row in reader]
    if not rows:
        raise DataError(f"{path}: no data rows")

    col_index = {name: j for j, name in enumerate(header)}
    for name in (schema.label,) + ((schema.group,) if schema.group else ()):
        if name not in col_index:
            raise DataError(f"{path}: column {name!r} not in header")

    feature_names = [h for h in header if h != schema.label and h != schema.group]
    for listed in schema.improvable + schema.manipulable + schema.immutable:
        if listed not in feature_names:
            raise DataError(f"{path}: partition column {listed!r} is not a feature column")
    if schema.group_rule and schema.group_rule[0] not in feature_names:
        raise DataError(f"{path}: group_rule column {schema.group_rule[0]!r} is not a feature column")

    def parse_cell(col: str, text: str, lineno: int) -> float:
        if col in schema.categories:
            levels = schema.categories[col]
            if text not in levels:
                raise DataError(f"{path}:{lineno}: unknown level {text!r} for column {col!r}")
            return float(levels.index(text) + 1)
        try:
            return float(text)
        except ValueError:
            raise DataError(f"{path}:{lineno}: {text!r} in column {col!r} is not numeric") from None

    n, d = len(rows), len(feature_names)
    x = np.empty((n, d))
    labels = np.empty(n, dtype=np.int64)
    groups = np.empty(n, dtype=np.int64)
    for i, row in enumerate(rows):
        lineno = i + 2  # header is line 1
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
        label_val = parse_cell(schema.label, row[col_index[schema.label]], lineno)
        if label_val not in (0.0, 1.0):
            raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {label_val}")
        labels[i] = int(label_val)
        for j, col in enumerate(feature_names):
            x[i, j] = parse_cell(col, row[col_index[col]], lineno)
        if schema.group is not None:
            gval = parse_cell(schema.group, row[col_index[schema.group]], lineno)
            if gval != int(gval) or gval < 0:
                raise DataError(f"{path}:{lineno}: group id must be a non-negative integer")
            groups[i] = int(gval)
    if schema.group_rule is not None:
        col, thresh = schema.group_rule
        groups = (x[:, feature_names.index(col)] >= thresh).astype(np.int64)

    if schema.scale == "minmax":
        lo, hi = x.min(axis=0), x.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        x = (x - lo) / span

    name_to_idx = {name: j for j, name in enumerate(feature_names)}
    improvable = tuple(name_to_idx[c] for c in schema.improvable)
    manipulable = tuple(name_to_idx[c] for c in schema.manipulable)
    listed = set(schema.improvable) | set(schema.manipulable) | set(schema.immutable)
    immutable = tuple(
        name_to_idx[c] for c in feature_names if c in schema.immutable or c not in listed
    )
    partition = FeaturePartition(improvable, manipulable, immutable)
    return Dataset(x, labels, groups, partition, tuple(feature_names))


def save_csv(dataset: Dataset, path: str, schema_path: str | None = None) -> None:
    """Write a Dataset (and optionally a matching schema) for round-tripping."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(dataset.column_names) + ["label", "group"])
        for i in range(dataset.n_samples):
            writer.writerow(
                [repr(float(v)) for v in dataset.features[i]]
                + [int(dataset.labels[i]), int(dataset.groups[i])]
            )
    if schema_path is not None:
        names = dataset.column_names
        part = dataset.partition
        lines = ["label = label", "group = group"]
        lines.append("improvable = " + ",".join(names[j] for j in part.improvable))
        if part.manipulable:
            lines.append("manipulable = " + ",".join(names[j] for j in part.manipulable))
        if part.immutable:
            lines.append("immutable = " + ",".join(names[j] for j in part.immutable))
        with open(schema_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
