"""Data pipeline: CSV ingestion, windowing, chronological splits, and a
synthetic multi-task generator with a recorded ground-truth manifest.

CSV contract: UTF-8, comma-separated, one header row; a schema JSON assigns
every column a role ({"timestamp": col, "features": [cols], "labels": [cols],
"kind": "classification"|"regression"}). Feature standardization and missing-
value imputation use training-split statistics only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ContractError, DataError, InsufficientDataError, SchemaError

NOISE_SIGMA = 0.1


@dataclass(frozen=True)
class Schema:
    timestamp: str
    features: list[str]
    labels: list[str]
    kind: str

    def __post_init__(self):
        if self.kind not in ("classification", "regression"):
            raise SchemaError(f"unknown task kind {self.kind!r}")
        if not self.features or not self.labels:
            raise SchemaError("schema needs at least one feature and one label column")

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        try:
            return cls(d["timestamp"], list(d["features"]), list(d["labels"]), d["kind"])
        except KeyError as e:
            raise SchemaError(f"schema is missing key {e.args[0]!r}") from None

    @classmethod
    def from_json(cls, path) -> "Schema":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple = (0.6, 0.2, 0.2)
    strategy: str = "chronological"

    def __post_init__(self):
        if self.strategy != "chronological":
            raise ContractError(f"unknown split strategy {self.strategy!r}")
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions):
            raise ContractError(f"bad split fractions {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ContractError(f"split fractions must sum to 1, got {self.fractions}")

    def boundaries(self, n_rows: int) -> tuple:
        i1 = int(n_rows * self.fractions[0])
        i2 = int(n_rows * (self.fractions[0] + self.fractions[1]))
        return i1, i2


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, rows: np.ndarray) -> np.ndarray:
        return (rows - self.mean) / self.std


@dataclass
class TaskTable:
    """One task's cleaned row-level series: sorted, labels complete,
    features imputed; split boundaries and train statistics attached."""

    task_id: str
    timestamps: np.ndarray
    features: np.ndarray  # (rows, D), imputed
    labels: np.ndarray    # (rows, M)
    feature_names: list
    label_names: list
    kind: str
    split: SplitSpec
    impute_means: np.ndarray
    normalizer: Normalizer

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]


@dataclass
class TaskDataset:
    """One task's windowed data: inputs (N, T, D) and labels (N, M)."""

    task_id: str
    X: np.ndarray
    Y: np.ndarray
    kind: str
    feature_names: list = field(default_factory=list)
    label_names: list = field(default_factory=list)

    @property
    def n_windows(self) -> int:
        return self.X.shape[0]


@dataclass
class TaskSplits:
    task_id: str
    kind: str
    train: TaskDataset
    val: TaskDataset
    test: TaskDataset
    normalizer: Normalizer | None = None


def load_task_csv(path, schema: Schema, split: SplitSpec = SplitSpec()) -> TaskTable:
    """Read one task's CSV into a cleaned TaskTable.

    Rows are sorted by timestamp (duplicates are an error), rows with any
    missing label are dropped, and missing features are imputed with the
    per-feature mean of the training split."""
    path = Path(path)
    df = pd.read_csv(path)
    known = {schema.timestamp, *schema.features, *schema.labels}
    present = set(df.columns)
    unknown = sorted(present - known)
    missing = sorted(known - present)
    if unknown:
        raise SchemaError(f"{path.name}: columns not named by the schema: {unknown}")
    if missing:
        raise SchemaError(f"{path.name}: schema columns absent from the file: {missing}")
    if len(df) == 0:
        raise InsufficientDataError(f"{path.name}: no data rows")

    ts = _parse_timestamps(df[schema.timestamp], path.name)
    order = np.argsort(ts, kind="stable")
    ts = ts[order]
    dup = np.flatnonzero(np.diff(ts) == 0)
    if dup.size:
        offenders = sorted(set(ts[dup].tolist()))[:10]
        raise DataError(f"{path.name}: duplicate timestamps: {offenders}")

    feats = df[schema.features].to_numpy(dtype=np.float64)[order]
    labels_raw = df[schema.labels].to_numpy(dtype=np.float64)[order]

    keep = ~np.isnan(labels_raw).any(axis=1)
    ts, feats, labels = ts[keep], feats[keep], labels_raw[keep]
    if len(ts) == 0:
        raise InsufficientDataError(f"{path.name}: no rows with complete labels")
    if schema.kind == "classification" and not np.isin(labels, (0.0, 1.0)).all():
        raise DataError(f"{path.name}: classification labels must be 0/1")

    i1, _ = split.boundaries(len(ts))
    train_feats = feats[:max(i1, 1)]
    with np.errstate(invalid="ignore"):
        means = np.nanmean(train_feats, axis=0)
    means = np.where(np.isnan(means), 0.0, means)
    nan_mask = np.isnan(feats)
    feats = np.where(nan_mask, means, feats)

    train_feats = feats[:max(i1, 1)]
    std = train_feats.std(axis=0)
    normalizer = Normalizer(mean=train_feats.mean(axis=0),
                            std=np.where(std == 0.0, 1.0, std))

    return TaskTable(
        task_id=path.stem,
        timestamps=ts,
        features=feats,
        labels=labels,
        feature_names=list(schema.features),
        label_names=list(schema.labels),
        kind=schema.kind,
        split=split,
        impute_means=means,
        normalizer=normalizer,
    )


def _parse_timestamps(col: pd.Series, name: str) -> np.ndarray:
    try:
        return pd.to_numeric(col, errors="raise").to_numpy(dtype=np.float64)
    except (ValueError, TypeError):
        pass
    try:
        return pd.to_datetime(col, errors="raise").astype("int64").to_numpy(dtype=np.float64)
    except (ValueError, TypeError) as e:
        raise DataError(f"{name}: cannot parse timestamp column: {e}") from None


def make_windows(table: TaskTable, window: int, stride: int = 1) -> TaskDataset:
    """Slide a window of `window` rows (step `stride`) over the whole table.
    Window i covers rows [i*stride, i*stride + window); its label is the LAST
    covered row's label vector; features are standardized with the table's
    training-split statistics."""
    return _window_rows(table, 0, table.n_rows, window, stride)


def _window_rows(table: TaskTable, lo: int, hi: int, window: int, stride: int) -> TaskDataset:
    if window < 1 or stride < 1:
        raise ContractError(f"window and stride must be >= 1, got {window}/{stride}")
    rows = hi - lo
    if rows < window:
        raise InsufficientDataError(
            f"{table.task_id}: {rows} rows < window of {window}")
    z = table.normalizer.apply(table.features[lo:hi])
    labels = table.labels[lo:hi]
    n = (rows - window) // stride + 1
    X = np.empty((n, window, z.shape[1]))
    Y = np.empty((n, labels.shape[1]))
    for i in range(n):
        start = i * stride
        X[i] = z[start:start + window]
        Y[i] = labels[start + window - 1]
    return TaskDataset(table.task_id, X, Y, table.kind,
                       table.feature_names, table.label_names)


def prepare_task(table: TaskTable, window: int, stride: int = 1) -> TaskSplits:
    """Chronological 60/20/20 (per the table's SplitSpec) row split, windowed
    independently per split so no window straddles a boundary."""
    i1, i2 = table.split.boundaries(table.n_rows)
    return TaskSplits(
        task_id=table.task_id,
        kind=table.kind,
        train=_window_rows(table, 0, i1, window, stride),
        val=_window_rows(table, i1, i2, window, stride),
        test=_window_rows(table, i2, table.n_rows, window, stride),
        normalizer=table.normalizer,
    )


def load_dataset_dir(dataset_dir, window: int, stride: int = 1,
                     split: SplitSpec = SplitSpec()) -> list:
    """Load every *.csv in a directory (one task each, schema.json beside
    them) into windowed per-task splits, ordered by filename."""
    root = Path(dataset_dir)
    schema_path = root / "schema.json"
    if not schema_path.exists():
        raise SchemaError(f"{root}: schema.json not found")
    schema = Schema.from_json(schema_path)
    csvs = sorted(p for p in root.glob("*.csv"))
    if not csvs:
        raise InsufficientDataError(f"{root}: no task CSV files")
    return [prepare_task(load_task_csv(p, schema, split), window, stride) for p in csvs]


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass
class SynthResult:
    datasets: list  # K TaskDatasets (windowed)
    manifest: dict


def synth_generate(n_tasks, n_windows, window, n_features, n_labels, seed,
                   kind="classification", boost=0.8, pulse_len=None,
                   noise_sigma=NOISE_SIGMA, distractor_scale=2.5) -> SynthResult:
    """Generate K related tasks. Each task owns a private random subset of
    ceil(D/4) informative features; the rest are louder pure-noise
    distractors (scale `distractor_scale`). A shared square pulse (random
    phase per window, common to all tasks) boosts the informative features,
    so locating it requires identifying them first. Labels derive from the
    weighted sum of informative-feature values over pulse steps: thresholded
    at the per-label median for classification, plus gaussian noise for
    regression. Ground truth goes into the manifest."""
    if n_features < 4:
        raise ContractError(f"need at least 4 features, got {n_features}")
    if kind not in ("classification", "regression"):
        raise ContractError(f"unknown kind {kind!r}")
    if pulse_len is None:
        pulse_len = max(2, window // 5)

    shared = np.random.default_rng([seed, 0])
    if kind == "classification":
        # phases >= window miss the window entirely: no-pulse windows are
        # unambiguous negatives
        phases = shared.integers(0, window + pulse_len, size=n_windows)
    else:
        # regression keeps the pulse fully inside so the target is the fine
        # structure at the pulse, not the coarse overlap length
        phases = shared.integers(0, max(window - pulse_len + 1, 1), size=n_windows)

    n_inf = int(np.ceil(n_features / 4))
    feature_names = [f"f{d:02d}" for d in range(n_features)]
    label_names = [f"y{m}" for m in range(n_labels)]

    datasets = []
    task_infos = []
    for k in range(n_tasks):
        rng = np.random.default_rng([seed, k + 1])
        informative = np.sort(rng.choice(n_features, size=n_inf, replace=False))
        # normalized so regression targets are O(1); classification labels are
        # threshold-based and unaffected by the scale
        weights = rng.uniform(0.5, 1.5, size=(n_labels, n_inf)) / (pulse_len * n_inf)

        X = rng.standard_normal((n_windows, window, n_features)) * distractor_scale
        X[:, :, informative] /= distractor_scale  # informative stay unit scale
        scores = np.zeros((n_windows, n_labels))
        for i in range(n_windows):
            p = phases[i]
            if p < window:
                steps = slice(p, min(p + pulse_len, window))
                X[i, steps, informative] += boost
                scores[i] = weights @ X[i, steps][:, informative].sum(axis=0)

        if kind == "classification":
            thresholds = np.median(scores, axis=0)
            Y = (scores > thresholds).astype(np.float64)
        else:
            thresholds = np.zeros(n_labels)
            Y = scores + noise_sigma * rng.standard_normal((n_windows, n_labels))

        datasets.append(TaskDataset(f"task{k}", X, Y, kind, feature_names, label_names))
        task_infos.append({
            "task_id": f"task{k}",
            "informative_features": informative.tolist(),
            "label_weights": weights.tolist(),
            "thresholds": thresholds.tolist(),
        })

    manifest = {
        "seed": seed,
        "kind": kind,
        "tasks": n_tasks,
        "windows": n_windows,
        "window_len": window,
        "features": n_features,
        "labels": n_labels,
        "boost": boost,
        "pulse_len": pulse_len,
        "noise_sigma": noise_sigma,
        "distractor_scale": distractor_scale,
        "trigger_phases": phases.tolist(),
        "task_info": task_infos,
    }
    return SynthResult(datasets, manifest)


def synth_splits(result: SynthResult, split: SplitSpec = SplitSpec()) -> list:
    """Slice each synthetic task's windows 60/20/20 by index."""
    out = []
    for ds in result.datasets:
        i1, i2 = split.boundaries(ds.n_windows)
        out.append(TaskSplits(
            task_id=ds.task_id,
            kind=ds.kind,
            train=TaskDataset(ds.task_id, ds.X[:i1], ds.Y[:i1], ds.kind,
                              ds.feature_names, ds.label_names),
            val=TaskDataset(ds.task_id, ds.X[i1:i2], ds.Y[i1:i2], ds.kind,
                            ds.feature_names, ds.label_names),
            test=TaskDataset(ds.task_id, ds.X[i2:], ds.Y[i2:], ds.kind,
                             ds.feature_names, ds.label_names),
        ))
    return out
