"""Sample/dataset model, CSV ingestion, and the pretext-label constructors.

A dataset is a 3-D float64 array of shape (n, t, b) — n pixel time series,
t observation dates, b spectral bands — plus integer labels and a task tag.
The constructors in this module derive new labeled datasets mechanically
from the data's structure (time reversal, time-segment identity, band
identity, domain of origin); none of them reads the crop labels and none
mutates its input.
"""

from __future__ import annotations

import csv
import enum
import re
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataFormatError

UNLABELED = -1

# CSV schema constants: header is id,domain,label,b0_t0,...  (band-major).
_VALUE_COL = re.compile(r"^b(\d+)_t(\d+)$")
_DOMAIN_NAMES = ("source", "target")
CROP_CLASSES = 4


class Task(enum.Enum):
    CROP = "crop"
    ROTATION = "rotation"
    TIME_SEGMENT = "time_segment"
    BAND = "band"
    DOMAIN = "domain"


@dataclass(frozen=True)
class TaskDataset:
    """Samples, integer labels, and the task the labels belong to.

    ``labels`` may be ``UNLABELED`` (-1) for datasets that only feed the
    self-supervised constructors, which ignore labels entirely.
    """

    values: np.ndarray  # (n, t, b) float64
    labels: np.ndarray  # (n,) int64
    task: Task
    num_classes: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if values.ndim != 3:
            raise ValueError(f"values must have shape (n, t, b), got {values.shape}")
        n, t, b = values.shape
        if n and t < 2:
            raise ValueError(f"need at least 2 timesteps, got {t}")
        if n and b < 1:
            raise ValueError(f"need at least 1 band, got {b}")
        if labels.shape != (n,):
            raise ValueError(f"{n} samples but {labels.shape[0]} labels")
        if not np.isfinite(values).all():
            raise ValueError("sample values must all be finite")
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        if n:
            bad = (labels != UNLABELED) & ((labels < 0) | (labels >= self.num_classes))
            if bad.any():
                raise ValueError(
                    f"labels must be {UNLABELED} or in [0, {self.num_classes}), "
                    f"got {labels[bad][:5]}"
                )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def t_steps(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    def subset(self, idx: np.ndarray) -> "TaskDataset":
        return replace(self, values=self.values[idx], labels=self.labels[idx])

    def strip_labels(self) -> "TaskDataset":
        """View with every label replaced by the unlabeled sentinel."""
        return replace(self, labels=np.full(len(self), UNLABELED, dtype=np.int64))


def _check_same_shape(a: TaskDataset, b: TaskDataset) -> None:
    if (a.t_steps, a.bands) != (b.t_steps, b.bands):
        raise ValueError(
            f"datasets disagree on sample shape: {a.t_steps}x{a.bands} vs "
            f"{b.t_steps}x{b.bands}"
        )


def make_rotation(dataset: TaskDataset) -> TaskDataset:
    """Originals labeled 0, time-reversed copies labeled 1 (2n samples)."""
    n = len(dataset)
    reversed_values = dataset.values[:, ::-1, :]
    values = np.concatenate([dataset.values, reversed_values], axis=0)
    labels = np.concatenate([np.zeros(n, dtype=np.int64), np.ones(n, dtype=np.int64)])
    return TaskDataset(values, labels, Task.ROTATION, 2)


def make_time_segment(dataset: TaskDataset, cutoff: int) -> TaskDataset:
    """Each sample shatters into t/cutoff segments, tiled back to length t.

    Segment j (timesteps [j*cutoff, (j+1)*cutoff)) is repeated along the
    time axis, dates kept in order, and labeled j. Output has n * t/cutoff
    samples with t/cutoff classes.
    """
    t = dataset.t_steps
    if cutoff < 1 or t % cutoff != 0:
        raise ValueError(f"cutoff must divide the {t} timesteps exactly, got {cutoff}")
    segments = t // cutoff
    parts = []
    labels = []
    n = len(dataset)
    for j in range(segments):
        seg = dataset.values[:, j * cutoff:(j + 1) * cutoff, :]
        parts.append(np.tile(seg, (1, segments, 1)))
        labels.append(np.full(n, j, dtype=np.int64))
    return TaskDataset(
        np.concatenate(parts, axis=0),
        np.concatenate(labels),
        Task.TIME_SEGMENT,
        segments,
    )


def make_band(dataset: TaskDataset) -> TaskDataset:
    """Each band's time series, copied across all b band columns, labeled
    by band index (n * b samples, b classes)."""
    b = dataset.bands
    if b < 2:
        raise ValueError(f"band detection needs at least 2 bands, got {b}")
    n = len(dataset)
    parts = []
    labels = []
    for band in range(b):
        shard = dataset.values[:, :, band:band + 1]
        parts.append(np.repeat(shard, b, axis=2))
        labels.append(np.full(n, band, dtype=np.int64))
    return TaskDataset(
        np.concatenate(parts, axis=0),
        np.concatenate(labels),
        Task.BAND,
        b,
    )


def make_domain(source: TaskDataset, target: TaskDataset) -> TaskDataset:
    """Source samples labeled 0, target samples labeled 1."""
    _check_same_shape(source, target)
    values = np.concatenate([source.values, target.values], axis=0)
    labels = np.concatenate([
        np.zeros(len(source), dtype=np.int64),
        np.ones(len(target), dtype=np.int64),
    ])
    return TaskDataset(values, labels, Task.DOMAIN, 2)


def make_union_unlabeled(source: TaskDataset, target: TaskDataset) -> TaskDataset:
    """Pooled samples from both domains with every label stripped."""
    _check_same_shape(source, target)
    values = np.concatenate([source.values, target.values], axis=0)
    labels = np.full(values.shape[0], UNLABELED, dtype=np.int64)
    return TaskDataset(values, labels, Task.CROP, source.num_classes)


def sample_few_shot(dataset: TaskDataset, k: int, seed) -> TaskDataset:
    """Draw exactly k samples per class, without replacement, reproducibly."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    picks = []
    for cls in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == cls)
        if idx.size < k:
            raise ValueError(f"class {cls} has {idx.size} samples, need {k}")
        picks.append(rng.choice(idx, size=k, replace=False))
    return dataset.subset(np.concatenate(picks))


@dataclass(frozen=True)
class BandDistribution:
    """Per-timestep mean/std and histograms of one band within one class."""

    class_id: int
    band_id: int
    mean: np.ndarray        # (t,)
    std: np.ndarray         # (t,) population std
    hist: np.ndarray        # (t, bins) counts
    bin_edges: np.ndarray   # (bins + 1,)


def band_distribution_report(dataset: TaskDataset, class_id: int, band_id: int,
                             bins: int = 50,
                             value_range: tuple[float, float] = (0.0, 1.0)) -> BandDistribution:
    """Empirical per-timestep distribution of one band over one class.

    Histogram bins are fixed over ``value_range`` (values clipped into it),
    so counts at every timestep sum to the class's sample count.
    """
    if not 0 <= band_id < dataset.bands:
        raise ValueError(f"band {band_id} out of range for {dataset.bands} bands")
    x = dataset.values[dataset.labels == class_id][:, :, band_id]  # (m, t)
    if x.shape[0] == 0:
        raise ValueError(f"no samples with class {class_id}")
    edges = np.linspace(value_range[0], value_range[1], bins + 1)
    clipped = np.clip(x, value_range[0], value_range[1])
    hist = np.stack([np.histogram(clipped[:, t], bins=edges)[0]
                     for t in range(x.shape[1])])
    return BandDistribution(
        class_id=class_id,
        band_id=band_id,
        mean=x.mean(axis=0),
        std=x.std(axis=0),
        hist=hist,
        bin_edges=edges,
    )


def csv_header(t_steps: int, bands: int) -> list[str]:
    cols = ["id", "domain", "label"]
    for band in range(bands):
        for t in range(t_steps):
            cols.append(f"b{band}_t{t}")
    return cols


def _infer_shape(header: list[str]) -> tuple[int, int]:
    if header[:3] != ["id", "domain", "label"]:
        raise DataFormatError(
            f"header must start with id,domain,label, got {header[:3]}"
        )
    value_cols = header[3:]
    if not value_cols:
        raise DataFormatError("no value columns found in header")
    parsed = []
    for col in value_cols:
        m = _VALUE_COL.match(col)
        if not m:
            raise DataFormatError(f"unrecognized value column {col!r}")
        parsed.append((int(m.group(1)), int(m.group(2))))
    bands = max(b for b, _ in parsed) + 1
    t_steps = max(t for _, t in parsed) + 1
    expected = csv_header(t_steps, bands)[3:]
    if value_cols != expected:
        missing = sorted(set(expected) - set(value_cols))
        if missing:
            raise DataFormatError(f"missing value columns, e.g. {missing[:3]}")
        raise DataFormatError(
            "value columns must appear in band-major order b0_t0..b0_t{T-1},b1_t0,..."
        )
    return t_steps, bands


def ingest_csv(path, scale: float = 1e-4, domain: str | None = None) -> TaskDataset:
    """Read a crop-sample CSV, multiplying every raw value by ``scale``.

    The file schema is ``id,domain,label,b0_t0,...`` with band-major value
    columns; t and b are inferred from the header. ``domain`` restricts the
    result to rows tagged ``source`` or ``target``. Labels are the four crop
    classes or -1 for unlabeled rows.
    """
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    if domain is not None and domain not in _DOMAIN_NAMES:
        raise ValueError(f"domain must be one of {_DOMAIN_NAMES}, got {domain!r}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        t_steps, bands = _infer_shape(header)
        if t_steps < 2:
            raise DataFormatError(f"{path}: need at least 2 timestep columns per band")
        n_cols = 3 + t_steps * bands
        rows = []
        labels = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != n_cols:
                raise DataFormatError(
                    f"{path}: row {line_no}: expected {n_cols} fields, got {len(row)}"
                )
            row_domain = row[1]
            if row_domain not in _DOMAIN_NAMES:
                raise DataFormatError(
                    f"{path}: row {line_no}: domain must be source or target, "
                    f"got {row_domain!r}"
                )
            try:
                label = int(row[2])
            except ValueError:
                raise DataFormatError(
                    f"{path}: row {line_no}: label {row[2]!r} is not an integer"
                ) from None
            if label != UNLABELED and not 0 <= label < CROP_CLASSES:
                raise DataFormatError(
                    f"{path}: row {line_no}: label {label} outside "
                    f"{{-1, 0..{CROP_CLASSES - 1}}}"
                )
            try:
                vals = np.array(row[3:], dtype=np.float64)
            except ValueError:
                raise DataFormatError(
                    f"{path}: row {line_no}: malformed numeric value"
                ) from None
            if domain is not None and row_domain != domain:
                continue
            rows.append(vals)
            labels.append(label)
    if rows:
        flat = np.stack(rows) * scale
        # band-major columns -> (n, b, t) -> (n, t, b)
        values = flat.reshape(-1, bands, t_steps).transpose(0, 2, 1)
    else:
        values = np.empty((0, t_steps, bands))
    return TaskDataset(
        np.ascontiguousarray(values),
        np.array(labels, dtype=np.int64),
        Task.CROP,
        CROP_CLASSES,
    )


def write_csv(path, dataset: TaskDataset, domain: str) -> None:
    """Write a dataset in the ingestion schema (full float precision)."""
    if domain not in _DOMAIN_NAMES:
        raise ValueError(f"domain must be one of {_DOMAIN_NAMES}, got {domain!r}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(csv_header(dataset.t_steps, dataset.bands))
        flat = dataset.values.transpose(0, 2, 1).reshape(len(dataset), -1)
        for i in range(len(dataset)):
            writer.writerow(
                [i, domain, int(dataset.labels[i])] + [repr(float(v)) for v in flat[i]]
            )
