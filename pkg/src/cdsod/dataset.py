"""Dataset container, delimited-text ingestion and benchmark preparation.

A :class:`Dataset` is an immutable ``n x d`` float matrix with stable point ids
and optional labels. Prepared datasets carry binary labels where ``1`` marks
the consistent (positive) class and ``0`` the outlier class.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from cdsod.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

CONSISTENT_LABEL = 1
OUTLIER_LABEL = 0


@dataclass(frozen=True)
class Dataset:
    """Numeric point matrix with ids, optional labels and column names.

    Arrays are made read-only on construction so a dataset can be shared
    between threads without copying.
    """

    points: np.ndarray
    ids: np.ndarray = None  # type: ignore[assignment]
    labels: np.ndarray | None = None
    column_names: tuple[str, ...] | None = None
    notes: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2:
            raise DataError(f"points must be a 2-d matrix, got shape {pts.shape}")
        n, d = pts.shape
        if n < 1 or d < 1:
            raise DataError(f"dataset needs n >= 1 and d >= 1, got {n}x{d}")
        if not np.all(np.isfinite(pts)):
            raise DataError("points contain NaN or infinite values")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

        ids = np.arange(n) if self.ids is None else np.asarray(self.ids)
        if ids.shape != (n,):
            raise DataError(f"expected {n} ids, got shape {ids.shape}")
        if len(np.unique(ids)) != n:
            raise DataError("point ids must be unique")
        ids = ids.copy()
        ids.setflags(write=False)
        object.__setattr__(self, "ids", ids)

        if self.labels is not None:
            labels = np.asarray(self.labels).copy()
            if labels.shape != (n,):
                raise DataError(f"expected {n} labels, got shape {labels.shape}")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)
        if self.column_names is not None:
            names = tuple(str(c) for c in self.column_names)
            if len(names) != d:
                raise DataError(f"expected {d} column names, got {len(names)}")
            object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def subset(self, mask_or_index: np.ndarray) -> Dataset:
        """Rows selected by a boolean mask or an index array, ids preserved."""
        sel = np.asarray(mask_or_index)
        labels = None if self.labels is None else self.labels[sel]
        return Dataset(
            self.points[sel],
            ids=self.ids[sel],
            labels=labels,
            column_names=self.column_names,
        )

    def zscored(self) -> Dataset:
        """Copy with every column standardized; constant columns become 0."""
        mean = self.points.mean(axis=0)
        std = self.points.std(axis=0)
        std[std == 0] = 1.0
        return Dataset(
            (self.points - mean) / std,
            ids=self.ids,
            labels=self.labels,
            column_names=self.column_names,
            notes=self.notes,
        )


@dataclass(frozen=True)
class OutlierGroundTruth:
    outlier_ids: frozenset
    n: int

    def __post_init__(self) -> None:
        if self.m >= self.n:
            raise DataError(f"outlier count {self.m} must be below n={self.n}")

    @property
    def m(self) -> int:
        return len(self.outlier_ids)


def impute_column_mean(values: Sequence[float] | np.ndarray) -> np.ndarray:
    """Replace NaN entries with the mean of the observed entries.

    Raises:
        DataError: If every entry is missing.
    """
    col = np.array(values, dtype=float)
    missing = np.isnan(col)
    if missing.all():
        raise DataError("cannot impute a column with no observed values")
    if missing.any():
        col[missing] = col[~missing].mean()
    return col


def _resolve_label_column(label_column, header: list[str] | None, width: int) -> int | None:
    if label_column is None:
        return None
    if isinstance(label_column, str):
        if label_column == "last":
            return width - 1
        if label_column == "first":
            return 0
        if header is not None and label_column in header:
            return header.index(label_column)
        try:
            label_column = int(label_column)
        except ValueError:
            raise ConfigError(f"label column {label_column!r} not found") from None
    idx = int(label_column)
    if idx < 0:
        idx += width
    if not 0 <= idx < width:
        raise ConfigError(f"label column index {label_column} out of range for {width} fields")
    return idx


def _parse_label(text: str):
    try:
        value = float(text)
    except ValueError:
        return text
    return int(value) if value.is_integer() else value


def load_delimited(
    path: str | Path,
    label_column: int | str | None = None,
    missing_token: str = "?",
    delimiter: str = ",",
    header: bool = False,
) -> Dataset:
    """Read a delimited numeric file into a :class:`Dataset`.

    Fields equal to ``missing_token`` are imputed with their column mean.
    Columns with no observed value are dropped and recorded in
    ``Dataset.notes``. ``label_column`` may be an index (negative allowed),
    a header name, or ``"last"``.
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = [r for r in csv.reader(fh, delimiter=delimiter) if r and any(f.strip() for f in r)]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if header:
        if not rows:
            raise DataError(f"{path} is empty")
        names = [h.strip() for h in rows[0]]
        rows = rows[1:]
    else:
        names = None
    if not rows:
        raise DataError(f"{path} has no data rows")

    width = len(rows[0])
    for lineno, row in enumerate(rows, start=2 if header else 1):
        if len(row) != width:
            raise DataError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
    if names is not None and len(names) != width:
        raise DataError(f"{path}: header has {len(names)} fields, rows have {width}")

    label_idx = _resolve_label_column(label_column, names, width)
    feature_idx = [j for j in range(width) if j != label_idx]
    if not feature_idx:
        raise DataError(f"{path}: no feature columns")

    raw = np.empty((len(rows), len(feature_idx)))
    for i, row in enumerate(rows):
        for out_j, j in enumerate(feature_idx):
            text = row[j].strip()
            if text == missing_token or text == "":
                raw[i, out_j] = np.nan
                continue
            try:
                raw[i, out_j] = float(text)
            except ValueError:
                raise DataError(
                    f"{path}: row {i + 1}, column {j + 1}: non-numeric field {text!r}"
                ) from None

    col_names = [names[j] for j in feature_idx] if names is not None else [f"x{j}" for j in feature_idx]
    notes = []
    keep = []
    for j in range(raw.shape[1]):
        col = raw[:, j]
        if np.isnan(col).all():
            msg = f"column {col_names[j]!r} has no observed values; dropped"
            logger.warning(msg)
            notes.append(msg)
            continue
        n_missing = int(np.isnan(col).sum())
        if n_missing:
            raw[:, j] = impute_column_mean(col)
            notes.append(f"column {col_names[j]!r}: imputed {n_missing} missing values with the mean")
        keep.append(j)
    if not keep:
        raise DataError(f"{path}: every column is entirely missing")

    labels = None
    if label_idx is not None:
        labels = np.array([_parse_label(row[label_idx].strip()) for row in rows])
    return Dataset(
        raw[:, keep],
        labels=labels,
        column_names=tuple(col_names[j] for j in keep),
        notes=tuple(notes),
    )


def write_delimited(dataset: Dataset, path: str | Path, delimiter: str = ",") -> None:
    """Write a dataset with a header row; labels go to a final ``label`` column.

    Floats are written with ``repr`` so that reloading gives identical values.
    """
    names = list(dataset.column_names or (f"x{j}" for j in range(dataset.d)))
    if dataset.labels is not None:
        names.append("label")
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(names)
        for i, row in enumerate(dataset.points):
            fields = [repr(float(v)) for v in row]
            if dataset.labels is not None:
                fields.append(str(dataset.labels[i]))
            writer.writerow(fields)


def load_prepared(path: str | Path, delimiter: str = ",") -> Dataset:
    """Load a file written by :func:`write_delimited`.

    The ``label`` column is optional; when present it is parsed as labels.
    """
    try:
        with Path(path).open(newline="") as fh:
            first = next(csv.reader(fh, delimiter=delimiter), None)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if first is None:
        raise DataError(f"{path} is empty")
    label_col = "label" if "label" in [f.strip() for f in first] else None
    return load_delimited(path, label_column=label_col, delimiter=delimiter, header=True)


def group_outlier_classes(
    dataset: Dataset,
    threshold_fraction: float = 0.05,
    outlier_classes: Sequence | None = None,
) -> tuple[Dataset, OutlierGroundTruth]:
    """Collapse multi-class labels into consistent (1) vs outlier (0).

    With more than two classes, a class is an outlier class when its count is
    below ``floor(threshold_fraction * n)``. With exactly two classes the
    smaller one is the outlier class. ``outlier_classes`` overrides both rules.
    """
    if dataset.labels is None:
        raise DataError("dataset has no labels to group")
    if not 0 < threshold_fraction < 1:
        raise ConfigError(f"threshold_fraction must be in (0, 1), got {threshold_fraction}")
    counts = Counter(dataset.labels.tolist())
    if len(counts) < 2:
        raise DataError("need at least two classes to define outliers")

    if outlier_classes is not None:
        wanted = {_parse_label(str(c)) if isinstance(c, str) else c for c in outlier_classes}
        unknown = wanted - set(counts)
        if unknown:
            raise ConfigError(f"outlier classes {sorted(map(str, unknown))} not present in labels")
        grouped = wanted
    elif len(counts) == 2:
        # On a count tie the class that sorts last is the outlier class.
        grouped = {sorted(counts, key=lambda c: (-counts[c], str(c)))[-1]}
    else:
        cutoff = math.floor(threshold_fraction * dataset.n)
        grouped = {c for c, cnt in counts.items() if cnt < cutoff}

    if grouped == set(counts):
        raise DataError("every class falls below the outlier threshold; no consistent class remains")
    if not grouped:
        logger.warning("no class is below the outlier threshold; all points are consistent")

    is_outlier = np.array([lab in grouped for lab in dataset.labels.tolist()])
    binary = np.where(is_outlier, OUTLIER_LABEL, CONSISTENT_LABEL)
    prepared = Dataset(
        dataset.points,
        ids=dataset.ids,
        labels=binary,
        column_names=dataset.column_names,
        notes=dataset.notes + (f"outlier classes: {sorted(map(str, grouped))}",),
    )
    truth = OutlierGroundTruth(frozenset(dataset.ids[is_outlier].tolist()), dataset.n)
    return prepared, truth


def generate_synthetic(
    n_consistent: int,
    n_outlier: int,
    d: int,
    seed: int,
    n_blobs: int = 3,
    blob_std: float = 0.5,
    center_range: float = 10.0,
) -> Dataset:
    """Tight Gaussian blobs (label 1) plus a uniform background (label 0).

    Blob centres are uniform in ``[-center_range, center_range]^d``. Outliers
    are uniform over the bounding box of the consistent points, widened by
    50%. Rows are shuffled; the result depends only on the arguments.
    """
    if n_consistent < 1 or n_outlier < 1 or d < 1 or n_blobs < 1:
        raise ConfigError("n_consistent, n_outlier, d and n_blobs must all be >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-center_range, center_range, size=(n_blobs, d))
    member = rng.integers(n_blobs, size=n_consistent)
    inliers = centers[member] + rng.normal(scale=blob_std, size=(n_consistent, d))

    lo, hi = inliers.min(axis=0), inliers.max(axis=0)
    mid = (lo + hi) / 2
    half = np.maximum((hi - lo) / 2, blob_std) * 1.5
    outliers = rng.uniform(mid - half, mid + half, size=(n_outlier, d))

    points = np.vstack([inliers, outliers])
    labels = np.r_[np.full(n_consistent, CONSISTENT_LABEL), np.full(n_outlier, OUTLIER_LABEL)]
    order = rng.permutation(len(points))
    return Dataset(
        points[order],
        labels=labels[order],
        column_names=tuple(f"x{j}" for j in range(d)),
    )
