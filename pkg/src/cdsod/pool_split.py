"""Threshold split into consistent/inconsistent pools and score histograms."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cdsod.ensemble import ConsistencyScores
from cdsod.errors import ConfigError, DataError

COMPARATORS = ("gt", "ge")
POOLS_HEADER = ("id", "avg_sim_score", "pool")
HISTOGRAM_HEADER = ("bucket_low", "bucket_high", "count_label1", "count_label0", "count_total")


@dataclass(frozen=True)
class PoolSplit:
    threshold: float
    comparator: str
    ids: np.ndarray
    consistent_mask: np.ndarray

    @property
    def consistent_ids(self) -> np.ndarray:
        return self.ids[self.consistent_mask]

    @property
    def inconsistent_ids(self) -> np.ndarray:
        return self.ids[~self.consistent_mask]

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class ScoreHistogram:
    bucket_edges: np.ndarray
    counts_per_label: dict
    totals: np.ndarray

    def rows(self):
        """``(low, high, count_label1, count_label0, total)`` from the top bucket down."""
        ones = self.counts_per_label.get(1, np.zeros_like(self.totals))
        zeros = self.counts_per_label.get(0, np.zeros_like(self.totals))
        for j in reversed(range(len(self.totals))):
            yield (
                float(self.bucket_edges[j]),
                float(self.bucket_edges[j + 1]),
                int(ones[j]),
                int(zeros[j]),
                int(self.totals[j]),
            )


def _check_comparator(comparator: str) -> None:
    if comparator not in COMPARATORS:
        raise ConfigError(f"comparator must be one of {COMPARATORS}, got {comparator!r}")


def split_pools(scores: ConsistencyScores, theta: float, comparator: str = "gt") -> PoolSplit:
    """Consistent pool = scores above ``theta`` (``gt``) or at/above it (``ge``)."""
    _check_comparator(comparator)
    if not -1.0 <= theta <= 1.0 or math.isnan(theta):
        raise ConfigError(f"theta must lie in [-1, 1], got {theta}")
    values = scores.scores
    mask = values > theta if comparator == "gt" else values >= theta
    return PoolSplit(float(theta), comparator, np.asarray(scores.ids), mask)


def suggest_threshold(scores: ConsistencyScores, min_pool_fraction: float = 0.05) -> float:
    """Heuristic threshold at the widest gap between adjacent sorted scores.

    Only gaps leaving at least ``min_pool_fraction`` of the points on each side
    are considered, so a lone extreme score cannot claim the split. Returns the
    gap midpoint, to be used with the ``gt`` comparator.
    """
    values = np.sort(scores.scores)
    n = len(values)
    if n < 2:
        raise DataError("need at least two scores to place a threshold")
    lo = max(1, math.ceil(min_pool_fraction * n))
    hi = min(n - 1, n - lo)
    if lo > hi:
        lo, hi = 1, n - 1
    gaps = values[lo : hi + 1] - values[lo - 1 : hi]
    j = lo - 1 + int(np.argmax(gaps))
    return float((values[j] + values[j + 1]) / 2)


def bucket_edges(bucket_width: float = 0.1) -> np.ndarray:
    """Ascending edges covering [-1, 1], anchored at 1; the lowest bucket may be narrower."""
    if not 0 < bucket_width <= 2:
        raise ConfigError(f"bucket_width must be in (0, 2], got {bucket_width}")
    n_buckets = math.ceil(round(2.0 / bucket_width, 9))
    edges = np.round(1.0 - bucket_width * np.arange(n_buckets + 1), 12)[::-1].copy()
    edges[0] = -1.0
    return edges


def bucket_histogram(scores: ConsistencyScores, labels=None, bucket_width: float = 0.1) -> ScoreHistogram:
    """Count scores per bucket ``(low, high]``; -1 falls in the lowest bucket.

    ``labels`` (aligned with ``scores``) splits the counts per label.
    """
    edges = bucket_edges(bucket_width)
    values = scores.scores
    idx = np.clip(np.searchsorted(edges, values, side="left") - 1, 0, len(edges) - 2)
    totals = np.bincount(idx, minlength=len(edges) - 1)
    per_label = {}
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != values.shape:
            raise DataError("labels must align with scores")
        for lab in np.unique(labels):
            key = lab.item() if hasattr(lab, "item") else lab
            per_label[key] = np.bincount(idx[labels == lab], minlength=len(edges) - 1)
    return ScoreHistogram(edges, per_label, totals)


def write_pools(split: PoolSplit, scores: ConsistencyScores, path: str | Path) -> None:
    """One row per point in score order: id, score, ``consistent``/``inconsistent``."""
    if not np.array_equal(np.asarray(scores.ids), split.ids):
        raise DataError("split and scores refer to different ids")
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(POOLS_HEADER)
        for pos in scores.descending_order():
            pool = "consistent" if split.consistent_mask[pos] else "inconsistent"
            writer.writerow([split.ids[pos], repr(float(scores.scores[pos])), pool])


def read_pools(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(ids, scores, consistent_mask)`` from a pools file."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != POOLS_HEADER:
            raise DataError(f"{path}: expected header {','.join(POOLS_HEADER)}, got {','.join(header)}")
        rows = [r for r in reader if r]
    try:
        ids = np.array([int(r[0]) for r in rows])
        values = np.array([float(r[1]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed pool row: {exc}") from exc
    pools = [r[2] for r in rows]
    if set(pools) - {"consistent", "inconsistent"}:
        raise DataError(f"{path}: unknown pool names {sorted(set(pools))}")
    return ids, values, np.array([p == "consistent" for p in pools])


def write_histogram(hist: ScoreHistogram, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTOGRAM_HEADER)
        for low, high, c1, c0, tot in hist.rows():
            writer.writerow([f"{low:.6g}", f"{high:.6g}", c1, c0, tot])
