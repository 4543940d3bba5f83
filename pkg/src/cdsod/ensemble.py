"""Consistency scoring over an ensemble of k-means runs.

Every point belongs to one cluster per run. Its score is the mean cosine
similarity over all unordered pairs of those cluster centroids, taken as
vectors in the raw feature space. Scores near 1 mean the point sits in the
same direction whatever ``k`` is.
"""

from __future__ import annotations

import csv
import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from cdsod.dataset import Dataset
from cdsod.errors import ConfigError, DataError
from cdsod.kmeans import DEFAULT_MAX_ITER, DEFAULT_TOL, ClusteringResult, derive_seed, kmeans_fit

SCORES_HEADER = ("id", "avg_sim_score")


@dataclass(frozen=True)
class EnsembleConfig:
    k_schedule: tuple[int, ...]
    base_seed: int = 0
    max_iter: int = DEFAULT_MAX_ITER
    tol: float = DEFAULT_TOL

    def __post_init__(self) -> None:
        sched = tuple(int(k) for k in self.k_schedule)
        object.__setattr__(self, "k_schedule", sched)
        if len(sched) < 2:
            raise ConfigError("k schedule needs at least two entries")
        if len(set(sched)) != len(sched):
            raise ConfigError(f"k schedule has duplicates: {sched}")
        if min(sched) < 2:
            raise ConfigError(f"every k must be >= 2, got {sched}")

    def validate_for(self, n: int) -> None:
        if max(self.k_schedule) > n:
            raise ConfigError(f"largest k {max(self.k_schedule)} exceeds n={n}")


@dataclass(frozen=True)
class ConsistencyScores:
    ids: np.ndarray
    scores: np.ndarray
    k_schedule: tuple[int, ...] = ()
    runs: tuple[ClusteringResult, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self) -> None:
        ids = np.asarray(self.ids)
        scores = np.asarray(self.scores, dtype=float)
        if ids.shape != scores.shape or scores.ndim != 1:
            raise DataError("ids and scores must be 1-d arrays of equal length")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return len(self.scores)

    def descending_order(self) -> np.ndarray:
        """Positions sorted by score, highest first; ties keep input order."""
        return np.argsort(-self.scores, kind="stable")

    def centroids_for(self, position: int) -> np.ndarray:
        """The ``len(k_schedule) x d`` centroids a point was assigned to."""
        if not self.runs:
            raise DataError("clustering runs were not retained")
        return np.stack([r.centroids[r.assignment[position]] for r in self.runs])


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between ``u`` and ``v``.

    A zero vector scores 0 against any non-zero vector and 1 against another
    zero vector.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ConfigError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 1.0 if nu == nv else 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _unit_rows(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(vectors, axis=1)
    zero = norms == 0
    unit = vectors / np.where(zero, 1.0, norms)[:, None]
    return unit, zero


def avg_sim_score(centroids) -> float:
    """Mean pairwise cosine similarity over all ``C(k, 2)`` centroid pairs."""
    cents = np.asarray(centroids, dtype=float)
    if cents.ndim != 2 or len(cents) < 2:
        raise ConfigError("need at least two centroids")
    unit, zero = _unit_rows(cents)
    gram = np.clip(unit @ unit.T, -1.0, 1.0)
    gram[np.ix_(zero, zero)] = 1.0
    iu = np.triu_indices(len(cents), 1)
    return float(gram[iu].mean())


def _pairwise_point_scores(runs: Sequence[ClusteringResult]) -> np.ndarray:
    """Per-point mean centroid cosine, accumulated one run pair at a time.

    For runs ``a`` and ``b`` the ``k_a x k_b`` cosine table between their
    centroid sets is indexed by each point's two cluster labels, which avoids
    materializing an ``n x |K| x d`` array.
    """
    units = [_unit_rows(r.centroids) for r in runs]
    n = len(runs[0].assignment)
    total = np.zeros(n)
    for a, b in itertools.combinations(range(len(runs)), 2):
        (ua, za), (ub, zb) = units[a], units[b]
        table = np.clip(ua @ ub.T, -1.0, 1.0)
        table[np.ix_(za, zb)] = 1.0
        total += table[runs[a].assignment, runs[b].assignment]
    return total / math.comb(len(runs), 2)


def run_ensemble(
    dataset: Dataset | np.ndarray,
    config: EnsembleConfig,
    threads: int | None = None,
) -> tuple[ClusteringResult, ...]:
    """Fit one k-means model per schedule entry, concurrently.

    Results come back in schedule order. Each run is seeded from
    ``(config.base_seed, k)`` so results don't depend on schedule order
    or thread count.
    """
    points = dataset.points if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=float)
    config.validate_for(len(points))
    workers = threads or os.cpu_count() or 1

    def fit(k: int) -> ClusteringResult:
        return kmeans_fit(points, k, seed=derive_seed(config.base_seed, k), max_iter=config.max_iter, tol=config.tol)

    if workers == 1:
        return tuple(fit(k) for k in config.k_schedule)
    # Largest k first keeps the long runs from trailing at the end.
    order = sorted(config.k_schedule, reverse=True)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        done = dict(zip(order, pool.map(fit, order)))
    return tuple(done[k] for k in config.k_schedule)


def score_ensemble(
    dataset: Dataset,
    config: EnsembleConfig,
    threads: int | None = None,
    keep_runs: bool = False,
) -> ConsistencyScores:
    runs = run_ensemble(dataset, config, threads=threads)
    scores = _pairwise_point_scores(runs)
    return ConsistencyScores(
        ids=dataset.ids,
        scores=scores,
        k_schedule=config.k_schedule,
        runs=runs if keep_runs else (),
    )


def write_scores(scores: ConsistencyScores, path: str | Path) -> None:
    """Write ``id,avg_sim_score`` rows, highest score first."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCORES_HEADER)
        for pos in scores.descending_order():
            writer.writerow([scores.ids[pos], repr(float(scores.scores[pos]))])


def read_scores(path: str | Path) -> ConsistencyScores:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != SCORES_HEADER:
            raise DataError(f"{path}: expected header {','.join(SCORES_HEADER)}, got {','.join(header)}")
        rows = [r for r in reader if r]
    try:
        ids = np.array([int(r[0]) for r in rows])
        values = np.array([float(r[1]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed score row: {exc}") from exc
    return ConsistencyScores(ids=ids, scores=values)
