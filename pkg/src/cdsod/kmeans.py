"""Lloyd's k-means with k-means++ seeding.

Distances are squared Euclidean in the raw feature space. Empty clusters are
repaired by moving the point farthest from its centroid into the empty
cluster, so every returned result has exactly ``k`` non-empty clusters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from cdsod.dataset import Dataset
from cdsod.errors import ConfigError

DEFAULT_MAX_ITER = 300
DEFAULT_TOL = 1e-6

# Rows of the distance matrix computed at once; bounds memory to ~64 MB.
_CHUNK_ELEMS = 8_000_000


@dataclass(frozen=True)
class ClusteringResult:
    k: int
    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float
    iterations_run: int
    seed: int
    inertia_history: tuple[float, ...] = ()

    def to_record(self) -> str:
        """JSON audit record; not a stable interchange format."""
        return json.dumps(
            {
                "k": self.k,
                "seed": self.seed,
                "inertia": self.inertia,
                "iterations_run": self.iterations_run,
                "centroids": self.centroids.tolist(),
            }
        )


def derive_seed(base_seed: int, k: int) -> int:
    """Per-run seed that depends only on ``(base_seed, k)``."""
    return int(np.random.SeedSequence([int(base_seed) & 0xFFFFFFFF, int(k)]).generate_state(1)[0])


def _as_points(data: Dataset | np.ndarray) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.points
    pts = np.asarray(data, dtype=float)
    if pts.ndim != 2:
        raise ConfigError(f"expected a 2-d point matrix, got shape {pts.shape}")
    return pts


def _sq_distances(points: np.ndarray, centroids: np.ndarray, point_sq: np.ndarray | None = None) -> np.ndarray:
    if point_sq is None:
        point_sq = np.einsum("ij,ij->i", points, points)
    cent_sq = np.einsum("ij,ij->i", centroids, centroids)
    dist = point_sq[:, None] - 2.0 * (points @ centroids.T) + cent_sq[None, :]
    np.maximum(dist, 0.0, out=dist)
    return dist


def _assign(points, centroids, point_sq=None) -> tuple[np.ndarray, np.ndarray]:
    n = len(points)
    labels = np.empty(n, dtype=np.intp)
    mind = np.empty(n)
    step = max(1, _CHUNK_ELEMS // max(1, len(centroids)))
    for start in range(0, n, step):
        sl = slice(start, start + step)
        dist = _sq_distances(points[sl], centroids, None if point_sq is None else point_sq[sl])
        labels[sl] = np.argmin(dist, axis=1)
        mind[sl] = dist[np.arange(len(dist)), labels[sl]]
    return labels, mind


def assign_nearest(points, centroids) -> np.ndarray:
    """Index of the nearest centroid for every point; ties go to the lowest index."""
    pts = _as_points(points)
    cents = np.asarray(centroids, dtype=float)
    if cents.ndim != 2 or cents.shape[1] != pts.shape[1]:
        raise ConfigError(
            f"centroid dimension {cents.shape[-1] if cents.ndim else '?'} does not match point dimension {pts.shape[1]}"
        )
    return _assign(pts, cents)[0]


def kmeans_plusplus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each new centre is drawn with probability proportional
    to its squared distance from the closest centre chosen so far."""
    n = len(points)
    chosen = [int(rng.integers(n))]
    point_sq = np.einsum("ij,ij->i", points, points)
    closest = _sq_distances(points, points[chosen], point_sq)[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # Remaining points coincide with chosen centres; pick an unused row.
            unused = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(unused))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        chosen.append(idx)
        np.minimum(closest, _sq_distances(points, points[idx : idx + 1], point_sq)[:, 0], out=closest)
    return points[chosen].copy()


def _repair_empty(labels: np.ndarray, mind: np.ndarray, k: int) -> None:
    counts = np.bincount(labels, minlength=k)
    empty = np.flatnonzero(counts == 0)
    if not len(empty):
        return
    order = np.argsort(-mind, kind="stable")
    it = iter(order)
    for c in empty:
        for idx in it:
            if counts[labels[idx]] > 1:
                counts[labels[idx]] -= 1
                labels[idx] = c
                counts[c] = 1
                mind[idx] = 0.0
                break


def _update(points: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    n = len(points)
    onehot = sp.csr_matrix((np.ones(n), (labels, np.arange(n))), shape=(k, n))
    counts = np.asarray(onehot.sum(axis=1)).ravel()
    return (onehot @ points) / counts[:, None]


def kmeans_fit(
    dataset: Dataset | np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> ClusteringResult:
    """Cluster ``dataset`` into ``k`` groups with Lloyd iterations.

    Stops when the relative centroid movement
    ``||C_new - C_old||_F / ||C_old||_F`` drops below ``tol`` or after
    ``max_iter`` iterations. The returned centroids are the means of the
    returned assignment.
    """
    points = _as_points(dataset)
    n = len(points)
    if not 1 <= k <= n:
        raise ConfigError(f"k must satisfy 1 <= k <= n={n}, got {k}")
    if max_iter < 1:
        raise ConfigError(f"max_iter must be >= 1, got {max_iter}")
    if tol < 0:
        raise ConfigError(f"tol must be >= 0, got {tol}")

    rng = np.random.default_rng(seed)
    centroids = kmeans_plusplus(points, k, rng)
    point_sq = np.einsum("ij,ij->i", points, points)
    history: list[float] = []
    labels = None
    iterations = 0
    for iterations in range(1, max_iter + 1):
        new_labels, mind = _assign(points, centroids, point_sq)
        _repair_empty(new_labels, mind, k)
        new_centroids = _update(points, new_labels, k)
        diff = points - new_centroids[new_labels]
        history.append(float(np.einsum("ij,ij->", diff, diff)))

        scale = np.linalg.norm(centroids)
        shift = np.linalg.norm(new_centroids - centroids)
        unchanged = labels is not None and np.array_equal(new_labels, labels)
        centroids, labels = new_centroids, new_labels
        if unchanged or shift <= tol * (scale if scale > 0 else 1.0):
            break

    return ClusteringResult(
        k=k,
        centroids=centroids,
        assignment=labels,
        inertia=history[-1],
        iterations_run=iterations,
        seed=int(seed),
        inertia_history=tuple(history),
    )
