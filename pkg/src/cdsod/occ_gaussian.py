"""Gaussian one-class detector scored by Mahalanobis distance.

The covariance is shrunk toward its diagonal and ridged before factorization
so that pools with fewer points than dimensions still give an invertible
matrix. Points farther than ``sqrt(chi2_d(quantile))`` from the mean are
flagged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg, stats

from cdsod.dataset import Dataset
from cdsod.errors import ConfigError, DataError, SingularCovarianceError

DEFAULT_SHRINKAGE = 0.1
DEFAULT_QUANTILE = 0.975
RIDGE_SCALE = 1e-6


@dataclass(frozen=True)
class GaussianModel:
    mean: np.ndarray
    covariance: np.ndarray
    precision: np.ndarray
    distance_threshold: float
    shrinkage: float
    ridge: float
    quantile: float

    @property
    def d(self) -> int:
        return len(self.mean)

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": "gaussian",
                "mean": self.mean.tolist(),
                "covariance": self.covariance.tolist(),
                "shrinkage": self.shrinkage,
                "ridge": self.ridge,
                "quantile": self.quantile,
                "distance_threshold": self.distance_threshold,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> GaussianModel:
        doc = json.loads(text)
        cov = np.asarray(doc["covariance"], dtype=float)
        return cls(
            mean=np.asarray(doc["mean"], dtype=float),
            covariance=cov,
            precision=_spd_inverse(cov),
            distance_threshold=float(doc["distance_threshold"]),
            shrinkage=float(doc["shrinkage"]),
            ridge=float(doc["ridge"]),
            quantile=float(doc["quantile"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


def _spd_inverse(cov: np.ndarray) -> np.ndarray:
    try:
        factor = linalg.cho_factor(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularCovarianceError(
            f"covariance is not positive definite (min eigenvalue {np.linalg.eigvalsh(cov).min():.3g}); "
            "increase the shrinkage or the ridge"
        ) from exc
    precision = linalg.cho_solve(factor, np.eye(len(cov)))
    return (precision + precision.T) / 2


def regularized_covariance(points: np.ndarray, shrinkage: float, ridge: float | None) -> tuple[np.ndarray, float]:
    """``(1 - shrinkage) S + shrinkage diag(S) + ridge I`` with ``S`` the sample covariance.

    ``ridge=None`` uses ``1e-6 * trace(S) / d``. Returns the matrix and the ridge used.
    """
    sample = np.atleast_2d(np.cov(points, rowvar=False))
    d = len(sample)
    if ridge is None:
        ridge = RIDGE_SCALE * float(np.trace(sample)) / d
    cov = (1.0 - shrinkage) * sample + shrinkage * np.diag(np.diag(sample)) + ridge * np.eye(d)
    return (cov + cov.T) / 2, float(ridge)


def fit_gaussian(
    consistent: Dataset | np.ndarray,
    shrinkage: float = DEFAULT_SHRINKAGE,
    ridge: float | None = None,
    quantile: float = DEFAULT_QUANTILE,
) -> GaussianModel:
    """Fit mean and regularized covariance on the consistent pool.

    ``quantile=1`` gives an infinite threshold (nothing is flagged).
    """
    points = consistent.points if isinstance(consistent, Dataset) else np.asarray(consistent, dtype=float)
    if points.ndim != 2 or len(points) < 2:
        raise DataError("need at least two points to fit a Gaussian")
    if not 0.0 <= shrinkage <= 1.0:
        raise ConfigError(f"shrinkage must be in [0, 1], got {shrinkage}")
    if ridge is not None and ridge < 0:
        raise ConfigError(f"ridge must be >= 0, got {ridge}")
    if not 0.0 < quantile <= 1.0:
        raise ConfigError(f"quantile must be in (0, 1], got {quantile}")

    cov, ridge = regularized_covariance(points, shrinkage, ridge)
    return GaussianModel(
        mean=points.mean(axis=0),
        covariance=cov,
        precision=_spd_inverse(cov),
        distance_threshold=float(np.sqrt(stats.chi2.ppf(quantile, df=points.shape[1]))),
        shrinkage=float(shrinkage),
        ridge=ridge,
        quantile=float(quantile),
    )


def _distances(points: np.ndarray, model: GaussianModel) -> np.ndarray:
    if points.shape[-1] != model.d:
        raise ConfigError(f"point dimension {points.shape[-1]} does not match model dimension {model.d}")
    centered = points - model.mean
    sq = np.einsum("ij,jk,ik->i", centered, model.precision, centered)
    return np.sqrt(np.maximum(sq, 0.0))


def mahalanobis_distance(x, model: GaussianModel) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ConfigError("expected a single d-vector")
    return float(_distances(x[None, :], model)[0])


def gaussian_predict(points, model: GaussianModel) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(is_outlier, distances)``; outlier iff distance > threshold."""
    pts = points.points if isinstance(points, Dataset) else np.atleast_2d(np.asarray(points, dtype=float))
    dist = _distances(pts, model)
    return dist > model.distance_threshold, dist
