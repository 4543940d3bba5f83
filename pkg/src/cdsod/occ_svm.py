"""nu one-class SVM trained with a two-variable SMO solver.

The dual solved here is::

    minimize    0.5 * a' K a
    subject to  0 <= a_i <= 1 / (nu * n),   sum(a) = 1

and the decision function is ``f(x) = sum_i a_i k(s_i, x) - rho``; points
with ``f(x) < 0`` are outliers. This is the usual nu formulation divided by
``nu * n``, so the stopping tolerance is applied on the same gradient scale
as the common toolkit (``tol=1e-3`` means the same thing there and here).
"""

from __future__ import annotations

import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from cdsod.dataset import Dataset
from cdsod.errors import ConfigError, ConvergenceError, DataError

logger = logging.getLogger(__name__)

KERNELS = ("polynomial", "rbf", "linear")
DEFAULT_NU = 0.5
DEFAULT_TOL = 1e-3
DEFAULT_MAX_PASSES = 1000
DEFAULT_GRAM_CACHE = 8192

_TAU = 1e-12
_STALL_LIMIT = 10
_PREDICT_CHUNK = 2048


@dataclass(frozen=True)
class KernelParams:
    kind: str = "polynomial"
    degree: int = 3
    gamma: float | None = None  # None -> 1 / d at training time
    coef0: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in KERNELS:
            raise ConfigError(f"kernel must be one of {KERNELS}, got {self.kind!r}")
        if self.degree < 1:
            raise ConfigError(f"degree must be >= 1, got {self.degree}")
        if self.gamma is not None and self.gamma <= 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")

    def resolved(self, d: int) -> KernelParams:
        return self if self.gamma is not None else replace(self, gamma=1.0 / d)

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Kernel matrix between the rows of ``x`` and the rows of ``y``."""
        gamma = self.gamma if self.gamma is not None else 1.0 / x.shape[1]
        if self.kind == "linear":
            return x @ y.T
        if self.kind == "polynomial":
            return (gamma * (x @ y.T) + self.coef0) ** self.degree
        sq = (
            np.einsum("ij,ij->i", x, x)[:, None]
            - 2.0 * (x @ y.T)
            + np.einsum("ij,ij->i", y, y)[None, :]
        )
        return np.exp(-gamma * np.maximum(sq, 0.0))

    def diagonal(self, x: np.ndarray) -> np.ndarray:
        gamma = self.gamma if self.gamma is not None else 1.0 / x.shape[1]
        if self.kind == "rbf":
            return np.ones(len(x))
        sq = np.einsum("ij,ij->i", x, x)
        if self.kind == "linear":
            return sq
        return (gamma * sq + self.coef0) ** self.degree


@dataclass(frozen=True)
class OcsvmModel:
    support_vectors: np.ndarray
    dual_coefficients: np.ndarray
    offset: float
    nu: float
    kernel: KernelParams
    n_train: int
    iterations: int = 0
    kkt_violation: float = 0.0

    def decision_function(self, points) -> np.ndarray:
        pts = points.points if isinstance(points, Dataset) else np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.support_vectors.shape[1]:
            raise ConfigError(
                f"point dimension {pts.shape[1]} does not match model dimension {self.support_vectors.shape[1]}"
            )
        out = np.empty(len(pts))
        for start in range(0, len(pts), _PREDICT_CHUNK):
            block = pts[start : start + _PREDICT_CHUNK]
            out[start : start + len(block)] = self.kernel(block, self.support_vectors) @ self.dual_coefficients
        return out - self.offset

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": "svm",
                "kernel": {
                    "kind": self.kernel.kind,
                    "degree": self.kernel.degree,
                    "gamma": self.kernel.gamma,
                    "coef0": self.kernel.coef0,
                },
                "nu": self.nu,
                "rho": self.offset,
                "n_train": self.n_train,
                "support_vectors": self.support_vectors.tolist(),
                "dual_coefficients": self.dual_coefficients.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> OcsvmModel:
        doc = json.loads(text)
        return cls(
            support_vectors=np.asarray(doc["support_vectors"], dtype=float),
            dual_coefficients=np.asarray(doc["dual_coefficients"], dtype=float),
            offset=float(doc["rho"]),
            nu=float(doc["nu"]),
            kernel=KernelParams(**doc["kernel"]),
            n_train=int(doc["n_train"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


class _GramRows:
    """Kernel rows on demand: a full matrix when small, otherwise an LRU row cache."""

    def __init__(self, points: np.ndarray, kernel: KernelParams, cache_cap: int):
        self.points = points
        self.kernel = kernel
        self.diag = kernel.diagonal(points)
        self.full = kernel(points, points) if len(points) <= cache_cap else None
        self._rows: OrderedDict[int, np.ndarray] = OrderedDict()
        self._max_rows = max(2, cache_cap * cache_cap // max(1, len(points)))

    def row(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[i]
        hit = self._rows.get(i)
        if hit is not None:
            self._rows.move_to_end(i)
            return hit
        value = self.kernel(self.points[i : i + 1], self.points)[0]
        self._rows[i] = value
        if len(self._rows) > self._max_rows:
            self._rows.popitem(last=False)
        return value

    def matvec(self, alpha: np.ndarray) -> np.ndarray:
        if self.full is not None:
            return self.full @ alpha
        out = np.zeros(len(self.points))
        for i in np.flatnonzero(alpha):
            out += alpha[i] * self.row(int(i))
        return out


def _initial_alpha(n: int, nu: float) -> np.ndarray:
    # Fill the first floor(nu*n) coordinates to the bound, remainder on the next one.
    scaled = np.zeros(n)
    budget = nu * n
    full = min(int(budget), n)
    scaled[:full] = 1.0
    if full < n:
        scaled[full] = budget - full
    return scaled / budget


def _rho(grad: np.ndarray, alpha: np.ndarray, upper: float) -> float:
    at_upper = alpha >= upper
    at_lower = alpha <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        return float(grad[free].mean())
    ub = grad[at_lower].min() if at_lower.any() else None
    lb = grad[at_upper].max() if at_upper.any() else None
    if ub is None:
        return float(lb)
    if lb is None:
        return float(ub)
    return float((ub + lb) / 2)


def dual_objective(alpha: np.ndarray, gram: np.ndarray) -> float:
    return 0.5 * float(alpha @ gram @ alpha)


def ocsvm_train(
    consistent: Dataset | np.ndarray,
    nu: float = DEFAULT_NU,
    kernel: KernelParams | None = None,
    tol: float = DEFAULT_TOL,
    max_passes: int = DEFAULT_MAX_PASSES,
    gram_cache: int = DEFAULT_GRAM_CACHE,
    seed: int = 0,
    return_alpha: bool = False,
):
    """Train on the consistent pool.

    Each iteration updates the maximal violating pair. ``max_passes`` caps the
    number of pair updates at ``max_passes * n``. ``seed`` only drives the
    random-pair fallback used after repeated zero-length steps.

    With ``return_alpha=True`` the full dual vector (one entry per training
    point) is returned alongside the model.
    """
    points = consistent.points if isinstance(consistent, Dataset) else np.asarray(consistent, dtype=float)
    if points.ndim != 2 or len(points) < 2:
        raise DataError("need at least two training points")
    if not 0 < nu <= 1:
        raise ConfigError(f"nu must be in (0, 1], got {nu}")
    if tol <= 0:
        raise ConfigError(f"tol must be > 0, got {tol}")
    if max_passes < 1:
        raise ConfigError(f"max_passes must be >= 1, got {max_passes}")
    kernel = (kernel or KernelParams()).resolved(points.shape[1])
    n = len(points)
    upper = 1.0 / (nu * n)
    gram = _GramRows(points, kernel, gram_cache)
    if np.any(gram.diag < 0):
        raise ConfigError(
            f"kernel is not positive semi-definite on the training set (min diagonal {gram.diag.min():.3g}); "
            "use coef0 >= 0"
        )

    alpha = _initial_alpha(n, nu)
    grad = gram.matvec(alpha)
    # Stopping gap in the unscaled toolkit convention.
    stop_gap = tol * upper
    rng = np.random.default_rng(seed)
    snap = 1e-12 * upper
    stalls = 0
    violation = np.inf
    max_iter = max_passes * n
    it = 0
    for it in range(1, max_iter + 1):
        up = alpha < upper
        low = alpha > 0
        g_up = np.where(up, grad, np.inf)
        g_low = np.where(low, grad, -np.inf)
        i = int(np.argmin(g_up))
        j = int(np.argmax(g_low))
        violation = g_low[j] - g_up[i]
        if violation < stop_gap:
            break
        if stalls >= _STALL_LIMIT:
            cand_i = np.flatnonzero(up & (grad <= g_low[j] - stop_gap))
            i = int(rng.choice(cand_i))
            cand_j = np.flatnonzero(low & (grad >= grad[i] + stop_gap))
            j = int(rng.choice(cand_j))
            stalls = 0

        row_i, row_j = gram.row(i), gram.row(j)
        curvature = gram.diag[i] + gram.diag[j] - 2.0 * row_i[j]
        if curvature <= 0:
            curvature = _TAU
        step = min((grad[j] - grad[i]) / curvature, upper - alpha[i], alpha[j])
        if step <= snap:
            stalls += 1
        else:
            stalls = 0
        alpha[i] += step
        alpha[j] -= step
        for t in (i, j):
            if alpha[t] < snap:
                alpha[t] = 0.0
            elif alpha[t] > upper - snap:
                alpha[t] = upper
        grad += step * (row_i - row_j)
    else:
        raise ConvergenceError(
            f"SMO did not converge in {max_iter} iterations; final KKT gap {violation * nu * n:.3g} "
            f"(tolerance {tol:g})"
        )

    rho = _rho(grad, alpha, upper)
    sv = alpha > 0
    model = OcsvmModel(
        support_vectors=points[sv].copy(),
        dual_coefficients=alpha[sv].copy(),
        offset=rho,
        nu=float(nu),
        kernel=kernel,
        n_train=n,
        iterations=it,
        kkt_violation=float(violation * nu * n),
    )
    logger.debug("ocsvm: n=%d nu=%g iterations=%d svs=%d rho=%.6g", n, nu, it, sv.sum(), rho)
    if return_alpha:
        return model, alpha
    return model


def ocsvm_predict(points, model: OcsvmModel) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(is_outlier, decision_values)``; outlier iff decision < 0."""
    values = model.decision_function(points)
    return values < 0, values
