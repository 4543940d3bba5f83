"""End-to-end consistent data selection: score, split, train on C, label I."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cdsod.dataset import CONSISTENT_LABEL, OUTLIER_LABEL, Dataset
from cdsod.ensemble import ConsistencyScores, EnsembleConfig, score_ensemble
from cdsod.errors import ConfigError, DataError, EmptyPoolError
from cdsod.occ_gaussian import DEFAULT_QUANTILE, DEFAULT_SHRINKAGE, fit_gaussian, gaussian_predict
from cdsod.occ_svm import (
    DEFAULT_GRAM_CACHE,
    DEFAULT_MAX_PASSES,
    DEFAULT_NU,
    DEFAULT_TOL,
    KernelParams,
    ocsvm_predict,
    ocsvm_train,
)
from cdsod.pool_split import PoolSplit, split_pools, suggest_threshold

SCALINGS = ("none", "maxabs", "zscore")
REPORT_HEADER = ("id", "avg_sim_score", "pool", "classifier_value", "final_label", "true_label")


@dataclass(frozen=True)
class Preset:
    k_schedule: tuple[int, ...]
    theta: float | None
    comparator: str
    description: str = ""


PRESETS = {
    "ionosphere": Preset((10, 15, 20, 25, 30, 50, 100, 150, 200, 300), 0.1, "ge", "351 radar returns, 'b' = outlier"),
    "arrhythmia": Preset((5, 6, 8, 10, 12, 14, 16, 20, 25, 30, 50, 100), 0.95, "gt", "452 ECG records, rare classes = outlier"),
    "musk": Preset(
        (10, 15, 20, 25, 30, 50, 100, 150, 200, 300, 500, 800, 1000, 1500),
        0.4,
        "gt",
        "6598 conformations, smaller class = outlier",
    ),
    # No fixed threshold: the widest score gap is used.
    "synthetic": Preset((2, 5, 10, 100, 500), None, "gt", "blobs plus uniform background"),
}


@dataclass(frozen=True)
class ClassifierConfig:
    kind: str = "svm"
    nu: float = DEFAULT_NU
    kernel: KernelParams = field(default_factory=KernelParams)
    tol: float = DEFAULT_TOL
    max_passes: int = DEFAULT_MAX_PASSES
    gram_cache: int = DEFAULT_GRAM_CACHE
    shrinkage: float = DEFAULT_SHRINKAGE
    ridge: float | None = None
    quantile: float = DEFAULT_QUANTILE
    # None picks per backend: "maxabs" for svm, "none" for gaussian.
    scaling: str | None = None
    score_consistent: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("svm", "gaussian"):
            raise ConfigError(f"classifier must be 'svm' or 'gaussian', got {self.kind!r}")
        if self.scaling is not None and self.scaling not in SCALINGS:
            raise ConfigError(f"scaling must be one of {SCALINGS}, got {self.scaling!r}")

    @property
    def effective_scaling(self) -> str:
        if self.scaling is not None:
            return self.scaling
        return "maxabs" if self.kind == "svm" else "none"

    def describe(self) -> str:
        scaling = self.effective_scaling
        if self.kind == "svm":
            k = self.kernel
            gamma = "1/d" if k.gamma is None else f"{k.gamma:g}"
            return (
                f"svm nu={self.nu:g} kernel={k.kind} degree={k.degree} gamma={gamma} "
                f"coef0={k.coef0:g} tol={self.tol:g} features={scaling}"
            )
        ridge = "auto" if self.ridge is None else f"{self.ridge:g}"
        return f"gaussian shrinkage={self.shrinkage:g} ridge={ridge} quantile={self.quantile:g} features={scaling}"


@dataclass(frozen=True)
class SplitEvaluation:
    consistent_pos: int
    consistent_neg: int
    inconsistent_pos: int
    inconsistent_neg: int

    @property
    def consistent_purity(self) -> float:
        total = self.consistent_pos + self.consistent_neg
        return self.consistent_pos / total if total else float("nan")

    @property
    def negative_capture(self) -> float:
        total = self.consistent_neg + self.inconsistent_neg
        return self.inconsistent_neg / total if total else float("nan")

    @property
    def positive_capture(self) -> float:
        total = self.consistent_pos + self.inconsistent_pos
        return self.consistent_pos / total if total else float("nan")

    def table(self, theta: float, comparator: str) -> str:
        above, below = (">=", "<") if comparator == "ge" else (">", "<=")
        lines = [
            f"{'Data Set':<18}{'Data Split':>11}{'# Positives':>13}{'# Negative':>12}",
            f"{'Consistent Pool':<18}{above + format(theta, 'g'):>11}{self.consistent_pos:>13}{self.consistent_neg:>12}",
            f"{'Inconsistent Pool':<18}{below + format(theta, 'g'):>11}{self.inconsistent_pos:>13}{self.inconsistent_neg:>12}",
        ]
        return "\n".join(lines)


@dataclass(frozen=True)
class Confusion:
    """Classifier outcome over the inconsistent pool; outliers are the positives here."""

    true_outliers_flagged: int
    false_positives: int
    missed_outliers: int
    inliers_kept: int

    @property
    def total(self) -> int:
        return self.true_outliers_flagged + self.false_positives + self.missed_outliers + self.inliers_kept


@dataclass(frozen=True)
class DetectionReport:
    theta: float
    comparator: str
    classifier: str
    ids: np.ndarray
    scores: np.ndarray
    consistent_mask: np.ndarray
    flagged: np.ndarray
    classifier_values: np.ndarray
    true_labels: np.ndarray | None = None
    split_counts: SplitEvaluation | None = None
    confusion: Confusion | None = None

    @property
    def n_inconsistent(self) -> int:
        return int((~self.consistent_mask).sum())

    def final_labels(self) -> np.ndarray:
        return np.where(self.flagged, OUTLIER_LABEL, CONSISTENT_LABEL)

    def to_text(self) -> str:
        n = len(self.ids)
        n_c = int(self.consistent_mask.sum())
        out = [
            "Consistent data selection report",
            f"points: {n}  consistent: {n_c}  inconsistent: {n - n_c}",
            f"threshold: {'>=' if self.comparator == 'ge' else '>'} {self.theta:.6g}",
            f"classifier: {self.classifier}",
            f"flagged outliers: {int(self.flagged.sum())}",
        ]
        if self.split_counts is not None:
            out += ["", "Pool distribution", self.split_counts.table(self.theta, self.comparator)]
        if self.confusion is not None:
            c = self.confusion
            out += [
                "",
                "Detection on the inconsistent pool",
                f"true outliers flagged: {c.true_outliers_flagged}",
                f"false positives:       {c.false_positives}",
                f"missed outliers:       {c.missed_outliers}",
                f"inliers kept:          {c.inliers_kept}",
            ]
        return "\n".join(out) + "\n"

    def to_rows(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        finals = self.final_labels()
        for pos in range(len(self.ids)):
            value = self.classifier_values[pos]
            writer.writerow(
                [
                    self.ids[pos],
                    repr(float(self.scores[pos])),
                    "consistent" if self.consistent_mask[pos] else "inconsistent",
                    "" if np.isnan(value) else repr(float(value)),
                    finals[pos],
                    "" if self.true_labels is None else self.true_labels[pos],
                ]
            )
        return buf.getvalue()

    def write(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "report.txt").write_text(self.to_text())
        (directory / "report.csv").write_text(self.to_rows())


def _binary_labels(labels) -> np.ndarray:
    if labels is None:
        raise DataError("ground-truth labels are required")
    labels = np.asarray(labels)
    bad = set(np.unique(labels).tolist()) - {CONSISTENT_LABEL, OUTLIER_LABEL}
    if bad:
        raise DataError(f"labels must be binary 1/0 (prepare the dataset first); found {sorted(map(str, bad))}")
    return labels.astype(int)


def evaluate_split(split: PoolSplit, labels) -> SplitEvaluation:
    """Positive/negative counts per pool, with labels aligned to ``split.ids``."""
    labels = _binary_labels(labels)
    if labels.shape != split.consistent_mask.shape:
        raise DataError("labels must align with the split")
    pos = labels == CONSISTENT_LABEL
    c = split.consistent_mask
    return SplitEvaluation(
        consistent_pos=int((c & pos).sum()),
        consistent_neg=int((c & ~pos).sum()),
        inconsistent_pos=int((~c & pos).sum()),
        inconsistent_neg=int((~c & ~pos).sum()),
    )


def _score_summary(scores: np.ndarray) -> str:
    q = np.quantile(scores, [0, 0.25, 0.5, 0.75, 1]) if len(scores) else []
    return "score quantiles (min/25/50/75/max): " + " ".join(f"{v:.4f}" for v in q)


def _scale(points: np.ndarray, mask: np.ndarray, scaling: str) -> np.ndarray:
    """Rescale features with statistics of the consistent rows only.

    ``maxabs`` divides by the largest magnitude and keeps the origin, which
    matters for polynomial kernels with ``coef0 = 0``; ``zscore`` also centres.
    """
    if scaling == "none":
        return points
    train = points[mask]
    if scaling == "maxabs":
        scale = np.abs(train).max(axis=0)
        scale[scale == 0] = 1.0
        return points / scale
    std = train.std(axis=0)
    std[std == 0] = 1.0
    return (points - train.mean(axis=0)) / std


def detect(
    dataset: Dataset,
    consistent_mask: np.ndarray,
    config: ClassifierConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Train on the masked rows, score the rest.

    Returns ``(flagged, values)`` aligned with ``dataset``; consistent rows are
    never flagged and carry NaN values unless ``config.score_consistent``.
    """
    mask = np.asarray(consistent_mask, dtype=bool)
    if mask.shape != (dataset.n,):
        raise DataError("consistent mask must align with the dataset")
    if not mask.any():
        raise EmptyPoolError("empty consistent pool: no point passes the threshold")
    points = _scale(dataset.points, mask, config.effective_scaling)
    train = points[mask]

    score_rows = np.ones(dataset.n, dtype=bool) if config.score_consistent else ~mask
    flagged = np.zeros(dataset.n, dtype=bool)
    values = np.full(dataset.n, np.nan)
    if config.kind == "svm":
        if len(train) < 2:
            raise EmptyPoolError("consistent pool has fewer than two points; cannot train")
        model = ocsvm_train(
            train,
            nu=config.nu,
            kernel=config.kernel,
            tol=config.tol,
            max_passes=config.max_passes,
            gram_cache=config.gram_cache,
        )
        if score_rows.any():
            out, vals = ocsvm_predict(points[score_rows], model)
            flagged[score_rows], values[score_rows] = out, vals
    else:
        if len(train) < 2:
            raise EmptyPoolError("consistent pool has fewer than two points; cannot train")
        model = fit_gaussian(train, shrinkage=config.shrinkage, ridge=config.ridge, quantile=config.quantile)
        if score_rows.any():
            out, vals = gaussian_predict(points[score_rows], model)
            flagged[score_rows], values[score_rows] = out, vals
    # Algorithm output only labels the inconsistent pool.
    flagged[mask] = False
    return flagged, values


def build_report(
    dataset: Dataset,
    scores: np.ndarray,
    split: PoolSplit,
    config: ClassifierConfig,
) -> DetectionReport:
    if not np.array_equal(split.ids, dataset.ids):
        raise DataError("split ids do not match dataset ids")
    try:
        flagged, values = detect(dataset, split.consistent_mask, config)
    except EmptyPoolError as exc:
        raise EmptyPoolError(f"{exc}; {_score_summary(np.asarray(scores))}") from None

    true_labels = split_counts = confusion = None
    if dataset.labels is not None:
        true_labels = _binary_labels(dataset.labels)
        split_counts = evaluate_split(split, true_labels)
        inc = ~split.consistent_mask
        outlier = true_labels == OUTLIER_LABEL
        confusion = Confusion(
            true_outliers_flagged=int((inc & outlier & flagged).sum()),
            false_positives=int((inc & ~outlier & flagged).sum()),
            missed_outliers=int((inc & outlier & ~flagged).sum()),
            inliers_kept=int((inc & ~outlier & ~flagged).sum()),
        )
    return DetectionReport(
        theta=split.threshold,
        comparator=split.comparator,
        classifier=config.describe(),
        ids=dataset.ids,
        scores=np.asarray(scores, dtype=float),
        consistent_mask=split.consistent_mask,
        flagged=flagged,
        classifier_values=values,
        true_labels=true_labels,
        split_counts=split_counts,
        confusion=confusion,
    )


def resolve_theta(scores: ConsistencyScores, theta: float | None) -> float:
    return suggest_threshold(scores) if theta is None else float(theta)


def run_pipeline(
    dataset: Dataset,
    ensemble_config: EnsembleConfig,
    theta: float | None,
    comparator: str = "gt",
    classifier_config: ClassifierConfig | None = None,
    threads: int | None = None,
) -> DetectionReport:
    """Score with the k-means ensemble, split at ``theta`` and label the inconsistent pool.

    ``theta=None`` places the threshold at the widest score gap.
    """
    classifier_config = classifier_config or ClassifierConfig()
    scores = score_ensemble(dataset, ensemble_config, threads=threads)
    split = split_pools(scores, resolve_theta(scores, theta), comparator)
    return build_report(dataset, scores.scores, split, classifier_config)
