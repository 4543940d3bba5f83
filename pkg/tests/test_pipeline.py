import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdsod.dataset import Dataset, generate_synthetic
from cdsod.ensemble import ConsistencyScores, EnsembleConfig, score_ensemble
from cdsod.errors import ConfigError, DataError, EmptyPoolError
from cdsod.pipeline import (
    PRESETS,
    ClassifierConfig,
    build_report,
    detect,
    evaluate_split,
    run_pipeline,
)
from cdsod.pool_split import split_pools

SYNTH_SCHEDULE = PRESETS["synthetic"].k_schedule


def _small(seed=0):
    return generate_synthetic(200, 20, 4, seed=seed)


def test_presets_hold_published_schedules():
    assert PRESETS["ionosphere"].k_schedule == (10, 15, 20, 25, 30, 50, 100, 150, 200, 300)
    assert (PRESETS["ionosphere"].theta, PRESETS["ionosphere"].comparator) == (0.1, "ge")
    assert PRESETS["arrhythmia"].k_schedule == (5, 6, 8, 10, 12, 14, 16, 20, 25, 30, 50, 100)
    assert (PRESETS["arrhythmia"].theta, PRESETS["arrhythmia"].comparator) == (0.95, "gt")
    assert PRESETS["musk"].k_schedule == (10, 15, 20, 25, 30, 50, 100, 150, 200, 300, 500, 800, 1000, 1500)
    assert (PRESETS["musk"].theta, PRESETS["musk"].comparator) == (0.4, "gt")
    assert SYNTH_SCHEDULE == (2, 5, 10, 100, 500)


def test_classifier_config_validation():
    with pytest.raises(ConfigError):
        ClassifierConfig(kind="forest")
    with pytest.raises(ConfigError):
        ClassifierConfig(scaling="log")
    assert ClassifierConfig().effective_scaling == "maxabs"
    assert ClassifierConfig(kind="gaussian").effective_scaling == "none"


def test_evaluate_split_all_positive():
    s = ConsistencyScores(ids=np.arange(4), scores=np.array([0.1, 0.5, 0.9, 0.3]))
    ev = evaluate_split(split_pools(s, 0.4), np.ones(4, dtype=int))
    assert (ev.consistent_neg, ev.inconsistent_neg) == (0, 0)
    assert (ev.consistent_pos, ev.inconsistent_pos) == (2, 2)
    with pytest.raises(DataError):
        evaluate_split(split_pools(s, 0.4), None)
    with pytest.raises(DataError):
        evaluate_split(split_pools(s, 0.4), ["g", "b", "g", "g"])


def test_theta_above_max_is_empty_pool_error():
    ds = _small()
    with pytest.raises(EmptyPoolError, match="empty consistent pool.*score quantiles"):
        run_pipeline(ds, EnsembleConfig((2, 5)), theta=1.0, comparator="gt")


def test_consistent_pool_never_flagged():
    ds = _small()
    mask = np.zeros(ds.n, dtype=bool)
    mask[: ds.n // 2] = True
    for cfg in (ClassifierConfig(), ClassifierConfig(kind="gaussian"), ClassifierConfig(score_consistent=True)):
        flagged, values = detect(ds, mask, cfg)
        assert not flagged[mask].any()
        assert np.isfinite(values[~mask]).all()
        assert np.isnan(values[mask]).all() != cfg.score_consistent


@settings(max_examples=15)
@given(st.integers(0, 1000), st.floats(-0.2, 0.99), st.sampled_from(["svm", "gaussian"]))
def test_report_conservation(seed, theta, kind):
    ds = generate_synthetic(60, 8, 3, seed=seed)
    scores = score_ensemble(ds, EnsembleConfig((2, 5, 10), base_seed=seed))
    split = split_pools(scores, theta, "gt")
    if split.consistent_mask.sum() < 2:
        return
    report = build_report(ds, scores.scores, split, ClassifierConfig(kind=kind))
    ev, conf = report.split_counts, report.confusion
    labels = ds.labels
    assert ev.consistent_pos + ev.inconsistent_pos == int((labels == 1).sum())
    assert ev.consistent_neg + ev.inconsistent_neg == int((labels == 0).sum())
    assert conf.true_outliers_flagged + conf.missed_outliers == ev.inconsistent_neg
    assert conf.false_positives + conf.inliers_kept == ev.inconsistent_pos
    assert conf.total == report.n_inconsistent


def test_gaussian_quantile_one_flags_nothing():
    ds = _small(3)
    scores = score_ensemble(ds, EnsembleConfig((2, 5, 10)))
    split = split_pools(scores, float(np.median(scores.scores)), "gt")
    flagged = []
    for q in (0.5, 0.9, 0.99, 0.999999, 1.0):
        report = build_report(ds, scores.scores, split, ClassifierConfig(kind="gaussian", quantile=q))
        flagged.append(int(report.flagged.sum()))
    assert flagged == sorted(flagged, reverse=True)
    assert flagged[-1] == 0


def test_pipeline_determinism():
    ds = _small(5)
    cfg = EnsembleConfig((2, 5, 10, 50), base_seed=2)
    a = run_pipeline(ds, cfg, theta=None, threads=1)
    b = run_pipeline(ds, cfg, theta=None, threads=3)
    assert a.to_rows() == b.to_rows()
    assert a.to_text() == b.to_text()


def test_report_files(tmp_path):
    ds = _small(1)
    report = run_pipeline(ds, EnsembleConfig((2, 5, 10)), theta=None)
    report.write(tmp_path)
    rows = (tmp_path / "report.csv").read_text().splitlines()
    assert rows[0] == "id,avg_sim_score,pool,classifier_value,final_label,true_label"
    assert len(rows) == ds.n + 1
    text = (tmp_path / "report.txt").read_text()
    assert "Consistent Pool" in text and "true outliers flagged" in text


def test_unlabelled_dataset_report():
    ds = Dataset(generate_synthetic(100, 10, 3, seed=0).points)
    report = run_pipeline(ds, EnsembleConfig((2, 5)), theta=None)
    assert report.confusion is None and report.split_counts is None
    assert report.to_rows().splitlines()[1].endswith(",")


@pytest.mark.parametrize("seed", range(3))
def test_synthetic_pipeline_flags_most_outliers(seed):
    ds = generate_synthetic(1000, 70, 10, seed=seed)
    report = run_pipeline(ds, EnsembleConfig(SYNTH_SCHEDULE, base_seed=seed), theta=None)
    outliers = ds.labels == 0
    assert report.flagged[outliers].mean() >= 0.9
