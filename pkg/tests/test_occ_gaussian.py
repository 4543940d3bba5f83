import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from cdsod.errors import ConfigError, DataError, SingularCovarianceError
from cdsod.occ_gaussian import GaussianModel, fit_gaussian, gaussian_predict, mahalanobis_distance
from oracles import gauss_jordan_inverse, mahalanobis


def _model(mean, cov, threshold=1.0):
    cov = np.asarray(cov, dtype=float)
    return GaussianModel(np.asarray(mean, float), cov, np.linalg.inv(cov), threshold, 0.0, 0.0, 0.975)


def test_square_example():
    m = fit_gaussian(np.array([[0, 0], [2, 0], [0, 2], [2, 2]], float), shrinkage=0, ridge=0)
    np.testing.assert_allclose(m.mean, [1, 1])
    np.testing.assert_allclose(m.covariance, np.diag([4 / 3, 4 / 3]), atol=1e-15)


def test_full_shrinkage_is_diagonal(rng):
    pts = rng.normal(size=(30, 4)) @ rng.normal(size=(4, 4))
    m = fit_gaussian(pts, shrinkage=1.0, ridge=0)
    assert np.count_nonzero(m.covariance - np.diag(np.diag(m.covariance))) == 0


def test_mahalanobis_examples():
    assert mahalanobis_distance([2.0, 1.0], _model([0, 0], np.diag([2.0, 1.0]))) == pytest.approx(np.sqrt(3), abs=1e-15)
    m = _model([1, 2, 3], np.eye(3))
    assert mahalanobis_distance([1, 2, 3], m) == 0.0
    assert mahalanobis_distance([4, 6, 3], m) == pytest.approx(5.0)
    with pytest.raises(ConfigError):
        mahalanobis_distance([1, 2], m)


def test_mahalanobis_matches_direct_arithmetic():
    rng = np.random.default_rng(77)
    for _ in range(200):
        d = int(rng.integers(1, 6))
        pts = rng.normal(size=(d + 5, d)) @ rng.normal(size=(d, d)) + rng.normal(size=d)
        m = fit_gaussian(pts, shrinkage=float(rng.uniform(0, 1)))
        x = rng.normal(size=d) * 3
        assert abs(mahalanobis_distance(x, m) - mahalanobis(x, m.mean, m.covariance)) <= 1e-10


def test_precision_matches_elimination_inverse():
    rng = np.random.default_rng(5)
    for d in range(1, 11):
        pts = rng.normal(size=(d + 3, d))
        m = fit_gaussian(pts)
        np.testing.assert_allclose(m.precision, gauss_jordan_inverse(m.covariance), atol=1e-8)
        np.testing.assert_allclose(m.precision @ m.covariance, np.eye(d), atol=1e-6)
        np.testing.assert_allclose(m.covariance, m.covariance.T, atol=1e-9)
        assert m.distance_threshold > 0


@given(st.integers(0, 2**31 - 1))
def test_affine_invariance(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(12, 2))
    a = rng.normal(size=(2, 2))
    if abs(np.linalg.det(a)) < 0.1:
        a += 2 * np.eye(2)
    b = rng.normal(size=2) * 5
    x = rng.normal(size=2) * 2
    m = fit_gaussian(pts, shrinkage=0, ridge=0)
    mt = fit_gaussian(pts @ a.T + b, shrinkage=0, ridge=0)
    assert mahalanobis_distance(a @ x + b, mt) == pytest.approx(mahalanobis_distance(x, m), rel=1e-6, abs=1e-6)


def test_wide_data_fits_with_regularization(rng):
    pts = rng.normal(size=(20, 60))
    with pytest.raises(SingularCovarianceError):
        fit_gaussian(pts, shrinkage=0, ridge=0)
    m = fit_gaussian(pts)
    assert np.isfinite(m.precision).all()
    assert m.ridge > 0


def test_threshold_and_predict(rng):
    pts = rng.normal(size=(200, 3))
    m = fit_gaussian(pts, quantile=0.9)
    assert m.distance_threshold == pytest.approx(np.sqrt(stats.chi2.ppf(0.9, 3)))
    flagged, dist = gaussian_predict(np.vstack([m.mean, m.mean + 100]), m)
    assert flagged.tolist() == [False, True]
    assert dist[0] == 0.0
    forced = GaussianModel(m.mean, m.covariance, m.precision, 0.0, 0.1, m.ridge, 0.9)
    assert gaussian_predict(pts, forced)[0].all()
    never = fit_gaussian(pts, quantile=1.0)
    assert not gaussian_predict(pts * 1e6, never)[0].any()


def test_validation(rng):
    pts = rng.normal(size=(5, 2))
    with pytest.raises(DataError):
        fit_gaussian(pts[:1])
    for kwargs in ({"shrinkage": 1.5}, {"ridge": -1.0}, {"quantile": 0.0}, {"quantile": 1.2}):
        with pytest.raises(ConfigError):
            fit_gaussian(pts, **kwargs)


def test_json_round_trip(tmp_path, rng):
    m = fit_gaussian(rng.normal(size=(40, 3)))
    m.save(tmp_path / "g.json")
    back = GaussianModel.from_json((tmp_path / "g.json").read_text())
    x = rng.normal(size=(5, 3))
    np.testing.assert_allclose(gaussian_predict(x, back)[1], gaussian_predict(x, m)[1], rtol=1e-12)
