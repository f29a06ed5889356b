import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qotto.errors import ConfigError, DataError, InconsistentCountsError, SingularMatrixError
from qotto.readout import (CorrectionMatrix, GmmModel, ShotSet, correction_matrix, corrected_populations,
                           count_in_ellipse, ellipse_mass, estimate_populations, fit_gmm, mahalanobis_sq,
                           overlap_model, read_json, read_shots_csv, rng_stream, sample_shots,
                           separated_model, write_json, write_shots_csv)


def binom_tol(p, n, k=4.0):
    return k * math.sqrt(p * (1 - p) / n)


@pytest.fixture(scope="module")
def overlap_matrix():
    return correction_matrix(overlap_model(), n_samples=200_000, seed=1)


def test_rng_streams_independent_and_reproducible():
    a = rng_stream(5, 1, 2).normal(size=4)
    assert np.array_equal(a, rng_stream(5, 1, 2).normal(size=4))
    assert not np.array_equal(a, rng_stream(5, 1, 3).normal(size=4))
    assert not np.array_equal(a, rng_stream(6, 1, 2).normal(size=4))
    with pytest.raises(ConfigError):
        rng_stream(-1)


def test_model_validation_and_round_trip():
    m = overlap_model()
    assert GmmModel.from_dict(m.to_dict()).to_dict() == m.to_dict()
    with pytest.raises(ConfigError):
        GmmModel([0.5, 0.6], m.means[:2], m.covariances[:2], ("a", "b"))
    with pytest.raises(ConfigError):
        GmmModel([1.0], [[0, 0]], [[[1.0, 0], [0, -1.0]]], ("a",))
    with pytest.raises(DataError):
        GmmModel.from_dict({"weights": [1.0]})


def test_sampling_examples():
    tight = GmmModel(np.full(4, 0.25), separated_model().means, np.stack([np.eye(2) * 1e-6] * 4))
    s = sample_shots([1, 0, 0, 0], tight, 1000, seed=3)
    assert np.abs(s.points).max() < 0.01 and np.all(s.true_labels == 0)
    a = sample_shots([0.5, 0.3, 0.15, 0.05], overlap_model(), 500, seed=9)
    b = sample_shots([0.5, 0.3, 0.15, 0.05], overlap_model(), 500, seed=9)
    assert np.array_equal(a.points, b.points)
    with pytest.raises(ConfigError):
        sample_shots([0.5, 0.5, 0.5, 0.0], overlap_model(), 10, seed=0)


@settings(max_examples=20)
@given(st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4), st.integers(0, 2**31))
def test_sampling_frequencies_binomial(raw, seed):
    p = np.array(raw) / sum(raw)
    n = 10_000
    s = sample_shots(p, overlap_model(), n, seed)
    freq = np.bincount(s.true_labels, minlength=4) / n
    assert np.all(np.abs(freq - p) <= [binom_tol(q, n) + 1e-12 for q in p])


def test_em_round_trip_separated():
    true = separated_model(spacing_sigma=8.0).with_weights([0.4, 0.3, 0.2, 0.1])
    shots = sample_shots(true.weights, true, 20_000, seed=4)
    calib = {lbl: mu for lbl, mu in zip(true.labels, true.means)}
    fit = fit_gmm(shots, calibration_means=calib)
    assert fit.converged and not fit.regularized
    assert fit.model.labels == true.labels
    assert np.max(np.abs(fit.model.means - true.means)) < 0.05
    assert np.max(np.abs(fit.model.weights - true.weights)) < 0.01
    assert np.all(np.diff(fit.log_likelihood) >= -1e-9 * abs(fit.log_likelihood[-1]))


@settings(max_examples=10)
@given(st.integers(0, 10_000))
def test_em_likelihood_monotone_overlapping(seed):
    m = overlap_model()
    fit = fit_gmm(sample_shots([0.4, 0.3, 0.2, 0.1], m, 2000, seed), max_iter=60)
    assert np.all(np.diff(fit.log_likelihood) >= -1e-9 * abs(fit.log_likelihood[-1]))


def test_em_single_component():
    x = rng_stream(0, 9).multivariate_normal([1.0, -2.0], [[2.0, 0.5], [0.5, 1.0]], size=5000)
    fit = fit_gmm(x, k=1)
    assert np.allclose(fit.model.means[0], x.mean(0), atol=1e-10)
    assert np.allclose(fit.model.covariances[0], np.cov(x.T, bias=True), atol=1e-10)
    with pytest.raises(DataError):
        fit_gmm(x[:300], k=4)


def test_em_collapse_is_regularized():
    x = np.concatenate([rng_stream(0, 8).normal(size=(500, 2)), np.tile([[5.0, 5.0]], (200, 1))])
    fit = fit_gmm(x, k=2)
    assert fit.regularized and fit.notes


def test_mahalanobis_and_counting():
    cov = np.array([[4.0, 0.0], [0.0, 1.0]])
    assert mahalanobis_sq([[2.0, 0.0], [0.0, 1.0]], np.zeros(2), cov) == pytest.approx([1.0, 1.0])
    m = separated_model()
    pts = rng_stream(1, 0).normal(size=(1000, 2))
    assert np.all(count_in_ellipse(pts, m, math.inf) == 1000)
    with pytest.raises(ConfigError):
        count_in_ellipse(pts, m, 0.0)


@pytest.mark.parametrize("r", [0.4, 1.0, 2.0])
def test_mass_law(r):
    n = 200_000
    m = overlap_model()
    pts = rng_stream(2, int(r * 10)).multivariate_normal(m.means[2], m.covariances[2], size=n)
    frac = count_in_ellipse(pts, m, r)[2] / n
    assert abs(frac - ellipse_mass(r)) < binom_tol(ellipse_mass(r), n)


def test_separated_matrix():
    cm = correction_matrix(separated_model(), r=1.0, n_samples=200_000, seed=0)
    assert np.allclose(np.diag(cm.M), 0.3935, atol=binom_tol(0.3935, 200_000))
    assert np.max(cm.M - np.diag(np.diag(cm.M))) < 1e-5
    assert cm.condition < 3


def test_matrix_properties(overlap_matrix):
    M = overlap_matrix.M
    assert np.all(M.sum(1) <= 1 + 1e-12) and np.all(M >= 0)
    again = correction_matrix(overlap_model(), n_samples=200_000, seed=1)
    assert np.array_equal(again.M, M)
    assert CorrectionMatrix.from_dict(overlap_matrix.to_dict()).M.tolist() == M.tolist()
    with pytest.raises(ConfigError):
        correction_matrix(overlap_model(), n_samples=1000)


def test_matrix_self_consistency(overlap_matrix):
    ref = correction_matrix(overlap_model(), n_samples=2_000_000, seed=7)
    tol = np.vectorize(lambda p: binom_tol(p, 200_000) + binom_tol(p, 2_000_000))(ref.M)
    assert np.all(np.abs(overlap_matrix.M - ref.M) <= tol + 1e-12)


def test_singular_matrix_error():
    m = GmmModel([0.5, 0.5], [[0, 0], [0, 0]], [np.eye(2)] * 2, ("a", "b"))
    with pytest.raises(SingularMatrixError, match="condition"):
        correction_matrix(m, n_samples=100_000)


@given(st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4), st.floats(1.0, 1e5))
def test_correction_identity(raw, total):
    M = overlap_model()
    cm = np.array([[0.39, 0.03, 0.0, 0.0], [0.02, 0.38, 0.02, 0.0], [0.0, 0.03, 0.39, 0.01],
                   [0.0, 0.0, 0.01, 0.39]])
    N = np.array(raw) * total
    out = corrected_populations(cm.T @ N, cm)
    assert np.allclose(out.corrected_counts, N, rtol=1e-12)
    assert np.allclose(out.populations, N / N.sum(), atol=1e-12)
    assert not out.clamped and M.k == 4


def test_correction_scaling_and_clamp():
    out = corrected_populations([10, 10, 10, 10], 0.3 * np.eye(4))
    assert np.allclose(out.populations, 0.25)
    cm = np.eye(2) * 0.4 + np.array([[0, 0.01], [0.01, 0]])
    clamped = corrected_populations([1000, 20], cm)
    assert clamped.clamped and clamped.populations.min() == 0.0
    with pytest.raises(InconsistentCountsError):
        corrected_populations([1000, 0], np.array([[0.4, 0.2], [0.0, 0.4]]))
    with pytest.raises(DataError):
        corrected_populations([0, 0], np.eye(2))
    with pytest.raises(DataError):
        corrected_populations([1, 2, 3], np.eye(2))


def test_end_to_end_single_run(overlap_matrix):
    p = np.array([0.5, 0.3, 0.15, 0.05])
    n = 10_000
    est = estimate_populations(sample_shots(p, overlap_model(), n, seed=11), overlap_model(), overlap_matrix)
    se = np.sqrt(p * (1 - p) / n)
    # overlap inflates the estimator variance well beyond binomial; 3x of a
    # per-component corrected-count standard error bounds a single draw
    inside = ellipse_mass(1.0)
    assert np.all(np.abs(est.populations - p) <= 3 * se / math.sqrt(inside) + 1e-3)


def test_csv_json_io(tmp_path):
    s = sample_shots([0.25] * 4, overlap_model(), 50, seed=0)
    write_shots_csv(tmp_path / "s.csv", s)
    assert np.array_equal(read_shots_csv(tmp_path / "s.csv").points, s.points)
    (tmp_path / "bad.csv").write_text("I,Q\n1,x\n")
    with pytest.raises(DataError):
        read_shots_csv(tmp_path / "bad.csv")
    (tmp_path / "empty.csv").write_text("I,Q\n")
    with pytest.raises(DataError):
        read_shots_csv(tmp_path / "empty.csv")
    write_json(tmp_path / "m.json", overlap_model().to_dict())
    assert read_json(tmp_path / "m.json")["labels"] == ["g", "e", "f", "hij"]
    with pytest.raises(DataError):
        read_json(tmp_path / "missing.json")
    with pytest.raises(DataError):
        ShotSet(np.zeros((0, 2)))
