"""Synthetic single-shot readout, mixture fitting and population correction.

Random streams: every draw uses numpy's PCG64 seeded through
``SeedSequence(seed, spawn_key=key)``. Keys used here:

* ``(0,)``                labels of ``sample_shots``
* ``(1, j)``              points of component ``j`` in ``sample_shots``
* ``(2, i, block)``       correction-matrix draws from component ``i``

Results therefore do not depend on how work is split across processes.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .errors import ConfigError, DataError, InconsistentCountsError, SingularMatrixError

LABELS = ("g", "e", "f", "hij")
DEFAULT_RADIUS = 1.0
TEXT_SCALE_RADIUS = 0.4  # alternative reading of the boundary scale
MATRIX_BLOCK = 250_000


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for stream ``key`` under a run seed."""
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def ellipse_mass(r: float) -> float:
    """Probability mass of a 2-D Gaussian inside Mahalanobis radius r."""
    return -math.expm1(-0.5 * r * r)


# --- model ------------------------------------------------------------------------

@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, 2)
    covariances: np.ndarray  # (k, 2, 2)
    labels: tuple[str, ...] = LABELS

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        cov = np.asarray(self.covariances, dtype=float)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)
        object.__setattr__(self, "labels", tuple(self.labels))
        k = w.size
        if mu.shape != (k, 2) or cov.shape != (k, 2, 2) or len(self.labels) != k:
            raise ConfigError("inconsistent mixture shapes")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError("mixture weights must be >= 0 and sum to 1")
        if np.max(np.abs(cov - cov.transpose(0, 2, 1))) > 1e-12 * max(1.0, np.abs(cov).max()):
            raise ConfigError("covariances must be symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ConfigError("covariances must be positive definite")

    @property
    def k(self) -> int:
        return self.weights.size

    def with_weights(self, weights) -> "GmmModel":
        return GmmModel(np.asarray(weights, dtype=float), self.means, self.covariances, self.labels)

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "weights": self.weights.tolist(),
                "means": self.means.tolist(), "covariances": self.covariances.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "GmmModel":
        try:
            return cls(np.array(data["weights"], dtype=float), np.array(data["means"], dtype=float),
                       np.array(data["covariances"], dtype=float), tuple(data["labels"]))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise DataError(f"malformed mixture model: {exc}") from exc


def _cov(sx, sy, rho=0.0):
    return np.array([[sx * sx, rho * sx * sy], [rho * sx * sy, sy * sy]])


def overlap_model() -> GmmModel:
    """Qualitative IQ layout: g, e, f along an arc with partial overlap, a broad hij blob."""
    means = np.array([[0.0, 0.0], [2.2, 1.0], [3.4, 2.9], [3.0, 5.0]])
    covs = np.stack([_cov(0.55, 0.5, 0.1), _cov(0.6, 0.55, 0.15),
                     _cov(0.6, 0.6, 0.1), _cov(0.9, 0.8, 0.0)])
    return GmmModel(np.full(4, 0.25), means, covs)


def separated_model(spacing_sigma: float = 20.0, sigma: float = 1.0) -> GmmModel:
    """Isotropic components on a square with the given centroid spacing."""
    d = spacing_sigma * sigma
    means = np.array([[0.0, 0.0], [d, 0.0], [0.0, d], [d, d]])
    return GmmModel(np.full(4, 0.25), means, np.stack([_cov(sigma, sigma)] * 4))


# --- sampling -----------------------------------------------------------------------

@dataclass(frozen=True)
class ShotSet:
    points: np.ndarray  # (n, 2)
    seed: int | None = None
    true_labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
            raise DataError("shots must be a non-empty (n, 2) array")
        if not np.all(np.isfinite(pts)):
            raise DataError("shots contain non-finite values")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]


def _check_populations(p, k):
    p = np.asarray(p, dtype=float)
    if p.shape != (k,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ConfigError(f"populations must be {k} non-negative numbers summing to 1")
    return p / p.sum()


def sample_shots(populations, model: GmmModel, n: int, seed: int) -> ShotSet:
    """Draw a component per shot from ``populations`` then a point from its Gaussian."""
    p = _check_populations(populations, model.k)
    if n <= 0:
        raise ConfigError("n must be positive")
    labels = rng_stream(seed, 0).choice(model.k, size=n, p=p)
    pts = np.empty((n, 2))
    for j in range(model.k):
        sel = labels == j
        m = int(sel.sum())
        if m:
            pts[sel] = rng_stream(seed, 1, j).multivariate_normal(
                model.means[j], model.covariances[j], size=m, method="cholesky")
    return ShotSet(pts, seed, labels)


# --- EM ------------------------------------------------------------------------------

@dataclass
class GmmFit:
    model: GmmModel
    log_likelihood: list[float]
    iterations: int
    converged: bool
    regularized: bool = False
    notes: list[str] = field(default_factory=list)


def _log_gauss(x, mean, cov):
    chol = np.linalg.cholesky(cov)
    z = np.linalg.solve(chol, (x - mean).T)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * np.sum(z * z, axis=0) - 0.5 * log_det - math.log(2.0 * math.pi)


def _log_resp(x, w, mu, cov):
    with np.errstate(divide="ignore"):
        lw = np.log(w)
    logp = np.stack([lw[j] + _log_gauss(x, mu[j], cov[j]) for j in range(w.size)], axis=1)
    norm = logsumexp(logp, axis=1)
    return logp - norm[:, None], float(norm.sum())


def fit_gmm(shots: ShotSet | np.ndarray, k: int = 4, init_means=None, calibration_means=None,
            max_iter: int = 500, tol: float = 1e-8, labels=None) -> GmmFit:
    """Expectation-maximization for a k-component 2-D Gaussian mixture.

    ``init_means`` seeds the component means (defaults to a deterministic
    farthest-point pick). ``calibration_means`` maps state labels to reference
    centroids: fitted components are matched to them by nearest centroid and
    any unmatched component takes the remaining label.
    """
    x = shots.points if isinstance(shots, ShotSet) else np.asarray(shots, dtype=float)
    n = x.shape[0]
    if n < 100 * k:
        raise DataError(f"need at least {100 * k} shots for a {k}-component fit, got {n}")
    scale = float(np.trace(np.cov(x.T))) / 2.0
    floor = 1e-10 * scale
    if init_means is None:
        mu = _farthest_point_init(x, k)
    else:
        mu = np.array(init_means, dtype=float).reshape(k, 2)
    # start covariances at the average within-cluster spread of a hard split
    d2 = ((x[:, None, :] - mu[None]) ** 2).sum(-1)
    hard = d2.argmin(1)
    cov = np.empty((k, 2, 2))
    w = np.empty(k)
    for j in range(k):
        pts = x[hard == j]
        w[j] = max(len(pts), 1) / n
        cov[j] = np.cov(pts.T) if len(pts) > 2 else np.eye(2) * scale
        cov[j] += np.eye(2) * floor
    w /= w.sum()

    history = []
    regularized = False
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        log_r, ll = _log_resp(x, w, mu, cov)
        history.append(ll)
        if len(history) > 1 and abs(history[-1] - history[-2]) <= tol * abs(history[-2]):
            converged = True
            break
        r = np.exp(log_r)
        nk = r.sum(0) + 1e-300
        w = nk / n
        mu = (r.T @ x) / nk[:, None]
        for j in range(k):
            dx = x - mu[j]
            c = (r[:, j, None] * dx).T @ dx / nk[j]
            c = 0.5 * (c + c.T)
            if np.linalg.eigvalsh(c).min() < floor:
                c = c + np.eye(2) * floor
                regularized = True
            cov[j] = c
    w = w / w.sum()
    names = _assign_labels(mu, calibration_means, labels, k)
    order = [names.index(lbl) for lbl in _ordered(names, calibration_means, labels, k)]
    model = GmmModel(w[order], mu[order], cov[order], tuple(names[i] for i in order))
    notes = ["covariance floor applied"] if regularized else []
    return GmmFit(model, history, it, converged, regularized, notes)


def _ordered(names, calibration_means, labels, k):
    if labels is not None:
        return list(labels)
    if k == 4:
        return list(LABELS)
    return sorted(names)


def _farthest_point_init(x, k):
    start = x.mean(0)
    chosen = [x[np.argmin(((x - start) ** 2).sum(1))]]
    d = ((x - chosen[0]) ** 2).sum(1)
    for _ in range(1, k):
        nxt = x[np.argmax(d)]
        chosen.append(nxt)
        d = np.minimum(d, ((x - nxt) ** 2).sum(1))
    return np.array(chosen)


def _assign_labels(mu, calibration_means, labels, k):
    if labels is None:
        labels = LABELS if k == 4 else tuple(f"c{j}" for j in range(k))
    labels = list(labels)
    if calibration_means is None:
        return labels[:k]
    ref_names = list(calibration_means)
    ref = np.array([calibration_means[s] for s in ref_names], dtype=float)
    if len(ref_names) > k:
        raise ConfigError("more calibration centroids than components")
    cost = ((mu[:, None, :] - ref[None]) ** 2).sum(-1)
    rows, cols = linear_sum_assignment(cost)
    names = [None] * k
    for i, j in zip(rows, cols):
        names[i] = ref_names[j]
    rest = [s for s in labels if s not in ref_names]
    for i in range(k):
        if names[i] is None:
            names[i] = rest.pop(0)
    return names


# --- counting and correction ---------------------------------------------------------

def mahalanobis_sq(points, mean, cov):
    chol = np.linalg.cholesky(cov)
    z = np.linalg.solve(chol, (np.asarray(points) - mean).T)
    return np.sum(z * z, axis=0)


def count_in_ellipse(shots: ShotSet | np.ndarray, model: GmmModel, r: float = DEFAULT_RADIUS) -> np.ndarray:
    """Shots inside each component's Mahalanobis-radius-r ellipse (overlaps count for each)."""
    if not r > 0:
        raise ConfigError("radius must be > 0")
    x = shots.points if isinstance(shots, ShotSet) else np.asarray(shots, dtype=float)
    if math.isinf(r):
        return np.full(model.k, x.shape[0], dtype=np.int64)
    return np.array([np.count_nonzero(mahalanobis_sq(x, model.means[j], model.covariances[j]) <= r * r)
                     for j in range(model.k)], dtype=np.int64)


@dataclass(frozen=True)
class CorrectionMatrix:
    M: np.ndarray  # M[i, j]: fraction of component-i draws inside ellipse j
    n_samples: int
    radius: float
    seed: int
    condition: float
    labels: tuple[str, ...] = LABELS

    def to_dict(self) -> dict:
        return {"M": self.M.tolist(), "n_samples": self.n_samples, "radius": self.radius,
                "seed": self.seed, "condition": self.condition, "labels": list(self.labels),
                "convention": "M[i][j] = fraction of draws from component i inside ellipse j"}

    @classmethod
    def from_dict(cls, data: dict) -> "CorrectionMatrix":
        try:
            M = np.array(data["M"], dtype=float)
            return cls(M, int(data["n_samples"]), float(data["radius"]), int(data["seed"]),
                       float(data.get("condition", np.linalg.cond(M))), tuple(data.get("labels", LABELS)))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed correction matrix: {exc}") from exc


def correction_matrix(model: GmmModel, r: float = DEFAULT_RADIUS, n_samples: int = 1_000_000,
                      seed: int = 0, max_condition: float = 1e8) -> CorrectionMatrix:
    """Monte-Carlo estimate of the ellipse-count response of each component."""
    if n_samples < 100_000:
        raise ConfigError("n_samples must be >= 1e5")
    k = model.k
    M = np.zeros((k, k))
    for i in range(k):
        hits = np.zeros(k, dtype=np.int64)
        done, block = 0, 0
        while done < n_samples:
            m = min(MATRIX_BLOCK, n_samples - done)
            pts = rng_stream(seed, 2, i, block).multivariate_normal(
                model.means[i], model.covariances[i], size=m, method="cholesky")
            hits += count_in_ellipse(pts, model, r)
            done += m
            block += 1
        M[i] = hits / n_samples
    cond = float(np.linalg.cond(M))
    if not np.isfinite(cond) or cond > max_condition:
        raise SingularMatrixError(f"correction matrix is singular (condition number {cond:.3g}); "
                                  f"row sums {M.sum(1).round(6).tolist()}")
    return CorrectionMatrix(M, n_samples, float(r), seed, cond, model.labels)


@dataclass(frozen=True)
class CorrectedPopulations:
    populations: np.ndarray
    corrected_counts: np.ndarray
    clamped: bool


def corrected_populations(counts, M, clamp_limit: float = 0.02) -> CorrectedPopulations:
    """Undo ellipse overlap and partial capture, then normalize.

    Expected counts are ``counts_j = sum_i N_i M[i, j]``, so the true counts
    solve ``M.T @ N = counts``.
    """
    M = M.M if isinstance(M, CorrectionMatrix) else np.asarray(M, dtype=float)
    c = np.asarray(counts, dtype=float)
    if c.shape != (M.shape[0],):
        raise DataError("count vector length does not match the correction matrix")
    if c.sum() <= 0:
        raise DataError("no shots inside any ellipse")
    try:
        N = np.linalg.solve(M.T, c)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"correction matrix is singular: {exc}") from exc
    total = N.sum()
    if not total > 0:
        raise InconsistentCountsError("corrected counts have non-positive total")
    p = N / total
    clamped = False
    if np.any(p < 0):
        if p.min() < -clamp_limit:
            raise InconsistentCountsError(
                f"corrected population {p.min():.4f} < -{clamp_limit}: counts inconsistent with the model")
        p = np.clip(p, 0.0, None)
        p /= p.sum()
        clamped = True
    return CorrectedPopulations(p, N, clamped)


def estimate_populations(shots, model: GmmModel, matrix: CorrectionMatrix) -> CorrectedPopulations:
    return corrected_populations(count_in_ellipse(shots, model, matrix.radius), matrix)


# --- I/O -------------------------------------------------------------------------------

def write_shots_csv(path: str | Path, shots: ShotSet) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["I", "Q"])
        for i, q in shots.points:
            out.writerow([repr(float(i)), repr(float(q))])


def read_shots_csv(path: str | Path) -> ShotSet:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read shots {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} contains no shots")
    try:
        pts = np.array([[float(r["I"]), float(r["Q"])] for r in rows])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: expected numeric columns I, Q ({exc})") from exc
    return ShotSet(pts)


def write_json(path: str | Path, data: dict) -> None:
    Path(path).write_text(json.dumps(data, indent=2))


def read_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read JSON {path}: {exc}") from exc
