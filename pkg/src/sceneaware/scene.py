"""Target-scene T60 distributions.

A scene is summarized by the mean and covariance of its sub-band T60
vectors. The covariance is widened by the T60 estimator's typical error
before target vectors are drawn from it. A uniform sampler provides the
baseline selection.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .acoustics import N_BANDS, T60_COLUMNS, AirCatalog, find_wavs, load_ir, subband_t60

log = logging.getLogger(__name__)

#: Mean test error (seconds) of the blind T60 estimator; default inflation.
DEFAULT_EPSILON = 0.23
JITTER = 1e-9
MIN_ACCEPTANCE = 0.01

SOURCES = ("external-estimates", "oracle-from-airs")


class ObservationError(ValueError):
    pass


class SamplingError(RuntimeError):
    pass


def _as_matrix(x) -> np.ndarray:
    m = np.array(x, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2 or m.shape[1] != N_BANDS:
        raise ObservationError(f"expected an N x {N_BANDS} matrix, got shape {m.shape}")
    return m


@dataclass(frozen=True, eq=False)
class SceneObservations:
    vectors: np.ndarray
    source: str = "external-estimates"

    def __post_init__(self):
        v = _as_matrix(self.vectors)
        if v.shape[0] < 1:
            raise ObservationError("need at least one observation")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ObservationError("observations must be positive and finite")
        if self.source not in SOURCES:
            raise ObservationError(f"unknown observation source {self.source!r}")
        object.__setattr__(self, "vectors", v)

    @property
    def N(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True, eq=False)
class SceneDistribution:
    """Gaussian model of a scene's T60 vectors.

    ``sigma`` is the fitted covariance; ``epsilon`` is added to its
    diagonal when sampling (see :attr:`covariance`).
    """

    mu: np.ndarray
    sigma: np.ndarray
    epsilon: float = DEFAULT_EPSILON
    source: str = "external-estimates"
    n_observations: int = 0

    def __post_init__(self):
        mu = np.array(self.mu, dtype=np.float64).reshape(-1)
        sigma = np.array(self.sigma, dtype=np.float64)
        if mu.shape != (N_BANDS,) or sigma.shape != (N_BANDS, N_BANDS):
            raise ValueError(f"mu must have {N_BANDS} entries and sigma be {N_BANDS}x{N_BANDS}")
        if np.any(mu <= 0) or not np.all(np.isfinite(mu)):
            raise ValueError("mu entries must be positive and finite")
        if not np.allclose(sigma, sigma.T, rtol=0, atol=1e-12):
            raise ValueError("sigma must be symmetric")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def covariance(self) -> np.ndarray:
        """The inflated covariance ``sigma + epsilon * I`` that is sampled."""
        return self.sigma + self.epsilon * np.eye(N_BANDS)

    def to_dict(self) -> dict:
        return {
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "epsilon": self.epsilon,
            "source": self.source,
            "n_observations": int(self.n_observations),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneDistribution":
        return cls(
            mu=d["mu"],
            sigma=d["sigma"],
            epsilon=d.get("epsilon", DEFAULT_EPSILON),
            source=d.get("source", "external-estimates"),
            n_observations=d.get("n_observations", 0),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "SceneDistribution":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class TargetSamples:
    vectors: np.ndarray
    seed: int | None = None
    jittered: bool = False

    def __post_init__(self):
        v = _as_matrix(self.vectors)
        if v.shape[0] < 1 or np.any(v <= 0):
            raise ValueError("target samples must be a non-empty matrix of positive T60s")
        object.__setattr__(self, "vectors", v)

    @property
    def M(self) -> int:
        return self.vectors.shape[0]


def fit_gaussian(
    obs: SceneObservations, epsilon: float = DEFAULT_EPSILON, unbiased: bool = True
) -> SceneDistribution:
    """Column means and sample covariance of the observations.

    A single observation yields a zero covariance, leaving all spread to
    the inflation term.
    """
    v = obs.vectors
    mu = v.mean(axis=0)
    if obs.N == 1:
        sigma = np.zeros((N_BANDS, N_BANDS))
    else:
        sigma = np.cov(v, rowvar=False, ddof=1 if unbiased else 0)
        sigma = 0.5 * (sigma + sigma.T)
    return SceneDistribution(mu, sigma, epsilon, obs.source, obs.N)


def inflate(dist: SceneDistribution, epsilon: float) -> SceneDistribution:
    """Set the diagonal inflation to ``epsilon`` seconds.

    The scalar is added as-is to the variance diagonal, so
    ``inflate(d, e).covariance == d.sigma + e * I`` and ``mu`` is untouched.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    return replace(dist, epsilon=float(epsilon))


def _factor(cov: np.ndarray, jitter: bool) -> tuple[np.ndarray, bool]:
    try:
        return np.linalg.cholesky(cov), False
    except np.linalg.LinAlgError:
        pass
    if jitter:
        try:
            return np.linalg.cholesky(cov + JITTER * np.eye(len(cov))), True
        except np.linalg.LinAlgError:
            pass
    w, V = np.linalg.eigh(cov)
    if w.min() < -1e-9 * max(1.0, abs(w).max()):
        raise SamplingError("covariance is not positive semi-definite")
    return V * np.sqrt(np.clip(w, 0.0, None)), False


def sample_gaussian(dist: SceneDistribution, M: int, seed: int, jitter: bool = True) -> TargetSamples:
    """Draw ``M`` positive T60 vectors from ``N(mu, sigma + epsilon I)``.

    Draws with any non-positive coordinate are rejected and redrawn. Raises
    :class:`SamplingError` if fewer than 1% of draws are accepted.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    L, jittered = _factor(dist.covariance, jitter)
    rng = np.random.default_rng(seed)
    batch = max(M, 1000)
    kept = []
    n_kept = n_drawn = 0
    while n_kept < M:
        x = dist.mu + rng.standard_normal((batch, N_BANDS)) @ L.T
        good = x[np.all(x > 0, axis=1)]
        kept.append(good)
        n_kept += len(good)
        n_drawn += batch
        if n_kept / n_drawn < MIN_ACCEPTANCE:
            raise SamplingError(
                f"acceptance rate {n_kept / n_drawn:.4f}: distribution mass is almost all non-positive"
            )
    return TargetSamples(np.vstack(kept)[:M], seed, jittered)


def sample_uniform(bounds_low, bounds_high, M: int, seed: int) -> TargetSamples:
    """``M`` i.i.d. draws, each band uniform on ``[low, high)``."""
    low = np.asarray(bounds_low, dtype=np.float64).reshape(-1)
    high = np.asarray(bounds_high, dtype=np.float64).reshape(-1)
    if low.shape != (N_BANDS,) or high.shape != (N_BANDS,):
        raise ValueError(f"bounds must have {N_BANDS} entries")
    if np.any(low <= 0) or np.any(low >= high) or not np.all(np.isfinite(high)):
        raise ValueError(f"invalid uniform bounds: low={low}, high={high}")
    if M < 1:
        raise ValueError("M must be at least 1")
    rng = np.random.default_rng(seed)
    return TargetSamples(rng.uniform(low, high, size=(M, N_BANDS)), seed)


def catalog_bounds(catalog: AirCatalog) -> tuple[np.ndarray, np.ndarray]:
    """Per-band ``(min, max)`` of the catalog labels."""
    labels = catalog.labels
    return labels.min(axis=0), labels.max(axis=0)


def load_observations(path) -> SceneObservations:
    """Read T60 observations from a CSV with ``t60_<band>`` columns.

    Other columns are ignored, so a catalog label table loads as well.
    Rows with unparsable, non-finite or non-positive values are skipped
    with a warning naming their 1-based data row.
    """
    rows, bad = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in T60_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ObservationError(f"{path}: missing columns {missing}")
        for k, row in enumerate(reader, start=1):
            try:
                vals = [float(row[c]) for c in T60_COLUMNS]
            except (TypeError, ValueError):
                bad.append(k)
                continue
            if all(math.isfinite(v) and v > 0 for v in vals):
                rows.append(vals)
            else:
                bad.append(k)
    if bad:
        log.warning("%s: rejected rows %s", path, bad)
    if not rows:
        raise ObservationError(f"{path}: zero valid observation rows")
    return SceneObservations(np.array(rows), "external-estimates")


def observations_from_airs(root) -> SceneObservations:
    """Oracle mode: label the target scene's own impulse responses."""
    vectors = []
    for f in find_wavs(root):
        try:
            vectors.append(subband_t60(load_ir(f)).values)
        except (ValueError, OSError) as exc:
            log.warning("skipping scene AIR %s: %s", f, exc)
    if not vectors:
        raise ObservationError(f"no usable scene AIRs under {root}")
    return SceneObservations(np.vstack(vectors), "oracle-from-airs")
