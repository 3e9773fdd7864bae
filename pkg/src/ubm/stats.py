"""Monte Carlo estimators, standard errors and verdicts.

Standard errors come from batch means: the replications are cut into
``batches`` contiguous blocks (20 by default), the estimator is evaluated on
each block, and the spread of the block values gives the error.  Complex
estimates carry a complex standard error ``se_re + 1j*se_im``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .errors import EstimationError, GridError
from .oracles import poisson_pmf

__all__ = [
    "DEFAULT_BATCHES", "DEFAULT_SIGMA", "batch_means", "batch_se", "complex_se",
    "estimate_mean", "estimate_covariance", "estimate_pseudo_covariance",
    "EnsembleStats", "ensemble_stats", "MomentReport", "verdict", "sigma_threshold",
    "GaussianityReport", "gaussianity_test", "IndependenceReport",
    "increment_independence_check", "PoissonFitReport", "poisson_fit", "run_ensemble",
]

DEFAULT_BATCHES = 20
DEFAULT_SIGMA = 4.0


def sigma_threshold() -> float:
    """Verdict threshold in standard errors (``UBM_TOL_SIGMA`` overrides)."""
    env = os.environ.get("UBM_TOL_SIGMA")
    if env:
        try:
            v = float(env)
        except ValueError as exc:
            raise EstimationError(f"UBM_TOL_SIGMA is not a number: {env!r}") from exc
        if v > 0 and math.isfinite(v):
            return v
        raise EstimationError(f"UBM_TOL_SIGMA must be positive, got {env!r}")
    return DEFAULT_SIGMA


def _batches(n: int, batches: int) -> int:
    b = min(int(batches), n)
    if b < 2:
        raise EstimationError(f"need at least 2 batches, got {b} from {n} samples")
    return b


def batch_means(x: np.ndarray, batches: int = DEFAULT_BATCHES) -> np.ndarray:
    """Means of ``x`` over contiguous blocks along axis 0; shape ``(B,) + x.shape[1:]``."""
    x = np.asarray(x)
    b = _batches(x.shape[0], batches)
    return np.stack([blk.mean(axis=0) for blk in np.array_split(x, b, axis=0)])


def _spread(bm: np.ndarray) -> np.ndarray:
    b = bm.shape[0]
    return np.std(bm, axis=0, ddof=1) / math.sqrt(b)


def complex_se(bm: np.ndarray) -> np.ndarray:
    """Standard error of the mean of batch values, real and imaginary parts separately."""
    bm = np.asarray(bm)
    if np.iscomplexobj(bm):
        return _spread(bm.real) + 1j * _spread(bm.imag)
    return _spread(bm)


def batch_se(x: np.ndarray, batches: int = DEFAULT_BATCHES) -> np.ndarray:
    """Batch-means standard error of ``x.mean(axis=0)``."""
    return complex_se(batch_means(x, batches))


def _need(x: np.ndarray, k: int = 2):
    if x.shape[0] < k:
        raise EstimationError(f"need at least {k} samples, got {x.shape[0]}")


def estimate_mean(samples, batches: int = DEFAULT_BATCHES):
    """Mean vector and its complex standard error."""
    x = np.asarray(samples)
    _need(x)
    return x.mean(axis=0), batch_se(x, batches)


def _as_vectors(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.complex128)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise EstimationError(f"samples must be (N,) or (N, k), got shape {x.shape}")
    return x


def estimate_covariance(samples, batches: int = DEFAULT_BATCHES):
    """``E[x x^*]`` (raw second moments) with batch standard errors.

    The estimate is Hermitian with a real nonnegative diagonal by construction.
    """
    x = _as_vectors(samples)
    _need(x)
    prod = x[:, :, None] * x[:, None, :].conj()
    est = prod.mean(axis=0)
    est = (est + est.conj().T) / 2
    d = np.arange(est.shape[0])
    est[d, d] = np.mean(np.abs(x) ** 2, axis=0)
    return est, batch_se(prod, batches)


def estimate_pseudo_covariance(samples, batches: int = DEFAULT_BATCHES):
    """``E[x x^T]`` without conjugation, with batch standard errors."""
    x = _as_vectors(samples)
    _need(x)
    prod = x[:, :, None] * x[:, None, :]
    est = prod.mean(axis=0)
    return (est + est.T) / 2, batch_se(prod, batches)


@dataclass
class EnsembleStats:
    """Per-time moments of a statistic over an ensemble.

    Arrays are indexed ``[time, ...]``.  ``values`` keeps the raw samples,
    shape ``(N, times, k)``, for downstream tests.
    """

    replication_count: int
    times: tuple
    mean: np.ndarray
    mean_se: np.ndarray
    covariance: np.ndarray
    covariance_se: np.ndarray
    pseudo_covariance: np.ndarray
    pseudo_covariance_se: np.ndarray
    max_defect: float = 0.0
    values: np.ndarray | None = field(default=None, repr=False)

    def degenerate(self) -> bool:
        """True when some standard error is exactly zero (e.g. constant samples)."""
        return bool(np.any(np.abs(self.covariance_se) == 0) or np.any(np.abs(self.pseudo_covariance_se) == 0))

    def equals(self, other: "EnsembleStats") -> bool:
        names = ("mean", "mean_se", "covariance", "covariance_se", "pseudo_covariance", "pseudo_covariance_se")
        return (self.replication_count == other.replication_count and self.times == other.times
                and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in names))


def ensemble_stats(values: np.ndarray, times, batches: int = DEFAULT_BATCHES,
                   max_defect: float = 0.0, keep: bool = True) -> EnsembleStats:
    """Reduce samples of shape ``(N, m+1, k)`` to :class:`EnsembleStats`."""
    v = np.asarray(values, dtype=np.complex128)
    if v.ndim != 3:
        raise EstimationError(f"values must be (N, times, k), got {v.shape}")
    if v.shape[0] < 2:
        raise EstimationError("an ensemble needs at least 2 replications")
    mean, mse, cov, cse, ps, pse = [], [], [], [], [], []
    for j in range(v.shape[1]):
        m, s = estimate_mean(v[:, j], batches)
        c, cs = estimate_covariance(v[:, j], batches)
        p, px = estimate_pseudo_covariance(v[:, j], batches)
        mean.append(m), mse.append(s), cov.append(c), cse.append(cs), ps.append(p), pse.append(px)
    return EnsembleStats(v.shape[0], tuple(times), np.array(mean), np.array(mse), np.array(cov),
                         np.array(cse), np.array(ps), np.array(pse), float(max_defect),
                         v if keep else None)


# ---------------------------------------------------------------- verdicts

def _abs_se(se) -> float:
    se = complex(se)
    return math.hypot(se.real, se.imag)


def verdict(empirical, se, oracle, threshold: float = DEFAULT_SIGMA, rel_tol: float = 0.0,
            abs_tol: float = 0.0, scale: float | None = None, kind: str = "equal") -> bool:
    """Pass/fail as a pure function of its arguments.

    ``equal``: ``|emp - oracle| <= max(threshold*se, rel_tol*scale, abs_tol)``
    with ``scale`` defaulting to ``|oracle|``.  ``upper``: ``emp <= oracle +
    threshold*se`` (real parts); ``lower`` the mirror image.
    """
    e, o = complex(empirical), complex(oracle)
    s = _abs_se(se)
    if not (math.isfinite(abs(e)) and math.isfinite(abs(o))):
        return False
    if kind == "upper":
        return e.real <= o.real + threshold * s + abs_tol
    if kind == "lower":
        return e.real >= o.real - threshold * s - abs_tol
    if kind != "equal":
        raise EstimationError(f"unknown comparison kind {kind!r}")
    ref = abs(o) if scale is None else scale
    return abs(e - o) <= max(threshold * s, rel_tol * ref, abs_tol)


@dataclass
class MomentReport:
    """One empirical quantity against its oracle value."""

    statistic: str
    time: float
    empirical: complex
    se: complex
    oracle: complex
    threshold: float = DEFAULT_SIGMA
    rel_tol: float = 0.0
    abs_tol: float = 0.0
    scale: float | None = None
    kind: str = "equal"

    @property
    def sigma_distance(self) -> float:
        d = abs(complex(self.empirical) - complex(self.oracle))
        s = _abs_se(self.se)
        if s == 0:
            return 0.0 if d == 0 else math.inf
        return d / s

    @property
    def passed(self) -> bool:
        return verdict(self.empirical, self.se, self.oracle, self.threshold, self.rel_tol,
                       self.abs_tol, self.scale, self.kind)

    @property
    def verdict(self) -> str:
        return "Pass" if self.passed else "Fail"

    def to_dict(self) -> dict:
        c = lambda z: [complex(z).real, complex(z).imag]
        return {"statistic": self.statistic, "time": self.time, "empirical": c(self.empirical),
                "se": c(self.se), "oracle": c(self.oracle), "threshold": self.threshold,
                "rel_tol": self.rel_tol, "abs_tol": self.abs_tol, "scale": self.scale,
                "kind": self.kind, "verdict": self.verdict}

    @classmethod
    def from_dict(cls, d: dict) -> "MomentReport":
        z = lambda p: complex(p[0], p[1])
        return cls(d["statistic"], d["time"], z(d["empirical"]), z(d["se"]), z(d["oracle"]),
                   d["threshold"], d["rel_tol"], d["abs_tol"], d["scale"], d["kind"])

    def __eq__(self, other) -> bool:
        return isinstance(other, MomentReport) and self.to_dict() == other.to_dict()


# ---------------------------------------------------------------- distribution tests

@dataclass
class GaussianityReport:
    samples: int
    ks_re: float
    p_re: float
    ks_im: float
    p_im: float
    kurtosis_ratio: float
    kurtosis_se: float
    variance: float

    def passed(self, p_min: float = 0.01, threshold: float = DEFAULT_SIGMA) -> bool:
        return (self.p_re > p_min and self.p_im > p_min
                and abs(self.kurtosis_ratio - 2.0) <= threshold * self.kurtosis_se)


def _ks(x: np.ndarray):
    sd = math.sqrt(float(np.mean(x * x)))
    if sd == 0:
        return 1.0, 0.0
    r = sps.kstest(x, sps.norm(scale=sd).cdf, method="exact")
    return float(r.statistic), float(r.pvalue)


def gaussianity_test(samples, batches: int = DEFAULT_BATCHES, min_samples: int = 1000) -> GaussianityReport:
    """KS tests of both marginals plus the complex kurtosis ``E|Z|^4/(E|Z|^2)^2``.

    Each marginal is compared with the centered Gaussian of matched second
    moment.  A circular complex Gaussian has kurtosis ratio 2.
    """
    z = np.asarray(samples, dtype=np.complex128).ravel()
    if z.size < min_samples:
        raise EstimationError(f"gaussianity test needs at least {min_samples} samples, got {z.size}")
    ks_re, p_re = _ks(z.real)
    ks_im, p_im = _ks(z.imag)
    a2 = np.abs(z) ** 2
    ratio = float(np.mean(a2 * a2) / np.mean(a2) ** 2)
    b = _batches(z.size, batches)
    per = [float(np.mean(blk * blk) / np.mean(blk) ** 2) for blk in np.array_split(a2, b)]
    se = float(np.std(per, ddof=1) / math.sqrt(b))
    return GaussianityReport(z.size, ks_re, p_re, ks_im, p_im, ratio, se, float(np.mean(a2)))


@dataclass
class IndependenceReport:
    hermitian: np.ndarray
    hermitian_se: np.ndarray
    pseudo: np.ndarray
    pseudo_se: np.ndarray

    def max_sigma(self) -> float:
        out = 0.0
        for v, s in ((self.hermitian, self.hermitian_se), (self.pseudo, self.pseudo_se)):
            for x, e in zip(np.ravel(v), np.ravel(s)):
                se = math.hypot(e.real, e.imag)
                d = abs(x)
                out = max(out, math.inf if (se == 0 and d > 0) else (d / se if se else 0.0))
        return out

    def passed(self, threshold: float = DEFAULT_SIGMA) -> bool:
        return self.max_sigma() <= threshold


def increment_independence_check(values, times, t1: float, t2: float, t3: float,
                                 batches: int = DEFAULT_BATCHES, tol: float = 1e-12) -> IndependenceReport:
    """Normalized correlations between ``X_{t2} - X_{t1}`` and ``X_{t3} - X_{t2}``.

    ``values`` has shape ``(N, len(times), k)``.  Both the Hermitian
    ``E[d1 conj(d2)]`` and pseudo ``E[d1 d2]`` correlations are returned,
    divided by ``sqrt(E|d1|^2 E|d2|^2)``.
    """
    if not t1 < t2 < t3:
        raise GridError("need t1 < t2 < t3")
    times = list(times)

    def idx(t):
        for j, x in enumerate(times):
            if abs(x - t) <= tol * max(1.0, abs(t)):
                return j
        raise GridError(f"time {t} is not on the grid")

    v = np.asarray(values, dtype=np.complex128)
    if v.ndim == 2:
        v = v[..., None]
    j1, j2, j3 = idx(t1), idx(t2), idx(t3)
    d1 = v[:, j2] - v[:, j1]
    d2 = v[:, j3] - v[:, j2]
    _need(d1)
    s1 = np.sqrt(np.mean(np.abs(d1) ** 2, axis=0))
    s2 = np.sqrt(np.mean(np.abs(d2) ** 2, axis=0))
    norm = np.outer(s1, s2)
    norm = np.where(norm > 0, norm, 1.0)
    herm = d1[:, :, None] * d2[:, None, :].conj()
    pseudo = d1[:, :, None] * d2[:, None, :]
    return IndependenceReport(herm.mean(0) / norm, batch_se(herm, batches) / norm,
                              pseudo.mean(0) / norm, batch_se(pseudo, batches) / norm)


@dataclass
class PoissonFitReport:
    samples: int
    tv: float
    empirical_pmf: np.ndarray
    mean: float


def poisson_fit(counts, cutoff: int = 20, min_samples: int = 10_000) -> PoissonFitReport:
    """Total-variation distance between the counts' empirical law and Poisson(1).

    Values ``0..cutoff`` are compared one by one and the tails above
    ``cutoff`` as one bucket.
    """
    c = np.asarray(counts)
    if c.size < min_samples:
        raise EstimationError(f"poisson fit needs at least {min_samples} samples, got {c.size}")
    if np.any(c < 0) or np.any(c != np.round(c)):
        raise EstimationError("counts must be nonnegative integers")
    c = c.astype(np.int64)
    emp = np.bincount(np.minimum(c, cutoff + 1), minlength=cutoff + 2)[:cutoff + 2] / c.size
    ref = np.array([poisson_pmf(j) for j in range(cutoff + 1)])
    ref = np.append(ref, max(0.0, 1.0 - ref.sum()))
    tv = 0.5 * float(np.sum(np.abs(emp - ref)))
    return PoissonFitReport(c.size, tv, emp[:cutoff + 1], float(c.mean()))


def run_ensemble(scenario, threads: int | None = None, keep: bool = True) -> EnsembleStats:
    """Simulate ``scenario`` and reduce its linear statistic to :class:`EnsembleStats`."""
    from .scenario import simulate_scenario

    if scenario.replications < 2:
        raise EstimationError("run_ensemble needs at least 2 replications")
    res, grid = simulate_scenario(scenario, threads=threads)
    return ensemble_stats(res.values, grid.outer_times, scenario.batches, res.max_defect, keep)
