"""Named experiments, their reports, and report serialization.

Each preset runs an ensemble and returns a :class:`RunRecord` holding one
:class:`~ubm.stats.MomentReport` per checked quantity.

=====================  ===================================================
preset                 checks
=====================  ===================================================
``theorem-main``       covariances of ``X_t`` against the limit law
``corner-regimes``     corner entries and the Hermitian/skew split
``permutation-corner`` corner increments from a permutation start
``poisson-trace``      fixed points vs Poisson(1); trace increments
``haar-gaussian``      ``Tr(A_l U)`` for Haar ``U``: covariances, normality
``haar-entries``       rescaled Haar entries: normality, decorrelation
``moment-oracles``     exact finite-n moments by simulation
=====================  ===================================================
"""

from __future__ import annotations

import csv
import json
import math
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .engine import TimeGrid, corner_observables, simulate_ensemble
from .errors import ConfigError, UBMError
from .linalg import dagger
from .oracles import (LimitData, corner_variance_ratio, f_alpha,
                      finite_n_covariance, haar_moment_fourth_bound, haar_moment_second,
                      limit_covariance, mixed_moment, second_moment, u_cd, v_cd)
from .samplers import RngStream, haar_unitary
from .scenario import AUX_STREAM, Scenario, build_observables, simulate_scenario
from .stats import (DEFAULT_SIGMA, EnsembleStats, MomentReport, batch_means, complex_se,
                    ensemble_stats, estimate_mean, gaussianity_test, increment_independence_check,
                    poisson_fit, sigma_threshold)

__all__ = [
    "PRESETS", "RunRecord", "run_preset", "emit_report", "load_record", "artifact_version",
    "theorem_reports", "corner_reports", "LIMIT_REL_TOL", "CSV_COLUMNS",
]

#: extra relative tolerance for limit-law comparisons at finite n
LIMIT_REL_TOL = 0.10

CSV_COLUMNS = ("time", "statistic", "empirical_re", "empirical_im", "se", "oracle_re",
               "oracle_im", "sigma_distance", "verdict")

_T = [0.0, 0.5, 1.0, 2.0]

PRESETS: dict[str, dict] = {
    "theorem-main": dict(n=128, initial_law="identity", alpha_n=1.0, outer_times=_T,
                         observable="entries", entries=[[1, 1]]),
    "corner-regimes": dict(n=128, initial_law="identity", alpha_n=1.0, outer_times=_T,
                           observable="elementary_corner", corner_size=2),
    "permutation-corner": dict(n=128, initial_law="permutation", alpha_n=1.0, outer_times=_T,
                               observable="elementary_corner", corner_size=2, centered=False),
    "poisson-trace": dict(n=500, initial_law="permutation", alpha_n=1.0, outer_times=[0.0, 0.5, 1.0],
                          observable="identity", centered=False, process_n=32),
    "haar-gaussian": dict(n=128, initial_law="haar", alpha_n=1.0, outer_times=[0.0],
                          observable="entries", entries=[[1, 1], [2, 1]], centered=False),
    "haar-entries": dict(n=256, initial_law="haar", alpha_n=1.0, outer_times=[0.0],
                         observable="entries", entries=[[1, 1], [1, 2]], centered=False),
    "moment-oracles": dict(n=8, initial_law="identity", alpha_n=1.0, outer_times=[0.0, 0.7],
                           observable="entries", entries=[[1, 1]], engine="full"),
}


def artifact_version() -> str:
    """Package version plus the git commit when run from a checkout."""
    try:
        sha = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if sha.returncode == 0 and sha.stdout.strip():
            return f"{__version__}+g{sha.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _enc(a):
    a = np.asarray(a)
    if a.ndim == 0:
        z = complex(a)
        return [z.real, z.imag]
    return [_enc(x) for x in a]


@dataclass
class RunRecord:
    preset: str
    scenario: dict
    version: str
    reports: list = field(default_factory=list)
    estimates: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    def to_dict(self) -> dict:
        return {"preset": self.preset, "scenario": self.scenario, "version": self.version,
                "reports": [r.to_dict() for r in self.reports], "estimates": self.estimates,
                "wall_clock": self.wall_clock}

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(d["preset"], d["scenario"], d["version"],
                   [MomentReport.from_dict(r) for r in d["reports"]], d["estimates"], d["wall_clock"])

    def __eq__(self, other) -> bool:
        return isinstance(other, RunRecord) and json.dumps(self.to_dict()) == json.dumps(other.to_dict())


def _estimates(st: EnsembleStats) -> dict:
    return {"times": list(st.times), "replications": st.replication_count,
            "mean": _enc(st.mean), "mean_se": _enc(st.mean_se),
            "covariance": _enc(st.covariance), "covariance_se": _enc(st.covariance_se),
            "pseudo_covariance": _enc(st.pseudo_covariance),
            "pseudo_covariance_se": _enc(st.pseudo_covariance_se), "max_defect": st.max_defect}


# ---------------------------------------------------------------- report builders

def theorem_reports(st: EnsembleStats, matrices, alpha_n: float, alpha_limit, sigma: float = DEFAULT_SIGMA,
                    rel_tol: float = LIMIT_REL_TOL, exact: bool = True, label: str = "X") -> list:
    """Covariances of ``X_t`` against the limit law and, optionally, the exact finite-n values.

    Limit comparisons pass within ``max(sigma*SE, rel_tol*scale)`` where the
    scale of entry ``(l, l')`` is ``sqrt(q_ll q_l'l') t``.
    """
    data = LimitData.from_observables(matrices, alpha_limit)
    k = data.q.shape[0]
    out = []
    for j, t in enumerate(st.times):
        if t == 0:
            continue
        herm, pseudo = limit_covariance(data, t)
        ex_h, ex_p = finite_n_covariance(matrices, alpha_n, t)
        for l in range(k):
            for m in range(l, k):
                sc = math.sqrt(max(data.q[l, l].real, 0) * max(data.q[m, m].real, 0)) * t
                tag = f"[{l + 1},{m + 1}]"
                out.append(MomentReport(f"{label} cov{tag}", t, st.covariance[j, l, m], st.covariance_se[j, l, m],
                                        herm[l, m], sigma, rel_tol, 0.0, sc))
                out.append(MomentReport(f"{label} pseudo{tag}", t, st.pseudo_covariance[j, l, m],
                                        st.pseudo_covariance_se[j, l, m], pseudo[l, m], sigma, rel_tol, 0.0, sc))
                if exact:
                    out.append(MomentReport(f"{label} cov{tag} exact-n", t, st.covariance[j, l, m],
                                            st.covariance_se[j, l, m], ex_h[l, m], sigma))
                    out.append(MomentReport(f"{label} pseudo{tag} exact-n", t, st.pseudo_covariance[j, l, m],
                                            st.pseudo_covariance_se[j, l, m], ex_p[l, m], sigma))
    return out


def corner_split(values: np.ndarray, p: int, batches: int = 20):
    """Mean squared Frobenius norms of the Hermitian and skew parts of the corner.

    ``values`` has shape ``(N, p*p)`` in row-major corner order.  Returns
    ``(herm, skew, ratio, ratio_se)``.
    """
    m = np.asarray(values).reshape(-1, p, p)
    h = (m + dagger(m)) / 2
    s = (m - dagger(m)) / 2
    hn = np.sum(np.abs(h) ** 2, axis=(1, 2))
    sn = np.sum(np.abs(s) ** 2, axis=(1, 2))
    bh, bs = batch_means(hn, batches), batch_means(sn, batches)
    per = bh / bs
    return float(hn.mean()), float(sn.mean()), float(hn.mean() / sn.mean()), float(complex_se(per))


def corner_reports(st: EnsembleStats, p: int, n: int, alpha_n: float, alpha_limit,
                   sigma: float = DEFAULT_SIGMA, rel_tol: float = LIMIT_REL_TOL) -> list:
    """Corner entry moments and the Hermitian/skew variance ratio.

    The ratio is compared with ``(t - f)/(t + f)`` within ``rel_tol``
    relative; when the limit ratio is 0 (alpha = 0) the check becomes
    ``ratio <= 0.05``.
    """
    mats = corner_observables(n, p)
    out = []
    for j, t in enumerate(st.times):
        if t == 0:
            continue
        f = f_alpha(alpha_limit, t)
        _, ex_p = finite_n_covariance(mats, alpha_n, t)
        for a in range(p):
            for b in range(p):
                i, r = a * p + b, b * p + a
                tag = f"M[{a + 1},{b + 1}]"
                out.append(MomentReport(f"E|{tag}|^2", t, st.covariance[j, i, i], st.covariance_se[j, i, i],
                                        t, sigma, rel_tol, 0.0, t))
                if b >= a:
                    tag2 = f"M[{a + 1},{b + 1}]M[{b + 1},{a + 1}]"
                    out.append(MomentReport(f"E {tag2}", t, st.pseudo_covariance[j, i, r],
                                            st.pseudo_covariance_se[j, i, r], -f, sigma, rel_tol, 0.0, t))
                    out.append(MomentReport(f"E {tag2} exact-n", t, st.pseudo_covariance[j, i, r],
                                            st.pseudo_covariance_se[j, i, r], ex_p[i, r], sigma))
        if st.values is not None:
            _, _, ratio, rse = corner_split(st.values[:, j], p)
            target = corner_variance_ratio(alpha_limit, t)
            if target == 0:
                out.append(MomentReport("herm/skew variance", t, ratio, rse, 0.05, 0.0, kind="upper"))
            else:
                out.append(MomentReport("herm/skew variance", t, ratio, rse, target, 0.0, rel_tol, 0.0, target))
    return out


def _gauss_reports(name: str, t: float, z: np.ndarray, sigma: float, kurtosis: float = 2.0) -> list:
    g = gaussianity_test(z)
    return [MomentReport(f"{name} KS p(re)", t, g.p_re, 0.0, 0.01, 0.0, kind="lower"),
            MomentReport(f"{name} KS p(im)", t, g.p_im, 0.0, 0.01, 0.0, kind="lower"),
            MomentReport(f"{name} kurtosis", t, g.kurtosis_ratio, g.kurtosis_se, kurtosis, sigma)]


# ---------------------------------------------------------------- presets

def _run_theorem(sc: Scenario, threads, sigma):
    obs = build_observables(sc)
    res, grid = simulate_scenario(sc, threads)
    st = ensemble_stats(res.values, grid.outer_times, sc.batches, res.max_defect)
    exact = sc.initial_law == "identity" and sc.is_centered
    reps = theorem_reports(st, obs.matrices, sc.alpha_n, sc.limit_alpha, sigma, exact=exact)
    ts = grid.outer_times
    if len(ts) >= 3:
        ind = increment_independence_check(res.values, ts, ts[0], ts[1], ts[2], sc.batches)
        k = obs.k
        for l in range(k):
            for m in range(k):
                reps.append(MomentReport(f"incr corr[{l + 1},{m + 1}]", ts[2], ind.hermitian[l, m],
                                         ind.hermitian_se[l, m], 0.0, sigma))
                reps.append(MomentReport(f"incr pseudo corr[{l + 1},{m + 1}]", ts[2], ind.pseudo[l, m],
                                         ind.pseudo_se[l, m], 0.0, sigma))
    return reps, st


def _run_corner(sc: Scenario, threads, sigma):
    res, grid = simulate_scenario(sc, threads)
    st = ensemble_stats(res.values, grid.outer_times, sc.batches, res.max_defect)
    return corner_reports(st, sc.corner_size, sc.n, sc.alpha_n, sc.limit_alpha, sigma), st


def _increments(values: np.ndarray) -> np.ndarray:
    return values - values[:, :1]


def _run_permutation_corner(sc: Scenario, threads, sigma):
    res, grid = simulate_scenario(sc, threads)
    inc = _increments(res.values)
    st = ensemble_stats(inc, grid.outer_times, sc.batches, res.max_defect)
    p = sc.corner_size
    reps = []
    for j, t in enumerate(st.times):
        if t == 0:
            continue
        for i in range(p * p):
            tag = f"dM[{i // p + 1},{i % p + 1}]"
            reps.append(MomentReport(f"E|{tag}|^2", t, st.covariance[j, i, i], st.covariance_se[j, i, i],
                                     t, sigma, LIMIT_REL_TOL, 0.0, t))
            for r in range(i, p * p):
                tag2 = f"{tag}dM[{r // p + 1},{r % p + 1}]"
                reps.append(MomentReport(f"E {tag2}", t, st.pseudo_covariance[j, i, r],
                                         st.pseudo_covariance_se[j, i, r], 0.0, sigma, LIMIT_REL_TOL, 0.0, t))
        reps += _gauss_reports("dM[1,2]" if p > 1 else "dM[1,1]", t, inc[:, j, min(1, p * p - 1)], sigma)
    return reps, st


def fixed_point_counts(n: int, replications: int, seed: int) -> np.ndarray:
    """Traces of the permutation matrices drawn as initial states."""
    out = np.empty(replications, dtype=np.int64)
    ids = np.arange(n)
    for i in range(replications):
        # same first draw as InitialLaw.permutation() on stream i
        perm = RngStream(seed, i).generator.permutation(n)
        out[i] = int(np.count_nonzero(perm == ids))
    return out


def _run_poisson(sc: Scenario, threads, sigma):
    counts = fixed_point_counts(sc.n, sc.replications, sc.seed)
    fit = poisson_fit(counts)
    reps = [MomentReport("fixed points TV", 0.0, fit.tv, 0.0, 0.0, 0.0, 0.0, 0.02)]
    m = sc.process_n or sc.n
    sub = sc.with_overrides(n=m, observable="identity", centered=False)
    res, grid = simulate_scenario(sub, threads)
    inc = _increments(res.values)
    st = ensemble_stats(inc, grid.outer_times, sc.batches, res.max_defect)
    for j, t in enumerate(st.times):
        if t == 0:
            continue
        reps.append(MomentReport("E|Tr V - C|^2", t, st.covariance[j, 0, 0], st.covariance_se[j, 0, 0],
                                 t, sigma, LIMIT_REL_TOL, 0.0, t))
        reps.append(MomentReport("E (Tr V - C)^2", t, st.pseudo_covariance[j, 0, 0],
                                 st.pseudo_covariance_se[j, 0, 0], 0.0, sigma, LIMIT_REL_TOL, 0.0, t))
        reps += _gauss_reports("Tr V - C", t, inc[:, j, 0], sigma)
    return reps, st


def _run_haar(sc: Scenario, threads, sigma, gaussian_checks: bool):
    obs = build_observables(sc)
    res, grid = simulate_scenario(sc, threads)
    st = ensemble_stats(res.values, grid.outer_times, sc.batches, res.max_defect)
    mats = obs.matrices
    base = np.einsum("lij,mij->lm", mats, mats.conj()) / sc.n
    # sqrt(n) u_ab of a Haar unitary has E|.|^4 = 2n/(n+1) exactly; 2 is its limit
    kurt = 2.0 * sc.n / (sc.n + 1) if sc.observable == "entries" else 2.0
    reps = []
    for j, (t, s) in enumerate(zip(grid.outer_times, grid.times)):
        scale = math.exp(s) / sc.alpha_n
        for l in range(obs.k):
            for m in range(l, obs.k):
                tag = f"[{l + 1},{m + 1}]"
                reps.append(MomentReport(f"cov{tag}", t, st.covariance[j, l, m], st.covariance_se[j, l, m],
                                         scale * base[l, m], sigma))
                reps.append(MomentReport(f"pseudo{tag}", t, st.pseudo_covariance[j, l, m],
                                         st.pseudo_covariance_se[j, l, m], 0.0, sigma))
            if gaussian_checks:
                reps += _gauss_reports(f"Z{l + 1}", t, res.values[:, j, l] / math.sqrt(scale), sigma, kurt)
    return reps, st


def moment_statistic(a: np.ndarray, c: np.ndarray, d: np.ndarray):
    """Per-path ``Tr(AVAV)``, ``|Tr(AVAV)|^2``, ``Tr(VCV*D)``, ``Tr(VC)Tr(V*D)`` on full states."""

    def stat(states, grid):
        ev = np.exp(np.asarray(grid.times))[None, :]
        v = states * np.sqrt(ev)[..., None, None]
        av = np.einsum("ij,btjk->btik", a, v)
        x = np.einsum("btik,btki->bt", av, av)
        vh = np.conj(np.swapaxes(v, -1, -2))
        u = np.einsum("btij,jk,btkl,li->bt", v, c, vh, d, optimize=True)
        w = np.einsum("btij,ji->bt", v, c) * np.einsum("btij,ji->bt", vh, d)
        return np.stack([x, np.abs(x) ** 2, u, w], axis=-1)

    return stat


def _run_moments(sc: Scenario, threads, sigma):
    obs = build_observables(sc)
    a = obs.matrices[0]
    n = sc.n
    g = RngStream(sc.seed, AUX_STREAM).generator
    c = (g.standard_normal((n, n)) + 1j * g.standard_normal((n, n))) / math.sqrt(2 * n)
    d = (g.standard_normal((n, n)) + 1j * g.standard_normal((n, n))) / math.sqrt(2 * n)
    grid = TimeGrid(sc.outer_times, sc.step_cap)
    res = simulate_ensemble(n, sc.initial(), grid, sc.replications, sc.seed, moment_statistic(a, c, d),
                            columns=n, threads=threads)
    st = ensemble_stats(res.values, grid.times, sc.batches, res.max_defect)
    reps = []
    for j, t in enumerate(grid.times):
        if t == 0:
            continue
        oracles = [mixed_moment(a, n, t), second_moment(a, n, t) if n >= 3 else None,
                   u_cd(c, d, n, t), v_cd(c, d, n, t)]
        names = ["E Tr(AVAV)", "E|Tr(AVAV)|^2", "E Tr(VCV*D)", "E Tr(VC)Tr(V*D)"]
        for i, (nm, o) in enumerate(zip(names, oracles)):
            if o is not None:
                reps.append(MomentReport(nm, t, st.mean[j, i], st.mean_se[j, i], o, sigma))
    # Haar moments on independent streams
    hs = np.empty((sc.replications, 2), dtype=np.complex128)
    off = 1 << 62
    for i in range(sc.replications):
        u = haar_unitary(n, RngStream(sc.seed, off + i))
        tr = np.trace(a @ u)
        hs[i] = [abs(tr) ** 2, abs(np.trace(a @ u @ a @ u)) ** 2]
    hm, hse = estimate_mean(hs, sc.batches)
    reps.append(MomentReport("Haar E|Tr(AU)|^2", 0.0, hm[0], hse[0], haar_moment_second(a, n), sigma))
    if n >= 3:
        reps.append(MomentReport("Haar E|Tr(AUAU)|^2 bound", 0.0, hm[1], hse[1],
                                 haar_moment_fourth_bound(a, n), 0.0, kind="upper"))
    return reps, st


_RUNNERS = {
    "theorem-main": _run_theorem,
    "corner-regimes": _run_corner,
    "permutation-corner": _run_permutation_corner,
    "poisson-trace": _run_poisson,
    "haar-gaussian": lambda sc, th, sg: _run_haar(sc, th, sg, True),
    "haar-entries": lambda sc, th, sg: _run_haar(sc, th, sg, True),
    "moment-oracles": _run_moments,
}


#: smallest ensembles the presets' distribution tests accept
_MIN_REPLICATIONS = {"permutation-corner": 1000, "haar-gaussian": 1000, "haar-entries": 1000,
                     "poisson-trace": 10_000}


def preset_scenario(name: str, overrides: dict | None = None) -> Scenario:
    """Preset defaults with ``overrides`` applied, validated."""
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    doc = dict(PRESETS[name])
    doc.update(overrides or {})
    sc = Scenario.from_dict(doc)
    check_preset(name, sc)
    return sc


def check_preset(name: str, sc: Scenario) -> None:
    need = _MIN_REPLICATIONS.get(name, 2)
    if sc.replications < need:
        raise ConfigError("replications", f"preset {name} needs at least {need}, got {sc.replications}")
    if name in ("corner-regimes", "permutation-corner") and sc.observable != "elementary_corner":
        raise ConfigError("observable", f"preset {name} needs observable = 'elementary_corner'")
    if name == "moment-oracles" and sc.initial_law != "identity":
        raise ConfigError("initial_law", "moment-oracles formulas assume the identity start")


def run_preset(name: str, overrides: dict | Scenario | None = None, threads: int | None = None,
               sigma: float | None = None) -> RunRecord:
    """Run a named experiment; ``overrides`` are scenario keys (or a full Scenario)."""
    if name not in _RUNNERS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    if isinstance(overrides, Scenario):
        sc = overrides
        check_preset(name, sc)
    else:
        sc = preset_scenario(name, overrides)
    sg = sigma_threshold() if sigma is None else sigma
    t0 = time.perf_counter()
    reps, st = _RUNNERS[name](sc, threads, sg)
    wall = time.perf_counter() - t0
    return RunRecord(name, sc.to_dict(), artifact_version(), reps, _estimates(st), wall)


# ---------------------------------------------------------------- output

def emit_report(record: RunRecord, fmt: str = "csv", out: str | Path = ".") -> Path:
    """Write ``<out>/<preset>.csv`` or ``.json`` and return its path."""
    fmt = fmt.lower()
    if fmt not in ("csv", "json"):
        raise ConfigError("format", f"must be csv or json, got {fmt!r}")
    d = Path(out)
    path = d / f"{record.preset}.{fmt}"
    try:
        d.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            path.write_text(json.dumps(record.to_dict(), indent=1) + "\n")
        else:
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(CSV_COLUMNS)
                for r in record.reports:
                    e, o = complex(r.empirical), complex(r.oracle)
                    w.writerow([repr(float(r.time)), r.statistic, repr(e.real), repr(e.imag),
                                repr(math.hypot(complex(r.se).real, complex(r.se).imag)),
                                repr(o.real), repr(o.imag), repr(r.sigma_distance), r.verdict])
    except OSError as exc:
        raise UBMError(f"cannot write report {path}: {exc}") from exc
    return path


def load_record(path: str | Path) -> RunRecord:
    p = Path(path)
    try:
        return RunRecord.from_dict(json.loads(p.read_text()))
    except OSError as exc:
        raise UBMError(f"cannot read record {p}: {exc}") from exc
