"""Experiment configuration.

A scenario is a flat TOML document.  Required keys: ``n``, ``initial_law``,
``alpha_n``, ``outer_times`` and ``observable``.  Everything else has a
default; unknown keys are rejected.

Example::

    n = 128
    initial_law = "identity"      # identity | haar | permutation | fixed
    alpha_n = 1.0
    outer_times = [0, 0.5, 1, 2]
    observable = "elementary_corner"
    corner_size = 2
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .engine import (InitialLaw, ObservableFamily, corner_observables, rescaled_grid,
                     simulate_ensemble, trace_statistic)
from .errors import ConfigError, NotUnitaryError, UBMError
from .linalg import DEFAULT_TOLERANCES, Tolerances
from .oracles import Alpha
from .samplers import RngStream

__all__ = [
    "Scenario", "parse_scenario", "load_scenario", "read_matrix_file",
    "build_observables", "simulate_scenario", "OBSERVABLES", "INITIAL_LAWS",
    "AUX_STREAM",
]

OBSERVABLES = ("elementary_corner", "entries", "identity", "sparse_real", "custom")
INITIAL_LAWS = ("identity", "haar", "permutation", "fixed")
ENGINES = ("auto", "full", "frame")
#: stream id reserved for one-off draws such as random observables
AUX_STREAM = (1 << 64) - 1

_REQUIRED = ("n", "initial_law", "alpha_n", "outer_times", "observable")


@dataclass(frozen=True)
class Scenario:
    """Validated experiment description.  Build with :func:`parse_scenario`
    or :meth:`Scenario.from_dict`."""

    n: int
    initial_law: str
    alpha_n: float
    outer_times: tuple
    observable: str
    step_cap: float = 0.01
    replications: int = 10_000
    seed: int = 0
    corner_size: int | None = None
    entries: tuple | None = None
    density: float | None = None
    matrix_file: str | None = None
    initial_file: str | None = None
    centered: bool | None = None
    alpha_limit: str | None = None
    batches: int = 20
    engine: str = "auto"
    process_n: int | None = None
    tol_hermitian: float | None = None
    tol_unitary: float | None = None
    custom_matrices: np.ndarray | None = field(default=None, compare=False, repr=False)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str | Path | None = None) -> "Scenario":
        known = {f.name for f in fields(cls)} - {"custom_matrices"}
        for key in doc:
            if key not in known:
                raise ConfigError(key, "unknown key")
        for key in _REQUIRED:
            if key not in doc:
                raise ConfigError(key, "missing required key")
        d = dict(doc)
        for key in ("matrix_file", "initial_file"):
            if d.get(key) is not None and base_dir is not None:
                p = Path(d[key])
                if not p.is_absolute():
                    d[key] = str(Path(base_dir) / p)
        sc = cls(**d)
        sc.validate()
        return sc

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("custom_matrices")
        d["outer_times"] = list(self.outer_times)
        if self.entries is not None:
            d["entries"] = [list(e) for e in self.entries]
        return {k: v for k, v in d.items() if v is not None}

    def with_overrides(self, **kw) -> "Scenario":
        d = self.to_dict()
        d.update({k: v for k, v in kw.items() if v is not None})
        sc = Scenario.from_dict(d)
        if self.custom_matrices is not None and sc.observable == "custom" and sc.matrix_file is None:
            sc = replace(sc, custom_matrices=self.custom_matrices)
        return sc

    # -- validation -------------------------------------------------------

    def validate(self) -> None:
        """Check every field and all engine/oracle preconditions."""
        set_ = lambda k, v: object.__setattr__(self, k, v)
        set_("n", _int("n", self.n, 1))
        if self.initial_law not in INITIAL_LAWS:
            raise ConfigError("initial_law", f"must be one of {INITIAL_LAWS}, got {self.initial_law!r}")
        set_("alpha_n", _real("alpha_n", self.alpha_n, positive=True))
        ts = self.outer_times
        if not isinstance(ts, (list, tuple)) or not ts:
            raise ConfigError("outer_times", "must be a non-empty list")
        ts = tuple(_real("outer_times", t) for t in ts)
        if ts[0] != 0:
            raise ConfigError("outer_times", "must start at 0")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigError("outer_times", "must be strictly increasing")
        set_("outer_times", ts)
        set_("step_cap", _real("step_cap", self.step_cap, positive=True))
        try:
            rescaled_grid(self.alpha_n, ts, self.step_cap)
        except UBMError as exc:
            raise ConfigError("outer_times", str(exc)) from exc
        set_("replications", _int("replications", self.replications, 2))
        set_("seed", _int("seed", self.seed, 0))
        if self.seed >= 1 << 64:
            raise ConfigError("seed", "must be below 2**64")
        set_("batches", _int("batches", self.batches, 2))
        if self.engine not in ENGINES:
            raise ConfigError("engine", f"must be one of {ENGINES}, got {self.engine!r}")
        if self.centered is not None and not isinstance(self.centered, bool):
            raise ConfigError("centered", "must be true or false")
        if self.alpha_limit is not None:
            try:
                Alpha.parse(self.alpha_limit)
            except (UBMError, ValueError) as exc:
                raise ConfigError("alpha_limit", f"not an extended nonnegative real: {exc}") from exc
            set_("alpha_limit", str(self.alpha_limit))
        if self.process_n is not None:
            set_("process_n", _int("process_n", self.process_n, 1))
        for key in ("tol_hermitian", "tol_unitary"):
            v = getattr(self, key)
            if v is not None:
                set_(key, _real(key, v, positive=True))

        obs = self.observable
        if obs not in OBSERVABLES:
            raise ConfigError("observable", f"must be one of {OBSERVABLES}, got {obs!r}")
        if obs == "elementary_corner":
            p = _int("corner_size", 1 if self.corner_size is None else self.corner_size, 1)
            if p > self.n:
                raise ConfigError("corner_size", f"corner size {p} exceeds n = {self.n}")
            set_("corner_size", p)
        elif self.corner_size is not None:
            raise ConfigError("corner_size", "only valid with observable = 'elementary_corner'")
        if obs == "entries":
            if not self.entries:
                raise ConfigError("entries", "observable 'entries' needs a list of [row, col] pairs")
            es = []
            for e in self.entries:
                if not isinstance(e, (list, tuple)) or len(e) != 2:
                    raise ConfigError("entries", f"entry {e!r} is not a [row, col] pair")
                a, b = (_int("entries", x, 1) for x in e)
                if a > self.n or b > self.n:
                    raise ConfigError("entries", f"entry {e!r} lies outside an {self.n}x{self.n} matrix")
                es.append((a, b))
            set_("entries", tuple(es))
        elif self.entries is not None:
            raise ConfigError("entries", "only valid with observable = 'entries'")
        if obs == "sparse_real":
            dens = _real("density", 1.0 if self.density is None else self.density, positive=True)
            if dens > 1:
                raise ConfigError("density", f"must lie in (0, 1], got {dens}")
            set_("density", dens)
        elif self.density is not None:
            raise ConfigError("density", "only valid with observable = 'sparse_real'")
        if obs == "custom":
            if self.custom_matrices is None:
                if self.matrix_file is None:
                    raise ConfigError("matrix_file", "observable 'custom' needs a matrix file")
                mats = read_matrix_file(self.matrix_file)
                if mats.shape[1] != self.n:
                    raise ConfigError("matrix_file", f"matrices are {mats.shape[1]}x{mats.shape[1]}, n = {self.n}")
        elif self.matrix_file is not None:
            raise ConfigError("matrix_file", "only valid with observable = 'custom'")
        if self.initial_law == "fixed":
            if self.initial_file is None:
                raise ConfigError("initial_file", "initial_law 'fixed' needs initial_file")
            m = read_matrix_file(self.initial_file, key="initial_file")
            if m.shape != (1, self.n, self.n):
                raise ConfigError("initial_file", f"expected one {self.n}x{self.n} matrix")
            try:
                InitialLaw.fixed(m[0])
            except UBMError as exc:
                raise ConfigError("initial_file", str(exc)) from exc
        elif self.initial_file is not None:
            raise ConfigError("initial_file", "only valid with initial_law = 'fixed'")

    # -- derived ----------------------------------------------------------

    @property
    def tolerances(self) -> Tolerances:
        return DEFAULT_TOLERANCES.with_overrides(hermitian=self.tol_hermitian, unitary=self.tol_unitary)

    @property
    def is_centered(self) -> bool:
        if self.centered is not None:
            return self.centered
        return self.initial_law == "identity"

    @property
    def limit_alpha(self) -> Alpha:
        return Alpha.parse(self.alpha_n if self.alpha_limit is None else self.alpha_limit)

    def initial(self) -> InitialLaw:
        if self.initial_law == "fixed":
            return InitialLaw.fixed(read_matrix_file(self.initial_file, key="initial_file")[0])
        return InitialLaw(self.initial_law)

    def grid(self):
        return rescaled_grid(self.alpha_n, self.outer_times, self.step_cap)


def _int(key, v, lo) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, np.integer, float)) or int(v) != v:
        raise ConfigError(key, f"must be an integer, got {v!r}")
    v = int(v)
    if v < lo:
        raise ConfigError(key, f"must be at least {lo}, got {v}")
    return v


def _real(key, v, positive=False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float, np.integer, np.floating)):
        raise ConfigError(key, f"must be a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(key, "must be finite")
    if positive and v <= 0:
        raise ConfigError(key, f"must be positive, got {v}")
    if not positive and v < 0:
        raise ConfigError(key, f"must be nonnegative, got {v}")
    return v


def parse_scenario(text: str, base_dir: str | Path | None = None) -> Scenario:
    """Parse a TOML scenario document strictly."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<document>", f"invalid TOML: {exc}") from exc
    return Scenario.from_dict(doc, base_dir)


def load_document(path: str | Path) -> dict:
    """Read a (possibly partial) scenario document, rejecting unknown keys."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {p}: {exc}") from exc
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<document>", f"invalid TOML: {exc}") from exc
    known = {f.name for f in fields(Scenario)} - {"custom_matrices"}
    for key in doc:
        if key not in known:
            raise ConfigError(key, "unknown key")
    for key in ("matrix_file", "initial_file"):
        if doc.get(key) is not None and not Path(doc[key]).is_absolute():
            doc[key] = str(p.parent / doc[key])
    return doc


def load_scenario(path: str | Path) -> Scenario:
    """Read and validate a complete scenario file."""
    return Scenario.from_dict(load_document(path))


def read_matrix_file(path: str | Path, key: str = "matrix_file") -> np.ndarray:
    """Read ``k`` complex ``n x n`` matrices.

    First line ``n k``; then ``k`` blocks of ``n`` rows, each row holding
    ``n`` pairs ``re im``.  Blank lines and ``#`` comments are ignored.
    """
    p = Path(path)
    try:
        lines = p.read_text().splitlines()
    except OSError as exc:
        raise ConfigError(key, f"cannot read {p}: {exc}") from exc
    rows = [ln.split("#", 1)[0].split() for ln in lines]
    rows = [r for r in rows if r]
    if not rows or len(rows[0]) != 2:
        raise ConfigError(key, f"{p}: first line must be 'n k'")
    try:
        n, k = int(rows[0][0]), int(rows[0][1])
        if n < 1 or k < 1:
            raise ValueError
        body = rows[1:]
        if len(body) != n * k:
            raise ConfigError(key, f"{p}: expected {n * k} matrix rows, found {len(body)}")
        for i, r in enumerate(body):
            if len(r) != 2 * n:
                raise ConfigError(key, f"{p}: matrix row {i + 1} has {len(r)} numbers, expected {2 * n}")
        vals = np.array([[float(x) for x in r] for r in body])
    except ValueError as exc:
        raise ConfigError(key, f"{p}: malformed number ({exc})") from exc
    m = (vals[:, 0::2] + 1j * vals[:, 1::2]).reshape(k, n, n)
    if not np.all(np.isfinite(m)):
        raise ConfigError(key, f"{p}: non-finite entry")
    return m


def write_matrix_file(path: str | Path, matrices) -> None:
    m = np.asarray(matrices, dtype=np.complex128)
    if m.ndim == 2:
        m = m[None]
    k, n, _ = m.shape
    out = [f"{n} {k}"]
    for a in m:
        for row in a:
            out.append(" ".join(f"{float(z.real)!r} {float(z.imag)!r}" for z in row))
    Path(path).write_text("\n".join(out) + "\n")


def sparse_real_matrix(n: int, density: float, seed: int) -> np.ndarray:
    """i.i.d. real entries: 0 with probability ``1 - density``, else ``N(0, 1/(n density))``.

    Then ``E Tr(AA^*)/n = 1``.  Drawn from the auxiliary stream of ``seed``.
    """
    g = RngStream(seed, AUX_STREAM).generator
    mask = g.random((n, n)) < density
    vals = g.standard_normal((n, n)) / math.sqrt(n * density)
    return np.where(mask, vals, 0.0).astype(np.complex128)


def build_observables(sc: Scenario) -> ObservableFamily:
    """The matrices ``A_l`` named by the scenario."""
    n = sc.n
    if sc.observable == "elementary_corner":
        mats = corner_observables(n, sc.corner_size)
    elif sc.observable == "entries":
        mats = np.zeros((len(sc.entries), n, n), dtype=np.complex128)
        for l, (a, b) in enumerate(sc.entries):
            mats[l, b - 1, a - 1] = math.sqrt(n)
    elif sc.observable == "identity":
        mats = np.eye(n, dtype=np.complex128)[None]
    elif sc.observable == "sparse_real":
        mats = sparse_real_matrix(n, sc.density, sc.seed)[None]
    else:
        mats = sc.custom_matrices if sc.custom_matrices is not None else read_matrix_file(sc.matrix_file)
    return ObservableFamily(mats, sc.alpha_n)


def engine_columns(sc: Scenario, obs: ObservableFamily) -> int:
    """Columns to simulate: all of them for the full engine, the support otherwise."""
    c = obs.support_columns()
    if sc.engine == "full":
        return sc.n
    if sc.engine == "frame":
        if 2 * c > sc.n:
            raise ConfigError("engine", f"frame engine needs 2*{c} <= n = {sc.n}")
        return c
    return c if 2 * c <= sc.n else sc.n


def simulate_scenario(sc: Scenario, threads: int | None = None, stream_offset: int = 0):
    """Run the scenario's ensemble; returns ``(EnsembleResult, grid)``."""
    obs = build_observables(sc)
    grid = sc.grid()
    stat = trace_statistic(obs, sc.is_centered)
    res = simulate_ensemble(sc.n, sc.initial(), grid, sc.replications, sc.seed, stat,
                            columns=engine_columns(sc, obs), threads=threads,
                            stream_offset=stream_offset)
    if res.max_defect > sc.tolerances.unitary:
        raise NotUnitaryError(f"unitarity defect {res.max_defect:.3e} exceeds {sc.tolerances.unitary:.1e}")
    return res, grid
