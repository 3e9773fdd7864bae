"""Path simulation for Brownian motion on U(n).

The integrator is the multiplicative scheme ``U <- exp(i dH) U`` with
``dH`` a Hermitian Brownian increment over one inner step.  No drift term is
added: ``E exp(i dH) = I - dt/2 I + O(dt^2)`` already produces the ``-U/2``
drift of the SDE.  ``V_t = exp(t/2) U_t`` is recovered when statistics are
extracted.

Two engines share this scheme.

``full``
    propagates the whole matrix; cost ``O(n^3)`` per step.
``frame``
    propagates only the first ``c`` columns.  By unitary invariance of the
    increment, the new frame is ``F Z + Phi sqrt(I - Z* Z)`` where ``Z`` is the
    top-left ``c x c`` block of ``exp(i dH)`` (sampled from a reduced
    block-tridiagonal model of dimension a few ``c``) and ``Phi`` is a uniform
    orthonormal frame in the complement of ``span F``.  The columns produced
    have the same law as the full engine's, at ``O(n c^2)`` per step.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, GridError, NotUnitaryError
from .linalg import DEFAULT_TOLERANCES, dagger, unitarity_defect, unitary_exp_i, unitary_matrix
from .samplers import (RngStream, block_lanczos_noise_size, haar_frame,
                       hermitian_from_normals, reduced_gue)

__all__ = [
    "InitialKind", "InitialLaw", "TimeGrid", "UnitaryPath", "ObservableFamily",
    "LinearStatisticPath", "rescaled_grid", "simulate_path", "simulate_batch",
    "simulate_ensemble", "linear_statistic", "corner_process", "trace_statistic",
    "mixed_trace_statistic", "EnsembleResult", "worker_count", "CHUNK",
]

#: inner steps drawn per RNG call; fixed so results never depend on batching
CHUNK = 32


class InitialKind(str, Enum):
    IDENTITY = "identity"
    HAAR = "haar"
    PERMUTATION = "permutation"
    FIXED = "fixed"


@dataclass(frozen=True)
class InitialLaw:
    """Law of ``U_0``."""

    kind: InitialKind
    matrix: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        kind = InitialKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is InitialKind.FIXED:
            if self.matrix is None:
                raise DimensionError("fixed initial law needs a matrix")
            object.__setattr__(self, "matrix", unitary_matrix(self.matrix))
        elif self.matrix is not None:
            raise DimensionError(f"{kind.value} initial law takes no matrix")

    @classmethod
    def identity(cls) -> "InitialLaw":
        return cls(InitialKind.IDENTITY)

    @classmethod
    def haar(cls) -> "InitialLaw":
        return cls(InitialKind.HAAR)

    @classmethod
    def permutation(cls) -> "InitialLaw":
        return cls(InitialKind.PERMUTATION)

    @classmethod
    def fixed(cls, u) -> "InitialLaw":
        return cls(InitialKind.FIXED, u)

    def sample(self, n: int, rng: RngStream, columns: int | None = None) -> np.ndarray:
        """Draw ``U_0`` (or its first ``columns`` columns)."""
        c = n if columns is None else columns
        k = self.kind
        if k is InitialKind.IDENTITY:
            return np.eye(n, c, dtype=np.complex128)
        if k is InitialKind.HAAR:
            return haar_frame(n, c, rng)
        if k is InitialKind.PERMUTATION:
            perm = rng.generator.permutation(n)
            return np.eye(n, dtype=np.complex128)[perm][:, :c]
        if self.matrix.shape != (n, n):
            raise DimensionError(f"fixed initial matrix has shape {self.matrix.shape}, expected {(n, n)}")
        return np.array(self.matrix[:, :c])


@dataclass(frozen=True)
class TimeGrid:
    """Simulation times ``0 = s_0 < s_1 < ...`` plus the inner step cap.

    ``outer_times`` keeps the un-rescaled times ``t_j`` when the grid came
    from :func:`rescaled_grid`; otherwise it equals ``times``.
    """

    times: tuple
    step_cap: float = 0.01
    outer_times: tuple | None = None

    def __post_init__(self):
        ts = tuple(float(x) for x in self.times)
        if not ts:
            raise GridError("grid must contain at least the time 0")
        if ts[0] != 0.0:
            raise GridError(f"grid must start at 0, got {ts[0]}")
        if any(not math.isfinite(x) for x in ts):
            raise GridError("grid times must be finite")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise GridError("grid times must be strictly increasing")
        if not (self.step_cap > 0 and math.isfinite(self.step_cap)):
            raise GridError(f"step_cap must be positive, got {self.step_cap}")
        object.__setattr__(self, "times", ts)
        object.__setattr__(self, "step_cap", float(self.step_cap))
        outer = ts if self.outer_times is None else tuple(float(x) for x in self.outer_times)
        if len(outer) != len(ts):
            raise GridError("outer_times and times differ in length")
        object.__setattr__(self, "outer_times", outer)

    def substeps(self) -> list[tuple[int, float]]:
        """``(count, dt)`` of equal inner steps for each outer interval."""
        out = []
        for a, b in zip(self.times, self.times[1:]):
            k = max(1, math.ceil((b - a) / self.step_cap - 1e-12))
            out.append((k, (b - a) / k))
        return out

    def index(self, t: float, outer: bool = True, tol: float = 1e-12) -> int:
        ref = self.outer_times if outer else self.times
        for j, x in enumerate(ref):
            if abs(x - t) <= tol * max(1.0, abs(t)):
                return j
        raise GridError(f"time {t} is not on the grid")


def rescaled_grid(alpha_n: float, outer_times: Sequence[float], step_cap: float = 0.01) -> TimeGrid:
    """Inner grid ``s_j = log(alpha_n t_j + 1)``."""
    if not (alpha_n > 0 and math.isfinite(alpha_n)):
        raise GridError(f"alpha_n must be positive and finite, got {alpha_n}")
    outer = [float(t) for t in outer_times]
    if not outer or outer[0] != 0.0:
        raise GridError("outer_times must start at 0")
    if any(b <= a for a, b in zip(outer, outer[1:])):
        raise GridError("outer_times must be strictly increasing")
    s = [math.log1p(alpha_n * t) for t in outer]
    if any(b <= a for a, b in zip(s, s[1:])):
        raise GridError("rescaled times collapse in floating point")
    return TimeGrid(tuple(s), step_cap, tuple(outer))


@dataclass
class UnitaryPath:
    """One trajectory stored at the grid times.

    ``states`` has shape ``(len(grid.times), n, c)``; ``c == n`` for the full
    engine and ``c < n`` for a frame path holding the first ``c`` columns.
    """

    grid: TimeGrid
    states: np.ndarray
    initial: InitialLaw

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def columns(self) -> int:
        return self.states.shape[2]

    def V(self, j: int) -> np.ndarray:
        return math.exp(self.grid.times[j] / 2) * self.states[j]


@dataclass(frozen=True)
class ObservableFamily:
    """Observables ``A_1..A_k`` (stacked, shape ``(k, n, n)``) and ``alpha_n``."""

    matrices: np.ndarray
    alpha_n: float = 1.0

    def __post_init__(self):
        m = np.array(self.matrices, dtype=np.complex128)
        if m.ndim == 2:
            m = m[None]
        if m.ndim != 3 or m.shape[0] < 1 or m.shape[1] != m.shape[2] or m.shape[1] < 1:
            raise DimensionError(f"observables must have shape (k, n, n), got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise DimensionError("observables have non-finite entries")
        if not (self.alpha_n > 0 and math.isfinite(self.alpha_n)):
            raise DimensionError(f"alpha_n must be positive, got {self.alpha_n}")
        m.flags.writeable = False
        object.__setattr__(self, "matrices", m)
        object.__setattr__(self, "alpha_n", float(self.alpha_n))

    @property
    def k(self) -> int:
        return self.matrices.shape[0]

    @property
    def n(self) -> int:
        return self.matrices.shape[1]

    def support_columns(self) -> int:
        """Columns of ``V`` that ``Tr(A_l V)`` depends on: ``1 + last nonzero row``."""
        rows = np.nonzero(np.any(self.matrices != 0, axis=(0, 2)))[0]
        return int(rows[-1]) + 1 if rows.size else 1

    def traces(self) -> np.ndarray:
        return np.trace(self.matrices, axis1=1, axis2=2)


@dataclass
class LinearStatisticPath:
    """``X_t`` values at the outer grid times, shape ``(len(times), k)``."""

    grid: TimeGrid
    values: np.ndarray


def worker_count(threads: int | None = None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("UBM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


# ---------------------------------------------------------------- stepping

def _lanczos_levels(dt: float, c: int) -> int:
    # the top block of exp(iX) is exact through order 2m - 1 when m blocks
    # are kept; ||X|| is about 2 sqrt(dt), bounded here with a margin
    r = 2.4 * math.sqrt(dt)
    m = 1
    while 2.0 * r ** (2 * m) / math.factorial(2 * m) > 1e-15:
        m += 1
    return m


def _taylor_order(r: float) -> int:
    k = 1
    while r ** (k + 1) / math.factorial(k + 1) * math.exp(r) > 1e-16:
        k += 1
    return k


class _FrameStepper:
    def __init__(self, n: int, c: int, dt: float):
        self.n, self.c, self.dt = n, c, dt
        self.levels = _lanczos_levels(dt, c)
        nz, self.sizes, gam = block_lanczos_noise_size(n, c, self.levels)
        self.top_normals = nz
        self.shapes = np.array([s for _, s in gam], dtype=float)
        self.normals = nz + 2 * n * c
        self.sigma = math.sqrt(dt / n)
        m = sum(self.sizes)
        self.r_cap = math.sqrt(3.0 * m * dt) + 0.5 * math.sqrt(dt)
        self.order = _taylor_order(self.r_cap)

    def draw(self, rng: RngStream, count: int):
        z = rng.generator.standard_normal((count, self.normals))
        g = rng.generator.standard_gamma(self.shapes, size=(count, self.shapes.size))
        return z, g

    def step(self, f: np.ndarray, z: np.ndarray, g: np.ndarray) -> np.ndarray:
        n, c = self.n, self.c
        x = self.sigma * reduced_gue(n, c, self.sizes, z[:, :self.top_normals], g)
        ztop = self._top_block(x)
        zz = z[:, self.top_normals:].reshape(-1, 2, n, c)
        y = (zz[:, 0] + 1j * zz[:, 1])
        phi = _complement_frame(f, y)
        gmat = np.eye(c) - dagger(ztop) @ ztop
        return f @ ztop + phi @ _psd_sqrt(gmat)


    def _top_block(self, x: np.ndarray) -> np.ndarray:
        """Top-left ``c x c`` block of ``exp(iX)``.

        Taylor series on the first ``c`` columns, with a fixed order valid for
        Frobenius norm up to ``r_cap``; rarer larger samples use ``eigh``.
        """
        c = self.c
        y = np.zeros(x.shape[:-1] + (c,), dtype=np.complex128)
        y[:, :c, :] = np.eye(c)
        acc = y.copy()
        for k in range(1, self.order + 1):
            y = (1j / k) * (x @ y)
            acc += y
        ztop = acc[:, :c, :]
        big = np.sqrt(np.sum(np.abs(x) ** 2, axis=(1, 2))) > self.r_cap
        if np.any(big):
            lam, q = np.linalg.eigh(x[big])
            qt = q[:, :c, :]
            ztop[big] = (qt * np.exp(1j * lam)[:, None, :]) @ dagger(qt)
        return ztop


def _complement_frame(f: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Orthonormalize Gaussian columns ``y`` against ``span f`` and each other."""
    fh = dagger(f)
    for _ in range(2):
        y = y - f @ (fh @ y)
    c = y.shape[-1]
    cols = []
    for j in range(c):
        v = y[..., j]
        for _ in range(2):
            for u in cols:
                v = v - u * np.einsum("bi,bi->b", u.conj(), v)[:, None]
        v = v / np.linalg.norm(v, axis=-1, keepdims=True)
        cols.append(v)
    return np.stack(cols, axis=-1)


def _psd_sqrt(g: np.ndarray) -> np.ndarray:
    c = g.shape[-1]
    if c == 1:
        return np.sqrt(np.maximum(g.real, 0.0)).astype(np.complex128)
    if c == 2:
        det = np.maximum((g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] * g[:, 1, 0]).real, 0.0)
        sd = np.sqrt(det)
        tr = np.maximum((g[:, 0, 0] + g[:, 1, 1]).real + 2 * sd, 0.0)
        den = np.sqrt(tr)
        safe = np.where(den > 0, den, 1.0)
        out = (g + sd[:, None, None] * np.eye(2)) / safe[:, None, None]
        return np.where(den[:, None, None] > 0, out, 0.0)
    lam, q = np.linalg.eigh(g)
    return (q * np.sqrt(np.maximum(lam, 0.0))[:, None, :]) @ dagger(q)


class _FullStepper:
    def __init__(self, n: int, dt: float):
        self.n, self.dt = n, dt
        self.normals = n * n

    def draw(self, rng: RngStream, count: int):
        return rng.generator.standard_normal((count, self.normals)), None

    def step(self, u: np.ndarray, z: np.ndarray, g) -> np.ndarray:
        return unitary_exp_i(hermitian_from_normals(self.n, self.dt, z)) @ u


def _stepper(n: int, columns: int, dt: float):
    return _FullStepper(n, dt) if columns >= n else _FrameStepper(n, columns, dt)


def simulate_batch(n: int, init: InitialLaw, grid: TimeGrid, streams: Sequence[RngStream],
                   columns: int | None = None) -> np.ndarray:
    """Simulate one path per stream; returns states of shape ``(B, m+1, n, c)``.

    Each stream draws its initial state first, then the increments of each
    outer interval in blocks of at most :data:`CHUNK` steps.  The numbers a
    replication consumes therefore depend only on its own stream and the grid.
    """
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise DimensionError(f"dimension must be a positive integer, got {n!r}")
    if not isinstance(grid, TimeGrid):
        raise GridError("grid must be a TimeGrid")
    c = n if columns is None else int(columns)
    if not 1 <= c <= n:
        raise DimensionError(f"columns must lie in [1, {n}], got {c}")
    if 2 * c > n and c < n:
        # the complement cannot host a c-frame; run the full engine instead
        return simulate_batch(n, init, grid, streams, n)[..., :c]
    b = len(streams)
    out = np.empty((b, len(grid.times), n, c), dtype=np.complex128)
    u = np.stack([init.sample(n, s, c) for s in streams])
    out[:, 0] = u
    for j, (k, dt) in enumerate(grid.substeps()):
        stepper = _stepper(n, c, dt)
        done = 0
        while done < k:
            cnt = min(CHUNK, k - done)
            draws = [stepper.draw(s, cnt) for s in streams]
            z = np.stack([d[0] for d in draws])
            g = None if draws[0][1] is None else np.stack([d[1] for d in draws])
            for i in range(cnt):
                u = stepper.step(u, z[:, i], None if g is None else g[:, i])
            done += cnt
        out[:, j + 1] = u
    return out


def simulate_path(n: int, init: InitialLaw, grid: TimeGrid, rng: RngStream,
                  columns: int | None = None) -> UnitaryPath:
    """Simulate one trajectory and check unitarity at every stored state."""
    states = simulate_batch(n, init, grid, [rng], columns)[0]
    dev = float(np.max(unitarity_defect(states)))
    if dev > DEFAULT_TOLERANCES.unitary:
        raise NotUnitaryError(f"state drifted from U(n): defect {dev:.3e}")
    return UnitaryPath(grid, states, init)


# ---------------------------------------------------------------- statistics

Statistic = Callable[[np.ndarray, TimeGrid], np.ndarray]


def trace_statistic(obs: ObservableFamily, centered: bool = True) -> Statistic:
    """``alpha^{-1/2} Tr[A_l (V_s - centered I)]`` on batched states ``(B, m+1, n, c)``."""
    scale = 1.0 / math.sqrt(obs.alpha_n)
    tr = obs.traces()

    def stat(states: np.ndarray, grid: TimeGrid) -> np.ndarray:
        c = states.shape[-1]
        a = obs.matrices[:, :c, :]
        if c < obs.n and np.any(obs.matrices[:, c:, :] != 0):
            raise DimensionError(f"observables need more than the {c} simulated columns")
        ev = np.exp(np.asarray(grid.times) / 2)
        raw = np.einsum("lij,btji->btl", a, states) * ev[None, :, None]
        if centered:
            raw = raw - tr[None, None, :]
        return scale * raw

    return stat


def mixed_trace_statistic(a: np.ndarray) -> Statistic:
    """``Tr(A V_s A V_s)``; frames suffice when ``A`` lives in the first rows."""
    a = np.asarray(a, dtype=np.complex128)

    def stat(states: np.ndarray, grid: TimeGrid) -> np.ndarray:
        c = states.shape[-1]
        if c < a.shape[0] and np.any(a[c:, :] != 0):
            raise DimensionError(f"matrix needs more than the {c} simulated columns")
        m = np.einsum("ij,btjk->btik", a[:c, :], states)
        ev = np.exp(np.asarray(grid.times))
        return (np.einsum("btik,btki->bt", m, m) * ev[None, :])[..., None]

    return stat


def linear_statistic(path: UnitaryPath, obs: ObservableFamily, centered: bool = True) -> LinearStatisticPath:
    """``X_{t_j} = alpha^{-1/2} Tr[A_l (V_{s_j} - centered I)]`` along one path."""
    if obs.n != path.n:
        raise DimensionError(f"observables are {obs.n}x{obs.n}, path is n={path.n}")
    vals = trace_statistic(obs, centered)(path.states[None], path.grid)[0]
    return LinearStatisticPath(path.grid, vals)


def corner_observables(n: int, p: int) -> np.ndarray:
    """``sqrt(n) E_{b,a}`` for ``a, b < p`` in row-major order of ``(a, b)``.

    ``Tr(sqrt(n) E_{b,a} V) = sqrt(n) V_{ab}``.
    """
    if p > n or p < 1:
        raise DimensionError(f"corner size {p} must lie in [1, {n}]")
    m = np.zeros((p * p, n, n), dtype=np.complex128)
    for a in range(p):
        for b in range(p):
            m[a * p + b, b, a] = math.sqrt(n)
    return m


def corner_process(path: UnitaryPath, p: int, alpha_n: float) -> np.ndarray:
    """Upper-left ``p x p`` corner of ``sqrt(n/alpha)(V_s - I)`` at each grid time."""
    n = path.n
    if p > n or p < 1:
        raise DimensionError(f"corner size {p} must lie in [1, {n}]")
    if p > path.columns:
        raise DimensionError(f"path holds {path.columns} columns, corner needs {p}")
    obs = ObservableFamily(corner_observables(n, p), alpha_n)
    vals = linear_statistic(path, obs, centered=True).values
    return vals.reshape(len(path.grid.times), p, p)


# ---------------------------------------------------------------- ensembles

@dataclass
class EnsembleResult:
    """Statistic values of shape ``(N, m+1, k)`` and the worst unitarity defect."""

    values: np.ndarray
    max_defect: float
    columns: int


def default_batch_size(n: int, c: int) -> int:
    per = n * c * 16 * 8
    return int(max(1, min(2000, (64 << 20) // per)))


def simulate_ensemble(n: int, init: InitialLaw, grid: TimeGrid, replications: int, seed: int,
                      statistic: Statistic, columns: int | None = None, threads: int | None = None,
                      batch_size: int | None = None, stream_offset: int = 0) -> EnsembleResult:
    """Run ``replications`` paths and reduce each to ``statistic``.

    Replication ``i`` uses ``RngStream(seed, stream_offset + i)``.  Batches
    are a fixed partition of the replication index, and results are written
    by index, so the output is independent of the worker count.
    """
    if int(replications) < 1:
        raise DimensionError("replications must be at least 1")
    replications = int(replications)
    c = n if columns is None else int(columns)
    bs = batch_size or default_batch_size(n, c)
    starts = list(range(0, replications, bs))
    parts: list = [None] * len(starts)
    defects = [0.0] * len(starts)

    def work(i: int):
        lo = starts[i]
        hi = min(lo + bs, replications)
        streams = [RngStream(seed, stream_offset + r) for r in range(lo, hi)]
        states = simulate_batch(n, init, grid, streams, c)
        defects[i] = float(np.max(unitarity_defect(states)))
        parts[i] = statistic(states, grid)

    workers = worker_count(threads)
    if workers == 1 or len(starts) == 1:
        for i in range(len(starts)):
            work(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(work, range(len(starts))))
    return EnsembleResult(np.concatenate(parts, axis=0), max(defects), c)
