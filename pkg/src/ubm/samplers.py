"""Random primitives: Hermitian increments, Haar unitaries, permutations.

Every draw goes through an :class:`RngStream`.  A stream is a Philox
generator keyed by ``(seed, stream_id)``, so replication ``i`` of an ensemble
always sees the same numbers regardless of how replications are scheduled
over threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError
from .linalg import dagger

__all__ = [
    "RngStream", "hermitian_increment", "hermitian_increments",
    "hermitian_from_normals", "haar_unitary", "haar_frame",
    "permutation_matrix", "standard_complex_gaussian",
]

_U64 = 1 << 64


@dataclass
class RngStream:
    """Independent random stream for one replication.

    Parameters
    ----------
    seed : int
        Experiment seed in ``[0, 2**64)``.
    stream_id : int
        Replication index in ``[0, 2**64)``.
    """

    seed: int
    stream_id: int = 0
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or not 0 <= int(v) < _U64:
                raise DomainError(f"{name} must be an integer in [0, 2**64), got {v!r}")
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def child(self, tag: int) -> "RngStream":
        """A stream reserved for auxiliary draws (observable construction etc.)."""
        s = RngStream.__new__(RngStream)
        s.seed, s.stream_id = self.seed, self.stream_id
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id), int(tag)))
        s.generator = np.random.Generator(np.random.Philox(ss))
        return s


def _check_n(n) -> int:
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise DimensionError(f"dimension must be a positive integer, got {n!r}")
    return int(n)


def hermitian_from_normals(n: int, dt: float, z: np.ndarray) -> np.ndarray:
    """Assemble Hermitian increments from standard normals.

    ``z`` has shape ``(..., n*n)`` laid out as ``n`` diagonal values, then
    the real parts and then the imaginary parts of the strict upper triangle
    in row-major order.
    """
    iu = np.triu_indices(n, 1)
    m = iu[0].size
    sd = np.sqrt(dt / n)
    h = np.zeros(z.shape[:-1] + (n, n), dtype=np.complex128)
    idx = np.arange(n)
    h[..., idx, idx] = sd * z[..., :n]
    off = (sd / np.sqrt(2.0)) * (z[..., n:n + m] + 1j * z[..., n + m:n + 2 * m])
    h[..., iu[0], iu[1]] = off
    h[..., iu[1], iu[0]] = np.conj(off)
    return h


def hermitian_increments(n: int, dt: float, rng: RngStream, count: int) -> np.ndarray:
    """``count`` independent increments stacked along axis 0."""
    n = _check_n(n)
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt!r}")
    z = rng.generator.standard_normal((count, n * n))
    return hermitian_from_normals(n, dt, z)


def hermitian_increment(n: int, dt: float, rng: RngStream) -> np.ndarray:
    """One increment of Hermitian Brownian motion over a step ``dt``.

    Diagonal entries are real ``N(0, dt/n)``.  Strict upper entries have
    independent real and imaginary parts of variance ``dt/(2n)``, and the
    lower triangle is the conjugate.  Hence ``E[dH^2] = dt I``.
    """
    return hermitian_increments(n, dt, rng, 1)[0]


def standard_complex_gaussian(k: int, rng: RngStream) -> np.ndarray:
    """``k`` i.i.d. circular complex Gaussians with ``E|Z|^2 = 1``."""
    k = _check_n(k)
    z = rng.generator.standard_normal((2, k))
    return (z[0] + 1j * z[1]) / np.sqrt(2.0)


def haar_frame(n: int, p: int, rng: RngStream) -> np.ndarray:
    """First ``p`` columns of a Haar unitary, shape ``(n, p)``.

    The Ginibre matrix is drawn column by column, so ``haar_frame(n, p)``
    equals the first ``p`` columns of ``haar_unitary(n)`` for the same stream
    state.  QR alone is not Haar distributed: the phases of ``diag(R)`` are
    moved into ``Q`` so that ``R`` has a positive diagonal.
    """
    n = _check_n(n)
    p = _check_n(p)
    if p > n:
        raise DimensionError(f"frame width {p} exceeds dimension {n}")
    z = rng.generator.standard_normal((p, 2, n))
    g = (z[:, 0, :] + 1j * z[:, 1, :]).T / np.sqrt(2.0)
    q, r = np.linalg.qr(g)
    d = np.diagonal(r).copy()
    absd = np.abs(d)
    d = np.where(absd > 0, d / np.where(absd > 0, absd, 1.0), 1.0)
    return q * d[None, :]


def haar_unitary(n: int, rng: RngStream) -> np.ndarray:
    """Haar distributed ``n x n`` unitary (phase-corrected Ginibre QR)."""
    return haar_frame(n, n, rng)


def permutation_matrix(n: int, rng: RngStream) -> np.ndarray:
    """Uniform random permutation matrix (rows of the identity shuffled)."""
    n = _check_n(n)
    return np.eye(n, dtype=np.complex128)[rng.generator.permutation(n)]


def plain_qr_unitary(n: int, rng: RngStream) -> np.ndarray:
    """QR of a Ginibre matrix without the phase fix.

    Not Haar distributed; kept only as a negative control for tests.
    """
    z = rng.generator.standard_normal((n, 2, n))
    g = (z[:, 0, :] + 1j * z[:, 1, :]).T / np.sqrt(2.0)
    return np.linalg.qr(g)[0]


def block_lanczos_noise_size(n: int, c: int, levels: int) -> tuple[int, list[int], list[tuple[int, int]]]:
    """Layout of the reduced block-tridiagonal GUE model.

    Returns ``(normals, block_sizes, gamma_shapes)`` where ``gamma_shapes``
    lists ``(level, shape)`` pairs for the diagonal of each coupling block.
    """
    sizes = []
    d = n
    while d > 0 and len(sizes) < levels:
        s = min(c, d)
        sizes.append(s)
        d -= s
    normals = 0
    gammas = []
    d = n
    for j, s in enumerate(sizes):
        normals += s * s
        d -= s
        if j + 1 < len(sizes):
            s_next = sizes[j + 1]
            for k in range(s_next):
                gammas.append((j, d - k))
            # strictly upper part of an (s_next x s) trapezoid, complex
            normals += 2 * sum(s - k - 1 for k in range(s_next))
    return normals, sizes, gammas


def reduced_gue(n: int, c: int, sizes: list[int], z: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Block-tridiagonal matrix unitarily equivalent to the leading part of GUE(n).

    A GUE matrix ``T`` (unit off-diagonal variance) is conjugated, by a
    unitary fixing the first ``c`` coordinates, into block-tridiagonal form
    with GUE(c) diagonal blocks and upper-triangular coupling blocks whose
    diagonals are ``sqrt(Gamma(d - k))``.  Keeping the first ``len(sizes)``
    blocks gives a truncation that leaves the top-left block of ``exp(i s T)``
    correct to order ``2 len(sizes)`` in ``s``.

    ``z`` and ``g`` are batches of standard normals and standard gamma
    variates laid out as in :func:`block_lanczos_noise_size`.
    """
    batch = z.shape[:-1]
    m = sum(sizes)
    t = np.zeros(batch + (m, m), dtype=np.complex128)
    pos = 0
    zi = 0
    gi = 0
    inv2 = 1.0 / np.sqrt(2.0)
    for j, s in enumerate(sizes):
        sl = slice(pos, pos + s)
        a = np.zeros(batch + (s, s), dtype=np.complex128)
        ii = np.arange(s)
        a[..., ii, ii] = z[..., zi:zi + s]
        zi += s
        iu = np.triu_indices(s, 1)
        q = iu[0].size
        if q:
            off = inv2 * (z[..., zi:zi + q] + 1j * z[..., zi + q:zi + 2 * q])
            zi += 2 * q
            a[..., iu[0], iu[1]] = off
            a[..., iu[1], iu[0]] = np.conj(off)
        t[..., sl, sl] = a
        if j + 1 < len(sizes):
            sn = sizes[j + 1]
            r = np.zeros(batch + (sn, s), dtype=np.complex128)
            for k in range(sn):
                r[..., k, k] = np.sqrt(g[..., gi])
                gi += 1
                w = s - k - 1
                if w:
                    r[..., k, k + 1:] = inv2 * (z[..., zi:zi + w] + 1j * z[..., zi + w:zi + 2 * w])
                    zi += 2 * w
            nsl = slice(pos + s, pos + s + sn)
            t[..., nsl, sl] = r
            t[..., sl, nsl] = dagger(r)
        pos += s
    return t
