"""Dense complex matrix helpers: validated carriers, trace forms and exp(iH).

Matrices are plain ``numpy`` arrays of dtype ``complex128``.  The
constructors :func:`complex_matrix`, :func:`hermitian_matrix` and
:func:`unitary_matrix` validate their input and return read-only copies, so
values can be shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import (DecompositionError, DimensionError, NotHermitianError,
                     NotUnitaryError)

__all__ = [
    "Tolerances", "DEFAULT_TOLERANCES", "complex_matrix", "hermitian_matrix",
    "unitary_matrix", "unitarity_defect", "trace_product", "unitary_exp_i",
    "check_trace_inequalities", "dagger", "elementary",
]


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances used by the validating constructors.

    Attributes
    ----------
    hermitian : float
        Max absolute entrywise deviation ``|M - M*|`` accepted as Hermitian.
    unitary : float
        Max Frobenius norm of ``M* M - I`` accepted as unitary.
    inequality_rtol : float
        Relative slack for the trace inequalities.
    """

    hermitian: float = 1e-12
    unitary: float = 1e-10
    inequality_rtol: float = 1e-9

    def with_overrides(self, **kw) -> "Tolerances":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


DEFAULT_TOLERANCES = Tolerances()


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.complex128, copy=True)
    a.flags.writeable = False
    return a


def dagger(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the last two axes (works on stacks)."""
    return np.conj(np.swapaxes(a, -1, -2))


def elementary(n: int, i: int, j: int) -> np.ndarray:
    """The n x n matrix unit ``E_ij`` (zero-based indices)."""
    e = np.zeros((n, n), dtype=np.complex128)
    e[i, j] = 1.0
    return e


def complex_matrix(a) -> np.ndarray:
    """Validate a square, finite complex matrix and return a frozen copy."""
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise DimensionError(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DimensionError("matrix has non-finite entries")
    return _frozen(a)


def hermitian_matrix(a, atol: float = DEFAULT_TOLERANCES.hermitian) -> np.ndarray:
    """Validate ``a == a*`` entrywise within ``atol``."""
    a = complex_matrix(a)
    dev = np.max(np.abs(a - a.conj().T))
    if dev > atol:
        raise NotHermitianError(f"max |M - M*| = {dev:.3e} exceeds {atol:.1e}")
    return a


def unitarity_defect(u: np.ndarray) -> np.ndarray:
    """Frobenius norm of ``U* U - I``.

    Accepts a single matrix, an ``n x c`` frame of orthonormal columns, or a
    stack of either; returns one value per matrix.
    """
    u = np.asarray(u)
    c = u.shape[-1]
    g = dagger(u) @ u
    g = g - np.eye(c)
    return np.sqrt(np.sum(np.abs(g) ** 2, axis=(-2, -1)))


def unitary_matrix(a, atol: float = DEFAULT_TOLERANCES.unitary) -> np.ndarray:
    """Validate ``||M* M - I||_F <= atol``."""
    a = complex_matrix(a)
    dev = float(unitarity_defect(a))
    if dev > atol:
        raise NotUnitaryError(f"||M*M - I||_F = {dev:.3e} exceeds {atol:.1e}")
    return a


def trace_product(a, b) -> complex:
    """``Tr(AB) = sum_ij A_ij B_ji``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return complex(np.einsum("ij,ji->", a, b))


def unitary_exp_i(h) -> np.ndarray:
    """Return ``exp(iH)`` for Hermitian ``H`` via ``H = Q diag(lam) Q*``.

    ``h`` may be a single matrix or a stack of shape ``(..., n, n)``; no
    Hermitian check is made on stacks (the engine builds them symmetric).
    The result is unitary up to eigensolver roundoff.
    """
    h = np.asarray(h)
    if h.ndim == 2:
        h = hermitian_matrix(h)
    try:
        lam, q = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"Hermitian eigendecomposition failed: {exc}") from exc
    return (q * np.exp(1j * lam)[..., None, :]) @ dagger(q)


def check_trace_inequalities(x, y, g, h, rtol: float = DEFAULT_TOLERANCES.inequality_rtol,
                             atol: float = DEFAULT_TOLERANCES.hermitian):
    """Evaluate the three trace inequalities.

    (i)   ``|Tr(XY)| <= sqrt(Tr XX*) sqrt(Tr YY*)``
    (ii)  ``Tr(G^2) <= (Tr G)^2``
    (iii) ``|Tr(GH)| <= Tr(G) Tr(H)``

    ``G`` and ``H`` must be Hermitian nonnegative.  Each comparison allows a
    relative slack ``rtol`` on the right-hand side.

    Returns
    -------
    tuple of bool
    """
    g = hermitian_matrix(g, atol=atol * max(1.0, float(np.max(np.abs(g)))))
    h = hermitian_matrix(h, atol=atol * max(1.0, float(np.max(np.abs(h)))))
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    n = g.shape[0]
    if x.shape != (n, n) or y.shape != (n, n) or h.shape != (n, n):
        raise DimensionError("all four matrices must share one dimension")

    def leq(lhs, rhs):
        return lhs <= rhs * (1.0 + rtol) + 1e-300

    tr_g = trace_product(g, np.eye(n)).real
    tr_h = trace_product(h, np.eye(n)).real
    first = leq(abs(trace_product(x, y)),
                np.sqrt(trace_product(x, x.conj().T).real) * np.sqrt(trace_product(y, y.conj().T).real))
    second = leq(trace_product(g, g).real, tr_g ** 2)
    third = leq(abs(trace_product(g, h)), tr_g * tr_h)
    return bool(first), bool(second), bool(third)
