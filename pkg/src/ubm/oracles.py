"""Closed-form moments at finite n and covariances of the limit laws.

Conventions
-----------
``V_t = exp(t/2) U_t`` where ``U`` is the Brownian motion on U(n) started at
the identity, so ``dV = i dH V``.  Finite-n formulas take the dimension ``n``
explicitly and check it against the matrix shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DimensionError, DomainError
from .linalg import complex_matrix

__all__ = [
    "Alpha", "LimitData", "SecondMomentInternals", "mixed_moment",
    "bilinear_moment", "second_moment", "second_moment_internals",
    "second_moment_ode", "u_cd", "v_cd", "limit_covariance", "f_alpha",
    "corner_limit_covariance", "haar_moment_second",
    "haar_moment_fourth_bound", "haar_pair_moments", "permutation_trace_bounds",
    "permutation_limit_law", "poisson_pmf", "finite_n_covariance",
    "corner_variance_ratio",
]


class _AlphaKind(str, Enum):
    ZERO = "zero"
    FINITE = "finite"
    INFINITY = "infinity"


@dataclass(frozen=True)
class Alpha:
    """Extended nonnegative real: ``Alpha.zero()``, ``Alpha.finite(x)``, ``Alpha.infinity()``."""

    kind: _AlphaKind
    value: float = 0.0

    def __post_init__(self):
        kind = _AlphaKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is _AlphaKind.FINITE and not (self.value > 0 and math.isfinite(self.value)):
            raise DomainError(f"finite alpha must be positive, got {self.value}")

    @classmethod
    def zero(cls) -> "Alpha":
        return cls(_AlphaKind.ZERO)

    @classmethod
    def finite(cls, x: float) -> "Alpha":
        return cls(_AlphaKind.FINITE, float(x))

    @classmethod
    def infinity(cls) -> "Alpha":
        return cls(_AlphaKind.INFINITY)

    @classmethod
    def parse(cls, x) -> "Alpha":
        """Accept an :class:`Alpha`, a nonnegative number, or ``"inf"``/``"zero"``."""
        if isinstance(x, Alpha):
            return x
        if isinstance(x, str):
            s = x.strip().lower()
            if s in ("inf", "infinity", "+inf"):
                return cls.infinity()
            if s in ("0", "zero"):
                return cls.zero()
            x = float(s)
        x = float(x)
        if x == 0:
            return cls.zero()
        if math.isinf(x) and x > 0:
            return cls.infinity()
        return cls.finite(x)

    @property
    def is_zero(self) -> bool:
        return self.kind is _AlphaKind.ZERO

    @property
    def is_infinite(self) -> bool:
        return self.kind is _AlphaKind.INFINITY

    def __str__(self) -> str:
        if self.is_zero:
            return "0"
        if self.is_infinite:
            return "inf"
        return repr(self.value)


def _check_time(*ts):
    for t in ts:
        if not (t >= 0 and math.isfinite(t)):
            raise DomainError(f"time must be finite and nonnegative, got {t}")


def _square(a, n=None) -> np.ndarray:
    a = complex_matrix(a)
    if n is not None and a.shape[0] != n:
        raise DimensionError(f"matrix is {a.shape[0]}x{a.shape[0]}, expected n={n}")
    return a


def _tr(x) -> complex:
    return complex(np.trace(x))


def f_alpha(alpha, t: float) -> float:
    """``t`` if alpha is 0, ``log(alpha t + 1)/alpha`` if finite, 0 if infinite."""
    _check_time(t)
    a = Alpha.parse(alpha)
    if a.is_zero:
        return float(t)
    if a.is_infinite:
        return 0.0
    return math.log1p(a.value * t) / a.value


def mixed_moment(a, n: int, t: float) -> complex:
    """``E Tr(A V_t A V_t) = Tr(A^2) cosh(t/n) - (Tr A)^2 sinh(t/n)``."""
    _check_time(t)
    a = _square(a, n)
    return _tr(a @ a) * math.cosh(t / n) - _tr(a) ** 2 * math.sinh(t / n)


def bilinear_moment(a, b, n: int, t: float) -> complex:
    """``E Tr(A V_t) Tr(B V_t) = Tr A Tr B cosh(t/n) - Tr(AB) sinh(t/n)``."""
    _check_time(t)
    a = _square(a, n)
    b = _square(b, n)
    return _tr(a) * _tr(b) * math.cosh(t / n) - _tr(a @ b) * math.sinh(t / n)


def u_cd(c, d, n: int, t: float) -> complex:
    """``E Tr(V_t C V_t^* D) = (e^t - 1) Tr C Tr D / n + Tr(CD)``."""
    _check_time(t)
    c = _square(c, n)
    d = _square(d, n)
    return math.expm1(t) * _tr(c) * _tr(d) / n + _tr(c @ d)


def v_cd(c, d, n: int, t: float) -> complex:
    """``E Tr(V_t C) Tr(V_t^* D) = (e^t - 1) Tr(CD) / n + Tr C Tr D``."""
    _check_time(t)
    c = _square(c, n)
    d = _square(d, n)
    return math.expm1(t) * _tr(c @ d) / n + _tr(c) * _tr(d)


@dataclass(frozen=True)
class SecondMomentInternals:
    """Constants of the closed form for ``E|Tr(A V_t A V_t)|^2``.

    All quantities refer to the rescaled matrix with ``Tr(AA*) = n``; ``scale``
    is ``(Tr(AA*)/n)^2`` for the original matrix.
    """

    n: int
    kappa: float
    theta: float
    mu: float
    nu: float
    f0: float
    s_term: float
    scale: float

    def w(self, t: float) -> float:
        n2 = self.n * self.n
        e2, e1 = math.expm1(2 * t), math.expm1(t)
        return (-2 * self.kappa / (n2 - 1) * e2 - 8 * self.theta / (n2 - 4) * e1
                + 2 * e2 + 4 * (self.s_term - 1) * e1)

    def f(self, t: float) -> float:
        """Second moment of the rescaled matrix."""
        x = 2 * t / self.n
        return self.f0 - self.mu * math.sinh(x) - self.nu * (math.cosh(x) - 1) + self.w(t)


def second_moment_internals(a, n: int) -> SecondMomentInternals:
    """Assemble kappa, theta, mu, nu for ``A`` (requires ``n >= 3``)."""
    if n < 3:
        raise DomainError("formula undefined below n=3")
    a = _square(a, n)
    nrm = _tr(a @ a.conj().T).real
    if nrm == 0:
        raise DomainError("A = 0 has no normalized form")
    a = a * math.sqrt(n / nrm)
    ah = a.conj().T
    tra = _tr(a)
    tra2 = _tr(a @ a)
    k4 = _tr(a @ ah @ a @ ah).real
    s4 = _tr(a @ a @ ah @ ah).real
    c3 = _tr(ah @ a @ ah)
    n2 = n * n
    kappa = k4 / n - 1
    cross = (tra * c3).real
    theta = 2 - k4 / n - s4 / n - abs(tra) ** 2 + cross
    mu = (tra * tra * np.conj(tra2)).real - 2 * n * kappa / (n2 - 1) - 4 * n * theta / (n2 - 4)
    nu = (-0.5 * abs(tra2) ** 2 - 0.5 * abs(tra) ** 4 + 2 * cross
          - 2 * n2 * kappa / (n2 - 1) - 2 * n2 * theta / (n2 - 4))
    return SecondMomentInternals(n, kappa, theta, float(mu), float(nu), abs(tra2) ** 2,
                                 s4 / n, (nrm / n) ** 2)


def second_moment(a, n: int, t: float) -> float:
    """``E |Tr(A V_t A V_t)|^2`` in closed form (``n >= 3``)."""
    _check_time(t)
    if n < 3:
        raise DomainError("formula undefined below n=3")
    a = _square(a, n)
    if not np.any(a):
        return 0.0
    p = second_moment_internals(a, n)
    return p.scale * p.f(t)


def second_moment_ode(a, n: int, t: float, rtol: float = 1e-12, atol: float = 1e-14) -> float:
    """The same moment by integrating the linear system for ``(f, g, h)``.

    ``f = E|Tr(AVAV)|^2``, ``g = Re E[Tr(AVAV) conj(Tr(AV))^2]`` and
    ``h = E|Tr(AV)|^4`` satisfy

    ``n f' = -2g + 4 e^t u(AA*, A*A)``,
    ``n g' = -f - h + 4 e^t Re v(A, A*AA*)``,
    ``n h' = -2g + 4 e^t Tr(AA*) v(A, A*)``.

    Used as an independent check on :func:`second_moment`.
    """
    _check_time(t)
    a = _square(a, n)
    ah = a.conj().T
    q = _tr(a @ ah).real
    tra, tra2 = _tr(a), _tr(a @ a)
    aah, aha, ahaah = a @ ah, ah @ a, ah @ a @ ah
    # u and v are affine in (e^t - 1); precompute their coefficients
    u0, u1 = _tr(aah @ aha).real, (_tr(aah) * _tr(aha)).real / n
    v0, v1 = (tra * _tr(ahaah)).real, _tr(a @ ahaah).real / n
    w0, w1 = q * (tra * _tr(ah)).real, q * _tr(aah).real / n

    def rhs(s, y):
        f, g, h = y
        e = math.exp(s)
        em = math.expm1(s)
        return [(-2 * g + 4 * e * (u0 + u1 * em)) / n,
                (-f - h + 4 * e * (v0 + v1 * em)) / n,
                (-2 * g + 4 * e * (w0 + w1 * em)) / n]

    y0 = [abs(tra2) ** 2, (tra * tra * np.conj(tra2)).real, abs(tra) ** 4]
    if t == 0:
        return float(y0[0])
    scale = max(1.0, q * q)
    sol = solve_ivp(rhs, (0.0, t), y0, method="DOP853", rtol=rtol, atol=atol * scale)
    if not sol.success:
        raise DomainError(f"ODE integration failed: {sol.message}")
    return float(sol.y[0, -1])


# ---------------------------------------------------------------- limits

@dataclass(frozen=True)
class LimitData:
    """Limit parameters ``a_l``, ``p_{ll'}``, ``q_{ll'}`` and ``alpha``."""

    a: np.ndarray
    p: np.ndarray
    q: np.ndarray
    alpha: Alpha

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=np.complex128))
        k = a.shape[0]
        p = np.asarray(self.p, dtype=np.complex128).reshape(k, k)
        q = np.asarray(self.q, dtype=np.complex128).reshape(k, k)
        if not np.allclose(p, p.T, atol=1e-12):
            raise DomainError("p must be symmetric")
        if not np.allclose(q, q.conj().T, atol=1e-12):
            raise DomainError("q must be Hermitian")
        if np.min(np.linalg.eigvalsh((q + q.conj().T) / 2)) < -1e-10:
            raise DomainError("q must be nonnegative")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "alpha", Alpha.parse(self.alpha))

    @classmethod
    def from_observables(cls, matrices, alpha) -> "LimitData":
        """Finite-n values ``Tr A_l / n``, ``Tr(A_l A_l')/n``, ``Tr(A_l A_l'^*)/n``."""
        m = np.asarray(matrices, dtype=np.complex128)
        if m.ndim == 2:
            m = m[None]
        n = m.shape[1]
        a = np.trace(m, axis1=1, axis2=2) / n
        p = np.einsum("lij,mji->lm", m, m) / n
        q = np.einsum("lij,mij->lm", m, m.conj()) / n
        return cls(a, (p + p.T) / 2, (q + q.conj().T) / 2, alpha)


def limit_covariance(data: LimitData, t: float, s: float | None = None):
    """Hermitian and pseudo covariance of the limit process at times ``t, s``.

    Returns ``(E[X_t conj(X_s)^T], E[X_t X_s^T])`` as ``k x k`` arrays.  Both
    are evaluated at ``m = min(t, s)`` (independent increments).
    """
    s = t if s is None else s
    _check_time(t, s)
    m = min(t, s)
    herm = data.q * m
    al = data.alpha
    if al.is_zero:
        pseudo = -data.p * m
    elif al.is_infinite:
        pseudo = np.zeros_like(data.p)
    else:
        lg = math.log1p(al.value * m)
        pseudo = -data.p * lg / al.value + np.outer(data.a, data.a) * lg * lg / (2 * al.value)
    return herm, pseudo


def finite_n_covariance(matrices, alpha_n: float, t: float):
    """Exact covariances of ``X_t`` at finite n for the identity start.

    ``X_t = alpha^{-1/2} Tr[A_l (V_s - I)]`` with ``s = log(alpha t + 1)``.
    Hermitian part ``Tr(A_l A_l'^*) t / n``; pseudo part
    ``[Tr A_l Tr A_l' (cosh(s/n) - 1) - Tr(A_l A_l') sinh(s/n)] / alpha``.
    """
    _check_time(t)
    if not alpha_n > 0:
        raise DomainError("alpha_n must be positive")
    m = np.asarray(matrices, dtype=np.complex128)
    if m.ndim == 2:
        m = m[None]
    n = m.shape[1]
    s = math.log1p(alpha_n * t)
    tr = np.trace(m, axis1=1, axis2=2)
    herm = np.einsum("lij,mij->lm", m, m.conj()) * t / n
    pseudo = (np.outer(tr, tr) * (math.cosh(s / n) - 1)
              - np.einsum("lij,mji->lm", m, m) * math.sinh(s / n)) / alpha_n
    return herm, pseudo


def corner_limit_covariance(alpha, t: float, indices) -> tuple[complex, complex]:
    """``(E[M_ab conj(M_cd)], E[M_ab M_cd])`` for the corner limit ``M_t``."""
    _check_time(t)
    a, b, c, d = indices
    herm = t if (a == c and b == d) else 0.0
    pseudo = -f_alpha(alpha, t) if (a == d and b == c) else 0.0
    return complex(herm), complex(pseudo)


def corner_variance_ratio(alpha, t: float) -> float:
    """Hermitian over skew-Hermitian part of ``E||M_t||_F^2``: ``(t - f)/(t + f)``."""
    f = f_alpha(alpha, t)
    if t == 0:
        raise DomainError("ratio undefined at t = 0")
    return (t - f) / (t + f)


# ---------------------------------------------------------------- Haar, permutations

def haar_moment_second(a, n: int) -> float:
    """``E |Tr(AU)|^2 = Tr(AA^*)/n`` for Haar ``U``."""
    a = _square(a, n)
    return _tr(a @ a.conj().T).real / n


def haar_pair_moments(a, b, n: int) -> tuple[complex, complex]:
    """``(E Tr(AU) conj Tr(BU), E Tr(AU) Tr(BU)) = (Tr(AB^*)/n, 0)``."""
    a = _square(a, n)
    b = _square(b, n)
    return _tr(a @ b.conj().T) / n, 0j


def haar_moment_fourth_bound(a, n: int) -> float:
    """Ceiling ``100 (Tr AA^*)^2 / n^2`` on ``E|Tr(AUAU)|^2`` (``n >= 3``)."""
    if n < 3:
        raise DomainError("bound stated for n >= 3")
    a = _square(a, n)
    return 100.0 * _tr(a @ a.conj().T).real ** 2 / n ** 2


def _nonzeros(x: np.ndarray) -> int:
    return int(np.count_nonzero(x))


def permutation_trace_bounds(a, b, n: int) -> tuple[float, float]:
    """Bounds for a uniform permutation matrix ``S``.

    ``E|Tr(AS)| <= sqrt(C_A) ||A||_F / n`` and
    ``E|Tr(ASBS)| <= (n - 1 + sqrt(C_A C_B)) ||A||_F ||B||_F / (n (n - 1))``,
    where ``C_X`` counts the exactly nonzero entries of ``X``.
    """
    if n < 2:
        raise DomainError("bounds need n >= 2")
    a = _square(a, n)
    b = _square(b, n)
    na = math.sqrt(_tr(a @ a.conj().T).real)
    nb = math.sqrt(_tr(b @ b.conj().T).real)
    ca, cb = _nonzeros(a), _nonzeros(b)
    first = math.sqrt(ca) * na / n
    second = (n - 1 + math.sqrt(ca * cb)) * na * nb / (n * (n - 1))
    return first, second


def permutation_limit_law(q, mu0: str, t: float):
    """Covariance of ``(Z_1..Z_k) P`` at time ``t`` with ``P^2 = q``.

    Returns ``(hermitian, pseudo, P)`` where ``hermitian[l, l'] =
    E[Y_l conj(Y_l')] = q_{l l'} t`` and ``pseudo = 0``.  The row-vector
    product ``Z P`` literally has covariance ``q^T t``; the two agree for real
    ``q`` and we return the orientation matching the finite-n bracket.
    """
    _check_time(t)
    q = np.asarray(q, dtype=np.complex128)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise DimensionError("q must be square")
    if not np.allclose(q, q.conj().T, atol=1e-12):
        raise DomainError("q must be Hermitian")
    lam, vec = np.linalg.eigh((q + q.conj().T) / 2)
    if np.min(lam) < -1e-12 * max(1.0, float(np.max(np.abs(lam)))):
        raise DomainError("q must be nonnegative")
    lam = np.where(lam < 0, 0.0, lam)
    p = (vec * np.sqrt(lam)) @ vec.conj().T
    return q * t, np.zeros_like(q), p


def poisson_pmf(j: int) -> float:
    """``exp(-1)/j!``."""
    if int(j) != j or j < 0:
        raise DomainError(f"j must be a nonnegative integer, got {j}")
    return math.exp(-1.0 - math.lgamma(j + 1))
