"""Logarithmic nonlinearity, its odd-polynomial truncations, and potentials.

The exact nonlinearity is

    f(u) = ln((1 - u)/(1 + u)) + lam * u        on (-1, 1),

with signed infinities outside, and the degree-(2n+1) truncations

    f_n(u) = -2 sum_{k=0}^{n} u^(2k+1)/(2k+1) + lam * u

defined on all of R.  The map u -> f_n(u) - lam*u is odd and monotone
non-increasing; everything the simulator asserts about contraction rests on
that sign property.  The potential F (an antiderivative of -f) feeds the
free-energy monitor, and the quadratic-in-lambda rate polynomial at the
bottom of the module controls the dissipation budgets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import spectral

SERIES_TOL = 1e-12
SERIES_MAX_TERMS = 10_000


class SingularInputError(ValueError):
    """A field value hit the singular set |u| >= 1 of the exact nonlinearity."""


@dataclass(frozen=True)
class PotentialSpec:
    """Nonlinearity selector: coefficient lam plus truncation order.

    n is the polynomial truncation order (degree 2n+1); n = None selects the
    exact logarithm.  active = False disables the nonlinearity entirely
    (f == 0), which is the linear test mode.
    """

    lam: float = 0.0
    n: int | None = None
    active: bool = True

    def __post_init__(self):
        if self.n is not None and self.n < 0:
            raise ValueError(f"truncation order must be >= 0, got {self.n}")

    @classmethod
    def truncated(cls, n: int, lam: float) -> "PotentialSpec":
        return cls(lam=lam, n=n, active=True)

    @classmethod
    def exact(cls, lam: float) -> "PotentialSpec":
        return cls(lam=lam, n=None, active=True)

    @classmethod
    def off(cls) -> "PotentialSpec":
        return cls(lam=0.0, n=None, active=False)

    @property
    def is_truncated(self) -> bool:
        return self.active and self.n is not None

    @property
    def is_exact(self) -> bool:
        return self.active and self.n is None


def _odd_series(u, n: int):
    """sum_{k=0}^{n} u^(2k+1)/(2k+1), Horner in u^2 (exactly odd in u)."""
    u = np.asarray(u, dtype=np.float64)
    u2 = u * u
    acc = np.full_like(u, 1.0 / (2 * n + 1))
    for k in range(n - 1, -1, -1):
        acc *= u2
        acc += 1.0 / (2 * k + 1)
    return u * acc


def nonlinearity_exact(u, lam: float):
    """Exact nonlinearity f; returns signed infinity on |u| >= 1.

    The infinities are the documented values of f outside the open interval,
    carried through as signals rather than raising.
    """
    u_arr = np.asarray(u, dtype=np.float64)
    inside = np.abs(u_arr) < 1.0
    out = np.empty_like(u_arr)
    with np.errstate(divide="ignore", invalid="ignore"):
        np.copyto(
            out,
            np.where(
                inside,
                np.log((1.0 - np.where(inside, u_arr, 0.0)) / (1.0 + np.where(inside, u_arr, 0.0)))
                + lam * u_arr,
                np.where(u_arr <= -1.0, np.inf, -np.inf),
            ),
        )
    if np.isscalar(u) or np.ndim(u) == 0:
        return float(out)
    return out


def nonlinearity_poly(u, spec: PotentialSpec):
    """Polynomial truncation f_n(u) = -2 sum u^(2k+1)/(2k+1) + lam*u."""
    if not spec.is_truncated:
        raise ValueError("nonlinearity_poly requires a truncated PotentialSpec")
    out = -2.0 * _odd_series(u, spec.n) + spec.lam * np.asarray(u, dtype=np.float64)
    if np.isscalar(u) or np.ndim(u) == 0:
        return float(out)
    return out


def nonlinearity_grid(u: np.ndarray, spec: PotentialSpec) -> np.ndarray:
    """Nonlinearity on grid values, dispatching on the spec's mode.

    Exact mode raises SingularInputError when any node sits outside (-1, 1).
    """
    if not spec.active:
        return np.zeros_like(np.asarray(u, dtype=np.float64))
    if spec.is_truncated:
        return nonlinearity_poly(u, spec)
    u = np.asarray(u, dtype=np.float64)
    if np.any(np.abs(u) >= 1.0):
        raise SingularInputError("grid value reached |u| >= 1 in exact mode")
    return np.log((1.0 - u) / (1.0 + u)) + spec.lam * u


def log_potential_part(c: float) -> float:
    """(1+c) ln(1+c) + (1-c) ln(1-c), the lambda-free part of the potential.

    Defined on [-1, 1]; the endpoint limit is 2 ln 2.
    """
    if abs(c) > 1.0:
        raise ValueError(f"argument must lie in [-1, 1], got {c}")
    if abs(c) == 1.0:
        return 2.0 * math.log(2.0)
    return (1.0 + c) * math.log(1.0 + c) + (1.0 - c) * math.log(1.0 - c)


def potential_value(u: float, lam: float) -> float:
    """Potential F(u) = (1+u)ln(1+u) + (1-u)ln(1-u) - lam u^2 / 2.

    F' = -f on (-1, 1); the closure values at u = +-1 are 2 ln 2 - lam/2.
    """
    if abs(u) > 1.0:
        raise ValueError(f"potential argument must lie in [-1, 1], got {u}")
    return log_potential_part(u) - 0.5 * lam * u * u


def potential_poly_value(u, spec: PotentialSpec):
    """Term-wise antiderivative of -f_n:

    F_n(u) = sum_{k=0}^{n} u^(2k+2) / ((2k+1)(k+1)) - lam u^2 / 2.
    """
    if not spec.is_truncated:
        raise ValueError("potential_poly_value requires a truncated PotentialSpec")
    u = np.asarray(u, dtype=np.float64)
    u2 = u * u
    n = spec.n
    acc = np.full_like(u, 1.0 / ((2 * n + 1) * (n + 1)))
    for k in range(n - 1, -1, -1):
        acc *= u2
        acc += 1.0 / ((2 * k + 1) * (k + 1))
    out = u2 * acc - 0.5 * spec.lam * u2
    if np.ndim(out) == 0:
        return float(out)
    return out


def tail_bound(n: int, r: float) -> float:
    """Uniform bound 2 sum_{k>n} r^(2k+1)/(2k+1) on sup_{|u|<=r} |f_n - f|."""
    if not 0.0 <= r < 1.0:
        raise ValueError(f"radius must lie in [0, 1), got {r}")
    total = 0.0
    term_pow = r ** (2 * n + 3)
    r2 = r * r
    for k in range(n + 1, n + 1 + SERIES_MAX_TERMS):
        term = term_pow / (2 * k + 1)
        total += term
        if term < 1e-18:
            break
        term_pow *= r2
    return 2.0 * total


def free_energy_many(coeffs: np.ndarray, spec: PotentialSpec, Q: int | None = None) -> np.ndarray:
    """Free energy (1/2)|v|_1^2 + potential quadrature for states (..., M+1).

    The potential integral uses midpoint quadrature on Q nodes (default
    4(M+1)).  Exact mode demands all node values strictly inside (-1, 1).
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if Q is None:
        Q = spectral.default_grid_size(coeffs.shape[-1] - 1)
    grad_sq = spectral.seminorm_sq_many(coeffs, 1.0)
    if not spec.active:
        return 0.5 * grad_sq
    u = spectral.synthesize_many(coeffs, Q)
    if spec.is_truncated:
        pot = potential_poly_value(u, spec)
    else:
        if np.any(np.abs(u) >= 1.0):
            raise SingularInputError("free energy undefined: grid value reached |u| >= 1")
        pot = (1.0 + u) * np.log(1.0 + u) + (1.0 - u) * np.log(1.0 - u) - 0.5 * spec.lam * u * u
    return 0.5 * grad_sq + np.mean(pot, axis=-1)


def free_energy(v: spectral.ModeVector, spec: PotentialSpec, Q: int | None = None) -> float:
    """Free energy of a single state; see :func:`free_energy_many`."""
    return float(free_energy_many(v.coeffs, spec, Q))


def budget_rate_polynomial(lam: float, c: float) -> float:
    """Drift part of the dissipation budget rate:

    P_c(lam) = (3/2)(1 - lam)^2 - c^2 lam + [(1+c)ln(1+c) + (1-c)ln(1-c)].

    Nonnegative for every |c| < 1 (its discriminant is <= 0).
    """
    if abs(c) >= 1.0:
        raise ValueError(f"mean must lie in (-1, 1), got {c}")
    return 1.5 * (1.0 - lam) ** 2 - c * c * lam + log_potential_part(c)


def budget_rate(lam: float, c: float, trace_m1: float) -> float:
    """Full budget rate: trace of the noise at level -1 plus the drift part."""
    return trace_m1 + budget_rate_polynomial(lam, c)


def _tail_series(c: float, tol: float) -> float:
    """sum_{k>=2} c^(2k+2) / ((2k+1)(2k+2)), summed until the term < tol."""
    total = 0.0
    c2 = c * c
    term_pow = c2**3
    for k in range(2, 2 + SERIES_MAX_TERMS):
        term = term_pow / ((2 * k + 1) * (2 * k + 2))
        total += term
        if term < tol:
            break
        term_pow *= c2
    return total


def budget_rate_discriminant(c: float, tol: float = SERIES_TOL) -> float:
    """Discriminant of the budget rate polynomial in lam:

    -12 sum_{k>=2} c^(2k+2) / ((2k+1)(2k+2)) <= 0.
    """
    if abs(c) >= 1.0:
        raise ValueError(f"mean must lie in (-1, 1), got {c}")
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    return -12.0 * _tail_series(c, tol)


def budget_rate_minimizer(c: float, tol: float = SERIES_TOL) -> tuple[float, float]:
    """Minimizing lam* = c^2/3 + 1 and the minimum value of the rate polynomial.

    The minimum equals 2 sum_{k>=2} c^(2k+2)/((2k+1)(2k+2)) >= 0, evaluated
    by the same truncated series as the discriminant.
    """
    if abs(c) >= 1.0:
        raise ValueError(f"mean must lie in (-1, 1), got {c}")
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    return c * c / 3.0 + 1.0, 2.0 * _tail_series(c, tol)
