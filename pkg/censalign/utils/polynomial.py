"""
Polynomial helpers for the identification procedure.

Coefficients are stored in ascending order, theta = (theta_0, ..., theta_P),
so kappa(x; theta) = sum_p theta_p x^p.
"""

import logging
from math import comb
from typing import List, Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logit

from censalign.exceptions import DegeneratePolynomialError, LinkDomainError, RankDeficiencyError
from censalign.schemas import LinkFamily, LinkSpec

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12
LEADING_TOLERANCE = 1e-12


def polyval(theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate ascending-order coefficients at x (Horner)."""
    out = np.zeros_like(np.asarray(x) * 1.0 * theta[-1])
    for coefficient in np.asarray(theta)[::-1]:
        out = out * x + coefficient
    return out


def inverse_link(
    values: np.ndarray,
    observed: np.ndarray,
    link: LinkSpec,
    trajectory_id: str = "",
) -> np.ndarray:
    """
    f^-1 applied to observed cells; missing cells stay 0 and stay masked.

    Raises:
        LinkDomainError: a sigmoid-link value lies outside (0, 1)
    """
    values = np.asarray(values, dtype=float)
    observed = np.asarray(observed, dtype=bool)
    if link.family is LinkFamily.IDENTITY:
        return np.where(observed, values, 0.0)
    outside = observed & ((values <= 0.0) | (values >= 1.0))
    if outside.any():
        visit, dim = (int(i) for i in np.argwhere(outside)[0])
        raise LinkDomainError(
            f"{trajectory_id}: value {values[visit, dim]!r} at visit {visit}, "
            f"dim {dim} is outside the sigmoid range (0, 1)",
            trajectory_id,
            visit,
            dim,
        )
    return np.where(observed, logit(np.where(observed, values, 0.5)), 0.0)


def polyfit(x: np.ndarray, q: np.ndarray, degree: int) -> np.ndarray:
    """
    Least-squares polynomial fit through QR of the Vandermonde matrix.

    Raises:
        RankDeficiencyError: fewer than degree + 1 distinct abscissae, or the
            Vandermonde matrix has condition number above 1e12
    """
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    if len(np.unique(x)) < degree + 1:
        raise RankDeficiencyError(
            f"need at least {degree + 1} distinct abscissae for degree {degree}, "
            f"got {len(np.unique(x))}"
        )
    vander = np.vander(x, degree + 1, increasing=True)
    condition = np.linalg.cond(vander)
    if not condition <= MAX_CONDITION:
        raise RankDeficiencyError(
            f"Vandermonde matrix is ill-conditioned (cond={condition:.3e})"
        )
    qmat, rmat = np.linalg.qr(vander)
    return solve_triangular(rmat, qmat.T @ q)


def effective_degree(theta: np.ndarray) -> int:
    theta = np.asarray(theta, dtype=float)
    norm = np.linalg.norm(theta)
    if norm == 0.0:
        raise DegeneratePolynomialError("polynomial is identically zero")
    degree = len(theta) - 1
    while degree > 0 and abs(theta[degree]) < LEADING_TOLERANCE * norm:
        degree -= 1
    return degree


def _durand_kerner(theta: np.ndarray, max_iter: int = 1000, tol: float = 1e-12) -> List[complex]:
    monic = np.asarray(theta, dtype=complex) / theta[-1]
    degree = len(monic) - 1
    roots = np.array([(0.4 + 0.9j) ** k for k in range(degree)], dtype=complex)
    for _ in range(max_iter):
        previous = roots.copy()
        for i in range(degree):
            others = np.delete(roots, i)
            roots[i] = roots[i] - polyval(monic, roots[i]) / np.prod(roots[i] - others)
        if np.max(np.abs(polyval(monic, roots))) < tol and np.max(np.abs(roots - previous)) < tol:
            break
    return [complex(r) for r in roots]


def poly_roots(theta: np.ndarray, degree: Optional[int] = None) -> List[complex]:
    """
    All complex roots of kappa(.; theta), unordered.

    A leading coefficient below 1e-12 * ||theta|| lowers the effective degree;
    a constant polynomial has no roots and returns an empty list.
    """
    theta = np.asarray(theta, dtype=float)
    if degree is not None:
        theta = theta[: degree + 1]
    degree = effective_degree(theta)
    theta = theta[: degree + 1]
    if degree == 0:
        return []
    if degree == 1:
        return [complex(-theta[0] / theta[1])]
    if degree == 2:
        c, b, a = theta
        disc = b * b - 4.0 * a * c
        if disc < 0:
            real = -b / (2.0 * a)
            imag = np.sqrt(-disc) / (2.0 * abs(a))
            return [complex(real, imag), complex(real, -imag)]
        # sign-matched form avoids cancellation between -b and sqrt(disc)
        half = -0.5 * (b + np.copysign(np.sqrt(disc), b))
        if half == 0.0:
            return [0j, 0j]
        return [complex(half / a), complex(c / half)]
    return _durand_kerner(theta)


def select_root(roots: List[complex]) -> complex:
    """Smallest real part; ties by smaller |imag|, then smaller imag."""
    return min(roots, key=lambda r: (r.real, abs(r.imag), r.imag))


def canonical_refit(x: np.ndarray, q: np.ndarray, xi: float, degree: int) -> np.ndarray:
    """Refit on abscissae shifted by -xi so the selected root sits at 0."""
    return polyfit(np.asarray(x, dtype=float) - xi, q, degree)


def shift_coefficients(theta: np.ndarray, shift: float) -> np.ndarray:
    """Coefficients of kappa(x + shift; theta) via the binomial expansion."""
    theta = np.asarray(theta, dtype=float)
    out = np.zeros_like(theta)
    for p, coefficient in enumerate(theta):
        for j in range(p + 1):
            out[j] += coefficient * comb(p, j) * shift ** (p - j)
    return out
