"""Closed-form landscape analysis for the two-probe training set, plus
general-purpose diagnostics (effective rank, subspace distance).

The two-probe loss restricted to the diagonal line a = s*1 is the scalar
function f(s) = ((1 - d s^{L-1})^2 + (1 - d s)^2) / 2. Its unique stationary
point on [1/d, 3/d] is a strict saddle of the full loss: the Hessian there
has a single positive eigenvalue (along the all-ones direction) and a
(d-1)-fold negative eigenvalue, which drives the escape dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class RegimeError(ValueError):
    """Parameters outside the analyzed regime (d >= 8, odd L >= 7)."""


def effective_rank(values) -> float:
    """Continuous rank surrogate: exp of the Shannon entropy of the
    l1-normalized value vector. For a diagonal transition matrix pass |a_j|."""
    v = np.asarray(values, dtype=np.float64)
    if np.any(v < 0):
        raise ValueError("values must be nonnegative")
    total = v.sum()
    if total == 0.0:
        raise ValueError("effective rank undefined for an all-zero vector")
    p = v / total
    nz = p[p > 0]
    return float(np.exp(-(nz * np.log(nz)).sum()))


def w1_distance(a) -> float:
    """Euclidean distance of a from the all-ones line (its mean-removed norm)."""
    a = np.asarray(a, dtype=np.float64)
    return float(np.linalg.norm(a - a.mean()))


@dataclass(frozen=True)
class SaddleReport:
    s: float
    loss_at_s: float
    lambda_plus: float
    lambda_minus: float
    d: int
    L: int

    def as_dict(self) -> dict:
        return {
            "d": self.d,
            "L": self.L,
            "s": self.s,
            "loss_at_s": self.loss_at_s,
            "lambda_plus": self.lambda_plus,
            "lambda_minus": self.lambda_minus,
        }


def _fprime(a: float, d: int, L: int) -> float:
    # stationarity condition of the restricted loss (positive multiple of df/da)
    return (L - 1) * (d * a ** (L - 1) - 1) * a ** (L - 2) + (d * a - 1)


def restricted_loss(a: float, d: int, L: int) -> float:
    """Two-probe loss evaluated on the diagonal line at a*1."""
    return 0.5 * ((1 - d * a ** (L - 1)) ** 2 + (1 - d * a) ** 2)


def find_saddle(d: int, L: int, tol: float = 1e-14) -> SaddleReport:
    """Locate the unique stationary point s*1 on [1/d, 3/d] by bisection and
    report its loss value and Hessian eigenvalues.

    Bisection is used instead of Newton because the bracket carries a
    guaranteed sign change, making convergence unconditional.
    """
    if d < 8:
        raise RegimeError(f"d = {d} outside regime (need d >= 8)")
    if L < 7 or L % 2 == 0:
        raise RegimeError(f"L = {L} outside regime (need odd L >= 7)")
    lo, hi = 1.0 / d, 3.0 / d
    flo, fhi = _fprime(lo, d, L), _fprime(hi, d, L)
    if not (flo < 0 < fhi):
        raise RegimeError(
            f"no sign change on [1/d, 3/d] for d={d}, L={L}: f'({lo})={flo}, f'({hi})={fhi}"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if _fprime(mid, d, L) < 0:
            lo = mid
        else:
            hi = mid
    s = 0.5 * (lo + hi)
    lam_plus = (L - 1) * ((2 * L - 3) * d * s ** (L - 1) - (L - 2)) * s ** (L - 3) + d
    lam_minus = (L - 1) * (L - 2) * (d * s ** (L - 1) - 1) * s ** (L - 3)
    return SaddleReport(s, restricted_loss(s, d, L), lam_plus, lam_minus, d, L)


def rank_one_shift_eigs(a: float, b: float, d: int) -> tuple[float, float]:
    """Eigenvalues of (a-b)*I + b*ones((d,d)): (a+(d-1)b on the all-ones
    vector, a-b with multiplicity d-1)."""
    if d < 2:
        raise ValueError("d must be >= 2")
    return a + (d - 1) * b, a - b


def linearized_trajectory(a0, report: SaddleReport, t: float) -> np.ndarray:
    """Closed-form solution of the dynamics linearized at the saddle.

    The component along the all-ones line contracts to s at rate lambda_plus;
    the orthogonal component grows at rate |lambda_minus|. An initialization
    on the line stays on it for all t.
    """
    a0 = np.asarray(a0, dtype=np.float64)
    mean0 = a0.mean()
    dev = a0 - mean0
    s = report.s
    on_line = np.exp(-t * report.lambda_plus) * (mean0 - s) + s
    return on_line * np.ones_like(a0) + np.exp(-t * report.lambda_minus) * dev


def pl_coefficient(b: float, d: int, L: int) -> float:
    """Gradient-domination coefficient of the two-probe loss on the set of
    points whose entries are not all within b of each other (inside the
    [-3,3] box): mu = min(2d, ((L-1)*(b/2)^(L-2))^2 / 4, (q/(q+2))^2) / 2
    with q = (b/6)^(L-2)."""
    if b <= 0:
        raise ValueError("b must be > 0")
    b_tilde = (b / 2.0) ** (L - 2)
    b_hat = (b / 6.0) ** (L - 2)
    return 0.5 * min(2.0 * d, ((L - 1) * b_tilde) ** 2 / 4.0, (b_hat / (b_hat + 2.0)) ** 2)


def poison_lower_bound(d: int, kappa: int) -> float:
    """Guaranteed generalization error of the poisoned limit over lengths
    >= kappa+2: min(0.1, (1 - 0.6^(1/(kappa-1))) / (9d))."""
    if d < 8:
        raise RegimeError(f"d = {d} outside regime (need d >= 8)")
    if kappa < 7:
        raise RegimeError(f"kappa = {kappa} outside regime (need kappa >= 7)")
    return min(0.1, (1.0 - 0.6 ** (1.0 / (kappa - 1))) / (9.0 * d))
