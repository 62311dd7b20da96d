"""Diagonal state space models: representation, evaluation, and error metrics.

A model is the triple (a, b, c) of equal-length real vectors: `a` is the
diagonal of the state transition matrix, `b` the input weights, `c` the
output weights. The realized sequence-to-scalar map is fully determined by
the Markov parameters (impulse response) h[k'] = sum_j c_j * a_j^k' * b_j.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _as_locked_vector(v, name: str) -> np.ndarray:
    arr = np.array(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"{name} must be a 1-d vector of length >= 1")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must have finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DiagonalSSM:
    """Immutable diagonal SSM. All operations on it are pure functions."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", _as_locked_vector(self.a, "a"))
        object.__setattr__(self, "b", _as_locked_vector(self.b, "b"))
        object.__setattr__(self, "c", _as_locked_vector(self.c, "c"))
        if not (self.a.size == self.b.size == self.c.size):
            raise ValueError("a, b, c must have identical length")

    @property
    def d(self) -> int:
        return self.a.size

    def with_a(self, a) -> "DiagonalSSM":
        return DiagonalSSM(a, self.b, self.c)


def impulse_response(ssm: DiagonalSSM, k: int) -> np.ndarray:
    """First k Markov parameters, h[k'] = sum_j c_j a_j^k' b_j.

    Computed with running elementwise products, never explicit matrix powers.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    out = np.empty(k)
    p = ssm.c * ssm.b
    out[0] = p.sum()
    for i in range(1, k):
        p = p * ssm.a
        out[i] = p.sum()
    return out


def forward(ssm: DiagonalSSM, x) -> float:
    """Scalar output for input sequence x: dot of the reversed impulse response with x."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("x must be a 1-d sequence of length >= 1")
    h = impulse_response(ssm, x.size)
    return float(h @ x[::-1])


def generalization_error(student: DiagonalSSM, teacher: DiagonalSSM, k: int) -> float:
    """Largest deviation between student and teacher Markov parameters up to index k-1."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return float(np.max(np.abs(impulse_response(student, k) - impulse_response(teacher, k))))


def normalized_generalization_error(student: DiagonalSSM, teacher: DiagonalSSM, k: int) -> float:
    """Generalization error divided by the sup norm of the teacher's impulse response.

    Normalization is chosen so the all-zero student scores exactly 1.
    """
    scale = float(np.max(np.abs(impulse_response(teacher, k))))
    if scale == 0.0:
        raise ZeroDivisionError("teacher impulse response is identically zero over this length")
    return generalization_error(student, teacher, k) / scale
