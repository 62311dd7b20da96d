"""Scalar-to-scalar readout heads appended after an SSM.

Two kinds: a two-hidden-layer ReLU MLP, and an identity sentinel that lets
the rest of the code treat head-less models as a special case of headed ones
(unit input derivative, no trainable parameters). The ReLU subderivative at
zero is taken to be 0, which is deterministic and measure-zero under
Gaussian inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _relu(v):
    return np.maximum(v, 0.0)


def _relu_mask(v):
    # subgradient convention: relu'(0) = 0
    return (v > 0.0).astype(np.float64)


@dataclass(frozen=True)
class MLPHead:
    """z -> w_out . relu(w_hidden . relu(w_in * z)).

    w_in and w_out are vectors of length `width`; w_hidden is width x width.
    """

    w_in: np.ndarray
    w_hidden: np.ndarray
    w_out: np.ndarray

    def __post_init__(self):
        w_in = np.array(self.w_in, dtype=np.float64)
        w_hidden = np.array(self.w_hidden, dtype=np.float64)
        w_out = np.array(self.w_out, dtype=np.float64)
        if w_in.ndim != 1:
            raise ValueError("w_in must be a vector")
        h = w_in.size
        if w_hidden.shape != (h, h):
            raise ValueError(f"w_hidden must be {h}x{h}")
        if w_out.shape != (h,):
            raise ValueError(f"w_out must have length {h}")
        for arr in (w_in, w_hidden, w_out):
            arr.setflags(write=False)
        object.__setattr__(self, "w_in", w_in)
        object.__setattr__(self, "w_hidden", w_hidden)
        object.__setattr__(self, "w_out", w_out)

    @property
    def width(self) -> int:
        return self.w_in.size


class IdentityHead:
    """Sentinel head realizing z -> z with input derivative identically 1."""

    __slots__ = ()

    def __repr__(self):
        return "IdentityHead()"


_IDENTITY = IdentityHead()


def identity_head() -> IdentityHead:
    return _IDENTITY


@dataclass(frozen=True)
class HeadGradients:
    """Parameter gradients with the shape of MLPHead."""

    w_in: np.ndarray
    w_hidden: np.ndarray
    w_out: np.ndarray

    def scaled(self, factor: float) -> "HeadGradients":
        return HeadGradients(self.w_in * factor, self.w_hidden * factor, self.w_out * factor)


def head_forward(head, z: float) -> float:
    if isinstance(head, IdentityHead):
        return z
    h1 = _relu(head.w_in * z)
    h2 = _relu(head.w_hidden @ h1)
    return float(head.w_out @ h2)


def head_forward_batch(head, z: np.ndarray) -> np.ndarray:
    """head_forward over a vector of scalar inputs."""
    z = np.asarray(z, dtype=np.float64)
    if isinstance(head, IdentityHead):
        return z
    h1 = _relu(np.outer(z, head.w_in))
    h2 = _relu(h1 @ head.w_hidden.T)
    return h2 @ head.w_out


def head_input_derivative(head, z: float) -> float:
    """d/dz of head_forward at z (chain rule through both ReLU layers)."""
    if isinstance(head, IdentityHead):
        return 1.0
    pre1 = head.w_in * z
    h1 = _relu(pre1)
    pre2 = head.w_hidden @ h1
    inner = head.w_hidden @ (_relu_mask(pre1) * head.w_in)
    return float(head.w_out @ (_relu_mask(pre2) * inner))


def head_param_gradients(head: MLPHead, z: float, upstream: float) -> HeadGradients:
    """Reverse-mode gradients of upstream * head_forward(head, z) w.r.t. the weights."""
    pre1 = head.w_in * z
    h1 = _relu(pre1)
    pre2 = head.w_hidden @ h1
    h2 = _relu(pre2)
    g_out = upstream * h2
    g_pre2 = (upstream * head.w_out) * _relu_mask(pre2)
    g_hidden = np.outer(g_pre2, h1)
    g_pre1 = (head.w_hidden.T @ g_pre2) * _relu_mask(pre1)
    g_in = g_pre1 * z
    return HeadGradients(g_in, g_hidden, g_out)


def teacher_head(width: int) -> MLPHead:
    """Fixed labeling head: unit input layer, identity hidden layer, half-sum readout."""
    return MLPHead(np.ones(width), np.eye(width), np.full(width, 0.5))


def random_head(width: int, sd: float, rng: np.random.Generator) -> MLPHead:
    """All weights i.i.d. normal with standard deviation sd."""
    return MLPHead(
        rng.normal(0.0, sd, size=width),
        rng.normal(0.0, sd, size=(width, width)),
        rng.normal(0.0, sd, size=width),
    )
