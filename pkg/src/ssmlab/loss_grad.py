"""Training loss, exact analytic gradients, and the polynomial equation of
motion for the transition-matrix entries under gradient flow.

The loss is the mean squared residual over the training set, with the model
output optionally passed through a readout head. Gradients for the SSM
parameters come from a two-line closed form; only the MLP head uses a small
reverse-mode pass. Per-example terms are combined in fixed index order so
repeated runs are bitwise reproducible.

The central identity exposed here: along gradient flow each diagonal entry
a_j moves according to a degree-(kappa-2) polynomial in a_j whose
coefficients (the gammas) are shared across entries, scaled per-entry by
b_j * c_j. `predicted_a_dot` evaluates that polynomial; it must equal the
negated analytic gradient of the loss with respect to a.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import TrainingSet
from .mlp_head import HeadGradients, IdentityHead, MLPHead, identity_head
from .ssm_core import DiagonalSSM


@dataclass(frozen=True)
class Characterization:
    """Per-time-point quantities of the equation of motion.

    gammas: polynomial coefficients, length kappa-1 (degrees 0..kappa-2)
    deltas: per-example residuals y - prediction, length n
    xis:    head input derivatives at the SSM outputs, length n
    """

    gammas: np.ndarray
    deltas: np.ndarray
    xis: np.ndarray


@dataclass(frozen=True)
class GradientBundle:
    d_a: np.ndarray
    d_b: np.ndarray
    d_c: np.ndarray
    d_head: Optional[HeadGradients] = None


def _powers(a: np.ndarray, kappa: int) -> np.ndarray:
    """P[j, k] = a_j**k for k = 0..kappa-1, by running products."""
    P = np.empty((a.size, kappa))
    P[:, 0] = 1.0
    for k in range(1, kappa):
        P[:, k] = P[:, k - 1] * a
    return P


def _head_eval(head, z: np.ndarray):
    """Batched head forward + input derivative at the model outputs z.

    Returns (pred, xi, cache); cache carries activations for the backward pass.
    """
    if isinstance(head, IdentityHead):
        return z, np.ones_like(z), None
    pre1 = np.outer(z, head.w_in)
    h1 = np.maximum(pre1, 0.0)
    pre2 = h1 @ head.w_hidden.T
    h2 = np.maximum(pre2, 0.0)
    pred = h2 @ head.w_out
    mask1 = (pre1 > 0.0).astype(np.float64)
    mask2 = (pre2 > 0.0).astype(np.float64)
    xi = (mask2 * ((mask1 * head.w_in[None, :]) @ head.w_hidden.T)) @ head.w_out
    return pred, xi, (h1, h2, mask1, mask2)


def _forward_all(ssm: DiagonalSSM, head, S: TrainingSet):
    """Model outputs, residuals, and shared intermediates over the whole set."""
    P = _powers(ssm.a, S.kappa)
    markov = (ssm.c * ssm.b) @ P
    x_rev = S.x_matrix[:, ::-1]
    z = x_rev @ markov
    pred, xi, cache = _head_eval(head, z)
    delta = S.labels - pred
    return P, x_rev, z, pred, xi, cache, delta


def loss(ssm: DiagonalSSM, head, S: TrainingSet) -> float:
    """Mean squared residual of the (optionally head-composed) model over S."""
    head = identity_head() if head is None else head
    delta = _forward_all(ssm, head, S)[-1]
    return float(delta @ delta) / S.n


def grad(ssm: DiagonalSSM, head, S: TrainingSet, train_bc: bool = False) -> GradientBundle:
    """Analytic gradient of `loss` w.r.t. a, and (when train_bc) b and c.

    Head parameter gradients are included whenever the head is an MLP.
    When train_bc is false, d_b and d_c are zero vectors.
    """
    head = identity_head() if head is None else head
    P, x_rev, z, _, xi, cache, delta = _forward_all(ssm, head, S)
    kappa = S.kappa
    weight = delta * xi  # (n,)

    # d(model output)/d(a_j) = b_j c_j * sum_{k>=1} k a_j^{k-1} x_rev[:, k]
    dpow = P[:, : kappa - 1] * np.arange(1, kappa)[None, :]
    dphi_da = x_rev[:, 1:] @ dpow.T
    d_a = (-2.0 / S.n) * (weight @ dphi_da) * (ssm.b * ssm.c)

    if train_bc:
        moments = x_rev @ P.T  # (n, d): sum_k a_j^k x_rev[:, k]
        common = (-2.0 / S.n) * (weight @ moments)
        d_b = common * ssm.c
        d_c = common * ssm.b
    else:
        d_b = np.zeros(ssm.d)
        d_c = np.zeros(ssm.d)

    d_head = None
    if isinstance(head, MLPHead):
        h1, h2, mask1, mask2 = cache
        upstream = (-2.0 / S.n) * delta
        g_out = h2.T @ upstream
        g_pre2 = (upstream[:, None] * head.w_out[None, :]) * mask2
        g_hidden = g_pre2.T @ h1
        g_pre1 = (g_pre2 @ head.w_hidden) * mask1
        g_in = g_pre1.T @ z
        d_head = HeadGradients(g_in, g_hidden, g_out)

    return GradientBundle(d_a, d_b, d_c, d_head)


def characterize(ssm: DiagonalSSM, head, S: TrainingSet) -> Characterization:
    """Residuals, head derivatives, and the shared polynomial coefficients.

    gamma[l] = (2(l+1)/n) * sum_i delta_i xi_i x^{(i)}_{kappa-l-1},
    for l = 0..kappa-2.
    """
    head = identity_head() if head is None else head
    if S.kappa < 2:
        raise ValueError("kappa must be >= 2")
    _, x_rev, _, _, xi, _, delta = _forward_all(ssm, head, S)
    ell = np.arange(S.kappa - 1)
    gammas = (2.0 * (ell + 1) / S.n) * ((delta * xi) @ x_rev[:, 1:S.kappa])
    return Characterization(gammas, delta, xi)


def predicted_a_dot(ssm: DiagonalSSM, ch: Characterization) -> np.ndarray:
    """Motion of the diagonal entries implied by the characterization:
    a_dot_j = b_j c_j * sum_l gamma[l] a_j^l, evaluated by Horner."""
    acc = np.full(ssm.d, ch.gammas[-1])
    for g in ch.gammas[-2::-1]:
        acc = acc * ssm.a + g
    return ssm.b * ssm.c * acc
