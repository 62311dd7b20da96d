"""Optimizers over the training loss, with trajectory logging.

Three methods:

* ``gradient_flow`` integrates the exact parameter ODE (time-derivative equal
  to the negated gradient) with an adaptive embedded Runge-Kutta 5(4) pair
  (Dormand-Prince), using dense output to report the state at requested
  timestamps. An explicit pair suffices because the flows here are smooth
  polynomials.
* ``adaptive_gd`` is gradient descent whose step size is the base rate
  divided by the square root of an exponential moving average of squared
  gradient norms. Only the step size is adapted; the direction is the exact
  negated gradient.
* ``adam`` is the standard adaptive-moment method with bias correction.

A single run is strictly sequential; independent runs are safe to execute in
parallel. Probe callbacks receive (time, ssm, head) and return one scalar
each; the runner owns the resulting log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .data import TrainingSet
from .loss_grad import grad, loss
from .mlp_head import IdentityHead, MLPHead, identity_head
from .ssm_core import DiagonalSSM

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-7


class DivergenceError(RuntimeError):
    """Loss or parameters became non-finite during a discrete-update run."""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


class IntegrationError(RuntimeError):
    """The ODE integrator failed; carries the last accepted state."""

    def __init__(self, message: str, t: float, ssm: DiagonalSSM, head):
        super().__init__(message)
        self.t = t
        self.ssm = ssm
        self.head = head


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str
    base_lr: float = 0.01
    beta: float = 0.8
    softening: float = 1e-6
    ode_rel_tol: float = 1e-8
    ode_abs_tol: float = 1e-10
    timestamps: Optional[np.ndarray] = None
    max_iters: int = 200_000
    loss_stop: float = 0.01
    extra_iters_after_stop: int = 0
    train_bc: bool = False
    log_every: int = 1

    def __post_init__(self):
        if self.kind not in ("gradient_flow", "adaptive_gd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.ode_rel_tol <= 0 or self.ode_abs_tol <= 0:
            raise ValueError("ODE tolerances must be > 0")
        if self.kind != "gradient_flow" and self.base_lr <= 0:
            raise ValueError("base_lr must be > 0 for discrete methods")
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps, dtype=np.float64)
            if ts.ndim != 1 or ts.size < 1 or np.any(np.diff(ts) <= 0) or ts[0] <= 0:
                raise ValueError("timestamps must be positive and strictly increasing")
            object.__setattr__(self, "timestamps", ts)
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")


Probe = Callable[[float, DiagonalSSM, object], float]


@dataclass
class TrajectoryLog:
    """Time-indexed records of one optimization run."""

    probe_names: tuple
    steps: list = field(default_factory=list)
    times: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    probe_values: dict = field(default_factory=dict)
    a_rows: list = field(default_factory=list)

    def __post_init__(self):
        self.probe_values = {name: [] for name in self.probe_names}

    def append(self, step: int, time: float, loss_value: float, probes_row: Mapping[str, float], a: np.ndarray):
        self.steps.append(step)
        self.times.append(time)
        self.losses.append(loss_value)
        for name in self.probe_names:
            self.probe_values[name].append(probes_row[name])
        self.a_rows.append(np.array(a))

    def __len__(self) -> int:
        return len(self.steps)

    def final_a(self) -> np.ndarray:
        return self.a_rows[-1]


@dataclass(frozen=True)
class OptimizeResult:
    log: TrajectoryLog
    ssm: DiagonalSSM
    head: object
    iterations: Optional[int] = None


def ema_update(m: float, value: float, beta: float) -> float:
    return beta * m + (1.0 - beta) * value


class _Packing:
    """Flat-vector view of the trainable parameters."""

    def __init__(self, ssm0: DiagonalSSM, head0, train_bc: bool):
        self.d = ssm0.d
        self.train_bc = train_bc
        self.head_is_mlp = isinstance(head0, MLPHead)
        self.width = head0.width if self.head_is_mlp else 0
        self.b_fixed = None if train_bc else np.array(ssm0.b)
        self.c_fixed = None if train_bc else np.array(ssm0.c)

    def pack(self, ssm: DiagonalSSM, head) -> np.ndarray:
        parts = [ssm.a]
        if self.train_bc:
            parts += [ssm.b, ssm.c]
        if self.head_is_mlp:
            parts += [head.w_in, head.w_hidden.ravel(), head.w_out]
        return np.concatenate(parts)

    def unpack(self, y: np.ndarray):
        d, h = self.d, self.width
        a = y[:d]
        pos = d
        if self.train_bc:
            b, c = y[pos : pos + d], y[pos + d : pos + 2 * d]
            pos += 2 * d
        else:
            b, c = self.b_fixed, self.c_fixed
        ssm = DiagonalSSM(a, b, c)
        if self.head_is_mlp:
            head = MLPHead(y[pos : pos + h], y[pos + h : pos + h + h * h].reshape(h, h), y[pos + h + h * h :])
        else:
            head = identity_head()
        return ssm, head

    def pack_grad(self, bundle) -> np.ndarray:
        parts = [bundle.d_a]
        if self.train_bc:
            parts += [bundle.d_b, bundle.d_c]
        if self.head_is_mlp:
            parts += [bundle.d_head.w_in, bundle.d_head.w_hidden.ravel(), bundle.d_head.w_out]
        return np.concatenate(parts)


def _probe_row(probes: Mapping[str, Probe], t: float, ssm: DiagonalSSM, head) -> dict:
    return {name: fn(t, ssm, head) for name, fn in probes.items()}


def gradient_flow(
    ssm0: DiagonalSSM,
    head0,
    S: TrainingSet,
    spec: OptimizerSpec,
    probes: Optional[Mapping[str, Probe]] = None,
) -> OptimizeResult:
    """Integrate the gradient-flow ODE and record probes at the spec's timestamps.

    When train_bc is false only the transition diagonal evolves (b and c stay
    frozen at their initial values). The initial state is logged at t = 0.
    """
    if spec.kind != "gradient_flow":
        raise ValueError("spec.kind must be 'gradient_flow'")
    if spec.timestamps is None:
        raise ValueError("gradient_flow requires timestamps")
    probes = probes or {}
    head0 = identity_head() if head0 is None else head0
    pk = _Packing(ssm0, head0, spec.train_bc)
    y0 = pk.pack(ssm0, head0)

    def rhs(t, y):
        if not np.all(np.isfinite(y)):
            return np.full_like(y, np.nan)
        with np.errstate(over="ignore", invalid="ignore"):
            ssm, head = pk.unpack(y)
            return -pk.pack_grad(grad(ssm, head, S, spec.train_bc))

    ts = spec.timestamps
    sol = solve_ivp(
        rhs,
        (0.0, float(ts[-1])),
        y0,
        method="RK45",
        t_eval=ts,
        rtol=spec.ode_rel_tol,
        atol=spec.ode_abs_tol,
    )
    if not sol.success:
        if sol.y.size:
            last_ssm, last_head = pk.unpack(sol.y[:, -1])
            last_t = float(sol.t[-1])
        else:
            last_ssm, last_head, last_t = ssm0, head0, 0.0
        raise IntegrationError(f"ODE integration failed: {sol.message}", last_t, last_ssm, last_head)

    log = TrajectoryLog(tuple(probes))
    log.append(0, 0.0, loss(ssm0, head0, S), _probe_row(probes, 0.0, ssm0, head0), ssm0.a)
    for i, t in enumerate(sol.t):
        ssm_t, head_t = pk.unpack(sol.y[:, i])
        log.append(i + 1, float(t), loss(ssm_t, head_t, S), _probe_row(probes, float(t), ssm_t, head_t), ssm_t.a)
    final_ssm, final_head = pk.unpack(sol.y[:, -1])
    return OptimizeResult(log, final_ssm, final_head)


class _AdaptiveGDRule:
    """Step size = base_lr / sqrt(EMA of squared gradient norms + softening).

    The EMA state starts at the first squared norm, avoiding the huge first
    step an all-zero start would produce.
    """

    def __init__(self, spec: OptimizerSpec):
        self.spec = spec
        self.m: Optional[float] = None

    def apply(self, params: list, grads: list):
        gnorm2 = sum(float(np.sum(g * g)) for g in grads)
        self.m = gnorm2 if self.m is None else ema_update(self.m, gnorm2, self.spec.beta)
        lr = self.spec.base_lr / math.sqrt(self.m + self.spec.softening)
        for p, g in zip(params, grads):
            p -= lr * g


class _AdamRule:
    def __init__(self, spec: OptimizerSpec):
        self.spec = spec
        self.m: Optional[list] = None
        self.v: Optional[list] = None
        self.t = 0

    def apply(self, params: list, grads: list):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1c = 1.0 - ADAM_BETA1 ** self.t
        b2c = 1.0 - ADAM_BETA2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m += (1.0 - ADAM_BETA1) * (g - m)
            v += (1.0 - ADAM_BETA2) * (g * g - v)
            p -= self.spec.base_lr * (m / b1c) / (np.sqrt(v / b2c) + ADAM_EPS)


def _descend(ssm0, head0, S, spec, probes, rule) -> OptimizeResult:
    probes = probes or {}
    head0 = identity_head() if head0 is None else head0
    train_head = isinstance(head0, MLPHead)

    a = np.array(ssm0.a)
    b = np.array(ssm0.b)
    c = np.array(ssm0.c)
    if train_head:
        w_in, w_hidden, w_out = np.array(head0.w_in), np.array(head0.w_hidden), np.array(head0.w_out)

    def build():
        ssm = DiagonalSSM(a, b, c)
        head = MLPHead(w_in, w_hidden, w_out) if train_head else head0
        return ssm, head

    log = TrajectoryLog(tuple(probes))
    remaining_extra: Optional[int] = None
    it = 0
    ssm, head = build()
    while True:
        all_params = [a, b, c] + ([w_in, w_hidden, w_out] if train_head else [])
        if not all(np.all(np.isfinite(p)) for p in all_params):
            raise DivergenceError(f"non-finite parameters at iteration {it}", it)
        current = loss(ssm, head, S)
        if not math.isfinite(current):
            raise DivergenceError(f"non-finite loss at iteration {it}", it)
        if it % spec.log_every == 0:
            log.append(it, float(it), current, _probe_row(probes, float(it), ssm, head), a)
        if remaining_extra is None and current < spec.loss_stop:
            remaining_extra = spec.extra_iters_after_stop
        if remaining_extra is not None:
            if remaining_extra == 0:
                break
            remaining_extra -= 1
        if it >= spec.max_iters:
            break
        bundle = grad(ssm, head, S, spec.train_bc)
        params = [a] + ([b, c] if spec.train_bc else []) + ([w_in, w_hidden, w_out] if train_head else [])
        grads = [bundle.d_a] + ([bundle.d_b, bundle.d_c] if spec.train_bc else [])
        if train_head:
            grads += [bundle.d_head.w_in, bundle.d_head.w_hidden, bundle.d_head.w_out]
        rule.apply(params, grads)
        it += 1
        ssm, head = build()

    if log.steps[-1] != it:
        log.append(it, float(it), loss(ssm, head, S), _probe_row(probes, float(it), ssm, head), a)
    return OptimizeResult(log, ssm, head, iterations=it)


def adaptive_gd(ssm0, head0, S, spec: OptimizerSpec, probes=None) -> OptimizeResult:
    """Gradient descent with the norm-EMA step-size scheme. Runs until the
    loss first drops below loss_stop, then for extra_iters_after_stop more
    updates (max_iters caps the total)."""
    if spec.kind != "adaptive_gd":
        raise ValueError("spec.kind must be 'adaptive_gd'")
    return _descend(ssm0, head0, S, spec, probes, _AdaptiveGDRule(spec))


def adam(ssm0, head0, S, spec: OptimizerSpec, probes=None) -> OptimizeResult:
    """Adam with bias correction (beta1 = 0.9, beta2 = 0.999, eps = 1e-7),
    same stopping rule as adaptive_gd."""
    if spec.kind != "adam":
        raise ValueError("spec.kind must be 'adam'")
    return _descend(ssm0, head0, S, spec, probes, _AdamRule(spec))
