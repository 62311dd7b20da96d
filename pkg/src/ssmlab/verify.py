"""Machine checks of the supporting mathematics, runnable as named suites.

Each suite returns a report dict listing every check with its measured
value, threshold, and pass flag. Measured values for mixed relative/absolute
tolerances are expressed as a tolerance ratio (<= 1 passes), so a report
line is self-contained.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp

from .analysis import find_saddle, linearized_trajectory, pl_coefficient
from .data import adversarial_zero_loss, canonical_teacher, label_set, make_rng, theorem_sets
from .loss_grad import characterize, grad, loss, predicted_a_dot
from .mlp_head import identity_head, random_head
from .ssm_core import DiagonalSSM, generalization_error


def _check(name: str, value: float, threshold: float, ok: bool) -> dict:
    return {"name": name, "value": float(value), "threshold": float(threshold), "pass": bool(ok)}


def tolerance_ratio(x: np.ndarray, y: np.ndarray, rel: float, floor: float) -> float:
    """max over entries of |x-y| / max(rel*max(|x|,|y|), floor); <= 1 means agreement."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    scale = np.maximum(rel * np.maximum(np.abs(x), np.abs(y)), floor)
    return float(np.max(np.abs(x - y) / scale))


def sample_dynamics_config(rng: np.random.Generator):
    """One random (ssm, head, training set, train_bc) probe configuration."""
    d = int(rng.integers(2, 9))
    kappa = int(rng.choice([4, 6]))
    n = int(rng.integers(1, 6))
    ssm = DiagonalSSM(
        rng.uniform(-0.9, 0.9, d),
        rng.normal(0.0, 1.0, d),
        rng.normal(0.0, 1.0, d),
    )
    if rng.random() < 0.5:
        head = identity_head()
    else:
        head = random_head(int(rng.integers(2, 9)), 0.4, rng)
    teacher = canonical_teacher(max(2, d))
    xs = [rng.normal(0.0, 1.0, kappa) for _ in range(n)]
    S = label_set(teacher, None, xs)
    train_bc = bool(rng.random() < 0.5)
    return ssm, head, S, train_bc


def verify_dynamics(n_configs: int = 100, seed: int = 20240) -> dict:
    """Equation-of-motion identity: the polynomial reconstruction of a-dot
    equals the negated analytic gradient on random configurations."""
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(n_configs):
        ssm, head, S, train_bc = sample_dynamics_config(rng)
        bundle = grad(ssm, head, S, train_bc)
        pred = predicted_a_dot(ssm, characterize(ssm, head, S))
        worst = max(worst, tolerance_ratio(pred, -bundle.d_a, 1e-10, 1e-14))
    checks = [_check(f"a_dot identity over {n_configs} configs (tolerance ratio)", worst, 1.0, worst <= 1.0)]
    return _report("dynamics", checks)


def fd_hessian_s2(d: int, L: int, at: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Dense Hessian of the two-probe loss by central differences of the
    analytic gradient (test oracle only)."""
    teacher = canonical_teacher(d)
    _, S2 = theorem_sets(teacher, L)
    ones = np.ones(d)

    def g(a):
        return grad(DiagonalSSM(a, ones, ones), None, S2).d_a

    H = np.empty((d, d))
    for j in range(d):
        step = np.zeros(d)
        step[j] = h
        H[:, j] = (g(at + step) - g(at - step)) / (2 * h)
    return 0.5 * (H + H.T)


def verify_saddle(ds=(8, 16, 32), Ls=(7, 9, 11)) -> dict:
    checks = []
    for d in ds:
        for L in Ls:
            rep = find_saddle(d, L)
            teacher = canonical_teacher(d)
            _, S2 = theorem_sets(teacher, L)
            ssm_s = DiagonalSSM(np.full(d, rep.s), np.ones(d), np.ones(d))
            grad_inf = float(np.max(np.abs(grad(ssm_s, None, S2).d_a)))
            tag = f"d={d},L={L}"
            checks.append(_check(f"{tag} s in [1/d, 3/d]", rep.s, 3.0 / d, 1.0 / d <= rep.s <= 3.0 / d))
            checks.append(_check(f"{tag} grad inf-norm at saddle", grad_inf, 1e-12, grad_inf <= 1e-12))
            checks.append(_check(f"{tag} loss at saddle >= 1/8", rep.loss_at_s, 0.125, rep.loss_at_s >= 0.125))
            checks.append(_check(f"{tag} lambda_plus >= d-1", rep.lambda_plus, d - 1, rep.lambda_plus >= d - 1))
            checks.append(
                _check(f"{tag} lambda_minus in (-1,0)", rep.lambda_minus, 0.0, -1.0 < rep.lambda_minus < 0.0)
            )
            eigs = np.sort(np.linalg.eigvalsh(fd_hessian_s2(d, L, np.full(d, rep.s))))
            dev = max(
                abs(eigs[-1] - rep.lambda_plus),
                float(np.max(np.abs(eigs[:-1] - rep.lambda_minus))),
            )
            checks.append(_check(f"{tag} FD Hessian spectrum", dev, 1e-6, dev <= 1e-6))
    return _report("saddle", checks)


def verify_linearization(n_starts: int = 20, d: int = 10, L: int = 7, seed: int = 77) -> dict:
    """Closed-form solution of the saddle-linearized dynamics against direct
    numeric integration of the same linear system."""
    rng = make_rng(seed)
    rep = find_saddle(d, L)
    s_vec = np.full(d, rep.s)
    H = fd_hessian_s2(d, L, s_vec)
    t_grid = np.linspace(0.0, 5.0, 51)
    worst = 0.0
    for _ in range(n_starts):
        a0 = s_vec + 0.1 * rng.standard_normal(d)
        sol = solve_ivp(
            lambda t, y: -H @ (y - s_vec),
            (0.0, 5.0),
            a0,
            method="RK45",
            t_eval=t_grid,
            rtol=1e-10,
            atol=1e-12,
        )
        closed = np.stack([linearized_trajectory(a0, rep, t) for t in t_grid], axis=1)
        worst = max(worst, float(np.max(np.abs(sol.y - closed))))
    checks = [_check(f"sup deviation over {n_starts} starts, t in [0,5]", worst, 1e-6, worst <= 1e-6)]
    return _report("linearization", checks)


def verify_vandermonde(d: int = 12, kappa: int = 6, eps: float = 0.3, n_sets: int = 20, seed: int = 5) -> dict:
    """Zero-training-loss, high-generalization-error construction."""
    rng = make_rng(seed)
    teacher = canonical_teacher(d)
    adv = adversarial_zero_loss(teacher, kappa, d, eps)
    worst_loss = 0.0
    for _ in range(n_sets):
        xs = [rng.standard_normal(kappa) for _ in range(5)]
        worst_loss = max(worst_loss, loss(adv, None, label_set(teacher, None, xs)))
    match_err = generalization_error(adv, teacher, kappa)
    overshoot = generalization_error(adv, teacher, kappa + 1)
    checks = [
        _check(f"max loss on {n_sets} random teacher-labeled sets", worst_loss, 1e-9, worst_loss <= 1e-9),
        _check("first-kappa parameter match", match_err, 1e-9, match_err <= 1e-9),
        _check("error over kappa+1 >= eps - 1e-6", overshoot, eps - 1e-6, overshoot >= eps - 1e-6),
    ]
    return _report("vandermonde", checks)


def sample_spread_points(n: int, b: float, d: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points in [-3,3]^d whose entries are not all within b of each
    other (rejection sampling)."""
    out = np.empty((n, d))
    got = 0
    while got < n:
        batch = rng.uniform(-3.0, 3.0, size=(2 * (n - got) + 8, d))
        keep = batch[(batch.max(axis=1) - batch.min(axis=1)) > b]
        take = min(n - got, keep.shape[0])
        out[got : got + take] = keep[:take]
        got += take
    return out


def verify_pl(n_points: int = 10_000, b: float = 0.5, d: int = 8, L: int = 7, seed: int = 99) -> dict:
    """Gradient domination on the spread-entry region: |grad|^2 >= 2 mu loss."""
    rng = make_rng(seed)
    mu = pl_coefficient(b, d, L)
    teacher = canonical_teacher(d)
    _, S2 = theorem_sets(teacher, L)
    ones = np.ones(d)
    pts = sample_spread_points(n_points, b, d, rng)
    min_margin = np.inf
    for a in pts:
        ssm = DiagonalSSM(a, ones, ones)
        g = grad(ssm, None, S2).d_a
        margin = float(g @ g - 2.0 * mu * loss(ssm, None, S2))
        min_margin = min(min_margin, margin)
    checks = [
        _check(f"min of |grad|^2 - 2*mu*loss over {n_points} points", min_margin, 0.0, min_margin >= 0.0)
    ]
    return _report("pl", checks)


def _report(suite: str, checks: list) -> dict:
    return {"suite": suite, "checks": checks, "passed": all(c["pass"] for c in checks)}


SUITES = {
    "dynamics": verify_dynamics,
    "saddle": verify_saddle,
    "linearization": verify_linearization,
    "vandermonde": verify_vandermonde,
    "pl": verify_pl,
}


def run_suite(name: str) -> dict:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name]()
