"""Experiment configs, per-seed pipelines, and artifact writers.

A config is a single JSON document naming the teacher, the student, the data
recipe, the initialization, the optimizer, and the seeds. Each (config,
seed) pair is an independent task; the runner writes one trajectory CSV per
task plus one summary JSON per config. Reruns with the same config and seed
produce bitwise-identical artifacts.

Data recipes come in two forms: an explicit baseline/special sequence
recipe, or the two-probe preset which runs a clean arm (single one-hot
probe) and a poisoned arm (the same probe plus the late-position one-hot)
per seed.
"""

from __future__ import annotations

import copy
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import effective_rank, w1_distance
from .data import (
    InitSpec,
    SequenceSpec,
    TrainingSet,
    canonical_teacher,
    diag_teacher,
    gaussian_sequences,
    label_set,
    sample_init,
    theorem_sets,
)
from .loss_grad import characterize
from .mlp_head import head_forward_batch, random_head, teacher_head
from .optimize import OptimizerSpec, OptimizeResult, adam, adaptive_gd, gradient_flow
from .ssm_core import (
    DiagonalSSM,
    generalization_error,
    impulse_response,
    normalized_generalization_error,
)

CSV_PROBES = ("gen_norm", "eff_rank", "gamma0", "w1dist")


class ConfigError(ValueError):
    """Invalid experiment config; message starts with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _require(cond: bool, path: str, message: str):
    if not cond:
        raise ConfigError(path, message)


def _get(d: dict, key: str, path: str, typ=None, default=_require):
    if key not in d:
        if default is _require:
            raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
        return default
    v = d[key]
    if typ is not None and not isinstance(v, typ):
        raise ConfigError(f"{path}.{key}" if path else key, f"expected {typ}, got {type(v).__name__}")
    return v


def _seq_spec(d: dict, path: str, kappa: int) -> SequenceSpec:
    _require(isinstance(d, dict), path, "expected an object")
    own_kappa = _get(d, "kappa", path, int, default=kappa)
    _require(own_kappa == kappa, f"{path}.kappa", f"length {own_kappa} does not match data.kappa = {kappa}")
    indices = _get(d, "indices", path, list)
    count = _get(d, "count", path, int)
    try:
        return SequenceSpec(kappa, frozenset(indices), count)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, normalized experiment description."""

    raw: dict

    @property
    def name(self) -> str:
        return self.raw["name"]

    @property
    def seeds(self) -> list:
        return self.raw["seeds"]

    @property
    def is_two_arm(self) -> bool:
        return "preset" in self.raw["data"]

    def arms(self) -> list:
        return ["clean", "poisoned"] if self.is_two_arm else ["main"]

    def normalized(self) -> dict:
        return copy.deepcopy(self.raw)


def parse_config(doc: dict) -> ExperimentConfig:
    _require(isinstance(doc, dict), "", "config must be a JSON object")
    name = _get(doc, "name", "", str)
    _require(bool(name) and "/" not in name and "\\" not in name, "name", "must be a nonempty file-safe string")

    teacher = _get(doc, "teacher", "", dict)
    kind = _get(teacher, "kind", "teacher", str)
    _require(kind in ("canonical", "diag"), "teacher.kind", "must be 'canonical' or 'diag'")
    if kind == "canonical":
        d_star = _get(teacher, "d_star", "teacher", int, default=2)
        _require(d_star >= 2, "teacher.d_star", "must be >= 2")
        values = None
    else:
        values = _get(teacher, "values", "teacher", list)
        _require(len(values) >= 1, "teacher.values", "must be nonempty")
        d_star = len(values)

    student = _get(doc, "student", "", dict)
    d = _get(student, "d", "student", int)
    _require(d >= 1, "student.d", "must be >= 1")
    train_bc = _get(student, "train_bc", "student", bool, default=False)
    head = _get(student, "head", "student", default=None)
    if head is not None:
        _require(isinstance(head, dict), "student.head", "must be null or an object")
        width = _get(head, "width", "student.head", int)
        _require(width >= 1, "student.head.width", "must be >= 1")
        _get(head, "init_sd", "student.head", (int, float))
    teacher_head_width = _get(teacher, "head_width", "teacher", int, default=None)
    if head is not None:
        if teacher_head_width is None:
            teacher_head_width = head["width"]
        _require(
            teacher_head_width == head["width"],
            "teacher.head_width",
            f"width {teacher_head_width} does not match student.head.width = {head['width']}",
        )
    else:
        _require(teacher_head_width is None, "teacher.head_width", "teacher head requires a student head")

    data = _get(doc, "data", "", dict)
    kappa = _get(data, "kappa", "data", int)
    _require(kappa >= 2, "data.kappa", "must be >= 2")
    if "preset" in data:
        _require(data["preset"] == "s1_s2", "data.preset", "only 's1_s2' is supported")
        _require(kappa >= 3, "data.kappa", "preset requires kappa >= 3")
        _require(kind == "canonical", "data.preset", "preset requires the canonical teacher")
        _require(head is None, "data.preset", "preset runs are head-free")
    else:
        baseline = _get(data, "baseline", "data", dict)
        _seq_spec(baseline, "data.baseline", kappa)
        use_special = _get(data, "use_special", "data", bool, default=False)
        special = _get(data, "special", "data", default=None)
        if special is not None:
            _seq_spec(special, "data.special", kappa)
        _require(not use_special or special is not None, "data.use_special", "requires data.special")

    init = _get(doc, "init", "", dict)
    sd_a = _get(init, "sd_a", "init", (int, float))
    _require(sd_a > 0, "init.sd_a", "must be > 0")
    sd_bc = _get(init, "sd_bc", "init", default=None)
    _require(sd_bc is None or (isinstance(sd_bc, (int, float)) and sd_bc > 0), "init.sd_bc", "must be null or > 0")
    _require(not (train_bc and sd_bc is None), "init.sd_bc", "required when student.train_bc is true")
    diff = _get(init, "diff", "init", (int, float), default=0.0)
    _require(diff >= 0, "init.diff", "must be >= 0")
    factors = _get(init, "extension_factors", "init", list, default=[])
    _require(len(factors) <= max(d - 2, 0), "init.extension_factors", "too many factors for student.d")
    _get(init, "shift", "init", (int, float), default=0.0)

    opt = _get(doc, "optimizer", "", dict)
    okind = _get(opt, "kind", "optimizer", str)
    _require(okind in ("gradient_flow", "adaptive_gd", "adam"), "optimizer.kind", "unknown optimizer")
    if okind == "gradient_flow":
        ts = _get(opt, "timestamps", "optimizer")
        _validate_timestamps(ts, "optimizer.timestamps", two_arm="preset" in data)
    else:
        base_lr = _get(opt, "base_lr", "optimizer", (int, float))
        _require(base_lr > 0, "optimizer.base_lr", "must be > 0")

    ev = _get(doc, "eval", "", dict, default={})
    gen_length = _get(ev, "gen_length", "eval", int, default=40)
    _require(gen_length >= 1, "eval.gen_length", "must be >= 1")
    test_set_size = _get(ev, "test_set_size", "eval", int, default=2000)
    _require(test_set_size >= 1, "eval.test_set_size", "must be >= 1")

    seeds = _get(doc, "seeds", "", list)
    _require(len(seeds) >= 1, "seeds", "must be nonempty")
    _require(all(isinstance(s, int) for s in seeds), "seeds", "must be integers")
    _require(len(set(seeds)) == len(seeds), "seeds", "duplicate seed")

    normalized = {
        "name": name,
        "teacher": {"kind": kind, "d_star": d_star}
        | ({"values": [float(v) for v in values]} if values is not None else {})
        | ({"head_width": teacher_head_width} if teacher_head_width is not None else {}),
        "student": {
            "d": d,
            "train_bc": train_bc,
            "head": None if head is None else {"width": head["width"], "init_sd": float(head["init_sd"])},
        },
        "data": _normalize_data(data, kappa),
        "init": {
            "sd_a": float(sd_a),
            "sd_bc": None if sd_bc is None else float(sd_bc),
            "diff": float(diff),
            "extension_factors": [float(f) for f in factors],
            "shift": float(init.get("shift", 0.0)),
        },
        "optimizer": _normalize_optimizer(opt),
        "eval": {"gen_length": gen_length, "test_set_size": test_set_size},
        "seeds": [int(s) for s in seeds],
    }
    return ExperimentConfig(normalized)


def _normalize_data(data: dict, kappa: int) -> dict:
    if "preset" in data:
        return {"preset": "s1_s2", "kappa": kappa}
    out = {"kappa": kappa, "use_special": bool(data.get("use_special", False))}
    out["baseline"] = {
        "indices": sorted(int(i) for i in data["baseline"]["indices"]),
        "count": int(data["baseline"]["count"]),
    }
    if data.get("special") is not None:
        out["special"] = {
            "indices": sorted(int(i) for i in data["special"]["indices"]),
            "count": int(data["special"]["count"]),
        }
    else:
        out["special"] = None
    return out


def _validate_timestamps(ts, path: str, two_arm: bool):
    if isinstance(ts, dict) and set(ts) == {"clean", "poisoned"}:
        _require(two_arm, path, "per-arm timestamps require the s1_s2 preset")
        for arm in ("clean", "poisoned"):
            _validate_timestamps(ts[arm], f"{path}.{arm}", two_arm=False)
        return
    if isinstance(ts, dict):
        last = _get(ts, "last", path, (int, float))
        count = _get(ts, "count", path, int)
        _require(last > 0, f"{path}.last", "must be > 0")
        _require(count >= 1, f"{path}.count", "must be >= 1")
        return
    _require(isinstance(ts, list) and len(ts) >= 1, path, "must be a list or {last, count} object")
    arr = np.asarray(ts, dtype=np.float64)
    _require(bool(arr[0] > 0 and np.all(np.diff(arr) > 0)), path, "must be positive and strictly increasing")


def _normalize_optimizer(opt: dict) -> dict:
    out = {
        "kind": opt["kind"],
        "base_lr": float(opt.get("base_lr", 0.01)),
        "beta": float(opt.get("beta", 0.8)),
        "softening": float(opt.get("softening", 1e-6)),
        "ode_rel_tol": float(opt.get("ode_rel_tol", 1e-8)),
        "ode_abs_tol": float(opt.get("ode_abs_tol", 1e-10)),
        "loss_stop": float(opt.get("loss_stop", 0.01)),
        "extra_iters_after_stop": int(opt.get("extra_iters_after_stop", 0)),
        "max_iters": int(opt.get("max_iters", 200_000)),
        "log_every": int(opt.get("log_every", 1)),
    }
    if "timestamps" in opt:
        ts = opt["timestamps"]
        if isinstance(ts, dict) and set(ts) == {"clean", "poisoned"}:
            out["timestamps"] = {
                arm: {"last": float(ts[arm]["last"]), "count": int(ts[arm]["count"])}
                if isinstance(ts[arm], dict)
                else [float(v) for v in ts[arm]]
                for arm in ("clean", "poisoned")
            }
        elif isinstance(ts, dict):
            out["timestamps"] = {"last": float(ts["last"]), "count": int(ts["count"])}
        else:
            out["timestamps"] = [float(v) for v in ts]
    return out


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return parse_config(doc)


def _expand_timestamps(ts) -> np.ndarray:
    if isinstance(ts, dict):
        return np.linspace(0.0, float(ts["last"]), int(ts["count"]) + 1)[1:]
    return np.asarray(ts, dtype=np.float64)


def _optimizer_spec(cfg: dict, arm: str) -> OptimizerSpec:
    opt = cfg["optimizer"]
    ts = opt.get("timestamps")
    if ts is not None and isinstance(ts, dict) and set(ts) == {"clean", "poisoned"}:
        ts = ts[arm]
    return OptimizerSpec(
        kind=opt["kind"],
        base_lr=opt["base_lr"],
        beta=opt["beta"],
        softening=opt["softening"],
        ode_rel_tol=opt["ode_rel_tol"],
        ode_abs_tol=opt["ode_abs_tol"],
        timestamps=None if ts is None else _expand_timestamps(ts),
        max_iters=opt["max_iters"],
        loss_stop=opt["loss_stop"],
        extra_iters_after_stop=opt["extra_iters_after_stop"],
        train_bc=cfg["student"]["train_bc"],
        log_every=opt["log_every"],
    )


def _build_teacher(cfg: dict):
    tc = cfg["teacher"]
    if tc["kind"] == "canonical":
        teacher = canonical_teacher(cfg["student"]["d"])
    else:
        teacher = diag_teacher(tc["values"])
    t_head = teacher_head(tc["head_width"]) if "head_width" in tc else None
    return teacher, t_head


@dataclass
class ArmOutcome:
    arm: str
    result: OptimizeResult
    finals: dict


def _mlp_eval_probe(teacher, t_head, gen_length: int, test_size: int, rng):
    """Held-out relative error for headed runs: residual norm over label norm
    on a fixed Gaussian test set (the zero map scores exactly 1)."""
    x_eval = rng.standard_normal((test_size, gen_length))
    x_rev = x_eval[:, ::-1]
    z_teacher = x_rev @ impulse_response(teacher, gen_length)
    y_eval = head_forward_batch(t_head, z_teacher)
    y_norm = float(np.linalg.norm(y_eval))

    def probe(t, ssm, head):
        z = x_rev @ impulse_response(ssm, gen_length)
        pred = head_forward_batch(head, z)
        return float(np.linalg.norm(pred - y_eval)) / y_norm

    return probe


def _standard_probes(cfg: dict, teacher, t_head, S: TrainingSet, eval_rng) -> dict:
    gen_length = cfg["eval"]["gen_length"]
    if cfg["student"]["head"] is None:
        def gen_probe(t, ssm, head):
            return normalized_generalization_error(ssm, teacher, gen_length)
    else:
        gen_probe = _mlp_eval_probe(teacher, t_head, gen_length, cfg["eval"]["test_set_size"], eval_rng)

    def gamma0_probe(t, ssm, head):
        return float(characterize(ssm, head, S).gammas[0])

    return {
        "gen_norm": gen_probe,
        "eff_rank": lambda t, ssm, head: effective_rank(np.abs(ssm.a)),
        "gamma0": gamma0_probe,
        "w1dist": lambda t, ssm, head: w1_distance(ssm.a),
    }


def run_arm(cfg: dict, seed: int, arm: str) -> ArmOutcome:
    """Execute one (config, seed, arm) pipeline."""
    streams = np.random.SeedSequence(seed).spawn(4)
    data_rng, init_rng, head_rng, eval_rng = (np.random.Generator(np.random.Philox(s)) for s in streams)

    teacher, t_head = _build_teacher(cfg)
    kappa = cfg["data"]["kappa"]

    if "preset" in cfg["data"]:
        s_clean, s_poisoned = theorem_sets(teacher, kappa)
        S = s_clean if arm == "clean" else s_poisoned
    else:
        baseline = cfg["data"]["baseline"]
        xs = gaussian_sequences(SequenceSpec(kappa, frozenset(baseline["indices"]), baseline["count"]), data_rng)
        if cfg["data"]["use_special"]:
            sp = cfg["data"]["special"]
            xs += gaussian_sequences(SequenceSpec(kappa, frozenset(sp["indices"]), sp["count"]), data_rng)
        S = label_set(teacher, t_head, xs)

    ic = cfg["init"]
    init = sample_init(
        InitSpec(
            d=cfg["student"]["d"],
            sd_a=ic["sd_a"],
            diff=ic["diff"],
            sd_bc=ic["sd_bc"],
            extension_factors=tuple(ic["extension_factors"]),
            shift=ic["shift"],
        ),
        init_rng,
    )
    ssm0 = DiagonalSSM(init.a0, init.b0, init.c0)
    head0 = None
    if cfg["student"]["head"] is not None:
        hc = cfg["student"]["head"]
        head0 = random_head(hc["width"], hc["init_sd"], head_rng)

    spec = _optimizer_spec(cfg, arm)
    probes = _standard_probes(cfg, teacher, t_head, S, eval_rng)
    runner = {"gradient_flow": gradient_flow, "adaptive_gd": adaptive_gd, "adam": adam}[spec.kind]
    result = runner(ssm0, head0, S, spec, probes)

    finals = {
        "loss": result.log.losses[-1],
        "gen_norm": result.log.probe_values["gen_norm"][-1],
        "eff_rank": result.log.probe_values["eff_rank"][-1],
        "gamma0": result.log.probe_values["gamma0"][-1],
        "w1dist": result.log.probe_values["w1dist"][-1],
        "steps": result.log.steps[-1],
    }
    if cfg["student"]["head"] is None:
        finals["gen_abs_kp2"] = generalization_error(result.ssm, teacher, kappa + 2)
    return ArmOutcome(arm, result, finals)


def csv_path(outdir: Path, name: str, arm: str, seed: int) -> Path:
    base = name if arm == "main" else f"{name}_{arm}"
    return Path(outdir) / f"{base}_{seed}.csv"


def write_trajectory_csv(path: Path, log, d: int):
    header = "step,time,loss," + ",".join(CSV_PROBES) + "," + ",".join(f"a_{j}" for j in range(1, d + 1))
    lines = [header]
    for i in range(len(log)):
        vals = [f"{log.times[i]:.17g}", f"{log.losses[i]:.17g}"]
        vals += [f"{log.probe_values[p][i]:.17g}" for p in CSV_PROBES]
        vals += [f"{v:.17g}" for v in log.a_rows[i]]
        lines.append(f"{log.steps[i]}," + ",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def _worker(cfg: dict, seed: int, outdir: str) -> tuple:
    results = {}
    arms = ["clean", "poisoned"] if "preset" in cfg["data"] else ["main"]
    for arm in arms:
        outcome = run_arm(cfg, seed, arm)
        write_trajectory_csv(csv_path(Path(outdir), cfg["name"], arm, seed), outcome.result.log, cfg["student"]["d"])
        results[arm] = outcome.finals
    return seed, results


def worker_count(n_tasks: int) -> int:
    cap = os.environ.get("SSMLAB_THREADS")
    if cap is not None:
        return max(1, min(int(cap), n_tasks))
    return max(1, min(os.cpu_count() or 1, n_tasks))


def run_experiment(config: ExperimentConfig, outdir) -> dict:
    """Run every seed of the config, write per-seed CSVs and the summary JSON."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = config.normalized()
    seeds = cfg["seeds"]

    workers = worker_count(len(seeds))
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            produced = list(pool.map(_worker, [cfg] * len(seeds), seeds, [str(outdir)] * len(seeds)))
    else:
        produced = [_worker(cfg, seed, str(outdir)) for seed in seeds]
    produced.sort(key=lambda pair: seeds.index(pair[0]))

    per_seed = {str(seed): finals for seed, finals in produced}
    arms = config.arms()
    means = {
        arm: {
            key: float(np.mean([per_seed[str(s)][arm][key] for s in seeds]))
            for key in per_seed[str(seeds[0])][arms[0]]
        }
        for arm in arms
    }
    summary = {"name": cfg["name"], "config": cfg, "per_seed": per_seed, "mean": means}
    if config.is_two_arm:
        clean, poisoned = means["clean"]["gen_norm"], means["poisoned"]["gen_norm"]
        summary["poison_ratio"] = poisoned / clean if clean > 0 else math.inf
    (outdir / f"{cfg['name']}_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def expand_overrides(base: dict, overrides: dict) -> list:
    """Cartesian product of override lists applied to dotted config paths.

    The 'seeds' key replaces the seed list instead of becoming a product
    dimension.
    """
    cells = [({}, base)]
    for path, values in overrides.items():
        if path == "seeds":
            continue
        new_cells = []
        for label, doc in cells:
            for v in values:
                patched = copy.deepcopy(doc)
                node = patched
                parts = path.split(".")
                for p in parts[:-1]:
                    if not isinstance(node.get(p), dict):
                        raise ConfigError(path, "override path does not exist")
                    node = node[p]
                if parts[-1] not in node:
                    raise ConfigError(path, "override path does not exist")
                node[parts[-1]] = v
                new_cells.append((label | {path: v}, patched))
        cells = new_cells
    if "seeds" in overrides:
        for _, doc in cells:
            doc["seeds"] = list(overrides["seeds"])
    return cells


def run_sweep(base_doc: dict, overrides: dict, outdir) -> dict:
    """Run the override grid; each cell aggregates its seeds with mean and std."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    cells = expand_overrides(base_doc, overrides)
    rows = []
    for label, doc in cells:
        doc = copy.deepcopy(doc)
        if label:
            suffix = "__".join(f"{k.replace('.', '_')}={v}" for k, v in sorted(label.items()))
            doc["name"] = f"{doc['name']}__{suffix}"
        cfg = parse_config(doc)
        summary = run_experiment(cfg, outdir)
        cell = {"overrides": label, "name": doc["name"], "mean": summary["mean"], "std": {}}
        for arm in cfg.arms():
            per_arm = [summary["per_seed"][str(s)][arm] for s in cfg.seeds]
            cell["std"][arm] = {k: float(np.std([r[k] for r in per_arm])) for k in per_arm[0]}
        rows.append(cell)
    merged = {"base": base_doc["name"], "cells": rows}
    (outdir / f"{base_doc['name']}_sweep.json").write_text(json.dumps(merged, indent=2, sort_keys=True) + "\n")
    return merged
