"""Run configurations, single runs, parameter sweeps and their CSV/JSON output.

Configuration schema (JSON object, all keys optional except as noted)::

    preset        "example1" | "example2" (or give "operator")
    n             size of example2 (default 10)
    operator      {"matrix": [[..]], "offset": [..], "known_zero": [..]}
    mode          "continuous" (default) | "discrete"
    r, alpha, theta        required
    delta, t0
    beta          {"family": "constant", "c": 1} | "power:1" | "exponential" | ...
    T | horizon   final time of continuous runs (default 100)
    k_max         iterations of discrete runs (default 1000)
    method, step, rtol, atol, sample_count        integrator settings
    resolvent     {"method": .., "newton_tol": .., "newton_max_iter": ..}
    z0, zdot0, z1 initial data (zero vectors, z1 = z0 by default)
    energy        {"lambda": .., "rho": ..}
    recenter      integrate around the known zero (default true)
    out, name, seed, force

``"exponential"`` selects the schedule matching ``mode`` and takes ``r``,
``theta`` and ``delta`` from the solver parameters.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import diagnostics as dg
from .errors import (ConvergenceError, DivergenceError, IllPosedStepError, InvalidInputError,
                     MonoflowError, NumericalDomainError, ParameterViolation, StiffnessError)
from .flow import (EnergyParams, IntegratorConfig, default_energy_params, flow_violations,
                   integrate, trajectory_energy)
from .operators import (OperatorSpec, build_lagrangian_operator, build_saddle_example2,
                        example1_problem, find_affine_zero)
from .schedules import BetaSchedule, SolverParams
from .stepper import (ResolventConfig, default_stride, discrete_violations, run_discrete,
                      trajectory_energy_discrete)

PRESETS = ("example1", "example2")
SWEEP_AXES = ("r", "theta", "alpha", "delta", "beta")
NUMERICAL_ERRORS = (DivergenceError, StiffnessError, IllPosedStepError, ConvergenceError,
                    NumericalDomainError)

_KNOWN_KEYS = {
    "preset", "n", "operator", "mode", "r", "alpha", "theta", "delta", "t0", "beta", "T",
    "horizon", "k_max", "method", "step", "rtol", "atol", "sample_count", "resolvent", "z0",
    "zdot0", "z1", "energy", "recenter", "out", "name", "seed", "force",
}


def parse_beta(spec, mode: str = "continuous") -> dict:
    """Normalize a schedule descriptor to a dict.

    Accepts dicts or ``FAMILY[:args]`` strings: ``constant[:c]``,
    ``power:p[:c]``, ``exponential``, ``exponential_continuous``,
    ``exponential_discrete``.
    """
    if isinstance(spec, dict):
        return dict(spec)
    if not isinstance(spec, str):
        raise InvalidInputError(f"beta must be an object or a FAMILY[:args] string, got {spec!r}")
    fam, *args = spec.strip().split(":")
    fam = fam.strip().lower().replace("-", "_")
    try:
        vals = [float(a) for a in args]
    except ValueError:
        raise InvalidInputError(f"bad schedule arguments in {spec!r}") from None
    if fam == "constant":
        return {"family": "constant", "c": vals[0] if vals else 1.0}
    if fam == "power":
        if not vals:
            raise InvalidInputError("power schedule needs an exponent, e.g. power:1")
        return {"family": "power", "p": vals[0], "c": vals[1] if len(vals) > 1 else 1.0}
    if fam in ("exponential", "exp", "exponential_continuous", "exponential_discrete"):
        d = {"family": "exponential" if fam == "exp" else fam}
        if vals:
            d["delta"] = vals[0]
        return d
    raise InvalidInputError(f"unknown schedule family {fam!r}")


def build_schedule(desc: dict, params: SolverParams, mode: str) -> BetaSchedule:
    d = dict(desc)
    fam = d.get("family")
    if fam is None:
        raise InvalidInputError("schedule descriptor needs a 'family'")
    if fam == "exponential":
        fam = f"exponential_{mode}"
    if fam.startswith("exponential_"):
        delta = d.get("delta", params.delta)
        if delta is None:
            raise InvalidInputError(f"{fam} needs delta (set 'delta' in the config)")
        return BetaSchedule(fam, r=d.get("r", params.r), theta=d.get("theta", params.theta),
                            delta=delta)
    d.pop("family")
    return BetaSchedule.from_dict({"family": fam, **d})


@dataclass
class RunConfig:
    """A validated experiment; build it with :func:`load_config` or :meth:`from_dict`."""

    mode: str
    params: SolverParams
    schedule: BetaSchedule
    beta: dict
    preset: Optional[str] = None
    n: int = 10
    operator: Optional[dict] = None
    integrator: Optional[IntegratorConfig] = None
    resolvent: ResolventConfig = field(default_factory=ResolventConfig)
    k_max: int = 1000
    z0: Optional[list] = None
    zdot0: Optional[list] = None
    z1: Optional[list] = None
    energy: Optional[EnergyParams] = None
    recenter: bool = True
    out: Optional[str] = None
    name: str = "run"
    seed: int = 0
    force: bool = False
    warnings: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        """Validate ``raw`` and collect every violated rule before raising.

        Domain errors (unknown keys, malformed values) always raise
        :class:`InvalidInputError`.  Admissibility violations raise
        :class:`ParameterViolation` unless ``force`` is set, in which case
        they are kept in :attr:`warnings`.
        """
        if not isinstance(raw, dict):
            raise InvalidInputError("configuration must be a JSON object")
        try:
            return cls._from_dict(raw)
        except MonoflowError:
            raise
        except (TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed configuration value: {exc}") from None

    @classmethod
    def _from_dict(cls, raw: dict) -> "RunConfig":
        unknown = sorted(set(raw) - _KNOWN_KEYS)
        if unknown:
            raise InvalidInputError(f"unknown configuration keys {unknown}")
        mode = raw.get("mode", "continuous")
        if mode not in ("continuous", "discrete"):
            raise InvalidInputError(f"mode must be 'continuous' or 'discrete', got {mode!r}")
        preset = raw.get("preset")
        if preset is not None and preset not in PRESETS:
            raise InvalidInputError(f"unknown preset {preset!r}; choose from {PRESETS}")
        if (preset is None) == (raw.get("operator") is None):
            raise InvalidInputError("give exactly one of 'preset' and 'operator'")
        missing = [k for k in ("r", "alpha", "theta") if k not in raw]
        if missing:
            raise InvalidInputError(f"missing required keys {missing}")
        params = SolverParams(r=float(raw["r"]), alpha=float(raw["alpha"]), theta=float(raw["theta"]),
                              delta=None if raw.get("delta") is None else float(raw["delta"]),
                              t0=float(raw.get("t0", 1.0)))
        beta = parse_beta(raw.get("beta", {"family": "constant", "c": 1.0}), mode)
        schedule = build_schedule(beta, params, mode)
        force = bool(raw.get("force", False))
        k_max = int(raw.get("k_max", 1000))
        horizon = float(raw.get("T", raw.get("horizon", 100.0)))
        integ = None
        problems = []
        if mode == "continuous":
            default_method = "rk45_adaptive"
            integ = IntegratorConfig(
                horizon=horizon,
                method=raw.get("method", default_method),
                step=float(raw.get("step", 1e-2)),
                rtol=float(raw.get("rtol", 1e-10)),
                atol=float(raw.get("atol", 1e-300)),
                sample_count=int(raw.get("sample_count", 2000)),
            )
            bad = integ.violations(params.t0)
            if bad:
                raise InvalidInputError("; ".join(bad))
        elif k_max < 2:
            raise InvalidInputError(f"k_max must be >= 2 (got {k_max})")
        rc = raw.get("resolvent") or {}
        resolvent = ResolventConfig(rc.get("method"), float(rc.get("newton_tol", 1e-12)),
                                    int(rc.get("newton_max_iter", 50)))
        energy = None
        if raw.get("energy"):
            e = raw["energy"]
            default = default_energy_params(params)
            energy = EnergyParams(float(e.get("lambda", default.lam)), float(e.get("rho", default.rho)))
            problems += energy.violations(params.r, params.alpha)
        if mode == "discrete" and params.r == 0:
            raise InvalidInputError("the discrete scheme needs r in (0, 1]")
        # admissibility boxes and growth conditions
        if mode == "continuous":
            problems += flow_violations(None, schedule, params)
        else:
            problems += discrete_violations(schedule, params, k_max)
        if problems and not force:
            raise ParameterViolation(problems)
        cfg = cls(mode=mode, params=params, schedule=schedule, beta=beta, preset=preset,
                  n=int(raw.get("n", 10)), operator=raw.get("operator"), integrator=integ,
                  resolvent=resolvent, k_max=k_max, z0=raw.get("z0"), zdot0=raw.get("zdot0"),
                  z1=raw.get("z1"), energy=energy, recenter=bool(raw.get("recenter", True)),
                  out=raw.get("out"), name=str(raw.get("name", preset or "run")),
                  seed=int(raw.get("seed", 0)), force=force, warnings=problems)
        cfg.build_operator()  # surface operator errors at load time
        return cfg

    def to_dict(self) -> dict:
        """Round-trippable JSON form (what the summary embeds)."""
        p = self.params
        d = {"mode": self.mode, "r": p.r, "alpha": p.alpha, "theta": p.theta, "t0": p.t0,
             "beta": dict(self.beta), "name": self.name, "seed": self.seed, "force": self.force,
             "recenter": self.recenter}
        if p.delta is not None:
            d["delta"] = p.delta
        if self.preset is not None:
            d["preset"] = self.preset
            if self.preset == "example2":
                d["n"] = self.n
        else:
            d["operator"] = self.operator
        if self.mode == "continuous":
            c = self.integrator
            d.update(T=c.horizon, method=c.method, step=c.step, rtol=c.rtol, atol=c.atol,
                     sample_count=c.sample_count)
        else:
            d["k_max"] = self.k_max
        rc = self.resolvent
        d["resolvent"] = {"method": rc.method, "newton_tol": rc.newton_tol,
                          "newton_max_iter": rc.newton_max_iter}
        for key in ("z0", "zdot0", "z1"):
            if getattr(self, key) is not None:
                d[key] = list(getattr(self, key))
        if self.energy is not None:
            d["energy"] = {"lambda": self.energy.lam, "rho": self.energy.rho}
        if self.out is not None:
            d["out"] = self.out
        return d

    def build_operator(self):
        """``(operator, lagrangian problem or None, known zero or None)``."""
        if self.preset == "example1":
            prob = example1_problem()
            op = build_lagrangian_operator(prob)
            return op, prob, op.known_zero
        if self.preset == "example2":
            if self.n < 2:
                raise InvalidInputError(f"example2 needs n >= 2 (got {self.n})")
            op = build_saddle_example2(self.n)
            return op, None, op.known_zero
        o = self.operator
        if not isinstance(o, dict) or "matrix" not in o:
            raise InvalidInputError("custom operators are given as {'matrix': .., 'offset': ..}")
        M = np.asarray(o["matrix"], dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise InvalidInputError(f"operator matrix must be square, got shape {M.shape}")
        op = OperatorSpec(M.shape[0], matrix=M, offset=o.get("offset"), known_zero=o.get("known_zero"),
                          name=o.get("name", "custom"))
        zero = op.known_zero
        if zero is None:
            try:
                zero = find_affine_zero(op)
            except MonoflowError:
                zero = None
        return op, None, zero


def load_config(source) -> RunConfig:
    """Read a configuration from a JSON file path, inline JSON text or a dict."""
    if isinstance(source, dict):
        raw = source
    else:
        text = str(source)
        if text.lstrip().startswith("{"):
            payload = text
        else:
            path = Path(text)
            if not path.is_file():
                raise InvalidInputError(f"configuration file {text!r} not found")
            payload = path.read_text()
        try:
            raw = json.loads(payload)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"configuration is not valid JSON: {exc}") from None
    return RunConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# single runs


@dataclass
class RunResult:
    config: RunConfig
    summary: dict
    columns: dict
    trajectory: Optional[object] = None
    csv_path: Optional[Path] = None
    summary_path: Optional[Path] = None

    @property
    def ok(self) -> bool:
        return self.summary["status"] == "ok"


def _solve(cfg: RunConfig, op, origin):
    if cfg.mode == "continuous":
        return integrate(op, cfg.schedule, cfg.params, cfg.integrator, cfg.z0, cfg.zdot0,
                         origin=origin, force=True)
    return run_discrete(op, cfg.schedule, cfg.params, cfg.z0, cfg.z1, cfg.k_max, cfg.resolvent,
                        origin=origin, force=True, stride=default_stride(cfg.k_max))


def _columns(traj, prob, zero, energy_params):
    cols = {"tau": traj.tau, "norm_V": traj.norm_V()}
    if zero is not None:
        cols["gap"] = dg.trajectory_gap(traj, zero)
        if traj.kind == "continuous":
            cols["energy"] = trajectory_energy(traj, energy_params, zero)
        else:
            cols["energy"] = trajectory_energy_discrete(traj, energy_params, zero)
    if prob is not None:
        m = dg.trajectory_primal_dual(traj, prob)
        for k in ("f_gap", "feasibility", "lagrangian_gap", "grad_gap", "adjoint_gap"):
            cols[k] = m[k]
    # divergence truncates at the last all-finite row
    fin = np.ones(traj.tau.size, dtype=bool)
    for v in cols.values():
        fin &= np.isfinite(v)
    n = int(np.argmin(fin)) if not fin.all() else fin.size
    return {k: np.asarray(v)[:n] for k, v in cols.items()}, n < fin.size


def _rates(cfg: RunConfig, cols: dict, traj, zero) -> dict:
    rates = {}
    floor = 1e-300
    series = [c for c in ("norm_V", "f_gap", "feasibility", "lagrangian_gap", "gap") if c in cols]
    for name in series:
        try:
            rates[name] = dg.fit_loglog_slope(cols["tau"], np.abs(cols[name]), floor=floor,
                                              metric=name).to_dict()
        except MonoflowError as exc:
            rates[name] = {"metric": name, "error": str(exc)}
    if cfg.schedule.family.startswith("exponential") and cfg.params.r < 1:
        try:
            rates["norm_V_exponential"] = dg.fit_exponential_rate(
                cols["tau"], cols["norm_V"], cfg.params.r, floor=floor, metric="norm_V").to_dict()
        except MonoflowError as exc:
            rates["norm_V_exponential"] = {"metric": "norm_V", "error": str(exc)}
    return rates


def _decay_summary(traj, zero) -> dict:
    prods = dg.decay_products(traj, zero)
    out = {}
    for key in ("V", "gap", "velocity"):
        if key not in prods:
            continue
        v = np.abs(prods[key])
        i0 = dg.detect_transient(v)
        entry = {"max": float(np.max(v)), "terminal": float(v[-1]),
                 "transient_index": i0, "transient_tau": None if i0 is None else float(traj.tau[i0])}
        if i0 is not None:
            entry["terminal_over_transient"] = dg.little_o_ratio(v, i0)
        out[key] = entry
    return out


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def write_csv(path, cols: dict) -> None:
    names = list(cols)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*(cols[n] for n in names)):
            w.writerow([format(float(x), ".17g") for x in row])


def run(cfg: RunConfig, out_dir=None, *, write: bool = True) -> RunResult:
    """Execute one configuration and (optionally) write ``NAME.csv`` and ``NAME.summary.json``.

    Numerical failures do not raise: the finite prefix is written and the
    summary carries an ``error`` record with ``status = "numerical_error"``.
    """
    t_start = time.perf_counter()
    op, prob, zero = cfg.build_operator()
    origin = zero if (cfg.recenter and zero is not None and op.is_affine) else None
    energy_params = cfg.energy or default_energy_params(cfg.params)
    error = None
    traj = None
    try:
        traj = _solve(cfg, op, origin)
    except NUMERICAL_ERRORS as exc:
        error = {"type": type(exc).__name__, "message": str(exc)}
        traj = getattr(exc, "partial", None)

    summary = {"name": cfg.name, "config": cfg.to_dict(), "warnings": list(cfg.warnings)}
    cols = {}
    if traj is not None:
        with np.errstate(over="ignore", invalid="ignore"):
            cols, truncated = _columns(traj, prob, zero, energy_params)
        if truncated and error is None:
            error = {"type": "DivergenceError", "message": "non-finite diagnostics; output truncated"}
        summary["samples"] = int(cols["tau"].size)
        summary["solver"] = _clean(traj.info)
        if cols["tau"].size >= 2:
            summary["rates"] = _rates(cfg, cols, traj, zero)
            summary["decay_products"] = _decay_summary(traj.head(cols["tau"].size), zero)
            summary["boundedness"] = dg.boundedness_report(traj, zero).to_dict()
            if "energy" in cols:
                mono = dg.monotonicity_report(cols["tau"], cols["energy"])
                summary["energy"] = {"lambda": energy_params.lam, "rho": energy_params.rho,
                                     **mono.to_dict()}
                summary["transient_index"] = mono.transient_index
            summary["terminal"] = {k: float(v[-1]) for k, v in cols.items()}
    summary["status"] = "ok" if error is None else "numerical_error"
    summary["error"] = error
    summary["wall_time"] = time.perf_counter() - t_start
    summary = _clean(summary)

    result = RunResult(cfg, summary, cols, traj)
    out_dir = out_dir if out_dir is not None else cfg.out
    if write and out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.csv_path = out / f"{cfg.name}.csv"
        result.summary_path = out / f"{cfg.name}.summary.json"
        if cols:
            write_csv(result.csv_path, cols)
        else:
            result.csv_path.write_text("tau,norm_V\n")
        result.summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return result


# ---------------------------------------------------------------------------
# sweeps


def max_threads() -> int:
    """Worker cap from ``MONOFLOW_THREADS`` (default: CPU count)."""
    env = os.environ.get("MONOFLOW_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise InvalidInputError(f"MONOFLOW_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise InvalidInputError("MONOFLOW_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def _axis_value(axis: str, value):
    if axis == "beta":
        return value
    try:
        return float(value)
    except (TypeError, ValueError):
        raise InvalidInputError(f"sweep value {value!r} for {axis} is not a number") from None


def sweep(base: dict, axis: str, values, out_dir=None, *, threads: Optional[int] = None) -> dict:
    """Run ``base`` once per value of ``axis``; failures stay local to their run.

    ``base`` is a raw configuration dict.  Returns the combined summary,
    which is also written to ``sweep_summary.json`` and ``sweep_summary.csv``
    when an output directory is given.
    """
    axis = {"beta-family": "beta", "beta_family": "beta"}.get(axis, axis)
    if axis not in SWEEP_AXES:
        raise InvalidInputError(f"sweep axis must be one of {SWEEP_AXES} or beta-family, got {axis!r}")
    values = list(values)
    if not values:
        raise InvalidInputError("sweep needs at least one value")
    out_dir = out_dir if out_dir is not None else base.get("out")
    base_name = base.get("name", base.get("preset", "run"))

    def one(value):
        raw = copy.deepcopy(base)
        raw[axis] = _axis_value(axis, value)
        label = str(value).replace(":", "_")
        raw["name"] = f"{base_name}_{axis}={label}"
        row = {"axis": axis, "value": value, "name": raw["name"]}
        try:
            cfg = RunConfig.from_dict(raw)
        except ParameterViolation as exc:
            return {**row, "status": "rejected", "violations": exc.violations}
        except InvalidInputError as exc:
            return {**row, "status": "rejected", "violations": [str(exc)]}
        res = run(cfg, out_dir)
        s = res.summary
        row.update(status=s["status"], error=s.get("error"), terminal=s.get("terminal"),
                   rates={k: v.get("slope") for k, v in s.get("rates", {}).items()},
                   wall_time=s["wall_time"])
        if res.csv_path is not None:
            row["csv"] = str(res.csv_path)
        return row

    n_workers = min(threads or max_threads(), len(values))
    with ThreadPoolExecutor(max_workers=n_workers) as ex:
        rows = list(ex.map(one, values))
    combined = _clean({"axis": axis, "values": values, "base": base, "runs": rows})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep_summary.json").write_text(json.dumps(combined, indent=2, sort_keys=True) + "\n")
        _write_sweep_table(out / "sweep_summary.csv", rows)
    return combined


def _write_sweep_table(path, rows) -> None:
    rate_keys = sorted({k for r in rows for k in (r.get("rates") or {})})
    term_keys = sorted({k for r in rows for k in (r.get("terminal") or {}) if k != "tau"})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value", "status"] + [f"slope_{k}" for k in rate_keys] + [f"terminal_{k}" for k in term_keys])
        for r in rows:
            rates, term = r.get("rates") or {}, r.get("terminal") or {}
            fmt = lambda x: "" if x is None or isinstance(x, str) else format(float(x), ".17g")
            w.writerow([r["value"], r["status"]] + [fmt(rates.get(k)) for k in rate_keys]
                       + [fmt(term.get(k)) for k in term_keys])
