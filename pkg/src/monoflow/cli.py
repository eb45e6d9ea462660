"""Command-line entry point: ``monoflow --preset example1 --r 1 --alpha 8 --theta 0.25 ...``.

Exit codes: 0 success, 2 validation failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import InvalidInputError, MonoflowError, ParameterViolation
from .experiments import NUMERICAL_ERRORS, RunConfig, load_config, run, sweep

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="monoflow",
        description="Inertial flows and implicit schemes for monotone equations.",
    )
    src = ap.add_mutually_exclusive_group()
    src.add_argument("--config", metavar="PATH", help="JSON config file (or inline JSON text)")
    src.add_argument("--preset", metavar="NAME", help="example1 | example2[:n]")
    ap.add_argument("--n", type=int, help="size of the example2 testbed")
    ap.add_argument("--mode", choices=("continuous", "discrete"))
    ap.add_argument("--r", type=float)
    ap.add_argument("--alpha", type=float)
    ap.add_argument("--theta", type=float)
    ap.add_argument("--delta", type=float)
    ap.add_argument("--beta", metavar="FAMILY[:args]",
                    help="constant[:c] | power:p[:c] | exponential[:delta] | exponential_continuous | exponential_discrete")
    ap.add_argument("--horizon", type=float, help="final time T of continuous runs")
    ap.add_argument("--kmax", type=int, help="iterations of discrete runs")
    ap.add_argument("--method", choices=("rk45_adaptive", "rk4_fixed"))
    ap.add_argument("--rtol", type=float)
    ap.add_argument("--step", type=float)
    ap.add_argument("--samples", type=int, dest="sample_count")
    ap.add_argument("--name")
    ap.add_argument("--out", metavar="DIR", default=None)
    ap.add_argument("--sweep", metavar="AXIS=v1,v2,...",
                    help="axis in r, theta, alpha, delta, beta-family")
    ap.add_argument("--threads", type=int, help="sweep workers (default MONOFLOW_THREADS or CPU count)")
    ap.add_argument("--force", action="store_true", help="run despite admissibility violations")
    ap.add_argument("--quiet", action="store_true")
    return ap


def _raw_config(args) -> dict:
    if args.config:
        text = args.config
        if text.lstrip().startswith("{"):
            payload = text
        else:
            try:
                with open(text) as fh:
                    payload = fh.read()
            except OSError as exc:
                raise InvalidInputError(f"cannot read config {text!r}: {exc.strerror}") from None
        try:
            raw = json.loads(payload)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"configuration is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise InvalidInputError("configuration must be a JSON object")
    else:
        raw = {}
    if args.preset:
        name, _, size = args.preset.partition(":")
        raw["preset"] = name
        if size:
            try:
                raw["n"] = int(size)
            except ValueError:
                raise InvalidInputError(f"bad preset size in {args.preset!r}") from None
    overrides = {
        "n": args.n, "mode": args.mode, "r": args.r, "alpha": args.alpha, "theta": args.theta,
        "delta": args.delta, "beta": args.beta, "T": args.horizon, "k_max": args.kmax,
        "method": args.method, "rtol": args.rtol, "step": args.step,
        "sample_count": args.sample_count, "name": args.name, "out": args.out,
    }
    for k, v in overrides.items():
        if v is not None:
            raw[k] = v
    if args.horizon is not None:
        raw.pop("horizon", None)
    if args.force:
        raw["force"] = True
    if "preset" not in raw and "operator" not in raw:
        raise InvalidInputError("give --config or --preset")
    return raw


def _parse_sweep(spec: str):
    axis, eq, vals = spec.partition("=")
    if not eq or not vals:
        raise InvalidInputError(f"--sweep expects AXIS=v1,v2,... (got {spec!r})")
    return axis.strip(), [v.strip() for v in vals.split(",") if v.strip()]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    say = (lambda *a: None) if args.quiet else print
    try:
        raw = _raw_config(args)
        if args.sweep:
            axis, values = _parse_sweep(args.sweep)
            combined = sweep(raw, axis, values, raw.get("out"), threads=args.threads)
            codes = [EXIT_OK]
            for row in combined["runs"]:
                msg = row["status"]
                if row["status"] == "rejected":
                    codes.append(EXIT_VALIDATION)
                    msg += ": " + "; ".join(row["violations"])
                elif row["status"] != "ok":
                    codes.append(EXIT_NUMERICAL)
                    msg += ": " + row["error"]["message"]
                say(f"{row['axis']}={row['value']}: {msg}")
            return max(codes)
        cfg = load_config(raw)
        for w in cfg.warnings:
            print(f"warning (forced): {w}", file=sys.stderr)
        res = run(cfg)
    except ParameterViolation as exc:
        print("invalid parameters:", file=sys.stderr)
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return EXIT_VALIDATION
    except InvalidInputError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MonoflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    s = res.summary
    term = s.get("terminal", {})
    say(f"{cfg.name}: status={s['status']} samples={s.get('samples', 0)} "
        f"norm_V(final)={term.get('norm_V', float('nan')):.3e} wall={s['wall_time']:.3f}s")
    if res.csv_path is not None:
        say(f"wrote {res.csv_path} and {res.summary_path}")
    if s["status"] != "ok":
        print(f"numerical failure: {s['error']['message']}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
