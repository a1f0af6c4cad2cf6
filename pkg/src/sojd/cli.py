"""Command-line interface: simulate, estimate, verify, experiment, replay.

Every run writes a manifest next to its primary output recording the
resolved parameters; ``sojd replay`` re-executes a manifest and reproduces
the outputs bit-exactly. Numbers are serialized with 17 significant digits
so CSV round-trips are lossless for 64-bit floats.

Exit codes: 0 success, 1 validation error, 2 numeric failure, 3 acceptance
check failure (``experiment --check``).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    ConfigError,
    NumericError,
    SojdError,
    ValidationError,
)
from .estimators import estimate_on_grid
from .generator import verify_appendix_terms, verify_relation_33, verify_relation_34
from .harness import (
    ExperimentConfig,
    LadderRung,
    report_csv_lines,
    run_consistency,
    run_normality,
    summarize,
    zscore_csv_lines,
)
from .kernels import default_bandwidth, get_kernel
from .models import PRESETS, jump_moment, make_model
from .simulate import ObservationSet, SimConfig, observe, simulate_path

PASS_SLACK = 0.05

_MODEL_KEYS = ("theta", "s", "lambda", "eta", "kappa", "alpha")


def _fmt(value: float) -> str:
    if isinstance(value, float) and math.isnan(value):
        return ""
    return format(value, ".17g")


def _write_text_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _write_manifest(primary_output: Path, subcommand: str, params: dict,
                    seed, inputs: list[str], outputs: list[str],
                    started: str) -> Path:
    manifest = {
        "tool": "sojd",
        "version": __version__,
        "subcommand": subcommand,
        "parameters": params,
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "started_at": started,
        "finished_at": datetime.now(timezone.utc).isoformat(),
    }
    path = primary_output.with_name(primary_output.name + ".manifest.json")
    _write_text_atomic(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _model_from_params(params: dict):
    overrides = {k: params.get(k) for k in _MODEL_KEYS if params.get(k) is not None}
    return make_model(params["model"], **overrides)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _fine_csv(path_obj) -> str:
    lines = ["t,x,y"]
    for t, x, y in zip(path_obj.times, path_obj.x, path_obj.y):
        lines.append(f"{_fmt(float(t))},{_fmt(float(x))},{_fmt(float(y))}")
    return "\n".join(lines) + "\n"


def _obs_csv(obs: ObservationSet) -> str:
    lines = ["i,t,y_obs,x_tilde,x_true"]
    for i, y in enumerate(obs.y_obs):
        t = i * obs.sampling_step
        xt = _fmt(float(obs.x_tilde[i - 1])) if i >= 1 else ""
        xtrue = _fmt(float(obs.x_true[i])) if obs.x_true is not None else ""
        lines.append(f"{i},{_fmt(t)},{_fmt(float(y))},{xt},{xtrue}")
    return "\n".join(lines) + "\n"


def read_observations(path: Path) -> ObservationSet:
    """Parse an observation CSV written by ``sojd simulate --observe``."""
    rows = path.read_text(encoding="utf-8").strip().splitlines()
    if not rows or rows[0].split(",")[:3] != ["i", "t", "y_obs"]:
        raise ValidationError(f"{path} is not an observation CSV (header mismatch)")
    t_vals, y_vals, x_true_vals = [], [], []
    have_true = True
    for line in rows[1:]:
        parts = line.split(",")
        t_vals.append(float(parts[1]))
        y_vals.append(float(parts[2]))
        if len(parts) > 4 and parts[4] != "":
            x_true_vals.append(float(parts[4]))
        else:
            have_true = False
    if len(y_vals) < 4:
        raise ValidationError(f"{path} holds fewer than 4 observations")
    steps = np.diff(t_vals)
    delta = float(steps[0])
    if delta <= 0 or not np.allclose(steps, delta, rtol=1e-9, atol=0):
        raise ValidationError(f"{path} does not have a constant sampling step")
    y_obs = np.asarray(y_vals)
    x_tilde = np.diff(y_obs) / delta
    return ObservationSet(
        sampling_step=delta,
        y_obs=y_obs,
        x_tilde=x_tilde,
        n=x_tilde.size - 2,
        x_true=np.asarray(x_true_vals) if have_true else None,
    )


def _cmd_simulate(params: dict) -> int:
    started = _now()
    model = _model_from_params(params)
    cfg = SimConfig(
        fine_step=params["dt"],
        horizon=params["T"],
        x0=params["x0"],
        y0=params["y0"],
        seed=params["seed"],
    )
    path_obj = simulate_path(model, cfg)
    out = Path(params["out"])
    _write_text_atomic(out, _fine_csv(path_obj))
    outputs = [str(out)]
    if params.get("observe") is not None:
        obs = observe(path_obj, params["observe"])
        obs_out = Path(params["obs_out"] or out.with_name(out.stem + "_obs.csv"))
        _write_text_atomic(obs_out, _obs_csv(obs))
        outputs.append(str(obs_out))
    _write_manifest(out, "simulate", params, params["seed"], [], outputs, started)
    return 0


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

def _parse_grid(spec: str) -> np.ndarray:
    try:
        lo_s, hi_s, count_s = spec.split(":")
        lo, hi, count = float(lo_s), float(hi_s), int(count_s)
    except ValueError as exc:
        raise ValidationError(f"grid must be lo:hi:count, got {spec!r}") from exc
    if count < 1 or hi < lo:
        raise ValidationError(f"grid must have hi >= lo and count >= 1, got {spec!r}")
    return np.linspace(lo, hi, count)


def _estimate_csv(result) -> str:
    lines = ["x,p_hat,a_hat,b_hat,se_a,se_b,n_eff"]
    for i, x in enumerate(result.grid):
        lines.append(
            ",".join(
                [
                    _fmt(float(x)),
                    _fmt(float(result.p_hat[i])),
                    _fmt(float(result.a_hat[i])),
                    _fmt(float(result.b_hat[i])),
                    _fmt(float(result.se_a[i])),
                    _fmt(float(result.se_b[i])),
                    _fmt(float(result.n_eff[i])),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def _cmd_estimate(params: dict) -> int:
    started = _now()
    bandwidth_spec = params["bandwidth"]
    obs = read_observations(Path(params["input"]))
    if bandwidth_spec == "auto":
        bandwidth = default_bandwidth(obs.sampling_step)
    else:
        bandwidth = float(bandwidth_spec)
        if bandwidth <= 0:
            raise ValidationError(
                "bandwidth must be positive; pass 'auto' for the default rule "
                "h = delta^(2/11)"
            )
    kernel = get_kernel(params["kernel"])
    grid = _parse_grid(params["grid"])
    fourth = None
    if params.get("model"):
        model = _model_from_params(params)
        fourth = lambda x: jump_moment(model, 4, float(x))  # noqa: E731
    result = estimate_on_grid(obs, kernel, bandwidth, grid, fourth_jump_moment=fourth)
    out = Path(params["output"])
    _write_text_atomic(out, _estimate_csv(result))
    _write_manifest(out, "estimate", params, None, [params["input"]], [str(out)], started)
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def _relation_json(check, slack: float) -> dict:
    ok = abs(check.gap) <= 3.0 * check.se + slack
    return {
        "relation": check.relation,
        "x": check.x,
        "delta": check.step,
        "lhs_mc": check.lhs_mc,
        "rhs": check.rhs,
        "gap": check.gap,
        "se": check.se,
        "pass": bool(ok),
    }


def _appendix_json(report, slack: float) -> dict:
    terms = []
    ok = True
    for t in report.terms + (report.total,):
        t_ok = abs(t.gap) <= 3.0 * t.se + slack
        ok &= t_ok
        terms.append(
            {
                "term": t.name,
                "mc": t.mc,
                "closed_form": t.closed_form,
                "gap": t.gap,
                "se": t.se,
                "pass": bool(t_ok),
            }
        )
    return {
        "relation": "appendix",
        "x": report.x,
        "delta": report.step,
        "terms": terms,
        "pass": bool(ok),
    }


def _cmd_verify(params: dict) -> int:
    started = _now()
    model = _model_from_params(params)
    kwargs = dict(
        reps=params["reps"],
        seed=params["seed"],
        fine_substeps=params["substeps"],
        threads=params["threads"],
    )
    relation = params["relation"]
    if relation == "33":
        payload = _relation_json(
            verify_relation_33(model, params["x"], params["delta"], **kwargs), params["slack"]
        )
    elif relation == "34":
        payload = _relation_json(
            verify_relation_34(model, params["x"], params["delta"], **kwargs), params["slack"]
        )
    else:
        payload = _appendix_json(
            verify_appendix_terms(model, params["x"], params["delta"], **kwargs), params["slack"]
        )
    text = json.dumps(payload, indent=2) + "\n"
    if params.get("out"):
        out = Path(params["out"])
        _write_text_atomic(out, text)
        _write_manifest(out, "verify", params, params["seed"], [], [str(out)], started)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------

def parse_experiment_config(text: str) -> dict:
    """Flat key = value config; '#' starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno} is not 'key = value': {raw!r}")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


_CONFIG_KEYS = {
    "model", "theta", "s", "lambda", "eta", "kappa", "alpha",
    "ladder", "reps", "seed", "points", "mode", "estimators", "fine_substeps",
}


def parse_ladder(spec: str) -> tuple[LadderRung, ...]:
    rungs = []
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        pieces = part.split(":")
        if len(pieces) != 3:
            raise ConfigError(f"ladder rung must be n:delta:h, got {part!r}")
        n_s, d_s, h_s = pieces
        bandwidth = None if h_s.strip() == "auto" else float(h_s)
        rungs.append(LadderRung(n=int(n_s), delta=float(d_s), bandwidth=bandwidth))
    if not rungs:
        raise ConfigError("ladder is empty")
    return tuple(rungs)


def experiment_config_from_file(path: Path, threads: int, cache_dir: str | None) -> tuple[ExperimentConfig, str]:
    values = parse_experiment_config(path.read_text(encoding="utf-8"))
    unknown = set(values) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("model", "ladder", "reps", "seed", "points"):
        if key not in values:
            raise ConfigError(f"config is missing required key {key!r}")
    model_params = {"model": values["model"]}
    for k in _MODEL_KEYS:
        if k in values:
            model_params[k] = float(values[k])
    model = _model_from_params(model_params)
    points = tuple(float(p) for p in values["points"].split(","))
    estimators = tuple(
        e.strip() for e in values.get("estimators", "p,a,b").split(",") if e.strip()
    )
    cfg = ExperimentConfig(
        model=model,
        points=points,
        rungs=parse_ladder(values["ladder"]),
        reps=int(values["reps"]),
        seed=int(values["seed"]),
        estimators=estimators,
        fine_substeps=int(values.get("fine_substeps", "10")),
        threads=threads,
        cache_dir=cache_dir,
    )
    return cfg, values.get("mode", "consistency")


def _cmd_experiment(params: dict) -> int:
    started = _now()
    out_dir = Path(params["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_dir = str(out_dir / "cache")
    cfg, cfg_mode = experiment_config_from_file(
        Path(params["config"]), params["threads"], cache_dir
    )
    mode = params.get("mode") or cfg_mode
    if mode not in ("consistency", "normality", "both"):
        raise ConfigError(f"mode must be consistency, normality, or both; got {mode!r}")

    reports = []
    if mode in ("consistency", "both"):
        reports.append(run_consistency(cfg))
    if mode in ("normality", "both"):
        reports.append(run_normality(cfg))
    summary = summarize(reports)

    report_path = out_dir / "report.csv"
    _write_text_atomic(report_path, "\n".join(report_csv_lines(summary.rows)) + "\n")
    outputs = [str(report_path)]
    zscore_names = {"a": "zscores.csv", "b": "zscores_second.csv"}
    for est, fname in zscore_names.items():
        lines: list[str] = []
        for rep in reports:
            body = zscore_csv_lines(rep, est)[1:]
            lines.extend(body)
        if lines:
            zpath = out_dir / fname
            _write_text_atomic(zpath, "\n".join(["rung,point,replicate,z"] + lines) + "\n")
            outputs.append(str(zpath))
    summary_path = out_dir / "summary.txt"
    _write_text_atomic(summary_path, summary.text)
    outputs.append(str(summary_path))
    _write_manifest(report_path, "experiment", params, cfg.seed, [params["config"]], outputs, started)

    sys.stdout.write(summary.text)
    if params.get("check") and not summary.passed:
        return 3
    return 0


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

_DISPATCH = {}


def _cmd_replay(params: dict) -> int:
    manifest_path = Path(params["manifest"])
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read manifest {manifest_path}: {exc}") from exc
    sub = manifest.get("subcommand")
    if sub not in _DISPATCH or sub == "replay":
        raise ValidationError(f"manifest names unknown subcommand {sub!r}")
    replay_params = dict(manifest["parameters"])
    return _DISPATCH[sub](replay_params)


_DISPATCH.update(
    {
        "simulate": _cmd_simulate,
        "estimate": _cmd_estimate,
        "verify": _cmd_verify,
        "experiment": _cmd_experiment,
        "replay": _cmd_replay,
    }
)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; we use 1
        raise ValidationError(message)


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True, choices=sorted(PRESETS),
                   help="model preset name")
    p.add_argument("--theta", type=float, help="mean-reversion rate (ou-jump)")
    p.add_argument("--s", type=float, help="diffusion scale (units of state/sqrt(time))")
    p.add_argument("--lambda", dest="lam", type=float,
                   help="jump intensity (jumps per unit time)")
    p.add_argument("--eta", type=float, help="jump mark standard deviation")
    p.add_argument("--kappa", type=float, help="mean-reversion rate (cir-jump)")
    p.add_argument("--alpha", type=float, help="mean-reversion level (cir-jump)")


def _threads_default() -> int:
    env = os.environ.get("SOJD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"SOJD_THREADS must be an integer, got {env!r}")
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sojd", description="Second-order jump-diffusion toolkit")
    parser.add_argument("--version", action="version", version=f"sojd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="simulate a fine-grid trajectory",
                           parents=[], add_help=True)
    _add_model_args(p_sim)
    p_sim.add_argument("--T", type=float, required=True, help="horizon (time units)")
    p_sim.add_argument("--dt", type=float, required=True, help="fine step (time units)")
    p_sim.add_argument("--x0", type=float, default=0.0, help="initial state")
    p_sim.add_argument("--y0", type=float, default=0.0, help="initial integral value")
    p_sim.add_argument("--seed", type=int, default=0, help="stream seed (64-bit)")
    p_sim.add_argument("--out", required=True, help="fine path CSV (t,x,y)")
    p_sim.add_argument("--observe", type=float, default=None,
                       help="also write observations at this sampling step (time units)")
    p_sim.add_argument("--obs-out", default=None,
                       help="observation CSV path (default: <out>_obs.csv)")
    p_sim.add_argument("--threads", type=int, default=None, help="worker cap (unused here)")

    p_est = sub.add_parser("estimate", help="evaluate the estimators on a grid")
    p_est.add_argument("--input", required=True, help="observation CSV from simulate")
    p_est.add_argument("--grid", required=True, help="evaluation grid lo:hi:count")
    p_est.add_argument("--kernel", default="gaussian", choices=["gaussian", "quartic"],
                       help="smoothing kernel")
    p_est.add_argument("--bandwidth", default="auto",
                       help="bandwidth h, or 'auto' for the delta^(2/11) rule")
    p_est.add_argument("--output", required=True, help="estimate CSV")
    p_est.add_argument("--model", choices=sorted(PRESETS), default=None,
                       help="optional model for the second-moment standard error")
    for flag, dest in (("--theta", "theta"), ("--s", "s"), ("--lambda", "lam"),
                       ("--eta", "eta"), ("--kappa", "kappa"), ("--alpha", "alpha")):
        p_est.add_argument(flag, dest=dest, type=float, help=argparse.SUPPRESS)
    p_est.add_argument("--threads", type=int, default=None, help="worker cap (unused here)")

    p_ver = sub.add_parser("verify", help="Monte Carlo check of a conditional-moment relation")
    _add_model_args(p_ver)
    p_ver.add_argument("--relation", required=True, choices=["33", "34", "appendix"],
                       help="33 = drift relation, 34 = squared-increment relation, "
                            "appendix = term-by-term decomposition")
    p_ver.add_argument("--x", type=float, required=True, help="conditioning state")
    p_ver.add_argument("--delta", type=float, required=True, help="sampling step (time units)")
    p_ver.add_argument("--reps", type=int, default=100_000, help="conditional replicates")
    p_ver.add_argument("--seed", type=int, default=0, help="master seed")
    p_ver.add_argument("--substeps", type=int, default=100,
                       help="fine steps per sampling step")
    p_ver.add_argument("--slack", type=float, default=PASS_SLACK,
                       help="absolute slack added to 3*SE in the pass rule")
    p_ver.add_argument("--out", default=None, help="JSON report path (default stdout)")
    p_ver.add_argument("--threads", type=int, default=None, help="simulation worker cap")

    p_exp = sub.add_parser("experiment", help="replicated consistency/normality experiment")
    p_exp.add_argument("--config", required=True, help="flat key=value config file")
    p_exp.add_argument("--out", required=True, help="output directory")
    p_exp.add_argument("--mode", choices=["consistency", "normality", "both"], default=None,
                       help="override the config mode")
    p_exp.add_argument("--check", action="store_true",
                       help="exit 3 if any summary criterion fails")
    p_exp.add_argument("--threads", type=int, default=None, help="replicate worker cap")

    p_rep = sub.add_parser("replay", help="re-run a manifest and reproduce its outputs")
    p_rep.add_argument("manifest", help="path to a .manifest.json file")
    return parser


def _params_from_args(args: argparse.Namespace) -> dict:
    threads = args.threads if getattr(args, "threads", None) else _threads_default()
    cmd = args.command
    if cmd == "simulate":
        return {
            "model": args.model, "theta": args.theta, "s": args.s, "lambda": args.lam,
            "eta": args.eta, "kappa": args.kappa, "alpha": args.alpha,
            "T": args.T, "dt": args.dt, "x0": args.x0, "y0": args.y0,
            "seed": args.seed, "out": args.out, "observe": args.observe,
            "obs_out": args.obs_out, "threads": threads,
        }
    if cmd == "estimate":
        return {
            "input": args.input, "grid": args.grid, "kernel": args.kernel,
            "bandwidth": args.bandwidth, "output": args.output, "model": args.model,
            "theta": args.theta, "s": args.s, "lambda": args.lam, "eta": args.eta,
            "kappa": args.kappa, "alpha": args.alpha, "threads": threads,
        }
    if cmd == "verify":
        return {
            "model": args.model, "theta": args.theta, "s": args.s, "lambda": args.lam,
            "eta": args.eta, "kappa": args.kappa, "alpha": args.alpha,
            "relation": args.relation, "x": args.x, "delta": args.delta,
            "reps": args.reps, "seed": args.seed, "substeps": args.substeps,
            "slack": args.slack, "out": args.out, "threads": threads,
        }
    if cmd == "experiment":
        return {
            "config": args.config, "out": args.out, "mode": args.mode,
            "check": args.check, "threads": threads,
        }
    return {"manifest": args.manifest}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        params = _params_from_args(args)
        return _DISPATCH[args.command](params)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except SojdError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
