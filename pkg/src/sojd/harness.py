"""Replicated experiments: consistency tables and normality suites.

An experiment runs a ladder of (n, sampling step, bandwidth) rungs. Each
rung simulates ``reps`` independent datasets (one Philox stream per
replicate, keyed from the master seed), evaluates the estimators at the
requested points, and aggregates bias, RMSE, standardized-error moments,
and plug-in interval coverage.

Normality is assessed by moment thresholds plus coverage rather than a
named distributional test: the thresholds are sized by the Monte Carlo
error of the moments at the configured replicate count, which keeps the
check self-contained.

Target values for the invariant density come from the model's closed form
when present; otherwise a long-run kernel-density oracle is simulated once
(seed-pinned, cached to disk when the model carries a cache token).
"""
from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import stats as sps

from . import rng
from .errors import ConfigError, ValidationError
from .estimators import DENSITY_FLOOR, quotient_sums
from .kernels import KernelSpec, default_bandwidth, gaussian
from .models import ModelSpec, jump_moment
from .simulate import simulate_ensemble

__version__ = "0.1.0"

#: Normal 97.5% quantile used for nominal 95% plug-in intervals.
Z95 = 1.959963984540054

# Pass/fail thresholds used by summarize(); these mirror the acceptance
# thresholds so `experiment --check` and the test suite agree.
Z_VAR_RANGE = (0.7, 1.3)
Z_MEAN_MAX = 0.15
Z_SKEW_MAX = 0.5
Z_EXKURT_MAX = 1.0
COVERAGE_RANGE = (0.90, 0.98)
FINAL_BIAS_REL_MAX = 0.15
EQUAL_RATE_FACTOR = 3.0
MAX_FAILED_FRACTION = 0.01

# Sanity floors on the joint ladder conditions: nΔ proxies the growing
# time horizon, h*n*Δ the effective local sample size.
MIN_N_DELTA = 50.0
MIN_HND = 10.0

#: Pinned stream for the stationary-density oracle.
STATIONARY_SEED = 0x0C0FFEE


@dataclass(frozen=True)
class LadderRung:
    """One (n, sampling step, bandwidth) setting; bandwidth None = default rule."""

    n: int
    delta: float
    bandwidth: Optional[float] = None

    def resolved_bandwidth(self) -> float:
        if self.bandwidth is None:
            return default_bandwidth(self.delta)
        if self.bandwidth <= 0:
            raise ValidationError("rung bandwidth must be > 0")
        return float(self.bandwidth)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a replicated experiment needs, checked at construction."""

    model: ModelSpec
    points: tuple[float, ...]
    rungs: tuple[LadderRung, ...]
    reps: int
    seed: int
    estimators: tuple[str, ...] = ("p", "a", "b")
    kernel: Optional[KernelSpec] = None
    fine_substeps: int = 10
    threads: int = 1
    cache_dir: Optional[str] = None

    def __post_init__(self):
        if not self.points:
            raise ConfigError("at least one evaluation point is required")
        if not self.rungs:
            raise ConfigError("at least one ladder rung is required")
        if self.reps < 2:
            raise ConfigError("need at least 2 replicates")
        if self.fine_substeps < 2:
            raise ConfigError("fine_substeps must be >= 2")
        bad = set(self.estimators) - {"p", "a", "b"}
        if bad:
            raise ConfigError(f"unknown estimators {sorted(bad)}")
        for rung in self.rungs:
            nd = rung.n * rung.delta
            if nd < MIN_N_DELTA:
                raise ConfigError(
                    f"rung (n={rung.n}, delta={rung.delta:g}) has n*delta={nd:g} "
                    f"< {MIN_N_DELTA:g}"
                )
            hnd = rung.resolved_bandwidth() * nd
            if hnd < MIN_HND:
                raise ConfigError(
                    f"rung (n={rung.n}, delta={rung.delta:g}) has h*n*delta={hnd:g} "
                    f"< {MIN_HND:g}"
                )

    def resolved_kernel(self) -> KernelSpec:
        return self.kernel if self.kernel is not None else gaussian()


@dataclass(frozen=True)
class ReportRow:
    mode: str
    rung: int
    n: int
    delta: float
    bandwidth: float
    point: float
    estimator: str
    truth: float
    mean_estimate: float
    bias: float
    rmse: float
    z_mean: float
    z_var: float
    z_skew: float
    z_exkurt: float
    coverage95: float
    n_ok: int
    n_failed: int
    status: str


@dataclass(frozen=True)
class ZScoreBlock:
    rung: int
    point: float
    estimator: str
    replicates: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class ExperimentReport:
    mode: str
    rows: tuple[ReportRow, ...]
    zscores: tuple[ZScoreBlock, ...]
    seed: int
    version: str
    wall_time_s: float  # informational; never serialized, outputs stay bit-stable


# ---------------------------------------------------------------------------
# Stationary density oracle
# ---------------------------------------------------------------------------

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_ORACLE_MEMO: dict = {}


def stationary_samples(
    model: ModelSpec,
    cache_dir: Optional[str | Path] = None,
    total_time: float = 1e4,
    fine_step: float = 1e-3,
    n_paths: int = 100,
    burn_time: float = 20.0,
    thin: int = 8,
    threads: int = 1,
) -> np.ndarray:
    """Pooled long-run state samples approximating the invariant law.

    The total simulated time budget is spread over an ensemble of paths
    (better mixing than one path at identical cost), burn-in discarded,
    and states pooled every ``thin`` fine steps. Seed-pinned so the oracle
    is the same across runs; cached to disk when the model has a cache
    token.
    """
    key = (model, total_time, fine_step, n_paths, burn_time, thin)
    if key in _ORACLE_MEMO:
        return _ORACLE_MEMO[key]

    cache_path = None
    if cache_dir is not None and model.cache_token is not None:
        digest = hashlib.sha256(
            f"{model.cache_token}|{total_time}|{fine_step}|{n_paths}|{burn_time}|{thin}".encode()
        ).hexdigest()[:16]
        cache_path = Path(cache_dir) / f"stationary-{digest}.npy"
        if cache_path.exists():
            samples = np.load(cache_path)
            _ORACLE_MEMO[key] = samples
            return samples

    per_path_time = total_time / n_paths
    n_steps = round(per_path_time / fine_step)
    n_steps -= n_steps % thin
    lo, hi = model.state_range
    if model.contains(0.0):
        x0 = 0.0
    elif math.isfinite(lo) and math.isfinite(hi):
        x0 = 0.5 * (lo + hi)
    else:
        x0 = lo + 1.0 if math.isfinite(lo) else hi - 1.0
    seeds = rng.derive_keys(STATIONARY_SEED, np.arange(n_paths, dtype=np.uint64))
    ens = simulate_ensemble(
        model, x0, fine_step, n_steps, seeds, record_every=thin, threads=threads
    )
    burn_rows = int(burn_time / (fine_step * thin)) + 1
    pooled = ens.x[burn_rows:, ~ens.failed].ravel()
    pooled = pooled[np.isfinite(pooled)]
    if pooled.size == 0:
        raise ValidationError("stationary oracle produced no finite samples")
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        np.save(cache_path, pooled)
    _ORACLE_MEMO[key] = pooled
    return pooled


def stationary_density(samples: np.ndarray, bandwidth: float = 0.05) -> Callable:
    """Gaussian KDE over pooled samples, evaluable at scalars or arrays."""
    s = np.asarray(samples, float)

    def density(x):
        x = np.asarray(x, float)
        if x.ndim == 0:
            u = (float(x) - s) / bandwidth
            return float(np.mean(np.exp(-0.5 * u * u)) / (bandwidth * _SQRT_2PI))
        return np.array([density(v) for v in x])

    return density


def invariant_density_fn(
    model: ModelSpec, cache_dir: Optional[str | Path] = None, threads: int = 1
) -> Callable:
    """Closed-form invariant density when supplied, else the KDE oracle."""
    if model.stationary_density is not None:
        return model.stationary_density
    samples = stationary_samples(model, cache_dir=cache_dir, threads=threads)
    return stationary_density(samples)


# ---------------------------------------------------------------------------
# Dataset simulation
# ---------------------------------------------------------------------------

def dataset_ensemble(
    model: ModelSpec,
    n: int,
    delta: float,
    reps: int,
    seed: int,
    fine_substeps: int = 10,
    x0_pool: Optional[np.ndarray] = None,
    threads: int = 1,
):
    """Simulate ``reps`` observation datasets sized for n estimator terms.

    Returns (y_obs, x_true, failed): observation-grid matrices of shape
    (n + 3, reps) and the per-replicate failure mask. Replicate r draws
    from the stream keyed by (seed, r); its initial state comes from
    ``x0_pool`` (hash-indexed) or defaults to 0.
    """
    m = int(fine_substeps)
    n_quotients = n + 2
    n_steps = n_quotients * m
    rep_seeds = rng.derive_keys(seed, np.arange(reps, dtype=np.uint64))
    if x0_pool is not None and x0_pool.size:
        idx = rng.derive_keys(rng.derive_key(seed, 0xA11), np.arange(reps, dtype=np.uint64))
        x0 = x0_pool[(idx % np.uint64(x0_pool.size)).astype(np.int64)]
    else:
        x0 = 0.0
    ens = simulate_ensemble(
        model, x0, delta / m, n_steps, rep_seeds, record_every=m, threads=threads
    )
    return ens.y, ens.x, ens.failed


def _sample_moments(z: np.ndarray) -> tuple[float, float, float, float]:
    mean = float(np.mean(z))
    var = float(np.var(z, ddof=1)) if z.size > 1 else float("nan")
    skew = float(sps.skew(z)) if z.size > 2 else float("nan")
    exkurt = float(sps.kurtosis(z)) if z.size > 3 else float("nan")
    return mean, var, skew, exkurt


def _run(cfg: ExperimentConfig, mode: str) -> ExperimentReport:
    t0 = time.perf_counter()
    model = cfg.model
    kernel = cfg.resolved_kernel()
    p_fn = invariant_density_fn(model, cache_dir=cfg.cache_dir, threads=cfg.threads)
    x0_pool = None
    if model.stationary_density is None:
        x0_pool = stationary_samples(model, cache_dir=cfg.cache_dir, threads=cfg.threads)

    rows: list[ReportRow] = []
    zblocks: list[ZScoreBlock] = []
    for rung_idx, rung in enumerate(cfg.rungs):
        h = rung.resolved_bandwidth()
        delta = rung.delta
        rung_seed = rng.derive_key(cfg.seed, rung_idx)
        y_obs, _, failed = dataset_ensemble(
            model,
            rung.n,
            delta,
            cfg.reps,
            rung_seed,
            fine_substeps=cfg.fine_substeps,
            x0_pool=x0_pool,
            threads=cfg.threads,
        )
        n_failed = int(failed.sum())
        rung_status = "ok" if n_failed <= MAX_FAILED_FRACTION * cfg.reps else "failed"
        quotients = np.diff(y_obs, axis=0) / delta
        norm = math.sqrt(h * rung.n * delta)

        for point in cfg.points:
            with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
                p_vec, a_num, b_num = quotient_sums(quotients, delta, kernel, h, point)
                reachable = p_vec >= DENSITY_FLOOR
                a_vec = np.where(reachable, a_num / p_vec, np.nan)
                b_vec = np.where(reachable, b_num / p_vec, np.nan)
                se_a_vec = np.where(
                    reachable & (b_vec > 0),
                    np.sqrt(kernel.k2 * b_vec / p_vec) / norm,
                    np.nan,
                )
            p_true = float(p_fn(point))
            truth = {
                "p": p_true,
                "a": float(model.drift(point)),
                "b": float(model.diffusion(point)) ** 2 + jump_moment(model, 2, point),
            }
            m4 = jump_moment(model, 4, point)
            with np.errstate(invalid="ignore"):
                se_b_vec = np.where(reachable, np.sqrt(kernel.k2 * m4 / p_vec) / norm, np.nan)
            limit_var = {
                "a": kernel.k2 * truth["b"] / p_true if p_true > 0 else float("nan"),
                "b": kernel.k2 * m4 / p_true if p_true > 0 else float("nan"),
            }
            estimates = {"p": p_vec, "a": a_vec, "b": b_vec}
            plug_se = {"a": se_a_vec, "b": se_b_vec}

            for est in cfg.estimators:
                vals = estimates[est]
                valid = np.isfinite(vals) & ~failed
                idx = np.flatnonzero(valid)
                ok = vals[idx]
                status = rung_status
                if ok.size < 2:
                    rows.append(
                        ReportRow(
                            mode, rung_idx, rung.n, delta, h, point, est,
                            truth[est], float("nan"), float("nan"), float("nan"),
                            float("nan"), float("nan"), float("nan"), float("nan"),
                            float("nan"), int(ok.size), n_failed, "failed",
                        )
                    )
                    continue
                mean_est = float(np.mean(ok))
                bias = mean_est - truth[est]
                rmse = float(np.sqrt(np.mean(np.square(ok - truth[est]))))
                z_mean = z_var = z_skew = z_exkurt = coverage = float("nan")
                if est in ("a", "b"):
                    var = limit_var[est]
                    if not (var > 0):
                        status = "degenerate-variance" if status == "ok" else status
                    else:
                        z = norm * (ok - truth[est]) / math.sqrt(var)
                        z_mean, z_var, z_skew, z_exkurt = _sample_moments(z)
                        se_ok = plug_se[est][idx]
                        covered = np.abs(ok - truth[est]) <= Z95 * se_ok
                        coverage = float(np.mean(np.where(np.isfinite(se_ok), covered, False)))
                        zblocks.append(
                            ZScoreBlock(rung_idx, point, est, idx.copy(), z.copy())
                        )
                rows.append(
                    ReportRow(
                        mode, rung_idx, rung.n, delta, h, point, est,
                        truth[est], mean_est, bias, rmse,
                        z_mean, z_var, z_skew, z_exkurt, coverage,
                        int(ok.size), n_failed, status,
                    )
                )
    wall = time.perf_counter() - t0
    return ExperimentReport(
        mode=mode,
        rows=tuple(rows),
        zscores=tuple(zblocks),
        seed=cfg.seed,
        version=__version__,
        wall_time_s=wall,
    )


def run_consistency(cfg: ExperimentConfig) -> ExperimentReport:
    """Bias/RMSE ladder for the estimators against their model targets."""
    return _run(cfg, "consistency")


def run_normality(cfg: ExperimentConfig) -> ExperimentReport:
    """Standardized-error suite; requires h*n*delta^3 decreasing on the ladder."""
    hnd3 = [r.resolved_bandwidth() * r.n * r.delta**3 for r in cfg.rungs]
    if len(hnd3) > 1 and not all(b < a for a, b in zip(hnd3, hnd3[1:])):
        raise ConfigError(
            "normality ladder needs h*n*delta^3 strictly decreasing; got "
            + ", ".join(f"{v:.3g}" for v in hnd3)
        )
    return _run(cfg, "normality")


# ---------------------------------------------------------------------------
# Summaries and serialization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Summary:
    text: str
    passed: bool
    rows: tuple[ReportRow, ...]


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return format(v, ".17g")
    return str(v)


REPORT_COLUMNS = (
    "mode", "rung", "n", "delta", "bandwidth", "point", "estimator", "truth",
    "mean_estimate", "bias", "rmse", "z_mean", "z_var", "z_skew", "z_exkurt",
    "coverage95", "n_ok", "n_failed", "status",
)


def report_csv_lines(rows: Iterable[ReportRow]) -> list[str]:
    lines = [",".join(REPORT_COLUMNS)]
    for r in rows:
        lines.append(
            ",".join(
                _fmt(getattr(r, col)) for col in REPORT_COLUMNS
            )
        )
    return lines


def zscore_csv_lines(report: ExperimentReport, estimator: str) -> list[str]:
    lines = ["rung,point,replicate,z"]
    for block in report.zscores:
        if block.estimator != estimator:
            continue
        for rep, z in zip(block.replicates, block.z):
            lines.append(f"{block.rung},{_fmt(block.point)},{rep},{_fmt(float(z))}")
    return lines


def _check_line(label: str, ok: bool, detail: str) -> str:
    return f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"


def _evaluate_consistency(report: ExperimentReport) -> list[tuple[str, bool, str]]:
    checks = []
    keys = sorted({(r.point, r.estimator) for r in report.rows})
    for point, est in keys:
        seq = [r for r in report.rows if r.point == point and r.estimator == est]
        seq.sort(key=lambda r: r.rung)
        rmses = [r.rmse for r in seq]
        ok = all(
            math.isfinite(a) and math.isfinite(b) and b < a
            for a, b in zip(rmses, rmses[1:])
        ) and len(rmses) == len(seq)
        checks.append(
            (
                f"rmse-decreasing {est}({point:g})",
                ok if len(rmses) > 1 else True,
                " -> ".join(f"{v:.4g}" for v in rmses),
            )
        )
        if est == "b":
            final = seq[-1]
            if final.truth != 0 and math.isfinite(final.bias):
                rel = abs(final.bias) / abs(final.truth)
                checks.append(
                    (
                        f"final-bias b({point:g})",
                        rel <= FINAL_BIAS_REL_MAX,
                        f"|bias|/|truth| = {rel:.4g} (max {FINAL_BIAS_REL_MAX})",
                    )
                )
    return checks


def _evaluate_normality(report: ExperimentReport) -> list[tuple[str, bool, str]]:
    checks = []
    last_rung = max(r.rung for r in report.rows)
    for row in report.rows:
        if row.rung != last_rung or row.estimator not in ("a", "b"):
            continue
        tag = f"{row.estimator}({row.point:g})"
        if row.status == "degenerate-variance":
            checks.append((f"normality {tag}", True, "skipped: degenerate limit variance"))
            continue
        if not math.isfinite(row.z_var):
            checks.append((f"normality {tag}", False, "no z-scores available"))
            continue
        checks.append(
            (
                f"z-variance {tag}",
                Z_VAR_RANGE[0] <= row.z_var <= Z_VAR_RANGE[1],
                f"{row.z_var:.4g} in [{Z_VAR_RANGE[0]}, {Z_VAR_RANGE[1]}]",
            )
        )
        checks.append(
            (f"z-mean {tag}", abs(row.z_mean) <= Z_MEAN_MAX, f"|{row.z_mean:.4g}| <= {Z_MEAN_MAX}")
        )
        checks.append(
            (f"z-skew {tag}", abs(row.z_skew) <= Z_SKEW_MAX, f"|{row.z_skew:.4g}| <= {Z_SKEW_MAX}")
        )
        checks.append(
            (
                f"z-excess-kurtosis {tag}",
                abs(row.z_exkurt) <= Z_EXKURT_MAX,
                f"|{row.z_exkurt:.4g}| <= {Z_EXKURT_MAX}",
            )
        )
        checks.append(
            (
                f"coverage95 {tag}",
                COVERAGE_RANGE[0] <= row.coverage95 <= COVERAGE_RANGE[1],
                f"{row.coverage95:.4g} in [{COVERAGE_RANGE[0]}, {COVERAGE_RANGE[1]}]",
            )
        )
    # Equal-rate behaviour: under the shared normalization, the z variances
    # at the top two rungs stay within a bounded factor for both estimators.
    rungs = sorted({r.rung for r in report.rows})
    if len(rungs) >= 2:
        top, prev = rungs[-1], rungs[-2]
        for row in report.rows:
            if row.rung != top or row.estimator not in ("a", "b"):
                continue
            if row.status == "degenerate-variance":
                continue
            match = [
                r
                for r in report.rows
                if r.rung == prev and r.estimator == row.estimator and r.point == row.point
            ]
            if not match or not math.isfinite(match[0].z_var) or not math.isfinite(row.z_var):
                continue
            ratio = row.z_var / match[0].z_var if match[0].z_var > 0 else float("inf")
            checks.append(
                (
                    f"equal-rate {row.estimator}({row.point:g})",
                    1.0 / EQUAL_RATE_FACTOR <= ratio <= EQUAL_RATE_FACTOR and row.z_var > 0,
                    f"top-two z-variance ratio {ratio:.4g} within factor {EQUAL_RATE_FACTOR:g}",
                )
            )
    return checks


def summarize(reports: Sequence[ExperimentReport]) -> Summary:
    """Merge reports into one table plus pass/fail lines per criterion."""
    if not reports:
        raise ValidationError("summarize needs at least one report")
    versions = {r.version for r in reports}
    if len(versions) > 1:
        raise ConfigError(f"cannot merge reports from different versions: {sorted(versions)}")

    merged = [row for rep in reports for row in rep.rows]
    merged.sort(key=lambda r: (r.n, r.delta, r.point, r.estimator, r.mode))

    header = (
        f"{'mode':>12} {'n':>7} {'delta':>8} {'h':>7} {'point':>7} {'est':>3} "
        f"{'truth':>10} {'mean':>10} {'bias':>10} {'rmse':>10} {'z_var':>8} "
        f"{'cover':>6} {'status':>10}"
    )
    lines = [header, "-" * len(header)]
    for r in merged:
        lines.append(
            f"{r.mode:>12} {r.n:>7d} {r.delta:>8.4g} {r.bandwidth:>7.4g} "
            f"{r.point:>7.4g} {r.estimator:>3} {r.truth:>10.4g} {r.mean_estimate:>10.4g} "
            f"{r.bias:>10.3g} {r.rmse:>10.4g} "
            f"{(f'{r.z_var:.3g}' if math.isfinite(r.z_var) else '-'):>8} "
            f"{(f'{r.coverage95:.3g}' if math.isfinite(r.coverage95) else '-'):>6} "
            f"{r.status:>10}"
        )

    lines.append("")
    all_ok = True
    for rep in reports:
        checks = (
            _evaluate_consistency(rep) if rep.mode == "consistency" else _evaluate_normality(rep)
        )
        failed_rungs = sorted({r.rung for r in rep.rows if r.status == "failed"})
        if failed_rungs:
            checks.append(
                (f"replicate-failures ({rep.mode})", False, f"rungs {failed_rungs} exceeded "
                 f"{MAX_FAILED_FRACTION:.0%} failures")
            )
        for label, ok, detail in checks:
            all_ok &= ok
            lines.append(_check_line(f"{rep.mode} {label}", ok, detail))
    lines.append("")
    lines.append(f"overall: {'PASS' if all_ok else 'FAIL'}")
    return Summary(text="\n".join(lines) + "\n", passed=all_ok, rows=tuple(merged))
