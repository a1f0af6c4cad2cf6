"""Euler simulation of the state/integral pair with compensated jumps.

One Euler step of the state, with pre-step state x_k, fine step dt and
standard normal draw N_k, is

    x_{k+1} = x_k + mu(x_k) dt + sigma(x_k) sqrt(dt) N_k
              + sum_j c(x_k, z_j) - dt * integral(c(x_k, z) f(z) dz)

where the jump count over the step is Poisson(lam*dt) and marks z_j follow
the normalized mark law. The integral coordinate accumulates the exact
left-Riemann sum y_{k+1} = y_k + x_k dt, so the difference-quotient
identity holds at the fine scale by construction.

Noise convention (fixed so the replicate layout is reproducible from the
documentation alone): replicate r owns the Philox stream keyed by
derive_key(seed_r) and consumes, in order,

    1. n_steps standard normals,
    2. n_steps Poisson(lam*dt) jump counts (skipped entirely when the
       model has no jumps),
    3. all jump marks in one batch, in step order.

Columns of an ensemble are therefore bit-reproducible regardless of how
replicates are grouped into blocks or threads.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import rng
from .errors import ConfigError, ExplosionError, InsufficientDataError, ValidationError
from .models import ModelSpec, jump_moment

#: Cap on elements of one block's normal-draw matrix (keeps memory bounded).
DEFAULT_BLOCK_ELEMS = 1 << 24


@dataclass(frozen=True)
class SimConfig:
    """Fine-grid simulation settings; horizon must be a multiple of the step."""

    fine_step: float
    horizon: float
    x0: float = 0.0
    y0: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.fine_step <= 0:
            raise ValidationError("fine_step must be > 0")
        if self.horizon < self.fine_step:
            raise ValidationError("horizon must be at least one fine step")
        n = round(self.horizon / self.fine_step)
        if abs(self.horizon - n * self.fine_step) > 0.5 * self.fine_step:
            raise ValidationError("horizon is not an integer number of fine steps")

    @property
    def n_steps(self) -> int:
        return round(self.horizon / self.fine_step)


@dataclass(frozen=True)
class FinePath:
    """A simulated trajectory of (state, integral) on the fine grid."""

    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    seed: int
    jump_count: int
    fine_step: float


@dataclass(frozen=True)
class ObservationSet:
    """Integrated observations at step ``sampling_step`` and their quotients.

    ``x_tilde[i]`` is (y_obs[i+1] - y_obs[i]) / sampling_step, the
    reconstruction of the state from consecutive integrated observations;
    ``n`` counts the index triples usable by the estimators. ``x_true`` is
    the exact state at the observation times, retained for oracle
    comparisons in simulations only.
    """

    sampling_step: float
    y_obs: np.ndarray
    x_tilde: np.ndarray
    n: int
    x_true: Optional[np.ndarray] = None


@dataclass(frozen=True)
class EnsemblePaths:
    """Recorded states/integrals for a batch of replicates (columns)."""

    times: np.ndarray
    x: np.ndarray  # shape (n_records, n_replicates)
    y: np.ndarray  # same shape; y starts at 0
    jump_counts: np.ndarray
    failed: np.ndarray  # boolean column mask: non-finite state encountered


def _check_intensity_step(lam: float, dt: float) -> None:
    lam_dt = lam * dt
    if lam_dt >= 1.0:
        raise ConfigError(
            f"jump intensity * fine step = {lam_dt:.3g} >= 1; refine the grid"
        )
    if lam_dt >= 0.1:
        warnings.warn(
            f"jump intensity * fine step = {lam_dt:.3g} >= 0.1; "
            "the per-step jump approximation is coarse",
            stacklevel=3,
        )


def _compensator(model: ModelSpec):
    if model.levy.intensity == 0.0:
        return None
    if model.jump_compensator is not None:
        return model.jump_compensator
    # Fallback: quadrature per state value. Correct but slow; presets supply
    # closed forms.
    vectorized = np.frompyfunc(lambda xv: jump_moment(model, 1, float(xv)), 1, 1)

    def comp(x):
        return vectorized(np.asarray(x, float)).astype(float)

    return comp


def _draw_column(gen, n_steps: int, lam_dt: float, sampler):
    normals = gen.standard_normal(n_steps)
    if lam_dt > 0.0:
        counts = gen.poisson(lam_dt, n_steps)
        total = int(counts.sum())
        if total:
            marks = sampler.sample(gen, total)
            steps = np.repeat(np.arange(n_steps, dtype=np.int64), counts)
        else:
            marks = np.empty(0)
            steps = np.empty(0, dtype=np.int64)
    else:
        total = 0
        marks = np.empty(0)
        steps = np.empty(0, dtype=np.int64)
    return normals, steps, marks, total


def _simulate_block(model, x0_block, dt, n_steps, keys_block, record_every, comp):
    n_cols = len(keys_block)
    lam_dt = model.levy.intensity * dt
    normals = np.empty((n_steps, n_cols))
    ev_steps, ev_cols, ev_marks = [], [], []
    jump_counts = np.zeros(n_cols, dtype=np.int64)
    for j, key in enumerate(keys_block):
        gen = rng.stream_from_key(int(key))
        col, steps, marks, total = _draw_column(gen, n_steps, lam_dt, model.levy.sampler)
        normals[:, j] = col
        if total:
            ev_steps.append(steps)
            ev_cols.append(np.full(total, j, dtype=np.int64))
            ev_marks.append(marks)
            jump_counts[j] = total

    if ev_steps:
        steps_all = np.concatenate(ev_steps)
        order = np.argsort(steps_all, kind="stable")
        steps_all = steps_all[order]
        cols_all = np.concatenate(ev_cols)[order]
        marks_all = np.concatenate(ev_marks)[order]
        bounds = np.searchsorted(steps_all, np.arange(n_steps + 1))
    else:
        bounds = None

    mu = model.drift
    sigma = model.diffusion
    c = model.jump
    sqdt = math.sqrt(dt)
    x = np.full(n_cols, 0.0) + np.asarray(x0_block, float)
    y = np.zeros(n_cols)
    n_rec = n_steps // record_every + 1
    x_rec = np.empty((n_rec, n_cols))
    y_rec = np.empty((n_rec, n_cols))
    x_rec[0] = x
    y_rec[0] = y
    row = 1
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            x_new = x + mu(x) * dt + sigma(x) * (sqdt * normals[k])
            if bounds is not None and bounds[k] != bounds[k + 1]:
                sl = slice(bounds[k], bounds[k + 1])
                cols = cols_all[sl]
                contrib = np.asarray(c(x[cols], marks_all[sl]), float)
                x_new = x_new + np.bincount(cols, weights=contrib, minlength=n_cols)
            if comp is not None:
                x_new = x_new - dt * comp(x)
            y = y + x * dt
            x = x_new
            if (k + 1) % record_every == 0:
                x_rec[row] = x
                y_rec[row] = y
                row += 1
    return x_rec, y_rec, jump_counts


def simulate_ensemble(
    model: ModelSpec,
    x0,
    fine_step: float,
    n_steps: int,
    seeds: Sequence[int] | np.ndarray,
    record_every: int = 1,
    threads: int = 1,
    max_block_elems: int = DEFAULT_BLOCK_ELEMS,
) -> EnsemblePaths:
    """Simulate one replicate per seed; columns are seed-addressed streams.

    ``x0`` may be a scalar or one value per replicate. States and integrals
    are recorded at fine indices 0, record_every, 2*record_every, ....
    Results are bit-identical for any block size or thread count.
    """
    if fine_step <= 0:
        raise ValidationError("fine_step must be > 0")
    if n_steps < 1 or n_steps % record_every != 0:
        raise ValidationError("n_steps must be a positive multiple of record_every")
    _check_intensity_step(model.levy.intensity, fine_step)

    seeds = np.asarray(seeds, dtype=np.uint64)
    n_rep = seeds.size
    keys = np.array([rng.derive_key(int(s)) for s in seeds], dtype=np.uint64)
    x0_arr = np.broadcast_to(np.asarray(x0, float), (n_rep,))

    n_rec = n_steps // record_every + 1
    x_all = np.empty((n_rec, n_rep))
    y_all = np.empty((n_rec, n_rep))
    jumps_all = np.zeros(n_rep, dtype=np.int64)
    comp = _compensator(model)

    block = max(1, min(n_rep, max_block_elems // max(1, n_steps)))
    spans = [(a, min(a + block, n_rep)) for a in range(0, n_rep, block)]

    def work(span):
        a, b = span
        return span, _simulate_block(
            model, x0_arr[a:b], fine_step, n_steps, keys[a:b], record_every, comp
        )

    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, spans))
    else:
        results = [work(s) for s in spans]

    for (a, b), (x_rec, y_rec, jc) in results:
        x_all[:, a:b] = x_rec
        y_all[:, a:b] = y_rec
        jumps_all[a:b] = jc

    times = fine_step * record_every * np.arange(n_rec)
    failed = ~(np.isfinite(x_all[-1]) & np.isfinite(y_all[-1]))
    return EnsemblePaths(times=times, x=x_all, y=y_all, jump_counts=jumps_all, failed=failed)


def simulate_path(model: ModelSpec, cfg: SimConfig) -> FinePath:
    """Simulate one trajectory on the fine grid; deterministic given the seed."""
    if not model.flags.all_asserted():
        warnings.warn(
            "model assumption flags are not all asserted; results may not "
            "match the stationary-theory targets",
            stacklevel=2,
        )
    ens = simulate_ensemble(
        model, cfg.x0, cfg.fine_step, cfg.n_steps, np.array([cfg.seed], dtype=np.uint64)
    )
    x = ens.x[:, 0]
    finite = np.isfinite(x)
    if not finite.all():
        bad = int(np.argmin(finite))
        raise ExplosionError(time=bad * cfg.fine_step)
    y = cfg.y0 + ens.y[:, 0]
    times = cfg.fine_step * np.arange(cfg.n_steps + 1)
    return FinePath(
        times=times,
        x=x,
        y=y,
        seed=cfg.seed,
        jump_count=int(ens.jump_counts[0]),
        fine_step=cfg.fine_step,
    )


def observe(path: FinePath, sampling_step: float) -> ObservationSet:
    """Read integrated observations off the fine grid and form quotients.

    The sampling step must be an integer multiple of the fine step.
    """
    if sampling_step <= 0:
        raise ValidationError("sampling step must be > 0")
    ratio = sampling_step / path.fine_step
    m = round(ratio)
    if m < 1 or abs(ratio - m) > 1e-9 * max(1.0, ratio):
        raise ValidationError(
            f"sampling step {sampling_step:g} is not an integer multiple of "
            f"the fine step {path.fine_step:g}"
        )
    y_obs = path.y[::m].copy()
    x_true = path.x[::m].copy()
    if y_obs.size < 4:
        raise InsufficientDataError(
            f"only {y_obs.size} observations at this sampling step; need at least 4"
        )
    x_tilde = np.diff(y_obs) / sampling_step
    return ObservationSet(
        sampling_step=float(sampling_step),
        y_obs=y_obs,
        x_tilde=x_tilde,
        n=x_tilde.size - 2,
        x_true=x_true,
    )
