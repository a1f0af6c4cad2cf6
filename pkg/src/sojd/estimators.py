"""Kernel regression estimators on difference-quotient data.

All quotient-based estimators share one index convention. With quotients
q[0..M-1] built from consecutive integrated observations, sums run over
j = 0..n-1 with n = M - 2, pairing the lagged kernel argument q[j] with the
forward increment q[j+2] - q[j+1]. The forward increment against the lagged
kernel argument is deliberate: it is what makes the conditional-moment
relations behind the estimators available. The density denominator uses the
same n so the ratio cancels exactly.

The baseline estimators operate on an exact state series instead and use
all consecutive pairs: kernel argument s[j] with increment s[j+1] - s[j],
and the squared increment without the 3/2 correction.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    InsufficientDataError,
    NoDataNearPointError,
    ValidationError,
)
from .kernels import KernelSpec
from .models import ModelSpec, jump_moment
from .simulate import ObservationSet

#: Density values below this floor signal a point outside the visited range.
DENSITY_FLOOR = 1e-300


def _check_bandwidth(bandwidth: float) -> None:
    if not bandwidth > 0:
        raise ValidationError("bandwidth must be > 0")


def quotient_sums(quotients, sampling_step, kernel, bandwidth, x):
    """Core sums for the quotient estimators.

    ``quotients`` has shape (M,) or (M, R); returns (p, a_num, b_num) with
    the trailing shape. Shared by the point estimators and the Monte Carlo
    harness so there is exactly one implementation of the sums.
    """
    q = np.asarray(quotients, float)
    n = q.shape[0] - 2
    if n < 1:
        raise InsufficientDataError("need at least 3 difference quotients")
    _check_bandwidth(bandwidth)
    lag = q[:n]
    d = q[2:] - q[1:-1]
    w = kernel((x - lag) / bandwidth)
    scale = 1.0 / (n * bandwidth)
    p = w.sum(axis=0) * scale
    a_num = (w * d).sum(axis=0) * scale / sampling_step
    b_num = (w * (1.5 * d * d)).sum(axis=0) * scale / sampling_step
    return p, a_num, b_num


def baseline_sums(series, sampling_step, kernel, bandwidth, x):
    """Core sums for the exact-series baselines; all consecutive pairs."""
    s = np.asarray(series, float)
    n0 = s.shape[0] - 1
    if n0 < 1:
        raise InsufficientDataError("need at least 2 exact observations")
    _check_bandwidth(bandwidth)
    lag = s[:-1]
    d = s[1:] - lag
    w = kernel((x - lag) / bandwidth)
    scale = 1.0 / (n0 * bandwidth)
    p = w.sum(axis=0) * scale
    a_num = (w * d).sum(axis=0) * scale / sampling_step
    b_num = (w * d * d).sum(axis=0) * scale / sampling_step
    return p, a_num, b_num


def _guard_density(p, x):
    if np.ndim(p) == 0:
        if p < DENSITY_FLOOR:
            raise NoDataNearPointError(
                f"no kernel mass near x={x:.6g}; the point lies outside the "
                "visited state range"
            )
    return p


def nw_density(obs: ObservationSet, kernel: KernelSpec, bandwidth: float, x: float) -> float:
    """Kernel density estimate of the invariant law at x from quotients."""
    p, _, _ = quotient_sums(obs.x_tilde, obs.sampling_step, kernel, bandwidth, x)
    return float(p)


def nw_drift(obs: ObservationSet, kernel: KernelSpec, bandwidth: float, x: float) -> float:
    """Kernel regression estimate of the drift at x."""
    p, a_num, _ = quotient_sums(obs.x_tilde, obs.sampling_step, kernel, bandwidth, x)
    _guard_density(p, x)
    return float(a_num / p)


def nw_second(obs: ObservationSet, kernel: KernelSpec, bandwidth: float, x: float) -> float:
    """Kernel regression estimate of the second infinitesimal moment at x.

    Targets sigma^2(x) + integral(c^2(x, z) f(z) dz); the 3/2 factor on the
    squared forward increment corrects the 2/3 attenuation that integrating
    the state induces.
    """
    p, _, b_num = quotient_sums(obs.x_tilde, obs.sampling_step, kernel, bandwidth, x)
    _guard_density(p, x)
    return float(b_num / p)


def nw_baseline(
    series,
    kernel: KernelSpec,
    bandwidth: float,
    x: float,
    sampling_step: float,
) -> tuple[float, float, float]:
    """Baseline (density, drift, second-moment) estimates on exact states.

    Available in simulations only, where the exact state series is known;
    used to quantify how much the quotient reconstruction costs.
    """
    p, a_num, b_num = baseline_sums(series, sampling_step, kernel, bandwidth, x)
    _guard_density(p, x)
    return float(p), float(a_num / p), float(b_num / p)


def asymptotic_variance(
    model: ModelSpec,
    kernel: KernelSpec,
    x: float,
    which: str,
    p_at_x: float,
) -> float:
    """Limit variance of the normalized estimator error at x.

    drift:  K2 * (sigma^2(x) + integral(c^2 f)) / p(x)
    second: K2 * integral(c^4 f) / p(x)

    The normalization is sqrt(bandwidth * n * sampling_step) times the
    estimation error.
    """
    if which not in ("drift", "second"):
        raise ValidationError(f"which must be 'drift' or 'second', got {which!r}")
    if not p_at_x > 0:
        raise ValidationError("p_at_x must be > 0")
    if which == "drift":
        num = float(model.diffusion(x)) ** 2 + jump_moment(model, 2, x)
    else:
        num = jump_moment(model, 4, x)
    return kernel.k2 * num / p_at_x


@dataclass(frozen=True)
class EstimateResult:
    """Grid evaluation of the three estimators with plug-in standard errors.

    Missing entries (grid points with no nearby data) are NaN. ``n_eff`` is
    the Kish effective sample size of the kernel weights at each point.
    """

    grid: np.ndarray
    p_hat: np.ndarray
    a_hat: np.ndarray
    b_hat: np.ndarray
    se_a: np.ndarray
    se_b: np.ndarray
    n_eff: np.ndarray
    bandwidth: float
    n: int
    sampling_step: float
    kernel_name: str
    data_source: str = "tilde"

    def __post_init__(self):
        finite_p = self.p_hat[np.isfinite(self.p_hat)]
        if np.any(finite_p < 0):
            raise ValidationError("density estimates must be nonnegative")
        finite_b = self.b_hat[np.isfinite(self.b_hat)]
        if np.any(finite_b < -1e-12):
            raise ValidationError("second-moment estimates must be nonnegative")
        for se in (self.se_a, self.se_b):
            finite = se[np.isfinite(se)]
            if np.any(finite < 0):
                raise ValidationError("standard errors must be nonnegative")


def estimate_on_grid(
    obs: ObservationSet,
    kernel: KernelSpec,
    bandwidth: float,
    grid,
    fourth_jump_moment=None,
) -> EstimateResult:
    """Evaluate the estimators on a grid, recording unreachable points as NaN.

    Plug-in standard errors divide the limit variance by bandwidth * n *
    sampling_step, substituting the estimated quantities: the drift-error
    variance uses b_hat in place of the true second moment. The
    second-moment error variance needs integral(c^4 f), which the data do
    not identify; pass ``fourth_jump_moment`` (a callable of x) from model
    knowledge to fill se_b, otherwise it is NaN.
    """
    grid = np.atleast_1d(np.asarray(grid, float))
    _check_bandwidth(bandwidth)
    n = obs.n
    if n < 1:
        raise InsufficientDataError("need at least 3 difference quotients")
    q = obs.x_tilde
    delta = obs.sampling_step
    lag = q[:n]
    d = q[2:] - q[1:-1]
    scale = 1.0 / (n * bandwidth)
    norm = bandwidth * n * delta

    p_hat = np.full(grid.shape, np.nan)
    a_hat = np.full(grid.shape, np.nan)
    b_hat = np.full(grid.shape, np.nan)
    se_a = np.full(grid.shape, np.nan)
    se_b = np.full(grid.shape, np.nan)
    n_eff = np.zeros(grid.shape)

    for i, x in enumerate(grid):
        w = kernel((x - lag) / bandwidth)
        wsum = w.sum()
        wsq = np.square(w).sum()
        n_eff[i] = wsum * wsum / wsq if wsq > 0 else 0.0
        p = wsum * scale
        if p < DENSITY_FLOOR:
            continue
        p_hat[i] = p
        a_hat[i] = (w * d).sum() * scale / delta / p
        b = (w * (1.5 * d * d)).sum() * scale / delta / p
        b_hat[i] = b
        se_a[i] = np.sqrt(kernel.k2 * b / p / norm)
        if fourth_jump_moment is not None:
            se_b[i] = np.sqrt(kernel.k2 * float(fourth_jump_moment(x)) / p / norm)

    if not np.isfinite(p_hat).any():
        raise InsufficientDataError("no grid point has kernel mass near the data")
    return EstimateResult(
        grid=grid,
        p_hat=p_hat,
        a_hat=a_hat,
        b_hat=b_hat,
        se_a=se_a,
        se_b=se_b,
        n_eff=n_eff,
        bandwidth=float(bandwidth),
        n=n,
        sampling_step=delta,
        kernel_name=kernel.name,
        data_source="tilde",
    )
