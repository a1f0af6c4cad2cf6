"""Shared test helpers: tiny models and independent naive-summation oracles."""
from __future__ import annotations

import numpy as np

from sojd import JumpField, LevyDensity, MarkSampler, ModelSpec, ScalarField


def zero_model() -> ModelSpec:
    """No drift, no noise, no jumps: the state stays where it starts."""
    return ModelSpec(
        name="zero",
        drift=ScalarField(lambda x: 0.0 * np.asarray(x, float), name="0"),
        diffusion=ScalarField(lambda x: 0.0 * np.asarray(x, float), name="0"),
        jump=JumpField(lambda x, z: 0.0 * np.asarray(z, float), name="0"),
        levy=LevyDensity.none(),
    )


def bm_model(sigma: float = 1.0) -> ModelSpec:
    """Driftless constant-diffusion state."""
    return ModelSpec(
        name="bm",
        drift=ScalarField(lambda x: 0.0 * np.asarray(x, float), name="0"),
        diffusion=ScalarField(lambda x: sigma + 0.0 * np.asarray(x, float), name=f"{sigma:g}"),
        jump=JumpField(lambda x, z: 0.0 * np.asarray(z, float), name="0"),
        levy=LevyDensity.none(),
    )


def decay_model(theta: float = 1.0, sigma: float = 0.0) -> ModelSpec:
    """Linear mean reversion toward zero, optional constant diffusion."""
    return ModelSpec(
        name="decay",
        drift=ScalarField(lambda x: -theta * np.asarray(x, float), name=f"-{theta:g}x"),
        diffusion=ScalarField(lambda x: sigma + 0.0 * np.asarray(x, float), name=f"{sigma:g}"),
        jump=JumpField(lambda x, z: 0.0 * np.asarray(z, float), name="0"),
        levy=LevyDensity.none(),
    )


def compound_jump_model(lam: float, mean: float, sd: float) -> ModelSpec:
    """Pure-jump state: c(x, z) = z with Normal(mean, sd^2) marks at rate lam."""
    from math import pi, sqrt

    sampler = MarkSampler("normal", (mean, sd))
    norm = sd * sqrt(2.0 * pi)

    def density(z):
        z = np.asarray(z, float)
        return lam * np.exp(-0.5 * ((z - mean) / sd) ** 2) / norm

    return ModelSpec(
        name="compound-jump",
        drift=ScalarField(lambda x: 0.0 * np.asarray(x, float), name="0"),
        diffusion=ScalarField(lambda x: 0.0 * np.asarray(x, float), name="0"),
        jump=JumpField(lambda x, z: z + 0.0 * np.asarray(x, float), name="z"),
        levy=LevyDensity(density=density, intensity=lam, sampler=sampler),
    )


# ---------------------------------------------------------------------------
# Naive double-loop oracles, deliberately independent of the package sums
# ---------------------------------------------------------------------------

def naive_quotient_estimates(x_tilde, delta, kernel, h, x):
    """Plain-loop density/drift/second estimates from difference quotients."""
    q = [float(v) for v in x_tilde]
    n = len(q) - 2
    psum = asum = bsum = 0.0
    for j in range(n):
        w = float(kernel(np.asarray((x - q[j]) / h)))
        d = q[j + 2] - q[j + 1]
        psum += w
        asum += w * (d / delta)
        bsum += w * (1.5 * d * d / delta)
    p = psum / (n * h)
    return p, asum / (n * h) / p, bsum / (n * h) / p


def naive_baseline_estimates(series, delta, kernel, h, x):
    """Plain-loop baselines on an exact state series (all consecutive pairs)."""
    s = [float(v) for v in series]
    n0 = len(s) - 1
    psum = asum = bsum = 0.0
    for j in range(n0):
        w = float(kernel(np.asarray((x - s[j]) / h)))
        d = s[j + 1] - s[j]
        psum += w
        asum += w * (d / delta)
        bsum += w * (d * d / delta)
    p = psum / (n0 * h)
    return p, asum / (n0 * h) / p, bsum / (n0 * h) / p
