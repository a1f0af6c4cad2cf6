"""Smoothing kernels and the default bandwidth rule.

A kernel must be nonnegative, symmetric, continuously differentiable, and
integrate to one with vanishing first moment. Candidate kernels are probed
at construction and rejected if they visibly violate these conditions; in
particular a finite-difference probe at the support boundary rejects
kernels with a jump there (the uniform kernel).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import QuadratureError, ValidationError

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_MOMENT_TOL = 1e-8


@dataclass(frozen=True)
class KernelSpec:
    """A validated kernel with its cached squared-integral constant."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    support_radius: float
    k2: float

    def __call__(self, u):
        u = np.asarray(u, float)
        if math.isinf(self.support_radius):
            return self.fn(u)
        return np.where(np.abs(u) <= self.support_radius, self.fn(u), 0.0)


def kernel_eval(kernel: KernelSpec, u) -> np.ndarray:
    """Kernel value at u; exactly zero outside the support."""
    return kernel(u)


def kernel_k2(kernel: KernelSpec) -> float:
    """The constant integral of K^2, computed by quadrature and cached."""
    return kernel.k2


def make_kernel(name: str, fn: Callable, support_radius: float = math.inf) -> KernelSpec:
    """Validate a kernel candidate and compute its squared-integral constant."""
    lo, hi = -support_radius, support_radius
    probe_radius = min(support_radius, 8.0)
    gen = np.random.default_rng(0x5D1A)
    us = gen.uniform(-probe_radius, probe_radius, 100)
    vals = np.asarray(fn(us), float)
    if np.any(vals < 0):
        raise ValidationError(f"kernel {name!r} takes negative values")
    if not np.allclose(vals, np.asarray(fn(-us), float), rtol=0, atol=1e-12):
        raise ValidationError(f"kernel {name!r} is not symmetric")

    mass, err = integrate.quad(fn, lo, hi, epsabs=1e-12, limit=200)
    if err > 1e-7:
        raise QuadratureError(f"kernel {name!r}: mass quadrature error {err:.3g}")
    if abs(mass - 1.0) > _MOMENT_TOL:
        raise ValidationError(f"kernel {name!r} integrates to {mass:.10g}, expected 1")
    first, _ = integrate.quad(lambda u: u * fn(u), lo, hi, epsabs=1e-12, limit=200)
    if abs(first) > _MOMENT_TOL:
        raise ValidationError(f"kernel {name!r} has first moment {first:.3g}, expected 0")

    if math.isfinite(support_radius):
        # Jump at the boundary means the kernel cannot be continuously
        # differentiable on the whole line.
        eps = 1e-6
        inner = float(fn(np.asarray(support_radius - eps)))
        jump = abs(inner - 0.0)
        if jump > 1e-4 * max(1.0, float(fn(np.asarray(0.0)))):
            raise ValidationError(
                f"kernel {name!r} is discontinuous at its support boundary; "
                "a continuously differentiable kernel is required"
            )

    k2, err = integrate.quad(lambda u: fn(u) ** 2, lo, hi, epsabs=1e-12, limit=200)
    if err > 1e-7:
        raise QuadratureError(f"kernel {name!r}: K2 quadrature error {err:.3g}")
    return KernelSpec(name=name, fn=fn, support_radius=float(support_radius), k2=float(k2))


@lru_cache(maxsize=None)
def gaussian() -> KernelSpec:
    """Standard normal kernel; the default."""
    return make_kernel("gaussian", lambda u: np.exp(-0.5 * np.square(u)) / _SQRT_2PI)


@lru_cache(maxsize=None)
def quartic() -> KernelSpec:
    """Quartic (biweight) kernel (15/16)(1 - u^2)^2 on [-1, 1]."""

    def fn(u):
        u = np.asarray(u, float)
        t = np.maximum(0.0, 1.0 - np.square(u))
        return 0.9375 * np.square(t)

    return make_kernel("quartic", fn, support_radius=1.0)


@lru_cache(maxsize=None)
def epanechnikov() -> KernelSpec:
    """Parabolic kernel 0.75(1 - u^2) on [-1, 1]."""

    def fn(u):
        u = np.asarray(u, float)
        return 0.75 * np.maximum(0.0, 1.0 - np.square(u))

    return make_kernel("epanechnikov", fn, support_radius=1.0)


#: Kernels exposed on the command line.
CLI_KERNELS: dict[str, Callable[[], KernelSpec]] = {
    "gaussian": gaussian,
    "quartic": quartic,
}


def get_kernel(name: str) -> KernelSpec:
    if name not in CLI_KERNELS:
        raise ValidationError(
            f"unknown kernel {name!r}; choose from {', '.join(sorted(CLI_KERNELS))}"
        )
    return CLI_KERNELS[name]()


def default_bandwidth(delta: float) -> float:
    """Default bandwidth rule h = delta^(2/11) for a sampling step in (0, 1)."""
    if not 0.0 < delta < 1.0:
        raise ValidationError(
            "sampling step must lie in (0, 1) for the default bandwidth rule "
            "h = delta^(2/11)"
        )
    return float(delta) ** (2.0 / 11.0)
