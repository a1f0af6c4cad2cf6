"""Second-order jump-diffusion models as data, plus jump-moment integrals.

A model couples a latent state X with drift mu(x), diffusion sigma(x), and
finite-activity compensated jumps: marks z arrive at Poisson rate
lam = integral of the jump mark density f, are distributed as f/lam, and
move the state by c(x, z). The observable coordinate integrates the state,
dY = X dt.

Only finite-activity jump measures are supported: the compensated Poisson
construction is simulable exactly in that class, while infinite activity
would require a small-jump truncation theory this toolkit does not use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import integrate, stats

from .errors import QuadratureError, ValidationError

#: Absolute tolerance requested from the adaptive quadrature.
QUAD_ABS_TOL = 1e-10
#: Mark-density mass allowed outside the truncated integration support.
QUAD_TAIL_MASS = 1e-12

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class ScalarField:
    """A deterministic coefficient x -> value, usable with numpy arrays.

    ``smoothness`` is the differentiability order asserted by the user; it
    is metadata, not something the toolkit can verify.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    name: str = ""
    smoothness: int = 2

    def __call__(self, x):
        return self.fn(x)


@dataclass(frozen=True)
class JumpField:
    """State-and-mark coefficient c(x, z), vectorized over both arguments."""

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = ""

    def __call__(self, x, z):
        return self.fn(x, z)


@dataclass(frozen=True)
class MarkSampler:
    """Named sampling law for jump marks.

    Supported names: ``normal`` with params (mean, sd) and ``uniform`` with
    params (lo, hi). The law must equal the normalized mark density f/lam;
    this is checked when the LevyDensity is constructed.
    """

    name: str
    params: tuple

    def __post_init__(self):
        if self.name not in ("normal", "uniform"):
            raise ValidationError(f"unknown mark sampler {self.name!r}")
        if self.name == "normal":
            _, sd = self.params
            if sd <= 0:
                raise ValidationError("normal mark sampler needs sd > 0")
        else:
            lo, hi = self.params
            if not lo < hi:
                raise ValidationError("uniform mark sampler needs lo < hi")

    def sample(self, gen: np.random.Generator, size: int) -> np.ndarray:
        if self.name == "normal":
            mean, sd = self.params
            return gen.normal(mean, sd, size)
        lo, hi = self.params
        return gen.uniform(lo, hi, size)

    def pdf(self, z):
        z = np.asarray(z, float)
        if self.name == "normal":
            mean, sd = self.params
            return np.exp(-0.5 * ((z - mean) / sd) ** 2) / (sd * _SQRT_2PI)
        lo, hi = self.params
        return np.where((z >= lo) & (z <= hi), 1.0 / (hi - lo), 0.0)

    def truncation_bounds(self, tail_mass: float) -> tuple[float, float]:
        """Interval holding all but ``tail_mass`` of the normalized law."""
        if self.name == "normal":
            mean, sd = self.params
            r = float(stats.norm.isf(tail_mass / 2.0))
            return mean - r * sd, mean + r * sd
        lo, hi = self.params
        return lo, hi


def _zero_density(z):
    return np.zeros_like(np.asarray(z, float))


@dataclass(frozen=True)
class LevyDensity:
    """Finite-activity jump mark density f with total mass ``intensity``.

    ``density`` is f itself (not normalized); ``sampler`` draws marks from
    f / intensity. Consistency between the two is probed at construction.
    """

    density: Callable[[np.ndarray], np.ndarray]
    intensity: float
    sampler: Optional[MarkSampler] = None

    def __post_init__(self):
        lam = self.intensity
        if not (np.isfinite(lam) and lam >= 0.0):
            raise ValidationError("jump intensity must be finite and >= 0")
        if lam == 0.0:
            return
        if self.sampler is None:
            raise ValidationError("a mark sampler is required when intensity > 0")
        lo, hi = self.sampler.truncation_bounds(1e-9)
        mass, _ = integrate.quad(self.density, lo, hi, limit=200)
        if abs(mass - lam) > 1e-6 * max(1.0, lam):
            raise ValidationError(
                f"mark density integrates to {mass:.8g}, expected intensity {lam:.8g}"
            )
        probes = np.linspace(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo), 7)
        want = lam * self.sampler.pdf(probes)
        got = np.asarray(self.density(probes), float)
        if not np.allclose(got, want, rtol=1e-6, atol=1e-12):
            raise ValidationError("mark sampler law does not match density / intensity")

    def support(self, tail_mass: float = QUAD_TAIL_MASS) -> tuple[float, float]:
        """Integration bounds leaving mark mass below ``tail_mass`` outside."""
        if self.intensity == 0.0:
            return -1.0, 1.0
        return self.sampler.truncation_bounds(min(1.0, tail_mass / self.intensity))

    @staticmethod
    def none() -> "LevyDensity":
        """The zero jump measure."""
        return LevyDensity(density=_zero_density, intensity=0.0, sampler=None)


@dataclass(frozen=True)
class AssumptionFlags:
    """User-asserted regularity of the model.

    These conditions (locally Lipschitz coefficients with linear growth,
    ergodic stationarity with a finite invariant measure, rho-mixing,
    all-order moments) cannot be checked computationally; the user asserts
    them and the toolkit records the assertion.
    """

    local_lipschitz: bool = True
    ergodic_stationary: bool = True
    rho_mixing: bool = True
    bounded_moments: bool = True

    def all_asserted(self) -> bool:
        return (
            self.local_lipschitz
            and self.ergodic_stationary
            and self.rho_mixing
            and self.bounded_moments
        )


@dataclass(frozen=True)
class ModelSpec:
    """The coefficient triple (drift, diffusion, jump) plus the jump measure.

    ``state_range`` is the open admissible interval for the state.
    ``stationary_density`` is optional; when absent, experiment targets for
    the invariant density come from a long-run kernel-density oracle.
    ``jump_compensator`` and ``jump_moments_closed`` are optional closed
    forms for integral(c^k(x,z) f(z) dz): when supplied they are used on
    simulation hot paths, and tests pin them against the quadrature route.
    """

    name: str
    drift: ScalarField
    diffusion: ScalarField
    jump: JumpField
    levy: LevyDensity
    state_range: tuple[float, float] = (-math.inf, math.inf)
    stationary_density: Optional[Callable[[np.ndarray], np.ndarray]] = None
    jump_compensator: Optional[Callable[[np.ndarray], np.ndarray]] = None
    jump_moments_closed: Optional[Callable[[int, np.ndarray], np.ndarray]] = None
    flags: AssumptionFlags = field(default_factory=AssumptionFlags)
    cache_token: Optional[str] = None

    def __post_init__(self):
        lo, hi = self.state_range
        if not lo < hi:
            raise ValidationError(f"empty state range ({lo}, {hi})")
        probes = _range_probes(lo, hi)
        sig = np.asarray(self.diffusion(probes), float)
        if np.any(sig < -1e-12):
            raise ValidationError("diffusion coefficient must be >= 0 on the state range")
        if self.stationary_density is not None:
            qlo = lo if math.isfinite(lo) else -np.inf
            qhi = hi if math.isfinite(hi) else np.inf
            mass, _ = integrate.quad(self.stationary_density, qlo, qhi, limit=200)
            if abs(mass - 1.0) > 1e-6:
                raise ValidationError(
                    f"stationary density integrates to {mass:.8g}, expected 1"
                )
            if np.any(np.asarray(self.stationary_density(probes), float) < -1e-12):
                raise ValidationError("stationary density must be nonnegative")

    def contains(self, x: float) -> bool:
        lo, hi = self.state_range
        return lo < x < hi


def _range_probes(lo: float, hi: float, count: int = 33) -> np.ndarray:
    a = lo if math.isfinite(lo) else -10.0
    b = hi if math.isfinite(hi) else 10.0
    a, b = max(a, lo + 1e-9 * (1 + abs(lo)) if math.isfinite(lo) else a), b
    if math.isfinite(hi):
        b = hi - 1e-9 * (1 + abs(hi))
    inner = np.linspace(a, b, count)
    return inner


@lru_cache(maxsize=16384)
def _jump_moment_cached(model: ModelSpec, k: int, x: float) -> float:
    levy = model.levy
    if levy.intensity == 0.0:
        return 0.0
    zlo, zhi = levy.support(QUAD_TAIL_MASS)

    def integrand(z):
        return float(model.jump(x, z)) ** k * float(levy.density(z))

    value, abserr = integrate.quad(
        integrand, zlo, zhi, epsabs=QUAD_ABS_TOL, epsrel=1e-11, limit=400
    )
    if abserr > max(1e-9, 1e-9 * abs(value)):
        raise QuadratureError(
            f"jump moment quadrature reported error {abserr:.3g} "
            f"for k={k}, x={x:.6g}"
        )
    return value


def jump_moment(model: ModelSpec, k: int, x: float) -> float:
    """integral of c^k(x, z) f(z) dz over the mark space, k in {1, 2, 3, 4}.

    Computed by adaptive quadrature at absolute tolerance 1e-10 on a support
    truncated so the mark mass left outside is below 1e-12.
    """
    if k not in (1, 2, 3, 4):
        raise ValidationError(f"jump moment order must be 1..4, got {k}")
    if not model.contains(x):
        raise ValidationError(f"x={x:.6g} outside admissible range {model.state_range}")
    return _jump_moment_cached(model, k, float(x))


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def _normal_raw_moment(k: int, mean: float, sd: float) -> float:
    m, v = mean, sd * sd
    if k == 1:
        return m
    if k == 2:
        return m * m + v
    if k == 3:
        return m**3 + 3 * m * v
    return m**4 + 6 * m * m * v + 3 * v * v


def _additive_normal_jumps(lam: float, eta: float, mean: float = 0.0):
    """Jump block for c(x, z) = z with Normal(mean, eta^2) marks."""
    if lam == 0.0:
        return LevyDensity.none(), None, None
    sampler = MarkSampler("normal", (mean, eta))

    def density(z):
        z = np.asarray(z, float)
        return lam * np.exp(-0.5 * ((z - mean) / eta) ** 2) / (eta * _SQRT_2PI)

    levy = LevyDensity(density=density, intensity=lam, sampler=sampler)

    def compensator(x):
        return lam * mean + 0.0 * np.asarray(x, float)

    def moments(k, x):
        return lam * _normal_raw_moment(k, mean, eta) + 0.0 * np.asarray(x, float)

    return levy, compensator, moments


def ou_jump(theta: float = 1.0, s: float = 0.5, lam: float = 1.0, eta: float = 0.3) -> ModelSpec:
    """Mean-reverting state with constant diffusion and additive normal jumps.

    drift -theta*x, diffusion s, c(x, z) = z, marks Normal(0, eta^2) at
    rate lam.
    """
    if theta <= 0 or s < 0 or lam < 0 or eta <= 0:
        raise ValidationError("ou-jump needs theta > 0, s >= 0, lam >= 0, eta > 0")
    levy, comp, moments = _additive_normal_jumps(lam, eta)
    return ModelSpec(
        name="ou-jump",
        drift=ScalarField(lambda x: -theta * np.asarray(x, float), name=f"-{theta:g}*x", smoothness=6),
        diffusion=ScalarField(lambda x: s + 0.0 * np.asarray(x, float), name=f"{s:g}", smoothness=6),
        jump=JumpField(lambda x, z: z + 0.0 * np.asarray(x, float), name="z"),
        levy=levy,
        jump_compensator=comp,
        jump_moments_closed=moments,
        cache_token=f"ou-jump:theta={theta!r},s={s!r},lam={lam!r},eta={eta!r}",
    )


def cir_jump(
    kappa: float = 1.0,
    alpha: float = 1.0,
    s: float = 0.5,
    lam: float = 1.0,
    eta: float = 0.3,
) -> ModelSpec:
    """Square-root diffusion with additive normal jumps.

    drift kappa*(alpha - x), diffusion s*sqrt(max(x, 0)), c(x, z) = z.
    The diffusion clamp keeps the coefficient defined when jumps push the
    state below zero.
    """
    if kappa <= 0 or alpha <= 0 or s < 0 or lam < 0 or eta <= 0:
        raise ValidationError("cir-jump needs kappa, alpha > 0 and s, lam >= 0, eta > 0")
    levy, comp, moments = _additive_normal_jumps(lam, eta)
    return ModelSpec(
        name="cir-jump",
        drift=ScalarField(
            lambda x: kappa * (alpha - np.asarray(x, float)),
            name=f"{kappa:g}*({alpha:g}-x)",
            smoothness=6,
        ),
        diffusion=ScalarField(
            lambda x: s * np.sqrt(np.maximum(np.asarray(x, float), 0.0)),
            name=f"{s:g}*sqrt(x+)",
            smoothness=1,
        ),
        jump=JumpField(lambda x, z: z + 0.0 * np.asarray(x, float), name="z"),
        levy=levy,
        state_range=(0.0, math.inf),
        jump_compensator=comp,
        jump_moments_closed=moments,
        cache_token=f"cir-jump:kappa={kappa!r},alpha={alpha!r},s={s!r},lam={lam!r},eta={eta!r}",
    )


PRESETS: dict[str, Callable[..., ModelSpec]] = {"ou-jump": ou_jump, "cir-jump": cir_jump}

_PRESET_KEYS = {
    "ou-jump": {"theta": "theta", "s": "s", "lambda": "lam", "eta": "eta"},
    "cir-jump": {"kappa": "kappa", "alpha": "alpha", "s": "s", "lambda": "lam", "eta": "eta"},
}


def make_model(name: str, **params: float) -> ModelSpec:
    """Build a preset model from config-style keys (theta, s, lambda, ...)."""
    if name not in PRESETS:
        raise ValidationError(
            f"unknown model {name!r}; available presets: {', '.join(sorted(PRESETS))}"
        )
    keymap = _PRESET_KEYS[name]
    kwargs = {}
    for key, value in params.items():
        if value is None:
            continue
        if key not in keymap:
            raise ValidationError(f"parameter {key!r} does not apply to preset {name!r}")
        kwargs[keymap[key]] = float(value)
    return PRESETS[name](**kwargs)
