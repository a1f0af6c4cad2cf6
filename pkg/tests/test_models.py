import math

import numpy as np
import pytest
from scipy import integrate

import sojd
from sojd import (
    JumpField,
    LevyDensity,
    MarkSampler,
    ModelSpec,
    ScalarField,
    ValidationError,
    jump_moment,
)
from util import compound_jump_model


def _model_with_jump(c_fn, lam, mean=0.0, sd=1.0):
    sampler = MarkSampler("normal", (mean, sd))
    norm = sd * math.sqrt(2 * math.pi)
    density = lambda z: lam * np.exp(-0.5 * ((np.asarray(z, float) - mean) / sd) ** 2) / norm
    return ModelSpec(
        name="jm-test",
        drift=ScalarField(lambda x: 0.0 * np.asarray(x, float)),
        diffusion=ScalarField(lambda x: 0.0 * np.asarray(x, float)),
        jump=JumpField(c_fn),
        levy=LevyDensity(density=density, intensity=lam, sampler=sampler),
    )


class TestJumpMoment:
    def test_identity_jump_double_intensity(self):
        # c(x,z) = z with f = 2 * standard normal density: second moment is 2.
        m = _model_with_jump(lambda x, z: z + 0.0 * np.asarray(x, float), lam=2.0)
        got = jump_moment(m, 2, 0.7)
        assert got == pytest.approx(2.0, abs=1e-9)
        # independent oracle: Monte Carlo average of z^2 over sampled marks, times lam
        gen = np.random.default_rng(11)
        marks = m.levy.sampler.sample(gen, 1_000_000)
        mc = 2.0 * np.mean(marks**2)
        assert got == pytest.approx(mc, abs=4 * 2.0 * np.std(marks**2) / 1000.0)

    def test_zero_jump_field(self):
        m = _model_with_jump(lambda x, z: 0.0 * np.asarray(z, float), lam=3.0)
        assert jump_moment(m, 2, 0.0) == 0.0

    def test_scaled_jump_fourth_moment(self):
        # c(x,z) = x*z with standard normal marks: 4th moment at x=2 is 48*lam.
        for lam in (1.0, 2.5):
            m = _model_with_jump(lambda x, z: np.asarray(x, float) * z, lam=lam)
            assert jump_moment(m, 4, 2.0) == pytest.approx(48.0 * lam, rel=1e-9)
        # quadrature oracle at lam=1
        oracle, _ = integrate.quad(
            lambda z: (2.0 * z) ** 4 * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi),
            -12, 12,
        )
        m1 = _model_with_jump(lambda x, z: np.asarray(x, float) * z, lam=1.0)
        assert jump_moment(m1, 4, 2.0) == pytest.approx(oracle, rel=1e-9)

    def test_even_order_nonnegative(self):
        gen = np.random.default_rng(5)
        m = _model_with_jump(lambda x, z: np.sin(np.asarray(x, float)) + z, lam=0.8, mean=-0.2)
        for x in gen.normal(size=6):
            assert jump_moment(m, 2, float(x)) >= 0.0
            assert jump_moment(m, 4, float(x)) >= 0.0

    def test_linearity_in_intensity(self):
        c = lambda x, z: z + 0.0 * np.asarray(x, float)
        one = jump_moment(_model_with_jump(c, lam=1.3), 2, 0.0)
        two = jump_moment(_model_with_jump(c, lam=2.6), 2, 0.0)
        assert two == pytest.approx(2.0 * one, rel=1e-9)

    def test_state_free_jump_is_constant_in_x(self):
        m = compound_jump_model(lam=1.5, mean=0.1, sd=0.4)
        gen = np.random.default_rng(3)
        vals = [jump_moment(m, 3, float(x)) for x in gen.normal(size=10)]
        assert np.ptp(vals) < 1e-12

    def test_order_out_of_range(self):
        m = compound_jump_model(1.0, 0.0, 1.0)
        with pytest.raises(ValidationError):
            jump_moment(m, 5, 0.0)
        with pytest.raises(ValidationError):
            jump_moment(m, 0, 0.0)

    def test_x_outside_admissible_range(self):
        m = sojd.cir_jump()
        with pytest.raises(ValidationError):
            jump_moment(m, 2, -1.0)


class TestLevyDensity:
    def test_mismatched_sampler_rejected(self):
        density = lambda z: np.exp(-0.5 * np.asarray(z, float) ** 2) / math.sqrt(2 * math.pi)
        with pytest.raises(ValidationError):
            LevyDensity(density=density, intensity=1.0, sampler=MarkSampler("normal", (0.0, 2.0)))

    def test_intensity_must_be_finite_nonnegative(self):
        density = lambda z: 0.0 * np.asarray(z, float)
        with pytest.raises(ValidationError):
            LevyDensity(density=density, intensity=-1.0, sampler=MarkSampler("normal", (0, 1)))
        with pytest.raises(ValidationError):
            LevyDensity(density=density, intensity=math.inf, sampler=MarkSampler("normal", (0, 1)))

    def test_sampler_required_when_active(self):
        density = lambda z: np.exp(-np.abs(np.asarray(z, float)))
        with pytest.raises(ValidationError):
            LevyDensity(density=density, intensity=2.0, sampler=None)

    def test_unknown_sampler_name(self):
        with pytest.raises(ValidationError):
            MarkSampler("cauchy", (0.0, 1.0))


class TestModelSpec:
    def test_empty_range_rejected(self):
        with pytest.raises(ValidationError):
            ModelSpec(
                name="bad",
                drift=ScalarField(lambda x: x),
                diffusion=ScalarField(lambda x: 0.0 * np.asarray(x, float)),
                jump=JumpField(lambda x, z: z),
                levy=LevyDensity.none(),
                state_range=(2.0, 1.0),
            )

    def test_negative_diffusion_rejected(self):
        with pytest.raises(ValidationError):
            ModelSpec(
                name="bad",
                drift=ScalarField(lambda x: 0.0 * np.asarray(x, float)),
                diffusion=ScalarField(lambda x: -1.0 + 0.0 * np.asarray(x, float)),
                jump=JumpField(lambda x, z: 0.0 * np.asarray(z, float)),
                levy=LevyDensity.none(),
            )

    def test_stationary_density_must_normalize(self):
        bad = lambda x: 2.0 * np.exp(-0.5 * np.asarray(x, float) ** 2) / math.sqrt(2 * math.pi)
        with pytest.raises(ValidationError):
            ModelSpec(
                name="bad",
                drift=ScalarField(lambda x: -np.asarray(x, float)),
                diffusion=ScalarField(lambda x: 1.0 + 0.0 * np.asarray(x, float)),
                jump=JumpField(lambda x, z: 0.0 * np.asarray(z, float)),
                levy=LevyDensity.none(),
                stationary_density=bad,
            )


class TestPresets:
    def test_make_model_unknown_name(self):
        with pytest.raises(ValidationError):
            sojd.make_model("heston")

    def test_make_model_wrong_key(self):
        with pytest.raises(ValidationError):
            sojd.make_model("ou-jump", kappa=2.0)

    def test_preset_parameters_apply(self):
        m = sojd.make_model("ou-jump", theta=2.0, s=0.1)
        assert float(m.drift(1.0)) == -2.0
        assert float(m.diffusion(3.0)) == 0.1

    @pytest.mark.parametrize("name", ["ou-jump", "cir-jump"])
    def test_closed_form_moments_match_quadrature(self, name):
        m = sojd.make_model(name)
        xs = (0.5, 1.5) if name == "cir-jump" else (-0.7, 1.2)
        for x in xs:
            assert float(m.jump_compensator(x)) == pytest.approx(
                jump_moment(m, 1, x), abs=1e-9
            )
            for k in (1, 2, 3, 4):
                assert float(m.jump_moments_closed(k, x)) == pytest.approx(
                    jump_moment(m, k, x), rel=1e-8, abs=1e-9
                )

    def test_cir_diffusion_clamps_negative_states(self):
        m = sojd.cir_jump(s=0.5)
        assert float(m.diffusion(-3.0)) == 0.0
        assert float(m.diffusion(4.0)) == pytest.approx(1.0)
