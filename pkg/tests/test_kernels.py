import math

import numpy as np
import pytest

from sojd import ValidationError, default_bandwidth, epanechnikov, gaussian, quartic
from sojd.kernels import get_kernel, kernel_eval, kernel_k2, make_kernel


class TestKernelEval:
    def test_gaussian_at_zero(self):
        assert kernel_eval(gaussian(), 0.0) == pytest.approx(1.0 / math.sqrt(2 * math.pi))

    @pytest.mark.parametrize("kernel", [gaussian(), quartic(), epanechnikov()])
    def test_symmetry(self, kernel):
        us = np.random.default_rng(1).uniform(-3, 3, 50)
        assert np.array_equal(kernel(us), kernel(-us))

    def test_quartic_outside_support(self):
        assert kernel_eval(quartic(), 2.0) == 0.0
        assert kernel_eval(quartic(), -1.0001) == 0.0


class TestK2:
    def test_gaussian_value(self):
        assert kernel_k2(gaussian()) == pytest.approx(1.0 / (2.0 * math.sqrt(math.pi)), abs=1e-9)

    def test_epanechnikov_value(self):
        assert kernel_k2(epanechnikov()) == pytest.approx(0.6, abs=1e-10)

    def test_quartic_value(self):
        assert kernel_k2(quartic()) == pytest.approx(5.0 / 7.0, abs=1e-10)

    @pytest.mark.parametrize("kernel", [gaussian(), quartic(), epanechnikov()])
    def test_k2_bounded_by_peak(self, kernel):
        # with unit mass and K >= 0, the squared integral cannot exceed sup K
        assert kernel.k2 <= float(kernel(0.0)) + 1e-12


class TestConstructionChecks:
    def test_uniform_kernel_rejected(self):
        fn = lambda u: np.where(np.abs(np.asarray(u, float)) <= 1.0, 0.5, 0.0)
        with pytest.raises(ValidationError, match="discontinuous"):
            make_kernel("uniform", fn, support_radius=1.0)

    def test_asymmetric_kernel_rejected(self):
        fn = lambda u: np.exp(-np.square(np.asarray(u, float) - 0.1) / 2) / math.sqrt(2 * math.pi)
        with pytest.raises(ValidationError):
            make_kernel("shifted", fn)

    def test_unnormalized_kernel_rejected(self):
        fn = lambda u: 2.0 * np.exp(-0.5 * np.square(u)) / math.sqrt(2 * math.pi)
        with pytest.raises(ValidationError):
            make_kernel("double", fn)

    def test_negative_kernel_rejected(self):
        fn = lambda u: np.cos(np.asarray(u, float)) / 2.0
        with pytest.raises(ValidationError):
            make_kernel("cosine-bad", fn, support_radius=math.pi)

    def test_get_kernel_names(self):
        assert get_kernel("gaussian").name == "gaussian"
        assert get_kernel("quartic").name == "quartic"
        with pytest.raises(ValidationError):
            get_kernel("uniform")


class TestDefaultBandwidth:
    def test_reference_values(self):
        # oracle: exp((2/11) * ln(delta)) evaluated directly
        for delta in (0.001, 0.01):
            expected = math.exp((2.0 / 11.0) * math.log(delta))
            assert default_bandwidth(delta) == pytest.approx(expected, rel=1e-12)
        assert default_bandwidth(0.001) == pytest.approx(0.284804, abs=1e-6)
        assert default_bandwidth(0.01) == pytest.approx(0.433216, abs=1e-6)

    def test_limit_toward_one(self):
        assert default_bandwidth(1.0 - 1e-12) == pytest.approx(1.0, abs=1e-9)

    def test_domain_errors(self):
        for delta in (0.0, -0.5, 1.0, 2.0):
            with pytest.raises(ValidationError):
                default_bandwidth(delta)

    def test_monotone_increasing(self):
        deltas = np.linspace(1e-4, 0.999, 64)
        values = [default_bandwidth(float(d)) for d in deltas]
        assert all(b > a for a, b in zip(values, values[1:]))
