import math

import numpy as np
import pytest

import sojd
from sojd import (
    ConfigError,
    ExplosionError,
    InsufficientDataError,
    SimConfig,
    ValidationError,
    observe,
    simulate_ensemble,
    simulate_path,
)
from sojd import rng
from util import bm_model, compound_jump_model, decay_model, zero_model


class TestSimConfig:
    def test_horizon_not_multiple(self):
        # n = round(T/dt) always lands within half a step; only degenerate
        # inputs can trip the construction checks
        with pytest.raises(ValidationError):
            SimConfig(fine_step=0.0, horizon=1.0)
        with pytest.raises(ValidationError):
            SimConfig(fine_step=0.1, horizon=0.05)

    def test_n_steps(self):
        assert SimConfig(fine_step=1e-3, horizon=10.0).n_steps == 10000


class TestSimulatePath:
    def test_degenerate_constant_state(self):
        cfg = SimConfig(fine_step=0.01, horizon=1.0, x0=3.0, y0=0.5, seed=1)
        path = simulate_path(zero_model(), cfg)
        assert np.all(path.x == 3.0)
        expected_y = 0.5 + 3.0 * 0.01 * np.arange(101)
        np.testing.assert_allclose(path.y, expected_y, rtol=1e-12)
        assert path.jump_count == 0

    def test_deterministic_decay_matches_ode(self):
        cfg = SimConfig(fine_step=1e-4, horizon=1.0, x0=1.0, seed=0)
        path = simulate_path(decay_model(), cfg)
        assert abs(path.x[-1] - math.exp(-1.0)) <= 1e-3

    def test_reproducible_bitwise(self):
        m = sojd.ou_jump()
        cfg = SimConfig(fine_step=1e-3, horizon=2.0, x0=0.3, seed=99)
        p1 = simulate_path(m, cfg)
        p2 = simulate_path(m, cfg)
        assert np.array_equal(p1.x, p2.x)
        assert np.array_equal(p1.y, p2.y)
        assert p1.jump_count == p2.jump_count

    def test_compensated_mean_matches_ode(self):
        # jump compensation leaves the mean equation untouched
        m = sojd.ou_jump(theta=1.0, s=0.5, lam=1.0, eta=0.3)
        seeds = rng.derive_keys(314, np.arange(10_000, dtype=np.uint64))
        ens = simulate_ensemble(m, 1.0, 1e-3, 1000, seeds)
        xT = ens.x[-1]
        se = xT.std(ddof=1) / math.sqrt(xT.size)
        assert abs(xT.mean() - math.exp(-1.0)) <= 3 * se

    def test_martingale_of_compensated_jumps(self):
        # mean-nonzero marks: the compensator must cancel the drift exactly
        m = compound_jump_model(lam=2.0, mean=0.5, sd=0.3)
        seeds = rng.derive_keys(2718, np.arange(10_000, dtype=np.uint64))
        ens = simulate_ensemble(m, 0.0, 1e-3, 1000, seeds)
        xT = ens.x[-1]
        se = xT.std(ddof=1) / math.sqrt(xT.size)
        assert abs(xT.mean()) <= 4 * se

    def test_variance_growth_constant_diffusion(self):
        m = bm_model(sigma=0.7)
        seeds = rng.derive_keys(55, np.arange(10_000, dtype=np.uint64))
        ens = simulate_ensemble(m, 0.0, 1e-3, 1000, seeds)
        var = ens.x[-1].var(ddof=1)
        assert abs(var - 0.49) <= 0.1 * 0.49

    def test_explosion_reports_time(self):
        cubed = sojd.ModelSpec(
            name="cubed",
            drift=sojd.ScalarField(lambda x: np.asarray(x, float) ** 3),
            diffusion=sojd.ScalarField(lambda x: 0.0 * np.asarray(x, float)),
            jump=sojd.JumpField(lambda x, z: 0.0 * np.asarray(z, float)),
            levy=sojd.LevyDensity.none(),
        )
        cfg = SimConfig(fine_step=0.1, horizon=5.0, x0=10.0, seed=0)
        with pytest.raises(ExplosionError) as err:
            simulate_path(cubed, cfg)
        assert 0.0 < err.value.time <= 5.0

    def test_intensity_step_errors_and_warnings(self):
        m = sojd.ou_jump(lam=1500.0)
        with pytest.raises(ConfigError):
            simulate_path(m, SimConfig(fine_step=1e-3, horizon=0.1, seed=0))
        m2 = sojd.ou_jump(lam=150.0)
        with pytest.warns(UserWarning):
            simulate_path(m2, SimConfig(fine_step=1e-3, horizon=0.05, seed=0))


class TestEnsemble:
    def test_single_column_matches_simulate_path(self):
        m = sojd.ou_jump()
        cfg = SimConfig(fine_step=1e-3, horizon=1.0, x0=0.2, seed=1234)
        path = simulate_path(m, cfg)
        ens = simulate_ensemble(m, 0.2, 1e-3, 1000, np.array([1234], dtype=np.uint64))
        assert np.array_equal(path.x, ens.x[:, 0])
        assert np.array_equal(path.y, ens.y[:, 0])

    def test_block_size_invariance(self):
        m = sojd.ou_jump(lam=3.0)
        seeds = rng.derive_keys(7, np.arange(64, dtype=np.uint64))
        full = simulate_ensemble(m, 0.0, 1e-3, 500, seeds)
        blocked = simulate_ensemble(m, 0.0, 1e-3, 500, seeds, max_block_elems=500 * 7)
        assert np.array_equal(full.x, blocked.x)
        assert np.array_equal(full.y, blocked.y)

    def test_thread_count_invariance(self):
        m = sojd.ou_jump(lam=3.0)
        seeds = rng.derive_keys(7, np.arange(64, dtype=np.uint64))
        one = simulate_ensemble(m, 0.0, 1e-3, 500, seeds, max_block_elems=500 * 9, threads=1)
        four = simulate_ensemble(m, 0.0, 1e-3, 500, seeds, max_block_elems=500 * 9, threads=4)
        assert np.array_equal(one.x, four.x)
        assert np.array_equal(one.y, four.y)

    def test_seed_permutation_permutes_columns(self):
        m = sojd.ou_jump(lam=2.0)
        seeds = rng.derive_keys(900, np.arange(12, dtype=np.uint64))
        perm = np.array([5, 2, 0, 9, 1, 11, 3, 10, 4, 7, 6, 8])
        base = simulate_ensemble(m, 0.0, 1e-3, 300, seeds)
        shuffled = simulate_ensemble(m, 0.0, 1e-3, 300, seeds[perm])
        assert np.array_equal(base.x[:, perm], shuffled.x)
        # aggregates agree up to summation order
        assert base.x[-1].mean() == pytest.approx(shuffled.x[-1].mean(), abs=1e-12)

    def test_recording_stride(self):
        m = decay_model()
        ens = simulate_ensemble(m, 1.0, 0.01, 100, np.array([3], dtype=np.uint64), record_every=10)
        assert ens.x.shape == (11, 1)
        np.testing.assert_allclose(ens.times, 0.1 * np.arange(11), rtol=1e-12)


class TestObserve:
    def _path(self, model, fine_step=1e-3, horizon=2.0, x0=1.0, seed=21):
        return simulate_path(model, SimConfig(fine_step=fine_step, horizon=horizon, x0=x0, seed=seed))

    def test_constant_state_quotients(self):
        path = self._path(zero_model(), x0=3.0)
        obs = observe(path, 0.02)
        np.testing.assert_allclose(obs.x_tilde, 3.0, rtol=1e-12)
        assert obs.n == obs.x_tilde.size - 2

    def test_sampling_at_fine_step_recovers_state(self):
        path = self._path(sojd.ou_jump(), horizon=1.0)
        obs = observe(path, path.fine_step)
        # the quotient over one fine step is the pre-step state, up to the
        # rounding of the running-sum difference (eps * |y| / dt scale)
        tol = 64 * np.finfo(float).eps * np.max(np.abs(path.y)) / path.fine_step
        assert np.max(np.abs(obs.x_tilde - path.x[:-1])) <= max(tol, 1e-12)

    def test_quotient_tracks_state_within_taylor_bound(self):
        path = self._path(decay_model(), horizon=2.0)
        obs = observe(path, 0.02)
        bound = np.max(np.abs(path.x)) * 0.02
        assert np.max(np.abs(obs.x_tilde - obs.x_true[1:])) <= bound

    def test_quotient_identity_field(self):
        path = self._path(sojd.ou_jump(), horizon=1.0)
        obs = observe(path, 0.01)
        np.testing.assert_array_equal(obs.x_tilde, np.diff(obs.y_obs) / 0.01)

    def test_step_not_multiple(self):
        path = self._path(zero_model())
        with pytest.raises(ValidationError):
            observe(path, 0.0015)

    def test_too_few_observations(self):
        path = self._path(zero_model(), horizon=1.0)
        with pytest.raises(InsufficientDataError):
            observe(path, 0.5)
