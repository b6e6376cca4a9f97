import math

import numpy as np
import pytest

from heatdiff.diffusion import (
    DiffusionSchedule,
    ScheduleMode,
    forward_blend,
    forward_noise,
    inpaint_sample,
    make_schedule,
    predict_z0,
    reverse_step,
    sample_batch,
    strided_timesteps,
    v_target,
)
from heatdiff.errors import ConfigError, ContractError, InpaintError, ShapeError
from heatdiff.grids import NormSpec, Raster


def cosine_closed_form(t, T, s=0.008):
    """Independent scalar evaluation of the rescaled cosine profile."""
    f = lambda u: math.cos(((u / T + s) / (1 + s)) * math.pi / 2) ** 2
    return (f(t) - f(T)) / (f(0) - f(T))


class TestSchedule:
    def test_endpoints_exact(self):
        for shape in ("cosine", "linear"):
            sched = make_schedule(1000, shape)
            assert sched.alpha_bar[0] == 1.0
            assert sched.alpha_bar[-1] == 0.0

    def test_strictly_decreasing(self):
        sched = make_schedule(1000, "cosine")
        assert np.all(np.diff(sched.alpha_bar) < 0)

    def test_cosine_matches_closed_form(self):
        sched = make_schedule(1000, "cosine")
        for t in (1, 17, 250, 500, 777, 999):
            assert sched.alpha_bar[t] == pytest.approx(cosine_closed_form(t, 1000), abs=1e-7)

    def test_invalid_t_rejected(self):
        with pytest.raises(ConfigError):
            make_schedule(0)

    def test_bad_alpha_bar_rejected(self):
        with pytest.raises(ConfigError):
            DiffusionSchedule(T=2, alpha_bar=np.array([1.0, 0.5, 0.1]))
        with pytest.raises(ConfigError):
            DiffusionSchedule(T=2, alpha_bar=np.array([1.0, 1.0, 0.0]))


class TestForward:
    def setup_method(self):
        self.sched = make_schedule(100, "cosine")
        rng = np.random.default_rng(0)
        self.z0 = rng.normal(size=(2, 1, 6, 6)).astype(np.float32)
        self.zy = rng.normal(size=(2, 1, 6, 6)).astype(np.float32)

    def test_t0_identity(self):
        assert np.allclose(forward_blend(self.z0, self.zy, 0, self.sched), self.z0)

    def test_tT_anchor(self):
        assert np.allclose(forward_blend(self.z0, self.zy, 100, self.sched), self.zy)

    def test_quarter_alpha(self):
        sched = DiffusionSchedule(T=2, alpha_bar=np.array([1.0, 0.25, 0.0]))
        z = forward_blend(np.ones((1, 1, 1, 1)), np.zeros((1, 1, 1, 1)), 1, sched)
        assert z[0, 0, 0, 0] == pytest.approx(0.5)

    def test_noise_mode_endpoints(self):
        eps = np.random.default_rng(1).normal(size=self.z0.shape).astype(np.float32)
        assert np.allclose(forward_noise(self.z0, eps, 0, self.sched), self.z0)
        assert np.allclose(forward_noise(self.z0, eps, 100, self.sched), eps)
        half = forward_noise(self.z0, np.zeros_like(eps), 50, self.sched)
        a = np.sqrt(self.sched.alpha_bar[50])
        assert np.allclose(half, a * self.z0, atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            forward_blend(self.z0, self.zy[:1], 5, self.sched)

    def test_per_sample_t(self):
        z = forward_blend(self.z0, self.zy, np.array([0, 100]), self.sched)
        assert np.allclose(z[0], self.z0[0])
        assert np.allclose(z[1], self.zy[1])


class TestVelocity:
    def setup_method(self):
        self.sched = make_schedule(200, "cosine")
        rng = np.random.default_rng(3)
        self.z0 = rng.normal(size=(3, 1, 5, 5)).astype(np.float32)
        self.zy = rng.normal(size=(3, 1, 5, 5)).astype(np.float32)

    def test_alpha_one_gives_anchor(self):
        assert np.allclose(v_target(self.z0, self.zy, 0, self.sched), self.zy)

    def test_alpha_zero_gives_neg_z0(self):
        assert np.allclose(v_target(self.z0, self.zy, 200, self.sched), -self.z0)

    def test_algebraic_inversion_all_t(self):
        for t in range(0, 201, 10):
            zt = forward_blend(self.z0, self.zy, t, self.sched)
            v = v_target(self.z0, self.zy, t, self.sched)
            a, b = self.sched.coeffs(t)
            assert np.allclose(a * zt - b * v, self.z0, atol=1e-5)
            assert np.allclose(b * zt + a * v, self.zy, atol=1e-5)

    def test_predict_z0_with_oracle_v(self):
        for t in (0, 7, 120, 200):
            zt = forward_blend(self.z0, self.zy, t, self.sched)
            v = v_target(self.z0, self.zy, t, self.sched)
            assert np.allclose(predict_z0(zt, v, t, self.sched), self.z0, atol=1e-5)

    def test_predict_z0_affine_in_v(self):
        t = 60
        zt = forward_blend(self.z0, self.zy, t, self.sched)
        v = v_target(self.z0, self.zy, t, self.sched)
        _, b = self.sched.coeffs(t)
        delta = predict_z0(zt, 2 * v, t, self.sched) - predict_z0(zt, v, t, self.sched)
        assert np.allclose(delta, -b * v, atol=1e-5)


class TestReverse:
    def setup_method(self):
        self.T = 1000
        self.sched = make_schedule(self.T, "cosine")
        rng = np.random.default_rng(5)
        self.z0 = rng.normal(size=(2, 1, 6, 6)).astype(np.float32)
        self.zy = rng.normal(size=(2, 1, 6, 6)).astype(np.float32)

    def oracle(self, anchor):
        def v(z_t, t):
            a, b = self.sched.coeffs(t)
            # true velocity from the known pair, independent of z_t's path
            return (a * anchor - b * self.z0).astype(np.float32)

        return v

    @pytest.mark.parametrize("steps", [1, 10, 50, 1000])
    def test_oracle_recovery(self, steps):
        z = self.zy.copy()
        ts = strided_timesteps(self.T, steps)
        oracle = self.oracle(self.zy)
        for t, t_prev in zip(ts[:-1], ts[1:]):
            z = reverse_step(z, oracle(z, t), self.zy, t, t_prev, self.sched)
        assert np.abs(z - self.z0).max() < 1e-4

    def test_t_prev_zero_returns_z0_hat(self):
        t = 500
        zt = forward_blend(self.z0, self.zy, t, self.sched)
        v = v_target(self.z0, self.zy, t, self.sched)
        out = reverse_step(zt, v, self.zy, t, 0, self.sched)
        assert np.allclose(out, predict_z0(zt, v, t, self.sched))

    def test_bad_order_rejected(self):
        with pytest.raises(ConfigError):
            reverse_step(self.z0, self.z0, self.zy, 5, 5, self.sched)

    def test_pure_noise_symmetry(self):
        eps = np.random.default_rng(9).normal(size=self.z0.shape).astype(np.float32)
        z = eps.copy()
        ts = strided_timesteps(self.T, 25)
        for t, t_prev in zip(ts[:-1], ts[1:]):
            v = v_target(self.z0, eps, t, self.sched)
            z = reverse_step(z, v, eps, t, t_prev, self.sched)
        assert np.abs(z - self.z0).max() < 1e-4

    def test_strided_timesteps_bounds(self):
        assert strided_timesteps(1000, 1) == [1000, 0]
        assert len(strided_timesteps(1000, 50)) == 51
        with pytest.raises(ConfigError):
            strided_timesteps(100, 0)
        with pytest.raises(ConfigError):
            strided_timesteps(100, 101)


class ZeroModel:
    """Stands in for an untrained network with a zero output head."""

    def __call__(self, z, cond, t, metas):
        import heatdiff.nn.autodiff as ad

        return ad.Tensor(np.zeros_like(z.data))


class TestSampling:
    def setup_method(self):
        self.sched = make_schedule(100, "cosine")
        rng = np.random.default_rng(11)
        self.cond = np.clip(rng.normal(0, 0.3, (1, 3, 8, 8)), -1, 1).astype(np.float32)
        self.anchor = np.clip(rng.normal(0, 0.3, (1, 1, 8, 8)), -1, 1).astype(np.float32)
        self.meta = np.zeros((1, 9), dtype=np.float32)

    def test_untrained_model_terminates_finite(self):
        out = sample_batch(ZeroModel(), self.cond, self.anchor, self.meta, self.sched, steps=10)
        assert out.shape == (1, 1, 8, 8)
        assert np.all(np.isfinite(out))

    def test_deterministic(self):
        a = sample_batch(ZeroModel(), self.cond, self.anchor, self.meta, self.sched, steps=10)
        b = sample_batch(ZeroModel(), self.cond, self.anchor, self.meta, self.sched, steps=10)
        assert np.array_equal(a, b)

    def test_oracle_equivalence_full_vs_strided(self):
        rng = np.random.default_rng(4)
        z0 = rng.normal(0, 0.3, (1, 1, 8, 8)).astype(np.float32)

        def oracle(z_t, t):
            a, b = self.sched.coeffs(t)
            return (a * self.anchor - b * z0).astype(np.float32)

        full = sample_batch(
            None, self.cond, self.anchor, self.meta, self.sched, steps=100, v_oracle=oracle
        )
        strided = sample_batch(
            None, self.cond, self.anchor, self.meta, self.sched, steps=10, v_oracle=oracle
        )
        assert np.abs(full - strided).max() < 1e-4
        assert np.abs(full - z0).max() < 1e-4

    def test_unnormalized_conditions_rejected(self):
        bad = self.cond * 10
        with pytest.raises(ContractError):
            sample_batch(ZeroModel(), bad, self.anchor, self.meta, self.sched, steps=5)


class TestInpaint:
    def setup_method(self):
        self.sched = make_schedule(100, "cosine")
        self.norm = NormSpec(-30.0, 60.0)
        rng = np.random.default_rng(13)
        self.vals = rng.uniform(0, 30, (8, 8, 1)).astype(np.float32)
        self.cond = np.zeros((3, 8, 8), dtype=np.float32)
        self.meta = np.zeros(9, dtype=np.float32)

    def test_all_valid_returns_input(self):
        r = Raster(self.vals, 30.0)
        out = inpaint_sample(ZeroModel(), r, self.cond, self.meta, self.sched, steps=5, norm=self.norm)
        assert np.array_equal(out.values, self.vals)

    def test_valid_pixels_pass_through(self):
        mask = np.ones((8, 8), dtype=bool)
        mask[2:5, 2:6] = False
        r = Raster(self.vals, 30.0, mask)
        out = inpaint_sample(ZeroModel(), r, self.cond, self.meta, self.sched, steps=10, norm=self.norm)
        assert np.allclose(out.values[mask], self.vals[mask], atol=1e-5 * self.norm.span)
        assert out.valid_mask is None
        assert np.all(np.isfinite(out.values))

    def test_fully_invalid_rejected(self):
        r = Raster(self.vals, 30.0, np.zeros((8, 8), dtype=bool))
        with pytest.raises(InpaintError):
            inpaint_sample(ZeroModel(), r, self.cond, self.meta, self.sched, steps=5)

    def test_anchored_mode_requires_anchor(self):
        mask = np.ones((8, 8), dtype=bool)
        mask[0, 0] = False
        r = Raster(self.vals, 30.0, mask)
        with pytest.raises(ContractError):
            inpaint_sample(
                ZeroModel(), r, self.cond, self.meta, self.sched, steps=5,
                mode=ScheduleMode.LST_ANCHORED, norm=self.norm,
            )
