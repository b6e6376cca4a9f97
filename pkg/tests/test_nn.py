import numpy as np
import pytest

from heatdiff.errors import ConfigError, FormatError, ShapeError, TrainingError
from heatdiff.grids import GeoMeta
from heatdiff.nn import (
    Adam,
    Denoiser,
    Tensor,
    UNetConfig,
    load_checkpoint,
    load_model,
    restore_model,
    save_checkpoint,
)
from heatdiff.nn.autodiff import (
    scale_shift,
    slice_cols,
    add,
    add_channel_bias,
    concat,
    conv2d,
    crop_rb,
    group_norm,
    linear,
    mse_loss,
    pad_to_multiple,
    silu,
    upsample_nearest2,
)
from heatdiff.nn.unet import meta_vector, timestep_embedding

from gradcheck import gradcheck

RNG = np.random.default_rng(1234)

SMALL_CFG = UNetConfig(in_channels=1, cond_channels=3, base_width=8, depth=2,
                       blocks_per_resolution=1, embed_dim=16)


def rand(*shape):
    return RNG.normal(size=shape)


class TestGradients:
    def test_conv3x3(self):
        gradcheck(lambda x, w, b: conv2d(x, w, b), [rand(2, 4, 8, 8), rand(3, 4, 3, 3) * 0.4, rand(3)])

    def test_conv3x3_stride2(self):
        gradcheck(lambda x, w, b: conv2d(x, w, b, stride=2), [rand(2, 4, 8, 8), rand(3, 4, 3, 3) * 0.4, rand(3)])

    def test_conv1x1(self):
        gradcheck(lambda x, w, b: conv2d(x, w, b), [rand(2, 4, 8, 8), rand(3, 4, 1, 1), rand(3)])

    def test_upsample_conv(self):
        gradcheck(
            lambda x, w, b: conv2d(upsample_nearest2(x), w, b),
            [rand(2, 4, 4, 4), rand(3, 4, 3, 3) * 0.4, rand(3)],
        )

    def test_group_norm(self):
        gradcheck(
            lambda x, g, b: group_norm(x, g, b, groups=2),
            [rand(2, 4, 8, 8), 1.0 + 0.1 * rand(4), rand(4)],
            rel_tol=2e-3,
        )

    def test_silu(self):
        gradcheck(silu, [rand(2, 4, 8, 8)])

    def test_linear(self):
        gradcheck(linear, [rand(4, 6), rand(6, 5) * 0.5, rand(5)])

    def test_add_broadcast(self):
        gradcheck(add, [rand(2, 4, 8, 8), rand(2, 4, 8, 8)])
        gradcheck(add, [rand(2, 4, 1, 1), rand(2, 4, 8, 8)])

    def test_add_channel_bias(self):
        gradcheck(add_channel_bias, [rand(2, 4, 8, 8), rand(2, 4)])

    def test_scale_shift(self):
        gradcheck(scale_shift, [rand(2, 4, 8, 8), rand(2, 4) * 0.3, rand(2, 4)])

    def test_slice_cols(self):
        gradcheck(lambda x: slice_cols(x, 1, 4), [rand(3, 6)])

    def test_concat(self):
        gradcheck(lambda a, b: concat([a, b]), [rand(2, 3, 4, 4), rand(2, 2, 4, 4)])

    def test_pad_crop(self):
        gradcheck(lambda x: crop_rb(pad_to_multiple(x, 4)[0], 2, 2), [rand(2, 3, 7, 5)])

    def test_mse_loss(self):
        target = rand(2, 3, 4, 4)
        gradcheck(lambda x: mse_loss(x, target), [rand(2, 3, 4, 4)])


class TestOps:
    def test_conv1x1_identity(self):
        x = Tensor(rand(2, 3, 5, 5))
        w = Tensor(np.eye(3)[:, :, None, None])
        b = Tensor(np.zeros(3))
        out = conv2d(x, w, b)
        assert np.allclose(out.data, x.data)

    def test_groupnorm_constant_channel_zero(self):
        x = Tensor(np.full((2, 8, 4, 4), 3.5))
        g = Tensor(np.ones(8))
        b = Tensor(np.zeros(8))
        out = group_norm(x, g, b)
        assert np.allclose(out.data, 0.0, atol=1e-5)

    def test_shape_error_names_dims(self):
        x = Tensor(rand(2, 3, 5, 5))
        w = Tensor(rand(4, 2, 3, 3))
        with pytest.raises(ShapeError, match="channels"):
            conv2d(x, w, Tensor(np.zeros(4)))

    def test_forward_deterministic(self):
        x = rand(1, 4, 8, 8)
        w = rand(4, 4, 3, 3)
        b = rand(4)
        a = conv2d(Tensor(x), Tensor(w), Tensor(b)).data
        c = conv2d(Tensor(x), Tensor(w), Tensor(b)).data
        assert np.array_equal(a, c)


class TestEmbeddings:
    def test_t0_sin_zero_cos_one(self):
        e = timestep_embedding(0, 64)
        assert np.all(e[:32] == 0.0)
        assert np.all(e[32:] == 1.0)

    def test_length(self):
        assert timestep_embedding(17, 128).shape == (128,)

    def test_distinct_up_to_1000(self):
        e = timestep_embedding(np.arange(1001), 64)
        uniq = np.unique(e, axis=0)
        assert len(uniq) == 1001

    def test_month_wrap(self):
        m12 = meta_vector(GeoMeta(10, 10, 0.0, 2015, 12, 5, 30.0))
        assert m12[4] == pytest.approx(0.0, abs=1e-12)
        assert m12[5] == pytest.approx(1.0, abs=1e-12)

    def test_meta_vector_length_and_embed(self):
        cfg = SMALL_CFG
        model = Denoiser(cfg, seed=0)
        v = meta_vector(GeoMeta(48.0, 16.0, 0.1, 2012, 6, 1, 30.0))
        assert v.shape == (9,)
        emb = model.embed(5, v[None, :])
        assert emb.data.shape == (1, cfg.embed_dim)

    def test_year_changes_embedding(self):
        model = Denoiser(SMALL_CFG, seed=1)
        a = meta_vector(GeoMeta(48.0, 16.0, 0.1, 2010, 6, 1, 30.0))
        b = meta_vector(GeoMeta(48.0, 16.0, 0.1, 2014, 6, 1, 30.0))
        ea = model.embed(5, a[None, :]).data
        eb = model.embed(5, b[None, :]).data
        assert not np.allclose(ea, eb)


class TestUNet:
    def setup_method(self):
        self.model = Denoiser(SMALL_CFG, seed=7)
        self.z = Tensor(rand(2, 1, 12, 12).astype(np.float32))
        self.cond = Tensor(rand(2, 3, 12, 12).astype(np.float32))
        self.meta = np.stack([meta_vector(GeoMeta(40, 5, 0.0, 2010, 3, 2, 30.0))] * 2)

    def test_output_shape(self):
        out = self.model(self.z, self.cond, np.array([3, 9]), self.meta)
        assert out.data.shape == self.z.data.shape

    def test_zero_init_control_is_noop(self):
        with_ctrl = self.model(self.z, self.cond, np.array([3, 9]), self.meta, use_control=True)
        without = self.model(self.z, self.cond, np.array([3, 9]), self.meta, use_control=False)
        assert np.array_equal(with_ctrl.data, without.data)

    def test_residual_count(self):
        emb = self.model.embed(np.array([1, 2]), self.meta)
        residuals = self.model.control(self.z, self.cond, emb)
        assert len(residuals) == SMALL_CFG.n_residuals
        for r in residuals:
            assert np.all(r.data == 0.0)

    def test_zero_residuals_equal_plain(self):
        emb = self.model.embed(np.array([1, 2]), self.meta)
        stem_in = self.z
        zeros = [Tensor(np.zeros_like(r.data)) for r in self.model.control(stem_in, self.cond, emb)]
        a = self.model.unet(stem_in, emb, zeros)
        b = self.model.unet(stem_in, emb, None)
        assert np.allclose(a.data, b.data, atol=0)

    def test_residual_sensitivity(self):
        # the output head is zero-initialized, so randomize it first
        model = Denoiser(SMALL_CFG, seed=9)
        model.unet.out_conv.w.data = RNG.normal(0, 0.2, model.unet.out_conv.w.data.shape).astype(np.float32)
        emb = model.embed(np.array([1, 2]), self.meta)
        residuals = [Tensor(np.zeros_like(r.data)) for r in model.control(self.z, self.cond, emb)]
        base = model.unet(self.z, emb, residuals).data
        residuals[2] = Tensor(0.5 + np.zeros_like(residuals[2].data))
        bumped = model.unet(self.z, emb, residuals).data
        assert not np.allclose(base, bumped)

    def test_residual_shape_mismatch_raises(self):
        emb = self.model.embed(np.array([1, 2]), self.meta)
        residuals = [Tensor(np.zeros_like(r.data)) for r in self.model.control(self.z, self.cond, emb)]
        residuals[0] = Tensor(np.zeros((2, 8, 5, 5), dtype=np.float32))
        with pytest.raises(ShapeError):
            self.model.unet(self.z, emb, residuals)

    def test_cond_channel_mismatch_raises(self):
        bad = Tensor(rand(2, 5, 12, 12).astype(np.float32))
        with pytest.raises(ShapeError, match="channels"):
            self.model(self.z, bad, np.array([1, 2]), self.meta)

    def test_odd_dims_padded(self):
        z = Tensor(rand(1, 1, 11, 13).astype(np.float32))
        cond = Tensor(rand(1, 3, 11, 13).astype(np.float32))
        out = self.model(z, cond, np.array([4]), self.meta[:1])
        assert out.data.shape == (1, 1, 11, 13)

    def test_control_learns_after_steps(self):
        # step 1 only moves the zero output head; later steps reach the
        # zero projections once the head is non-zero
        model = Denoiser(SMALL_CFG, seed=3)
        opt = Adam(model.named_parameters(), lr=1e-2)
        for _ in range(3):
            opt.zero_grad()
            out = model(self.z, self.cond, np.array([3, 9]), self.meta)
            loss = mse_loss(out, np.ones_like(out.data))
            loss.backward()
            opt.step()
        emb = model.embed(np.array([3, 9]), self.meta)
        residuals = model.control(self.z, self.cond, emb)
        assert any(np.abs(r.data).max() > 0 for r in residuals)


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = Tensor(np.array([1.0, 2.0], dtype=np.float32), requires_grad=True)
        opt = Adam({"p": p}, lr=1e-3)
        p.grad = np.zeros(2, dtype=np.float32)
        opt.step()
        assert np.array_equal(p.data, np.array([1.0, 2.0], dtype=np.float32))

    def test_first_step_magnitude(self):
        p = Tensor(np.array([0.0], dtype=np.float32), requires_grad=True)
        opt = Adam({"p": p}, lr=1e-3)
        p.grad = np.array([1.0], dtype=np.float32)
        opt.step()
        assert abs(abs(float(p.data[0])) - 1e-3) < 1e-9

    def test_nonfinite_gradient_names_param(self):
        p = Tensor(np.zeros(2, dtype=np.float32), requires_grad=True)
        opt = Adam({"weight.w": p})
        p.grad = np.array([np.nan, 0.0], dtype=np.float32)
        with pytest.raises(TrainingError, match="weight.w"):
            opt.step()

    def test_deterministic(self):
        def run():
            rng = np.random.default_rng(5)
            p = Tensor(rng.normal(size=4).astype(np.float32), requires_grad=True)
            opt = Adam({"p": p}, lr=1e-2)
            for _ in range(10):
                p.grad = (p.data * 2).astype(np.float32)
                opt.step()
            return p.data.copy()

        assert np.array_equal(run(), run())


class TestCheckpoint:
    def test_round_trip_bitwise_forward(self, tmp_path):
        model = Denoiser(SMALL_CFG, seed=11)
        z = Tensor(rand(1, 1, 8, 8).astype(np.float32))
        cond = Tensor(rand(1, 3, 8, 8).astype(np.float32))
        meta = meta_vector(GeoMeta(40, 5, 0.0, 2010, 3, 2, 30.0))[None, :]
        before = model(z, cond, np.array([7]), meta).data
        save_checkpoint(tmp_path / "m.ckpt", model, step=42, extra={"mode": "lst_anchored"})
        restored, header = load_model(tmp_path / "m.ckpt")
        assert header["step"] == 42
        assert header["extra"]["mode"] == "lst_anchored"
        after = restored(z, cond, np.array([7]), meta).data
        assert np.array_equal(before, after)

    def test_wrong_config_rejected(self, tmp_path):
        model = Denoiser(SMALL_CFG, seed=11)
        save_checkpoint(tmp_path / "m.ckpt", model)
        other = UNetConfig(in_channels=1, cond_channels=3, base_width=16, depth=2,
                           blocks_per_resolution=1, embed_dim=16)
        with pytest.raises(ConfigError):
            load_model(tmp_path / "m.ckpt", expect=other)

    def test_every_parameter_listed_once(self, tmp_path):
        model = Denoiser(SMALL_CFG, seed=11)
        save_checkpoint(tmp_path / "m.ckpt", model)
        header, params = load_checkpoint(tmp_path / "m.ckpt")
        names = [t["name"] for t in header["tensors"]]
        assert len(names) == len(set(names))
        assert set(names) == set(model.named_parameters().keys())

    def test_corrupt_file_rejected(self, tmp_path):
        (tmp_path / "bad.ckpt").write_bytes(b"garbage")
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "bad.ckpt")

    def test_truncated_blob_rejected(self, tmp_path):
        model = Denoiser(SMALL_CFG, seed=11)
        save_checkpoint(tmp_path / "m.ckpt", model)
        raw = (tmp_path / "m.ckpt").read_bytes()
        (tmp_path / "m.ckpt").write_bytes(raw[:-64])
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(tmp_path / "m.ckpt")
