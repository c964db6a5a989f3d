import numpy as np
import pytest

from helpers import network_gradcheck, reduced_network
from rollnet.model.loss import multitask_loss
from rollnet.model.unet import (
    ModelConfig,
    ModelConfigError,
    ModelParams,
    StaleCacheError,
    backward,
    init_params,
    unet_forward,
)


def small(m=3, **kw):
    return ModelConfig(n_instruments=m, widths=(4, 8), n_freq=88, n_frames=32, **kw)


class TestConfig:
    def test_defaults(self):
        cfg = ModelConfig(8)
        assert cfg.widths == (16, 32, 64, 128) and cfg.levels == 4
        assert cfg.padded_freq == 96 and cfg.n_frames == 320
        assert (cfg.kernel, cfg.slope, cfg.bn_eps, cfg.bn_momentum) == (3, 0.2, 1e-5, 0.1)

    @pytest.mark.parametrize("kw", [dict(n_instruments=0), dict(widths=()), dict(widths=(0, 4)),
                                    dict(n_frames=100), dict(kernel=2), dict(dtype="float16")])
    def test_invalid(self, kw):
        with pytest.raises(ModelConfigError):
            ModelConfig(**{"n_instruments": 2, **kw})

    def test_dict_roundtrip(self):
        cfg = small()
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_decoder_mirrors_encoder(self):
        blocks = ModelConfig(2).block_shapes()
        assert [b[0] for b in blocks] == ["enc0", "enc1", "enc2", "enc3", "dec3", "dec2", "dec1", "dec0"]
        # dec3 sees upsampled enc3 output plus the enc2 skip
        assert blocks[4][1:] == (128 + 64, 64, 1)
        assert blocks[-1][1:] == (16 + 1, 16, 1)


class TestParams:
    def test_shape_validation(self):
        p = init_params(small(), 0)
        bad = dict(p.tensors)
        bad["head.b"] = np.zeros(5)
        with pytest.raises(ModelConfigError):
            ModelParams(p.config, bad)
        missing = dict(p.tensors)
        del missing["head.w"]
        with pytest.raises(ModelConfigError):
            ModelParams(p.config, missing)

    def test_seeded_init(self):
        a, b = init_params(small(), 5), init_params(small(), 5)
        assert all(np.array_equal(a[k], b[k]) for k in a)
        c = init_params(small(), 6)
        assert not np.array_equal(a["enc0.conv1.w"], c["enc0.conv1.w"])

    def test_head_bias(self):
        p = init_params(small(), 0)
        assert np.all(p["head.b"] == -2.0)

    def test_init_keeps_logits_moderate(self):
        p = init_params(ModelConfig(3), 0)
        x = np.random.default_rng(0).random((2, 88, 320)) * 3
        z, _ = unet_forward(x, p, train=True)
        assert np.abs(z).max() < 20


class TestForward:
    def test_shapes(self):
        p = init_params(small(m=5), 0)
        x = np.random.default_rng(0).random((3, 88, 32))
        assert unet_forward(x, p).shape == (3, 88, 32, 5)
        assert unet_forward(x[0], p).shape == (88, 32, 5)

    def test_zero_input_gives_head_bias(self):
        p = init_params(small(), 0)
        p.tensors["head.b"][:] = [0.5, -1.0, 2.0]
        z = unet_forward(np.zeros((88, 32)), p)
        np.testing.assert_allclose(z, np.broadcast_to([0.5, -1.0, 2.0], z.shape), atol=1e-6)

    def test_infer_is_pure(self):
        p = init_params(small(), 0)
        x = np.random.default_rng(1).random((2, 88, 32))
        a = unet_forward(x, p)
        b = unet_forward(x, p)
        assert a.tobytes() == b.tobytes()

    def test_train_mode_updates_running_stats(self):
        p = init_params(small(), 0)
        before = p["enc0.bn1.running_mean"].copy()
        unet_forward(np.random.default_rng(1).random((2, 88, 32)), p, train=True)
        assert not np.array_equal(before, p["enc0.bn1.running_mean"])

    def test_wrong_shape(self):
        p = init_params(small(), 0)
        with pytest.raises(ModelConfigError):
            unet_forward(np.zeros((88, 30)), p)

    def test_segment_independence(self):
        # infer mode has no cross-example coupling
        p = init_params(small(), 0)
        x = np.random.default_rng(2).random((3, 88, 32))
        batch = unet_forward(x, p)
        single = unet_forward(x[1], p)
        np.testing.assert_allclose(batch[1], single, rtol=1e-5, atol=1e-5)


class TestBackward:
    def test_zero_upstream(self):
        p = reduced_network(0)
        x = np.random.default_rng(0).normal(size=(2, 8, 16))
        z, cache = unet_forward(x, p, train=True)
        grads = backward(cache, np.zeros_like(z), p)
        assert set(grads) == set(p.learnable())
        assert all(not g.any() for g in grads.values())

    def test_gradcheck(self):
        errors, _ = network_gradcheck(n_samples=60, seed=3)
        assert errors.max() < 1e-3

    def test_stale_cache(self):
        p = reduced_network(0)
        x = np.random.default_rng(0).normal(size=(1, 8, 16))
        z, cache = unet_forward(x, p, train=True)
        with pytest.raises(StaleCacheError):
            backward(cache, np.zeros_like(z), p.copy())
        with pytest.raises(StaleCacheError):
            backward(None, np.zeros_like(z), p)

    def test_grad_shapes(self):
        p = init_params(small(), 0)
        x = np.random.default_rng(0).random((2, 88, 32))
        y = (np.random.default_rng(1).random((2, 88, 32, 3)) < 0.1).astype(np.uint8)
        z, cache = unet_forward(x, p, train=True)
        _, dz = multitask_loss(z, y)
        grads = backward(cache, dz, p)
        for k, g in grads.items():
            assert g.shape == p[k].shape and g.dtype == np.float32
