import numpy as np
import pytest

from deltaloc import ConfigError, DomainError, GeoPoint, ShapeError, ground_distance
from deltaloc.autodiff import Tensor
from deltaloc.model import (
    ModelConfig,
    forward,
    init_params,
    parameter_shapes,
    predict_absolute,
    predict_deltas,
    validate_params,
)

from oracles import gradcheck

SMALL = ModelConfig(input_size=16, stage_widths=(4, 6), feature_dim=8, lstm_hidden=5)


def images(rng, n, config=SMALL):
    return rng.uniform(0.0, 1.0, size=(n, config.in_channels, config.input_size, config.input_size))


class TestConfig:
    def test_defaults(self):
        cfg = ModelConfig()
        assert cfg.input_size == 32
        assert cfg.stage_widths == (8, 16, 32)
        assert cfg.feature_dim == 64
        assert cfg.lstm_layers == 2
        assert cfg.lstm_hidden == 32
        assert not cfg.use_fix_features

    def test_validation(self):
        with pytest.raises(ConfigError):
            ModelConfig(lstm_layers=0)
        with pytest.raises(ConfigError):
            ModelConfig(feature_dim=3)
        with pytest.raises(ConfigError):
            ModelConfig(input_size=4)
        with pytest.raises(ConfigError):
            ModelConfig(sequence_split=5)  # 64 % 5 != 0

    def test_sequence_split_div(self):
        ModelConfig(sequence_split=4)
        ModelConfig(feature_dim=66, use_fix_features=True, sequence_split=4)


class TestParams:
    def test_init_matches_declared_shapes(self):
        params = init_params(SMALL, seed=1)
        shapes = parameter_shapes(SMALL)
        assert set(params) == set(shapes)
        for k, s in shapes.items():
            assert tuple(params[k].shape) == s
            assert params[k].requires_grad
        validate_params(params, SMALL)

    def test_init_deterministic(self):
        a = init_params(SMALL, seed=3)
        b = init_params(SMALL, seed=3)
        c = init_params(SMALL, seed=4)
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)
        assert any(not np.array_equal(a[k].data, c[k].data) for k in a)

    def test_validate_catches_mismatch(self):
        params = init_params(SMALL, seed=1)
        params["head.weight"] = Tensor(np.zeros((7, 2)), requires_grad=True)
        with pytest.raises(ShapeError, match="head.weight"):
            validate_params(params, SMALL)
        del params["head.weight"]
        with pytest.raises(ShapeError, match="missing"):
            validate_params(params, SMALL)


class TestForward:
    def test_output_shape(self):
        rng = np.random.default_rng(0)
        params = init_params(SMALL, seed=0)
        for b in (1, 3, 8):
            out = forward(images(rng, b), None, params, SMALL)
            assert out.shape == (b, 2)

    def test_zero_head_zero_output(self):
        rng = np.random.default_rng(1)
        params = init_params(SMALL, seed=0)
        params["head.weight"].data = np.zeros_like(params["head.weight"].data)
        params["head.bias"].data = np.zeros_like(params["head.bias"].data)
        out = forward(images(rng, 2), None, params, SMALL)
        assert np.array_equal(out.data, np.zeros((2, 2)))

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        params = init_params(SMALL, seed=0)
        x = images(rng, 2)
        assert np.array_equal(
            forward(x, None, params, SMALL).data, forward(x, None, params, SMALL).data
        )

    def test_batch_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        params = init_params(SMALL, seed=0)
        x = images(rng, 5)
        perm = np.array([4, 2, 0, 1, 3])
        out = forward(x, None, params, SMALL).data
        out_p = forward(x[perm], None, params, SMALL).data
        assert np.allclose(out[perm], out_p, atol=1e-12)

    def test_fix_features_consumed_iff_enabled(self):
        rng = np.random.default_rng(4)
        cfg = ModelConfig(input_size=16, stage_widths=(4,), feature_dim=8,
                          lstm_hidden=4, use_fix_features=True)
        params = init_params(cfg, seed=0)
        x = images(rng, 2, cfg)
        f1 = rng.normal(size=(2, 2))
        f2 = rng.normal(size=(2, 2))
        assert not np.allclose(
            forward(x, f1, params, cfg).data, forward(x, f2, params, cfg).data
        )
        with pytest.raises(ShapeError, match="fix_feat"):
            forward(x, None, params, cfg)
        # disabled config ignores whatever is passed
        off = SMALL
        params_off = init_params(off, seed=0)
        xo = images(rng, 2, off)
        assert np.array_equal(
            forward(xo, f1, params_off, off).data, forward(xo, None, params_off, off).data
        )

    def test_rejects_bad_inputs(self):
        params = init_params(SMALL, seed=0)
        rng = np.random.default_rng(5)
        with pytest.raises(ShapeError):
            forward(rng.uniform(size=(2, 1, 8, 8)), None, params, SMALL)
        with pytest.raises(DomainError):
            forward(np.full((1, 1, 16, 16), 1.5), None, params, SMALL)
        with pytest.raises(DomainError):
            forward(np.full((1, 1, 16, 16), -0.2), None, params, SMALL)

    def test_sequence_split_changes_path(self):
        cfg = ModelConfig(input_size=16, stage_widths=(4,), feature_dim=8,
                          lstm_hidden=4, sequence_split=2)
        params = init_params(cfg, seed=0)
        rng = np.random.default_rng(6)
        out = forward(images(rng, 2, cfg), None, params, cfg)
        assert out.shape == (2, 2)
        assert params["lstm0.w_x"].shape == (4, 16)

    def test_large_input_pools_after_stem(self):
        cfg = ModelConfig(input_size=64, stage_widths=(2, 3), feature_dim=4, lstm_hidden=3)
        params = init_params(cfg, seed=0)
        rng = np.random.default_rng(7)
        out = forward(images(rng, 1, cfg), None, params, cfg)
        assert out.shape == (1, 2)

    def test_end_to_end_gradcheck_16px(self):
        rng = np.random.default_rng(8)
        cfg = ModelConfig(input_size=16, stage_widths=(3, 4), feature_dim=6,
                          lstm_hidden=4, use_fix_features=True)
        params = init_params(cfg, seed=0)
        x = Tensor(rng.uniform(0.05, 0.95, size=(2, 1, 16, 16)), requires_grad=True)
        ff = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        target = Tensor(rng.normal(size=(2, 2)))

        from deltaloc.autodiff import smooth_l1_loss

        def make():
            return smooth_l1_loss(forward(x, ff, params, cfg), target)

        checked = dict(params)
        checked["image"] = x
        checked["fix"] = ff
        assert gradcheck(make, checked, rng, n_coords=2) < 1e-4


class TestPredictAbsolute:
    def test_zero_model_returns_anchor(self):
        params = init_params(SMALL, seed=0)
        params["head.weight"].data = np.zeros_like(params["head.weight"].data)
        params["head.bias"].data = np.zeros_like(params["head.bias"].data)
        anchor = GeoPoint(37.4, -122.1)
        rng = np.random.default_rng(9)
        got = predict_absolute(images(rng, 1)[0], anchor, params, SMALL, target_scale=10.0)
        assert ground_distance(got, anchor) < 1e-6

    def test_matches_apply_delta(self):
        from deltaloc import DeltaLocation, apply_delta

        params = init_params(SMALL, seed=0)
        anchor = GeoPoint(37.4, -122.1)
        rng = np.random.default_rng(10)
        img = images(rng, 1)
        out = forward(img, None, params, SMALL).data[0]
        want = apply_delta(anchor, DeltaLocation(out[0] * 10.0, out[1] * 10.0))
        got = predict_absolute(img[0], anchor, params, SMALL, target_scale=10.0)
        assert ground_distance(got, want) < 1e-9

    def test_accepts_2d_image(self):
        params = init_params(SMALL, seed=0)
        rng = np.random.default_rng(11)
        img2d = rng.uniform(size=(16, 16))
        predict_absolute(img2d, GeoPoint(0.0, 0.0), params, SMALL, target_scale=10.0)

    def test_predict_deltas_batches_consistent(self):
        params = init_params(SMALL, seed=0)
        rng = np.random.default_rng(12)
        x = images(rng, 7)
        one = predict_deltas(x, None, params, SMALL, target_scale=10.0, batch_size=3)
        two = predict_deltas(x, None, params, SMALL, target_scale=10.0, batch_size=7)
        assert np.allclose(one, two, atol=1e-12)
        assert one.shape == (7, 2)
