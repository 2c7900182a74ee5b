import numpy as np
import pytest

from deltaloc.autodiff import GradientTape, Tensor, backward, mean, mul, scale
from deltaloc.dataset import ImageStore, Sample, make_targets
from deltaloc.errors import (
    ConfigError,
    DivergenceError,
    IncompleteSampleError,
    InsufficientDataError,
    SizeError,
)
from deltaloc.geodesy import DeltaLocation, GeoPoint, apply_delta, ground_distance
from deltaloc.layers import load_params
from deltaloc.model import ModelConfig, init_params
from deltaloc.training import (
    TrainConfig,
    augment,
    center_crop,
    evaluate_arrays,
    evaluate_loss,
    fix_features,
    fix_reference,
    resize_bilinear,
    sgd_step,
    train,
    train_arrays,
    write_train_log,
)

SMALL = ModelConfig(input_size=16, stage_widths=(4, 6), feature_dim=8, lstm_hidden=5)


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.learning_rate == 0.045
        assert cfg.batch_size == 8
        assert cfg.crop_fraction == 0.875
        assert cfg.target_scale == 10.0

    def test_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=0)
        with pytest.raises(ConfigError):
            TrainConfig(crop_fraction=0.0)
        with pytest.raises(ConfigError):
            TrainConfig(crop_fraction=1.5)
        with pytest.raises(ConfigError):
            TrainConfig(target_scale=-1.0)


class TestResize:
    def test_identity_when_same_size(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(size=(9, 9))
        assert np.array_equal(resize_bilinear(img, 9, 9), img)

    def test_constant_preserved(self):
        img = np.full((5, 7), 0.42)
        out = resize_bilinear(img, 11, 3)
        assert np.allclose(out, 0.42)

    def test_known_upscale(self):
        img = np.array([[0.0, 1.0], [0.0, 1.0]])
        out = resize_bilinear(img, 2, 4)
        assert np.allclose(out[0], [0.0, 0.25, 0.75, 1.0])

    def test_channel_axis_untouched(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(size=(3, 8, 8))
        out = resize_bilinear(img, 4, 4)
        assert out.shape == (3, 4, 4)
        for c in range(3):
            assert np.array_equal(out[c], resize_bilinear(img[c], 4, 4))


class TestAugment:
    def test_output_size_contract(self):
        rng = np.random.default_rng(0)
        for side in (16, 20, 33):
            img = rng.uniform(size=(side, side))
            out = augment(img, rng, 0.875, 16)
            assert out.shape == (16, 16)

    def test_full_fraction_is_plain_resize(self):
        rng = np.random.default_rng(0)
        img = np.random.default_rng(5).uniform(size=(20, 20))
        a = augment(img, rng, 1.0, 16)
        b = augment(img, rng, 1.0, 16)
        assert np.array_equal(a, b)
        assert np.array_equal(a, resize_bilinear(img, 16, 16))

    def test_seeded_crops_repeat(self):
        img = np.random.default_rng(5).uniform(size=(24, 24))
        a = augment(img, np.random.default_rng(7), 0.5, 16)
        b = augment(img, np.random.default_rng(7), 0.5, 16)
        c = augment(img, np.random.default_rng(8), 0.5, 16)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_crop_varies_with_rng(self):
        img = np.arange(900.0).reshape(30, 30) / 900.0
        rng = np.random.default_rng(0)
        outs = {augment(img, rng, 0.5, 8).tobytes() for _ in range(10)}
        assert len(outs) > 1

    def test_degenerate_crop_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(SizeError):
            augment(np.ones((2, 2)), rng, 0.1, 4)

    def test_center_crop_deterministic_and_centered(self):
        img = np.zeros((20, 20))
        img[8:12, 8:12] = 1.0  # bright center survives a center crop
        out = center_crop(img, 0.5, 10)
        assert out.shape == (10, 10)
        assert out[4:6, 4:6].min() > 0.9
        assert np.array_equal(out, center_crop(img, 0.5, 10))


class TestSgdStep:
    def make(self, value):
        return {"w": Tensor(np.array(value), requires_grad=True)}

    def test_zero_grads_unchanged(self):
        params = self.make([2.0, -3.0])
        out = sgd_step(params, {"w": np.zeros(2)}, 0.1)
        assert np.array_equal(out["w"].data, [2.0, -3.0])

    def test_arithmetic(self):
        out = sgd_step(self.make([2.0]), {"w": np.array([0.5])}, 1.0)
        assert out["w"].data[0] == pytest.approx(1.5)

    def test_quadratic_closed_form(self):
        # one step on 0.5 * p^2 from p = 1 at lr 0.1 lands on 0.9
        p = Tensor(np.array([1.0]), requires_grad=True)
        with GradientTape() as tape:
            loss = mean(scale(mul(p, p), 0.5))
        backward(tape, loss)
        out = sgd_step({"p": p}, {"p": p.grad}, 0.1)
        assert out["p"].data[0] == pytest.approx(0.9)

    def test_key_mismatch(self):
        with pytest.raises(KeyError, match="extra"):
            sgd_step(self.make([1.0]), {"w": np.zeros(1), "extra": np.zeros(1)}, 0.1)
        with pytest.raises(KeyError, match="w"):
            sgd_step(self.make([1.0]), {}, 0.1)

    def test_none_and_misshaped_grads(self):
        with pytest.raises(KeyError, match="no gradient"):
            sgd_step(self.make([1.0]), {"w": None}, 0.1)
        with pytest.raises(KeyError, match="shape"):
            sgd_step(self.make([1.0]), {"w": np.zeros(3)}, 0.1)

    def test_returns_fresh_tensors(self):
        params = self.make([1.0])
        out = sgd_step(params, {"w": np.array([0.5])}, 0.1)
        assert out["w"] is not params["w"]
        assert params["w"].data[0] == 1.0


def one_sample():
    rng = np.random.default_rng(3)
    return [rng.uniform(size=(18, 18))], np.array([[3.0, -4.0]])


class TestTrainLoop:
    def test_overfit_one_sample(self):
        images, targets = one_sample()
        cfg = TrainConfig(epochs=200, crop_fraction=1.0, seed=0)
        state = train_arrays(images, targets, SMALL, cfg)
        assert min(state.train_losses) < 1e-3
        # monotone decrease after the early transient
        tail = state.train_losses[10:]
        assert all(b <= a for a, b in zip(tail, tail[1:]))
        assert state.epoch == 200
        assert len(state.train_losses) == 200
        assert len(state.val_losses) == 200

    def test_bit_identical_reruns(self):
        images, targets = one_sample()
        cfg = TrainConfig(epochs=8, seed=4)
        a = train_arrays(images, targets, SMALL, cfg)
        b = train_arrays(images, targets, SMALL, cfg)
        assert a.train_losses == b.train_losses
        for k in a.params:
            assert np.array_equal(a.params[k].data, b.params[k].data)

    def test_seed_changes_run(self):
        images, targets = one_sample()
        a = train_arrays(images, targets, SMALL, TrainConfig(epochs=2, seed=0))
        b = train_arrays(images, targets, SMALL, TrainConfig(epochs=2, seed=1))
        assert a.train_losses != b.train_losses

    def test_empty_split_rejected(self):
        with pytest.raises(InsufficientDataError):
            train_arrays([], np.zeros((0, 2)), SMALL, TrainConfig(epochs=1))

    def test_divergence_names_epoch_and_batch(self):
        images, _ = one_sample()
        with pytest.raises(DivergenceError) as exc:
            train_arrays(images, np.array([[np.nan, 0.0]]), SMALL, TrainConfig(epochs=1))
        assert exc.value.epoch == 0
        assert exc.value.batch == 0

    def test_best_checkpoint_tracks_val_meter_error(self):
        rng = np.random.default_rng(9)
        images = [rng.uniform(size=(18, 18)) for _ in range(10)]
        targets = rng.normal(scale=3.0, size=(10, 2))
        cfg = TrainConfig(epochs=6, seed=2)
        state = train_arrays(images[:7], targets[:7], SMALL, cfg,
                             val_images=images[7:], val_targets=targets[7:])
        best = int(np.argmin(state.val_meter_errors)) + 1
        assert state.best_epoch == best
        assert state.best_val_meter_error == min(state.val_meter_errors)
        assert state.best_params is not None

    def test_checkpoint_cadence(self, tmp_path):
        images, targets = one_sample()
        cfg = TrainConfig(epochs=5, checkpoint_every=2, crop_fraction=1.0)
        train_arrays(images, targets, SMALL, cfg, checkpoint_dir=str(tmp_path))
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["epoch_0002.bin", "epoch_0004.bin"]
        loaded = load_params(tmp_path / "epoch_0002.bin")
        assert set(loaded) == set(init_params(SMALL))

    def test_zero_epochs(self):
        images, targets = one_sample()
        state = train_arrays(images, targets, SMALL, TrainConfig(epochs=0))
        assert state.train_losses == []
        assert state.epoch == 0
        for k, p in init_params(SMALL, seed=0).items():
            assert np.array_equal(state.params[k].data, p.data)

    def test_missing_fix_features_rejected(self):
        images, targets = one_sample()
        cfg_model = ModelConfig(input_size=16, stage_widths=(4, 6), feature_dim=8,
                                lstm_hidden=5, use_fix_features=True)
        with pytest.raises(ConfigError, match="fix features"):
            train_arrays(images, targets, cfg_model, TrainConfig(epochs=1))


class TestEvaluate:
    def zero_head_params(self):
        params = init_params(SMALL, seed=0)
        params["head.weight"] = Tensor(np.zeros_like(params["head.weight"].data),
                                       requires_grad=True)
        params["head.bias"] = Tensor(np.zeros_like(params["head.bias"].data),
                                     requires_grad=True)
        return params

    def test_perfect_predictor_zero_loss(self):
        rng = np.random.default_rng(0)
        images = [rng.uniform(size=(16, 16)) for _ in range(4)]
        params = self.zero_head_params()
        loss, err = evaluate_arrays(images, np.zeros((4, 2)), params, SMALL,
                                    TrainConfig(crop_fraction=1.0))
        assert loss == 0.0
        assert err == 0.0

    def test_monotone_in_residual(self):
        rng = np.random.default_rng(0)
        images = [rng.uniform(size=(16, 16)) for _ in range(4)]
        params = self.zero_head_params()
        cfg = TrainConfig(crop_fraction=1.0)
        resid = rng.normal(scale=8.0, size=(4, 2))
        loss1, _ = evaluate_arrays(images, resid, params, SMALL, cfg)
        loss2, _ = evaluate_arrays(images, 2.0 * resid, params, SMALL, cfg)
        assert loss2 >= loss1
        assert loss1 > 0.0

    def test_matches_train_loop_validation(self):
        rng = np.random.default_rng(1)
        images = [rng.uniform(size=(18, 18)) for _ in range(6)]
        targets = rng.normal(scale=3.0, size=(6, 2))
        cfg = TrainConfig(epochs=3, seed=5)
        state = train_arrays(images[:4], targets[:4], SMALL, cfg,
                             val_images=images[4:], val_targets=targets[4:])
        loss, err = evaluate_arrays(images[4:], targets[4:], state.params, SMALL, cfg)
        assert loss == state.val_losses[-1]
        assert err == state.val_meter_errors[-1]

    def test_empty_split_rejected(self):
        with pytest.raises(InsufficientDataError):
            evaluate_arrays([], np.zeros((0, 2)), init_params(SMALL), SMALL, TrainConfig())


class TestSampleLevel:
    def build_world(self, tmp_path, n=8):
        base = GeoPoint(37.4, -122.1)
        store = ImageStore(tmp_path)
        rng = np.random.default_rng(6)
        samples = []
        for k in range(n):
            truth = apply_delta(base, DeltaLocation(2.0 * k, 1.0 * k))
            raw = apply_delta(truth, DeltaLocation(rng.normal(scale=4.0),
                                                   rng.normal(scale=4.0)))
            ref = f"img_{k:03d}"
            store.put(ref, rng.uniform(size=(18, 18)))
            samples.append(Sample(image_ref=ref, timestamp=float(k),
                                  raw_fix=raw, truth=truth))
        return store, make_targets(samples, "gps-relative")

    def test_train_and_evaluate_loss(self, tmp_path):
        store, samples = self.build_world(tmp_path)
        cfg_model = ModelConfig(input_size=16, stage_widths=(4, 6), feature_dim=8,
                                lstm_hidden=5, use_fix_features=True)
        cfg = TrainConfig(epochs=2, seed=0)
        state = train(samples[:6], samples[6:], store, cfg_model, cfg)
        assert state.fix_ref is not None
        assert len(state.train_losses) == 2
        loss = evaluate_loss(samples[6:], store, state.params, cfg_model, cfg,
                             fix_ref=state.fix_ref)
        assert loss == state.val_losses[-1]

    def test_fix_reference_is_raw_mean(self, tmp_path):
        store, samples = self.build_world(tmp_path)
        ref = fix_reference(samples)
        dists = [ground_distance(ref, s.raw_fix) for s in samples]
        # the mean point sits inside the cloud, nowhere near its hull boundary
        assert max(dists) < 30.0
        feats = fix_features(samples, ref, 100.0)
        assert feats.shape == (len(samples), 2)
        assert np.abs(feats).max() < 1.0
        assert abs(feats[:, 0].mean()) < 1e-9
        assert abs(feats[:, 1].mean()) < 1e-9

    def test_missing_target_rejected(self, tmp_path):
        store = ImageStore(tmp_path)
        store.put("a", np.zeros((16, 16)))
        bare = [Sample(image_ref="a", timestamp=0.0)]
        with pytest.raises(IncompleteSampleError):
            train(bare, [], store, SMALL, TrainConfig(epochs=1))

    def test_missing_raw_fix_rejected_for_fix_features(self):
        bare = [Sample(image_ref="a", timestamp=0.0)]
        with pytest.raises(IncompleteSampleError):
            fix_reference(bare)


class TestTrainLog:
    def test_round_trip_and_determinism(self, tmp_path):
        images, targets = one_sample()
        cfg = TrainConfig(epochs=3, crop_fraction=1.0)
        state = train_arrays(images, targets, SMALL, cfg,
                             val_images=images, val_targets=targets)
        p1, p2 = tmp_path / "log1.csv", tmp_path / "log2.csv"
        write_train_log(p1, state)
        write_train_log(p2, state)
        assert p1.read_bytes() == p2.read_bytes()
        lines = p1.read_text().strip().split("\n")
        assert lines[0] == "epoch,train_loss,val_loss,val_meter_error"
        assert len(lines) == 4
        first = lines[1].split(",")
        assert int(first[0]) == 1
        assert float(first[1]) == state.train_losses[0]
        assert float(first[3]) == state.val_meter_errors[0]
