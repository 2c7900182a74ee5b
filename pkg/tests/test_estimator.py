import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from deltaloc.errors import (
    AlignmentError,
    ConfigError,
    InsufficientDataError,
    ShapeError,
)
from deltaloc.estimator import (
    DeltaRegressor,
    check_delta_targets,
    check_fix_offsets,
    check_image_stack,
)

SMALL = dict(input_size=16, stage_widths=(4, 6), feature_dim=8, lstm_hidden=5,
             lstm_layers=1, epochs=3)


def toy_data(n=10, side=18, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, side, side))
    y = rng.normal(scale=3.0, size=(n, 2))
    return X, y


class TestValidationHelpers:
    def test_image_stack_shapes(self):
        X, _ = toy_data(4)
        assert len(check_image_stack(X)) == 4
        assert len(check_image_stack(list(X))) == 4
        assert len(check_image_stack(X[:, None])) == 4
        with pytest.raises(ShapeError):
            check_image_stack(np.zeros((4, 4)))
        with pytest.raises(InsufficientDataError):
            check_image_stack(np.zeros((0, 8, 8)))
        with pytest.raises(ShapeError):
            check_image_stack(np.full((2, 8, 8), 1.5))
        with pytest.raises(ShapeError):
            check_image_stack(np.full((2, 8, 8), np.nan))

    def test_targets(self):
        y = check_delta_targets([[1.0, 2.0], [3.0, 4.0]], 2)
        assert y.shape == (2, 2)
        with pytest.raises(ShapeError):
            check_delta_targets(np.zeros((2, 3)), 2)
        with pytest.raises(AlignmentError):
            check_delta_targets(np.zeros((3, 2)), 2)
        with pytest.raises(ShapeError):
            check_delta_targets(np.array([[np.inf, 0.0]]), 1)

    def test_fix_offsets(self):
        assert check_fix_offsets(np.zeros((3, 2)), 3).shape == (3, 2)
        with pytest.raises(AlignmentError):
            check_fix_offsets(np.zeros((2, 2)), 3)


class TestSklearnProtocol:
    def test_get_params_round_trip(self):
        est = DeltaRegressor(**SMALL)
        params = est.get_params()
        assert params["input_size"] == 16
        assert params["learning_rate"] == 0.045
        rebuilt = DeltaRegressor(**params)
        assert rebuilt.get_params() == params

    def test_set_params(self):
        est = DeltaRegressor()
        est.set_params(epochs=5, seed=3)
        assert est.epochs == 5
        assert est.seed == 3

    def test_clone_preserves_params(self):
        est = DeltaRegressor(**SMALL, seed=7)
        dup = clone(est)
        assert dup.get_params() == est.get_params()

    def test_fit_returns_self_and_sets_state(self):
        X, y = toy_data()
        est = DeltaRegressor(**SMALL)
        assert est.fit(X, y) is est
        assert est.params_ is not None
        assert len(est.state_.train_losses) == SMALL["epochs"]
        assert np.isfinite(est.state_.train_losses).all()

    def test_predict_before_fit_raises(self):
        X, _ = toy_data(2)
        with pytest.raises(NotFittedError):
            DeltaRegressor(**SMALL).predict(X)

    def test_bad_hyperparameters_fail_at_fit(self):
        X, y = toy_data(4)
        with pytest.raises(ConfigError):
            DeltaRegressor(**{**SMALL, "epochs": 3, "learning_rate": -1.0}).fit(X, y)
        with pytest.raises(ConfigError):
            DeltaRegressor(**{**SMALL, "validation_fraction": 1.0}).fit(X, y)


class TestFitPredict:
    def test_predict_shape_and_determinism(self):
        X, y = toy_data()
        a = DeltaRegressor(**SMALL, seed=1).fit(X, y)
        b = DeltaRegressor(**SMALL, seed=1).fit(X, y)
        pa, pb = a.predict(X), b.predict(X)
        assert pa.shape == (10, 2)
        assert np.array_equal(pa, pb)

    def test_seed_matters(self):
        X, y = toy_data()
        pa = DeltaRegressor(**SMALL, seed=1).fit(X, y).predict(X)
        pb = DeltaRegressor(**SMALL, seed=2).fit(X, y).predict(X)
        assert not np.array_equal(pa, pb)

    def test_validation_tail_split(self):
        X, y = toy_data(10)
        est = DeltaRegressor(**SMALL, validation_fraction=0.3).fit(X, y)
        assert not np.isnan(est.state_.val_meter_errors).any()
        est0 = DeltaRegressor(**SMALL, validation_fraction=0.0).fit(X, y)
        assert np.isnan(est0.state_.val_meter_errors).all()

    def test_validation_fraction_too_large(self):
        X, y = toy_data(4)
        est = DeltaRegressor(**SMALL, validation_fraction=0.9)
        with pytest.raises(InsufficientDataError):
            est.fit(X[:1], y[:1])

    def test_alignment_errors(self):
        X, y = toy_data(6)
        with pytest.raises(AlignmentError):
            DeltaRegressor(**SMALL).fit(X, y[:4])

    def test_fix_features_required_and_consumed(self):
        X, y = toy_data(8)
        rng = np.random.default_rng(3)
        fix = rng.normal(scale=20.0, size=(8, 2))
        est = DeltaRegressor(**SMALL, use_fix_features=True)
        with pytest.raises(ConfigError):
            est.fit(X, y)
        est.fit(X, y, fix=fix)
        with pytest.raises(ConfigError):
            est.predict(X)
        preds = est.predict(X, fix=fix)
        assert preds.shape == (8, 2)
        other = est.predict(X, fix=fix + 50.0)
        assert not np.array_equal(preds, other)

    def test_fix_rejected_when_disabled(self):
        X, y = toy_data(4)
        est = DeltaRegressor(**SMALL)
        with pytest.raises(ConfigError):
            est.fit(X, y, fix=np.zeros((4, 2)))

    def test_channel_stack_accepted(self):
        X, y = toy_data(5)
        est = DeltaRegressor(**SMALL).fit(X[:, None], y)
        assert est.predict(X[:, None]).shape == (5, 2)
