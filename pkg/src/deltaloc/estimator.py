"""Estimator facade over the training loop, following sklearn conventions:
constructor stores hyperparameters verbatim, fit() learns state into
underscore-suffixed attributes, and get_params/set_params/clone all work.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .errors import AlignmentError, ConfigError, InsufficientDataError, ShapeError
from .model import ModelConfig, forward
from .training import TrainConfig, center_crop, train_arrays


def check_image_stack(X) -> list:
    """Accept (N, H, W) or (N, C, H, W) arrays, or a list of per-image arrays,
    and return a list of float64 images with pixel values in [0, 1]."""
    if isinstance(X, np.ndarray):
        if X.ndim not in (3, 4):
            raise ShapeError(f"image stack must be (N, H, W) or (N, C, H, W), got {X.shape}")
        images = [np.asarray(x, dtype=np.float64) for x in X]
    else:
        images = [np.asarray(x, dtype=np.float64) for x in X]
        for i, img in enumerate(images):
            if img.ndim not in (2, 3):
                raise ShapeError(f"image {i} must be (H, W) or (C, H, W), got {img.shape}")
    if len(images) == 0:
        raise InsufficientDataError("no images supplied")
    for i, img in enumerate(images):
        if not np.all(np.isfinite(img)):
            raise ShapeError(f"image {i} contains non-finite pixels")
        if img.min() < -1e-9 or img.max() > 1.0 + 1e-9:
            raise ShapeError(f"image {i} has pixels outside [0, 1]")
    return images


def check_delta_targets(y, n: int) -> np.ndarray:
    """(N, 2) finite meter offsets aligned with the image stack."""
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ShapeError(f"targets must be (N, 2) meter offsets, got {arr.shape}")
    if arr.shape[0] != n:
        raise AlignmentError(f"{n} images but {arr.shape[0]} targets")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("targets contain non-finite values")
    return arr


def check_fix_offsets(fix, n: int) -> np.ndarray:
    arr = np.asarray(fix, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ShapeError(f"fix offsets must be (N, 2) meters, got {arr.shape}")
    if arr.shape[0] != n:
        raise AlignmentError(f"{n} images but {arr.shape[0]} fix offsets")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("fix offsets contain non-finite values")
    return arr


class DeltaRegressor(BaseEstimator, RegressorMixin):
    """Predicts 2D corrective offsets (meters east/north) from images.

    X is an image stack in [0, 1]; y is an (N, 2) array of meter offsets.
    When use_fix_features is on, fit and predict additionally take fix:
    (N, 2) raw-fix offsets in meters from any fixed reference point; they are
    scaled by fix_feature_scale internally.

    The last validation_fraction of the samples (a contiguous tail, matching
    how trajectories are split) is held out to pick the best checkpoint.
    """

    def __init__(self, input_size=32, in_channels=1, stage_widths=(8, 16, 32),
                 feature_dim=64, lstm_layers=2, lstm_hidden=32,
                 use_fix_features=False, sequence_split=1,
                 learning_rate=0.045, batch_size=8, epochs=30,
                 crop_fraction=0.875, target_scale=10.0, fix_feature_scale=100.0,
                 validation_fraction=0.15, seed=0):
        self.input_size = input_size
        self.in_channels = in_channels
        self.stage_widths = stage_widths
        self.feature_dim = feature_dim
        self.lstm_layers = lstm_layers
        self.lstm_hidden = lstm_hidden
        self.use_fix_features = use_fix_features
        self.sequence_split = sequence_split
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.crop_fraction = crop_fraction
        self.target_scale = target_scale
        self.fix_feature_scale = fix_feature_scale
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _configs(self) -> tuple[ModelConfig, TrainConfig]:
        gain = 0.0
        if self.use_fix_features:
            gain = float(self.fix_feature_scale) / float(self.target_scale)
        model = ModelConfig(
            input_size=self.input_size, in_channels=self.in_channels,
            stage_widths=tuple(self.stage_widths), feature_dim=self.feature_dim,
            lstm_layers=self.lstm_layers, lstm_hidden=self.lstm_hidden,
            use_fix_features=self.use_fix_features, fix_shortcut_gain=gain,
            sequence_split=self.sequence_split)
        train = TrainConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            epochs=self.epochs, crop_fraction=self.crop_fraction,
            target_scale=self.target_scale, fix_feature_scale=self.fix_feature_scale,
            seed=self.seed)
        return model, train

    def fit(self, X, y, fix=None):
        model_config, train_config = self._configs()
        images = check_image_stack(X)
        n = len(images)
        targets = check_delta_targets(y, n)
        feats = None
        if model_config.use_fix_features:
            if fix is None:
                raise ConfigError("use_fix_features=True: fit() needs fix offsets")
            feats = check_fix_offsets(fix, n) / train_config.fix_feature_scale
        elif fix is not None:
            raise ConfigError("fix offsets given but use_fix_features is False")

        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError(
                f"validation_fraction must be in [0, 1), got {self.validation_fraction}")
        k_val = int(round(n * self.validation_fraction))
        if n - k_val < 1:
            raise InsufficientDataError(
                f"validation tail of {k_val} leaves no training samples out of {n}")
        cut = n - k_val
        state = train_arrays(
            images[:cut], targets[:cut], model_config, train_config,
            fix_feats=None if feats is None else feats[:cut],
            val_images=images[cut:] if k_val else None,
            val_targets=targets[cut:] if k_val else None,
            val_fix_feats=feats[cut:] if (feats is not None and k_val) else None)

        self.model_config_ = model_config
        self.train_config_ = train_config
        self.state_ = state
        self.params_ = state.best_params
        self.n_images_in_ = n
        return self

    def predict(self, X, fix=None, batch_size=64):
        check_is_fitted(self, "params_")
        images = check_image_stack(X)
        n = len(images)
        feats = None
        if self.model_config_.use_fix_features:
            if fix is None:
                raise ConfigError("use_fix_features=True: predict() needs fix offsets")
            feats = check_fix_offsets(fix, n) / self.train_config_.fix_feature_scale
        elif fix is not None:
            raise ConfigError("fix offsets given but use_fix_features is False")
        out = np.zeros((n, 2))
        for start in range(0, n, batch_size):
            idxs = range(start, min(start + batch_size, n))
            crops = []
            for i in idxs:
                img = center_crop(images[i], self.train_config_.crop_fraction,
                                  self.model_config_.input_size)
                crops.append(img[None] if img.ndim == 2 else img)
            x = np.stack(crops, axis=0)
            ff = None if feats is None else feats[start:start + batch_size]
            pred = forward(x, ff, self.params_, self.model_config_).data
            out[start:start + len(crops)] = pred * self.train_config_.target_scale
        return out
