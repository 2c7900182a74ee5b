"""The delta-location regressor: residual CNN backbone + stacked LSTM head.

An input image (optionally joined by a 2-vector of auxiliary fix features)
maps to a 2-vector delta in scaled-meter units. The backbone ends in global
average pooling, so the same weights serve any input size the convolutions
accept; the pooled feature passes through an FC layer to an n-dimensional
vector which is fed, unreshaped, as a single-step sequence through the LSTM
stack. An affine head reads the final hidden state out to 2 numbers.

For ablation, sequence_split > 1 chops the feature vector into that many
equal time steps before the LSTM; the default of 1 keeps the single-step
behavior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, add, concat, conv2d, maxpool2d, mean, relu, scale, tslice
from .errors import ConfigError, DomainError, ShapeError
from .geodesy import DeltaLocation, GeoPoint, apply_delta
from .layers import (
    LayerParams,
    fully_connected,
    init_conv,
    init_fc,
    init_lstm,
    lstm_cell,
    residual_block,
    zero_state,
)

# Parameters are one flat path->Tensor map covering backbone, lstm and head.
ModelParams = LayerParams


@dataclass(frozen=True)
class ModelConfig:
    """Architecture settings.

    input_size: square image side in pixels (32 by default; 224 works too).
    stage_widths: channel width of each residual stage; stages after the
        first downsample by 2.
    feature_dim: width n of the image feature vector out of the backbone.
    lstm_layers / lstm_hidden: depth and width of the recurrent head.
    use_fix_features: when true, forward() requires a (B, 2) fix_feat input
        that is concatenated to the feature vector before the LSTM.
    fix_shortcut_gain: weight of a fixed, parameter-free shortcut that
        subtracts gain * fix_feat from the head output. With the gain set to
        fix_feature_scale / target_scale the subtraction converts an absolute
        position estimate into a delta against the fix exactly, so the
        trainable part of the network only has to regress where the image is,
        not the difference of two large coordinates. A nonzero gain replaces
        the input-side fusion: the fix is not concatenated into the LSTM
        (raw fixes correlate with the target through their own noise, which
        makes a concatenated fix a tempting but noisy shortcut feature).
        0 disables the shortcut and concatenates instead.
    sequence_split: feed the feature vector as this many time steps instead
        of one (ablation switch; 1 = the default single-step sequence).
    """

    input_size: int = 32
    in_channels: int = 1
    stage_widths: tuple[int, ...] = (8, 16, 32)
    feature_dim: int = 64
    lstm_layers: int = 2
    lstm_hidden: int = 32
    use_fix_features: bool = False
    fix_shortcut_gain: float = 0.0
    sequence_split: int = 1

    def __post_init__(self):
        if self.input_size < 8:
            raise ConfigError(f"input_size must be at least 8 pixels, got {self.input_size}")
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be positive, got {self.in_channels}")
        if not self.stage_widths or any(w < 1 for w in self.stage_widths):
            raise ConfigError(f"stage_widths must be positive, got {self.stage_widths}")
        if self.feature_dim < 4:
            raise ConfigError(f"feature_dim must be at least 4, got {self.feature_dim}")
        if self.lstm_layers < 1:
            raise ConfigError(f"lstm_layers must be at least 1, got {self.lstm_layers}")
        if self.lstm_hidden < 1:
            raise ConfigError(f"lstm_hidden must be positive, got {self.lstm_hidden}")
        if self.sequence_split < 1:
            raise ConfigError(f"sequence_split must be positive, got {self.sequence_split}")
        if not np.isfinite(self.fix_shortcut_gain):
            raise ConfigError(f"fix_shortcut_gain must be finite, got {self.fix_shortcut_gain}")
        if self.fix_shortcut_gain and not self.use_fix_features:
            raise ConfigError("fix_shortcut_gain requires use_fix_features")
        if self.lstm_input_dim() % self.sequence_split:
            raise ConfigError(
                f"sequence_split {self.sequence_split} does not divide the LSTM input "
                f"width {self.lstm_input_dim()}"
            )
        object.__setattr__(self, "stage_widths", tuple(int(w) for w in self.stage_widths))

    def lstm_input_dim(self) -> int:
        concat_fix = self.use_fix_features and not self.fix_shortcut_gain
        return self.feature_dim + (2 if concat_fix else 0)

    def pool_after_stem(self) -> bool:
        # Large inputs get one 2x2 max pool after the stem to tame compute.
        return self.input_size >= 64


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Expected shape of every parameter, keyed by path."""
    shapes: dict[str, tuple[int, ...]] = {}
    widths = config.stage_widths
    shapes["backbone.stem.weight"] = (widths[0], config.in_channels, 3, 3)
    shapes["backbone.stem.bias"] = (widths[0],)
    prev = widths[0]
    for k, w in enumerate(widths):
        stride = 1 if k == 0 else 2
        p = f"backbone.stage{k}."
        shapes[p + "conv1.weight"] = (w, prev, 3, 3)
        shapes[p + "conv1.bias"] = (w,)
        shapes[p + "conv2.weight"] = (w, w, 3, 3)
        shapes[p + "conv2.bias"] = (w,)
        if stride != 1 or prev != w:
            shapes[p + "proj.weight"] = (w, prev, 1, 1)
            shapes[p + "proj.bias"] = (w,)
        prev = w
    shapes["backbone.fc.weight"] = (prev, config.feature_dim)
    shapes["backbone.fc.bias"] = (config.feature_dim,)
    step_dim = config.lstm_input_dim() // config.sequence_split
    for i in range(config.lstm_layers):
        d_in = step_dim if i == 0 else config.lstm_hidden
        p = f"lstm{i}."
        shapes[p + "w_x"] = (d_in, 4 * config.lstm_hidden)
        shapes[p + "w_h"] = (config.lstm_hidden, 4 * config.lstm_hidden)
        shapes[p + "bias"] = (4 * config.lstm_hidden,)
    shapes["head.weight"] = (config.lstm_hidden, 2)
    shapes["head.bias"] = (2,)
    return shapes


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Fresh randomly initialized parameters; deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    params: ModelParams = {}
    widths = config.stage_widths
    init_conv(rng, params, "backbone.stem.", widths[0], config.in_channels, 3)
    prev = widths[0]
    for k, w in enumerate(widths):
        stride = 1 if k == 0 else 2
        p = f"backbone.stage{k}."
        init_conv(rng, params, p + "conv1.", w, prev, 3)
        init_conv(rng, params, p + "conv2.", w, w, 3)
        if stride != 1 or prev != w:
            init_conv(rng, params, p + "proj.", w, prev, 1)
        prev = w
    init_fc(rng, params, "backbone.fc.", prev, config.feature_dim)
    step_dim = config.lstm_input_dim() // config.sequence_split
    for i in range(config.lstm_layers):
        d_in = step_dim if i == 0 else config.lstm_hidden
        init_lstm(rng, params, f"lstm{i}.", d_in, config.lstm_hidden)
    init_fc(rng, params, "head.", config.lstm_hidden, 2)
    return params


def validate_params(params: ModelParams, config: ModelConfig) -> None:
    expected = parameter_shapes(config)
    missing = sorted(set(expected) - set(params))
    extra = sorted(set(params) - set(expected))
    if missing or extra:
        raise ShapeError(
            f"parameter set does not match the configuration: missing {missing}, "
            f"unexpected {extra}"
        )
    for name, shape in expected.items():
        have = tuple(params[name].shape)
        if have != shape:
            raise ShapeError(f"parameter {name} has shape {have}, config wants {shape}")


def forward(image, fix_feat, params: ModelParams, config: ModelConfig) -> Tensor:
    """Run the network on a batch, returning a (B, 2) scaled-meter delta."""
    x = image if isinstance(image, Tensor) else Tensor(image)
    if x.ndim != 4:
        raise ShapeError(f"image batch must be (B, C, S, S), got {x.shape}")
    b, c, h, w = x.shape
    if c != config.in_channels or h != config.input_size or w != config.input_size:
        raise ShapeError(
            f"image batch {x.shape} does not match config "
            f"(C={config.in_channels}, S={config.input_size})"
        )
    lo, hi = float(x.data.min()), float(x.data.max())
    if lo < -1e-9 or hi > 1.0 + 1e-9:
        raise DomainError(f"image values must lie in [0, 1], got range [{lo:.4g}, {hi:.4g}]")

    if config.use_fix_features:
        if fix_feat is None:
            raise ShapeError("config.use_fix_features is on but fix_feat is missing")
        ff = fix_feat if isinstance(fix_feat, Tensor) else Tensor(fix_feat)
        if ff.shape != (b, 2):
            raise ShapeError(f"fix_feat must be ({b}, 2), got {ff.shape}")

    x = relu(conv2d(x, params["backbone.stem.weight"], params["backbone.stem.bias"], padding=1))
    if config.pool_after_stem():
        x = maxpool2d(x, 2, 2)
    for k in range(len(config.stage_widths)):
        stride = 1 if k == 0 else 2
        x = residual_block(x, params, f"backbone.stage{k}.", stride=stride)
    pooled = mean(x, axis=(2, 3))
    feat = fully_connected(pooled, params["backbone.fc.weight"], params["backbone.fc.bias"])
    if config.use_fix_features and not config.fix_shortcut_gain:
        feat = concat([feat, ff], axis=1)

    if config.sequence_split == 1:
        steps = [feat]
    else:
        step = feat.shape[1] // config.sequence_split
        steps = [
            tslice(feat, (slice(None), slice(i * step, (i + 1) * step)))
            for i in range(config.sequence_split)
        ]

    seq = steps
    for layer in range(config.lstm_layers):
        state = zero_state(b, config.lstm_hidden)
        outputs = []
        for item in seq:
            h_t, state = lstm_cell(item, state, params, f"lstm{layer}.")
            outputs.append(h_t)
        seq = outputs
    out = fully_connected(seq[-1], params["head.weight"], params["head.bias"])
    if config.use_fix_features and config.fix_shortcut_gain:
        out = add(out, scale(ff, -config.fix_shortcut_gain))
    return out


def predict_absolute(
    image,
    anchor: GeoPoint,
    params: ModelParams,
    config: ModelConfig,
    target_scale: float,
    fix_feat=None,
    zone: int | None = None,
) -> GeoPoint:
    """Predict the absolute position for one image given its anchor point.

    The network output is a delta in scaled-meter units; multiplying by
    target_scale recovers meters, and the delta is applied to the anchor
    (the raw fix, or the ground control point in GCP mode).
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, None]
    elif arr.ndim == 3:
        arr = arr[None]
    else:
        raise ShapeError(f"predict_absolute takes one image, got shape {arr.shape}")
    ff = None
    if fix_feat is not None:
        ff = np.asarray(fix_feat, dtype=np.float64).reshape(1, 2)
    out = forward(arr, ff, params, config).data[0]
    delta = DeltaLocation(float(out[0]) * target_scale, float(out[1]) * target_scale)
    return apply_delta(anchor, delta, zone)


def predict_deltas(images, fix_feats, params: ModelParams, config: ModelConfig,
                   target_scale: float, batch_size: int = 64) -> np.ndarray:
    """Batched inference helper: (N, C, S, S) images -> (N, 2) meter deltas."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim != 4:
        raise ShapeError(f"predict_deltas needs (N, C, S, S) images, got {arr.shape}")
    outs = []
    for start in range(0, arr.shape[0], batch_size):
        stop = start + batch_size
        ff = None if fix_feats is None else fix_feats[start:stop]
        outs.append(forward(arr[start:stop], ff, params, config).data)
    if not outs:
        return np.zeros((0, 2))
    return np.concatenate(outs, axis=0) * target_scale
