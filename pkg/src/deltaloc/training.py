"""SGD training loop: augmentation, shuffling, small batches, smooth-L1 objective.

All randomness is derived from (seed, epoch, sample index) SeedSequence streams,
so shuffling and per-sample crops are reproducible bit-for-bit regardless of
batch composition or worker parallelism.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import GradientTape, Tensor, backward, smooth_l1_loss
from .dataset import ImageStore, Sample
from .errors import (
    ConfigError,
    DivergenceError,
    IncompleteSampleError,
    InsufficientDataError,
    SizeError,
)
from .geodesy import GeoPoint, delta_between, geo_to_plane, plane_to_geo, zone_for_longitude
from .layers import save_params
from .model import ModelConfig, ModelParams, forward, init_params, validate_params


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings. Learning rate 0.045 and batch size 8 are the defaults."""

    learning_rate: float = 0.045
    batch_size: int = 8
    epochs: int = 30
    crop_fraction: float = 0.875
    target_scale: float = 10.0
    fix_feature_scale: float = 100.0
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if not np.isfinite(self.learning_rate) or self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not 0.0 < self.crop_fraction <= 1.0:
            raise ConfigError(f"crop_fraction must be in (0, 1], got {self.crop_fraction}")
        if not np.isfinite(self.target_scale) or self.target_scale <= 0.0:
            raise ConfigError(f"target_scale must be positive, got {self.target_scale}")
        if not np.isfinite(self.fix_feature_scale) or self.fix_feature_scale <= 0.0:
            raise ConfigError(f"fix_feature_scale must be positive, got {self.fix_feature_scale}")
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")


@dataclass
class TrainState:
    """Everything a run produced: parameters, histories, and the best checkpoint."""

    params: ModelParams
    epoch: int = 0
    rng_state: dict | None = None
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    val_meter_errors: list = field(default_factory=list)
    best_params: ModelParams | None = None
    best_epoch: int = 0
    best_val_meter_error: float = float("nan")
    fix_ref: GeoPoint | None = None


def resize_bilinear(image, out_h: int, out_w: int) -> np.ndarray:
    """Resize the last two axes to (out_h, out_w) with half-pixel-center sampling."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim < 2:
        raise SizeError(f"resize needs at least 2 axes, got shape {arr.shape}")
    h, w = arr.shape[-2:]
    if min(h, w) < 1 or min(out_h, out_w) < 1:
        raise SizeError(f"cannot resize {h}x{w} to {out_h}x{out_w}")
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    yc = y0[:, None], y1[:, None]
    xc = x0[None, :], x1[None, :]
    return (arr[..., yc[0], xc[0]] * (1 - wy) * (1 - wx)
            + arr[..., yc[0], xc[1]] * (1 - wy) * wx
            + arr[..., yc[1], xc[0]] * wy * (1 - wx)
            + arr[..., yc[1], xc[1]] * wy * wx)


def _crop_sides(shape, crop_fraction: float) -> tuple[int, int]:
    h, w = shape[-2:]
    ch = int(round(h * crop_fraction))
    cw = int(round(w * crop_fraction))
    if ch < 1 or cw < 1 or ch > h or cw > w:
        raise SizeError(
            f"crop_fraction {crop_fraction} of a {h}x{w} image gives an invalid "
            f"{ch}x{cw} crop")
    return ch, cw


def augment(image, rng: np.random.Generator, crop_fraction: float, out_size: int) -> np.ndarray:
    """Random crop of crop_fraction side ratio, then bilinear resize to out_size.

    crop_fraction = 1 skips the random offset entirely, so the result is
    deterministic (a plain resize).
    """
    arr = np.asarray(image, dtype=np.float64)
    ch, cw = _crop_sides(arr.shape, crop_fraction)
    h, w = arr.shape[-2:]
    if ch == h and cw == w:
        oy, ox = 0, 0
    else:
        oy = int(rng.integers(0, h - ch + 1))
        ox = int(rng.integers(0, w - cw + 1))
    crop = arr[..., oy:oy + ch, ox:ox + cw]
    return resize_bilinear(crop, out_size, out_size)


def center_crop(image, crop_fraction: float, out_size: int) -> np.ndarray:
    """Deterministic center crop + resize used for validation and inference."""
    arr = np.asarray(image, dtype=np.float64)
    ch, cw = _crop_sides(arr.shape, crop_fraction)
    h, w = arr.shape[-2:]
    oy = (h - ch) // 2
    ox = (w - cw) // 2
    crop = arr[..., oy:oy + ch, ox:ox + cw]
    return resize_bilinear(crop, out_size, out_size)


def sgd_step(params: ModelParams, grads: dict, learning_rate: float) -> ModelParams:
    """p <- p - lr * g for every parameter. Returns a fresh parameter map."""
    if not np.isfinite(learning_rate) or learning_rate <= 0.0:
        raise ConfigError(f"learning_rate must be positive, got {learning_rate}")
    missing = sorted(set(params) - set(grads))
    extra = sorted(set(grads) - set(params))
    if missing or extra:
        raise KeyError(
            f"parameter/gradient key mismatch: missing gradients for {missing}, "
            f"unexpected gradients for {extra}")
    out = {}
    for path, p in params.items():
        g = grads[path]
        if g is None:
            raise KeyError(f"no gradient recorded for parameter '{path}'")
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise KeyError(
                f"gradient for '{path}' has shape {g.shape}, parameter has {p.data.shape}")
        out[path] = Tensor(p.data - learning_rate * g, requires_grad=True)
    return out


def _smooth_l1_np(residual: np.ndarray) -> float:
    a = np.abs(residual)
    return float(np.mean(np.where(a < 1.0, 0.5 * residual * residual, a - 0.5)))


def _stack_batch(images: list, in_channels: int) -> np.ndarray:
    batch = []
    for img in images:
        if img.ndim == 2:
            img = img[None]
        batch.append(img)
    arr = np.stack(batch, axis=0)
    if arr.shape[1] != in_channels:
        raise SizeError(
            f"images carry {arr.shape[1]} channel(s), model expects {in_channels}")
    return arr


def _copy_params(params: ModelParams) -> ModelParams:
    return {k: Tensor(p.data.copy(), requires_grad=True) for k, p in params.items()}


def evaluate_arrays(images: list, targets: np.ndarray, params: ModelParams,
                    model_config: ModelConfig, train_config: TrainConfig,
                    fix_feats: np.ndarray | None = None,
                    batch_size: int = 64) -> tuple[float, float]:
    """Deterministic pass over a split: (mean smooth-L1 loss, mean meter error).

    Uses the center crop, never the random one. This is the exact code path the
    train loop reports validation numbers from.
    """
    n = len(images)
    if n == 0:
        raise InsufficientDataError("cannot evaluate an empty split")
    targets = np.asarray(targets, dtype=np.float64).reshape(n, 2)
    scaled = targets / train_config.target_scale
    loss_sum = 0.0
    err_sum = 0.0
    for start in range(0, n, batch_size):
        idxs = range(start, min(start + batch_size, n))
        crops = [center_crop(images[i], train_config.crop_fraction, model_config.input_size)
                 for i in idxs]
        x = _stack_batch(crops, model_config.in_channels)
        ff = None if fix_feats is None else fix_feats[start:start + batch_size]
        pred = forward(x, ff, params, model_config).data
        res = pred - scaled[start:start + batch_size]
        loss_sum += _smooth_l1_np(res) * len(crops)
        err_sum += float(np.sum(np.hypot(res[:, 0], res[:, 1]))) * train_config.target_scale
    return loss_sum / n, err_sum / n


def train_arrays(images: list, targets: np.ndarray, model_config: ModelConfig,
                 train_config: TrainConfig, *, fix_feats: np.ndarray | None = None,
                 val_images: list | None = None, val_targets: np.ndarray | None = None,
                 val_fix_feats: np.ndarray | None = None,
                 checkpoint_dir=None, progress=None) -> TrainState:
    """Core loop over raw arrays. images is a list of (H, W) or (C, H, W) arrays
    at source resolution; targets is (N, 2) meters. Validation arrays are
    optional; when present, the best checkpoint is chosen by validation meter
    error, otherwise the final parameters are kept.
    """
    n = len(images)
    if n == 0:
        raise InsufficientDataError("training split is empty")
    targets = np.asarray(targets, dtype=np.float64).reshape(n, 2)
    scaled = targets / train_config.target_scale
    if model_config.use_fix_features and fix_feats is None:
        raise ConfigError("model consumes fix features but none were supplied")
    if fix_feats is not None:
        fix_feats = np.asarray(fix_feats, dtype=np.float64).reshape(n, 2)
    has_val = val_images is not None and len(val_images) > 0

    params = init_params(model_config, seed=train_config.seed)
    validate_params(params, model_config)
    state = TrainState(params=params)
    seed = train_config.seed
    best_err = np.inf

    for epoch in range(train_config.epochs):
        perm_rng = np.random.default_rng(np.random.SeedSequence((seed, epoch)))
        perm = perm_rng.permutation(n)
        loss_sum = 0.0
        for batch_no, start in enumerate(range(0, n, train_config.batch_size)):
            idxs = perm[start:start + train_config.batch_size]
            crops = []
            for i in idxs:
                crop_rng = np.random.default_rng(np.random.SeedSequence((seed, epoch, int(i))))
                crops.append(augment(images[int(i)], crop_rng,
                                     train_config.crop_fraction, model_config.input_size))
            x = _stack_batch(crops, model_config.in_channels)
            ff = None if fix_feats is None else fix_feats[idxs]
            tgt = Tensor(scaled[idxs])
            with GradientTape() as tape:
                pred = forward(x, ff, params, model_config)
                loss = smooth_l1_loss(pred, tgt)
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise DivergenceError(epoch=epoch, batch=batch_no, loss_value=loss_value)
            backward(tape, loss)
            if epoch == 0 and batch_no == 0:
                dead = sorted(k for k, p in params.items() if p.grad is None)
                if dead:
                    raise RuntimeError(
                        f"parameters received no gradient on the first step: {dead}")
            grads = {k: p.grad for k, p in params.items()}
            params = sgd_step(params, grads, train_config.learning_rate)
            loss_sum += loss_value * len(idxs)
        state.train_losses.append(loss_sum / n)
        state.epoch = epoch + 1
        state.params = params

        if has_val:
            val_loss, val_err = evaluate_arrays(
                val_images, val_targets, params, model_config, train_config,
                fix_feats=val_fix_feats)
        else:
            val_loss, val_err = float("nan"), float("nan")
        state.val_losses.append(val_loss)
        state.val_meter_errors.append(val_err)
        if has_val and val_err < best_err:
            best_err = val_err
            state.best_params = _copy_params(params)
            state.best_epoch = epoch + 1
            state.best_val_meter_error = val_err
        if (checkpoint_dir is not None and train_config.checkpoint_every > 0
                and (epoch + 1) % train_config.checkpoint_every == 0):
            save_params(f"{checkpoint_dir}/epoch_{epoch + 1:04d}.bin", params)
        if progress is not None:
            progress(epoch + 1, state.train_losses[-1], val_loss, val_err)

    if state.best_params is None:
        state.best_params = _copy_params(state.params)
        state.best_epoch = state.epoch
    state.rng_state = {"seed": seed, "completed_epochs": state.epoch}
    return state


def fix_reference(samples: list, zone: int | None = None) -> GeoPoint:
    """Mean raw-fix position (in plane coordinates) of a split. Serves as the
    origin the fix features are measured from; record it next to the checkpoint
    so inference uses the same frame."""
    raws = []
    for i, s in enumerate(samples):
        if s.raw_fix is None:
            raise IncompleteSampleError(
                f"sample {i} ({s.image_ref}) has no raw fix; fix features need one")
        raws.append(s.raw_fix)
    if not raws:
        raise InsufficientDataError("no samples to derive a fix reference from")
    if zone is None:
        zone = zone_for_longitude(raws[0].lon)
    coords = np.array([geo_to_plane(p, zone) for p in raws])
    e, n = coords.mean(axis=0)
    return plane_to_geo(float(e), float(n), zone)


def fix_features(samples: list, fix_ref: GeoPoint, scale: float,
                 zone: int | None = None) -> np.ndarray:
    """(N, 2) raw-fix offsets from fix_ref in units of `scale` meters."""
    out = np.zeros((len(samples), 2))
    for i, s in enumerate(samples):
        if s.raw_fix is None:
            raise IncompleteSampleError(
                f"sample {i} ({s.image_ref}) has no raw fix; fix features need one")
        d = delta_between(fix_ref, s.raw_fix, zone)
        out[i, 0] = d.d_east / scale
        out[i, 1] = d.d_north / scale
    return out


def _gather(samples: list, store: ImageStore) -> tuple[list, np.ndarray]:
    images = []
    targets = np.zeros((len(samples), 2))
    for i, s in enumerate(samples):
        if s.target is None:
            raise IncompleteSampleError(
                f"sample {i} ({s.image_ref}) carries no target; run make_targets first")
        images.append(store.load(s.image_ref))
        targets[i, 0] = s.target.d_east
        targets[i, 1] = s.target.d_north
    return images, targets


def train(train_samples: list, val_samples: list, store: ImageStore,
          model_config: ModelConfig, train_config: TrainConfig,
          checkpoint_dir=None, zone: int | None = None, progress=None) -> TrainState:
    """Sample-level entry point: gathers images/targets, derives fix features
    when the model wants them, and runs the array loop."""
    if not train_samples:
        raise InsufficientDataError("training split is empty")
    images, targets = _gather(train_samples, store)
    val_images, val_targets = _gather(val_samples, store) if val_samples else ([], None)
    ff = vff = None
    ref = None
    if model_config.use_fix_features:
        ref = fix_reference(train_samples, zone)
        ff = fix_features(train_samples, ref, train_config.fix_feature_scale, zone)
        if val_samples:
            vff = fix_features(val_samples, ref, train_config.fix_feature_scale, zone)
    state = train_arrays(images, targets, model_config, train_config,
                         fix_feats=ff, val_images=val_images, val_targets=val_targets,
                         val_fix_feats=vff, checkpoint_dir=checkpoint_dir,
                         progress=progress)
    state.fix_ref = ref
    return state


def evaluate_loss(samples: list, store: ImageStore, params: ModelParams,
                  model_config: ModelConfig, train_config: TrainConfig,
                  fix_ref: GeoPoint | None = None, zone: int | None = None) -> float:
    """Mean smooth-L1 loss of a split in scaled units, deterministic center crop."""
    images, targets = _gather(samples, store)
    ff = None
    if model_config.use_fix_features:
        if fix_ref is None:
            raise ConfigError("model consumes fix features; pass the training fix_ref")
        ff = fix_features(samples, fix_ref, train_config.fix_feature_scale, zone)
    loss, _ = evaluate_arrays(images, targets, params, model_config, train_config,
                              fix_feats=ff)
    return loss


def write_train_log(path, state: TrainState) -> None:
    """CSV loss history: epoch, train_loss, val_loss, val_meter_error."""
    lines = ["epoch,train_loss,val_loss,val_meter_error"]
    for i in range(len(state.train_losses)):
        lines.append(f"{i + 1},{state.train_losses[i]!r},"
                     f"{state.val_losses[i]!r},{state.val_meter_errors[i]!r}")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
