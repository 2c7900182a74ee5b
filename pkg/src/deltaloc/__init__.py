"""deltaloc: refine noisy GPS fixes with an image-conditioned delta regressor.

The package bundles the pieces needed to reproduce the full pipeline:

- ``geodesy``: WGS84/UTM conversions and local planar deltas,
- ``autodiff``: a small reverse-mode engine over float64 numpy arrays,
- ``layers`` / ``model``: residual CNN + stacked LSTM delta regressor,
- ``dataset``: GPS noise simulation, synthetic worlds, manifests,
- ``training`` / ``evaluation``: SGD loop and trajectory error reports,
- ``estimator``: a scikit-learn style wrapper (fit/predict/get_params),
- ``cli``: the ``deltaloc`` command line tool.
"""

from .errors import (
    AlignmentError,
    ConfigError,
    DeltaLocError,
    DivergenceError,
    DomainError,
    EmptyInputError,
    IncompleteSampleError,
    InsufficientDataError,
    ManifestError,
    OutOfBandError,
    ProjectionDistortionError,
    RankError,
    ShapeError,
    SizeError,
    TapeError,
)
from .geodesy import (
    DeltaLocation,
    GeoPoint,
    UtmCoord,
    apply_delta,
    central_meridian,
    delta_between,
    geo_to_utm,
    ground_distance,
    utm_to_geo,
    zone_for_longitude,
)
from .autodiff import GradientTape, Tensor, backward, smooth_l1_loss
from .dataset import (
    ImageStore,
    ManifestHeader,
    NoiseModel,
    Sample,
    SyntheticWorld,
    SyntheticWorldConfig,
    export_tracks_geojson,
    generate_synthetic_world,
    load_manifest,
    make_targets,
    sample_error_magnitudes,
    simulate_gps_noise,
    split_trajectory,
    tracks_to_geojson,
    write_manifest,
)
from .estimator import DeltaRegressor
from .evaluation import ErrorStats, compare_table, error_stats, moving_average_filter
from .model import ModelConfig, forward, init_params, predict_absolute, predict_deltas
from .training import TrainConfig, TrainState, augment, center_crop, evaluate_loss, sgd_step, train

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "ConfigError",
    "DeltaLocError",
    "DivergenceError",
    "DomainError",
    "EmptyInputError",
    "IncompleteSampleError",
    "InsufficientDataError",
    "ManifestError",
    "OutOfBandError",
    "ProjectionDistortionError",
    "RankError",
    "ShapeError",
    "SizeError",
    "TapeError",
    "DeltaLocation",
    "GeoPoint",
    "UtmCoord",
    "apply_delta",
    "central_meridian",
    "delta_between",
    "geo_to_utm",
    "ground_distance",
    "utm_to_geo",
    "zone_for_longitude",
    "GradientTape",
    "Tensor",
    "backward",
    "smooth_l1_loss",
    "ImageStore",
    "ManifestHeader",
    "NoiseModel",
    "Sample",
    "SyntheticWorld",
    "SyntheticWorldConfig",
    "export_tracks_geojson",
    "generate_synthetic_world",
    "load_manifest",
    "make_targets",
    "sample_error_magnitudes",
    "simulate_gps_noise",
    "split_trajectory",
    "tracks_to_geojson",
    "write_manifest",
    "DeltaRegressor",
    "ErrorStats",
    "compare_table",
    "error_stats",
    "moving_average_filter",
    "ModelConfig",
    "forward",
    "init_params",
    "predict_absolute",
    "predict_deltas",
    "TrainConfig",
    "TrainState",
    "augment",
    "center_crop",
    "evaluate_loss",
    "sgd_step",
    "train",
    "__version__",
]
