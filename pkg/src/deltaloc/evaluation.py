"""Meter-space error statistics, lane-level accuracy, and the smoothing baseline."""

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, ConfigError, EmptyInputError
from .geodesy import GeoPoint, geo_to_plane, ground_distance, plane_to_geo, zone_for_longitude

LANE_WIDTH_METERS = 3.7


@dataclass(frozen=True)
class ErrorStats:
    """Aggregate L2 error of a predicted track against truth, in meters."""

    mean: float
    sd: float
    min: float
    max: float
    lane_level_rate: float
    count: int

    def __post_init__(self):
        if not (self.min <= self.mean <= self.max):
            raise ConfigError(
                f"inconsistent stats: min {self.min}, mean {self.mean}, max {self.max}")
        if self.sd < 0.0:
            raise ConfigError(f"sd must be nonnegative, got {self.sd}")
        if not 0.0 <= self.lane_level_rate <= 1.0:
            raise ConfigError(f"lane_level_rate must be in [0,1], got {self.lane_level_rate}")
        if self.count < 1:
            raise ConfigError(f"count must be positive, got {self.count}")


def point_errors(predicted, truth, zone: int | None = None) -> np.ndarray:
    """Per-index ground distance between two aligned tracks."""
    if len(predicted) != len(truth):
        raise AlignmentError(
            f"track lengths differ: {len(predicted)} predicted vs {len(truth)} truth")
    if len(predicted) == 0:
        raise EmptyInputError("cannot compute errors of an empty track")
    return np.array([ground_distance(p, t, zone) for p, t in zip(predicted, truth)])


def error_stats(predicted, truth, zone: int | None = None,
                lane_threshold: float = LANE_WIDTH_METERS) -> ErrorStats:
    """Aggregate the per-point errors. sd is the population standard deviation;
    lane_level_rate is the fraction of points within lane_threshold meters
    (3.7 m, a 12-foot lane)."""
    errs = point_errors(predicted, truth, zone)
    return ErrorStats(
        mean=float(errs.mean()),
        sd=float(errs.std()),
        min=float(errs.min()),
        max=float(errs.max()),
        lane_level_rate=float(np.mean(errs <= lane_threshold)),
        count=len(errs),
    )


def moving_average_filter(track, window: int, zone: int | None = None) -> list:
    """Centered moving average of a track in plane coordinates.

    window must be odd and >= 1; edges average over the window portion that
    exists (shrinking windows), so the output has the input's length. The zone
    is pinned to the first point's zone unless given.
    """
    if len(track) == 0:
        raise EmptyInputError("cannot filter an empty track")
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"window must be an odd positive integer, got {window}")
    if window == 1:
        return list(track)
    if zone is None:
        zone = zone_for_longitude(track[0].lon)
    coords = np.array([geo_to_plane(p, zone) for p in track])
    n = len(track)
    half = window // 2
    csum = np.vstack([np.zeros((1, 2)), np.cumsum(coords, axis=0)])
    out = []
    for i in range(n):
        lo = max(0, i - half)
        hi = min(n, i + half + 1)
        e, nn = (csum[hi] - csum[lo]) / (hi - lo)
        out.append(plane_to_geo(float(e), float(nn), zone))
    return out


def compare_table(rows, zone: int | None = None) -> tuple[str, str]:
    """Build the comparison table over named (predicted, truth) track pairs.

    rows is a sequence of (name, predicted_track, truth_track). Returns
    (aligned_text, csv_text): the text shows two decimals, the CSV keeps full
    precision. Row order follows the input.
    """
    if len(rows) == 0:
        raise EmptyInputError("compare_table needs at least one row")
    stats = [(name, error_stats(pred, truth, zone)) for name, pred, truth in rows]

    headers = ["track", "mean_m", "sd_m", "min_m", "max_m", "lane_level_rate", "count"]
    display = [headers]
    for name, s in stats:
        display.append([name, f"{s.mean:.2f}", f"{s.sd:.2f}", f"{s.min:.2f}",
                        f"{s.max:.2f}", f"{s.lane_level_rate:.3f}", str(s.count)])
    widths = [max(len(r[c]) for r in display) for c in range(len(headers))]
    text_lines = []
    for r in display:
        cells = [r[0].ljust(widths[0])] + [r[c].rjust(widths[c]) for c in range(1, len(headers))]
        text_lines.append("  ".join(cells).rstrip())
    text = "\n".join(text_lines) + "\n"

    csv_lines = [",".join(headers)]
    for name, s in stats:
        csv_lines.append(f"{name},{s.mean!r},{s.sd!r},{s.min!r},{s.max!r},"
                         f"{s.lane_level_rate!r},{s.count}")
    csv = "\n".join(csv_lines) + "\n"
    return text, csv
