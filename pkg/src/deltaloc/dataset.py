"""Data plumbing: samples, GPS noise simulation, synthetic worlds, manifests.

The sample flow is the same for real captures and synthetic data. A manifest
CSV lists (timestamp, image_ref, raw lat/lon, true lat/lon) rows under a
small #key=value header pinning the UTM zone and the anchoring mode. Targets
are filled in by make_targets: in "gps-relative" mode each sample is
anchored at its own raw fix, in "gcp" mode every sample shares one ground
control point.

GPS noise is simulated as a clipped log-normal error magnitude (parameters
fitted numerically so the clipped mean/sd hit the configured values) with a
direction that evolves as a normalized AR(1) Gaussian vector, giving the
temporally correlated wander that makes plain smoothing an unreliable fix.

The synthetic world renders a procedural ground texture that encodes
position: brightness ramps tied to the east/north coordinates multiplexed
over an 8 m checkerboard, two stripe systems at 27 m and 6 m wavelength for
mid and fine scale, and a hash-noise dither for texture. Identical
(seed, position) always renders identical pixels.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import optimize

from .errors import (
    ConfigError,
    DomainError,
    EmptyInputError,
    IncompleteSampleError,
    InsufficientDataError,
    ManifestError,
)
from .geodesy import DeltaLocation, GeoPoint, apply_delta, delta_between, zone_for_longitude

MANIFEST_VERSION = 1
MANIFEST_COLUMNS = "timestamp,image_ref,raw_lat,raw_lon,true_lat,true_lon"
MODES = ("gps-relative", "gcp")

TRACK_COLORS = {
    "raw": "#d62728",
    "predicted": "#2ca02c",
    "truth": "#1f77b4",
    "filtered": "#ff7f0e",
}


@dataclass(frozen=True)
class Sample:
    """One trajectory row: an image plus its geo information.

    raw_fix and truth are optional (GCP inference has no raw fix; unlabeled
    captures have no truth). anchor/target stay None until make_targets
    fills them; a target may only exist alongside truth and anchor, and must
    equal delta_between(anchor, truth).
    """

    image_ref: str
    timestamp: float
    raw_fix: GeoPoint | None = None
    truth: GeoPoint | None = None
    anchor: GeoPoint | None = None
    target: DeltaLocation | None = None

    def __post_init__(self):
        if self.target is not None:
            if self.truth is None or self.anchor is None:
                raise IncompleteSampleError(
                    f"sample {self.image_ref!r} has a target but lacks truth or anchor"
                )


@dataclass(frozen=True)
class NoiseModel:
    """Clipped log-normal GPS error magnitudes with AR(1) heading drift.

    mean/sd are the target moments of the *clipped* magnitude distribution;
    the underlying log-normal parameters are fitted numerically. ar_coeff is
    the AR(1) coefficient of the latent direction process (0 = independent
    headings, values near 1 = slowly turning error vector).
    """

    mean: float = 9.8772
    sd: float = 11.7547
    clip_lo: float = 0.37419
    clip_hi: float = 61.7118
    ar_coeff: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.clip_lo <= self.clip_hi):
            raise ConfigError(f"clip range [{self.clip_lo}, {self.clip_hi}] is invalid")
        if self.clip_lo < self.clip_hi and not (self.clip_lo < self.mean < self.clip_hi):
            raise ConfigError(
                f"mean {self.mean} must lie inside the clip range "
                f"[{self.clip_lo}, {self.clip_hi}]"
            )
        if self.sd < 0.0:
            raise ConfigError(f"sd must be nonnegative, got {self.sd}")
        if not 0.0 <= self.ar_coeff < 1.0:
            raise ConfigError(f"ar_coeff must be in [0, 1), got {self.ar_coeff}")


def _phi(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def clipped_lognormal_stats(mu: float, sigma: float, lo: float, hi: float) -> tuple[float, float]:
    """Mean and sd of clip(LogNormal(mu, sigma), lo, hi), closed form."""
    a = (math.log(lo) - mu) / sigma
    b = (math.log(hi) - mu) / sigma
    p_lo = _phi(a)
    p_hi = 1.0 - _phi(b)
    m1 = lo * p_lo + hi * p_hi + math.exp(mu + sigma**2 / 2.0) * (_phi(b - sigma) - _phi(a - sigma))
    m2 = (
        lo * lo * p_lo
        + hi * hi * p_hi
        + math.exp(2.0 * mu + 2.0 * sigma**2) * (_phi(b - 2.0 * sigma) - _phi(a - 2.0 * sigma))
    )
    return m1, math.sqrt(max(m2 - m1 * m1, 0.0))


@lru_cache(maxsize=64)
def _fit_lognormal(mean: float, sd: float, lo: float, hi: float) -> tuple[float, float]:
    """Solve for (mu, sigma) whose clipped moments equal (mean, sd)."""
    sigma0 = math.sqrt(math.log(1.0 + (sd / mean) ** 2))
    mu0 = math.log(mean) - sigma0**2 / 2.0

    def residual(p):
        mu, sigma = p
        got_mean, got_sd = clipped_lognormal_stats(mu, abs(sigma), lo, hi)
        return [got_mean - mean, got_sd - sd]

    sol = optimize.root(residual, [mu0, sigma0])
    err = np.max(np.abs(residual(sol.x)))
    if not sol.success or err > 1e-9:
        raise ConfigError(
            f"cannot fit a clipped log-normal to mean={mean}, sd={sd} on [{lo}, {hi}]: "
            f"{sol.message} (residual {err:.3g})"
        )
    mu, sigma = sol.x
    return float(mu), float(abs(sigma))


def sample_error_magnitudes(model: NoiseModel, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw n error magnitudes in meters from the model's distribution."""
    if rng is None:
        rng = np.random.default_rng(model.seed)
    if model.clip_lo == model.clip_hi:
        return np.full(n, model.clip_lo)
    mu, sigma = _fit_lognormal(model.mean, model.sd, model.clip_lo, model.clip_hi)
    return np.clip(rng.lognormal(mu, sigma, size=n), model.clip_lo, model.clip_hi)


def simulate_gps_noise(
    truth_track: list[GeoPoint], model: NoiseModel, zone: int | None = None
) -> list[GeoPoint]:
    """Displace every truth point by a simulated GPS error.

    Magnitudes are drawn from the clipped log-normal; the error heading is
    the angle of a latent 2D AR(1) Gaussian vector, so consecutive errors
    point in correlated directions while the marginal heading stays uniform.
    Deterministic for a fixed model.seed.
    """
    if not truth_track:
        raise EmptyInputError("cannot add noise to an empty track")
    if zone is None:
        zone = zone_for_longitude(truth_track[0].lon)
    rng = np.random.default_rng(model.seed)
    n = len(truth_track)
    mags = sample_error_magnitudes(model, n, rng)

    rho = model.ar_coeff
    innovations = rng.normal(size=(n, 2))
    z = np.empty((n, 2))
    z[0] = innovations[0]
    scale = math.sqrt(1.0 - rho * rho)
    for i in range(1, n):
        z[i] = rho * z[i - 1] + scale * innovations[i]
    norms = np.linalg.norm(z, axis=1)
    norms[norms < 1e-12] = 1.0
    units = z / norms[:, None]

    noisy = []
    for point, mag, (ux, uy) in zip(truth_track, mags, units):
        noisy.append(apply_delta(point, DeltaLocation(mag * ux, mag * uy), zone))
    return noisy


# ---------------------------------------------------------------------------
# synthetic world


@dataclass(frozen=True)
class SyntheticWorldConfig:
    """Settings for the procedural world.

    trajectory_length is the course length in meters; waypoint_spacing the
    distance between consecutive samples. course is "loop" (a wobbled
    circle) or "line" (a straight street, the GCP scenario). laps repeats
    the course within the same trajectory length: a loop is circled that
    many times, a line is walked out and back. With laps > 1 a contiguous
    time split keeps revisiting ground covered by earlier laps, which is the
    usual collect-several-passes protocol; with laps = 1 a held-out span is
    territory the model has never seen. ground_footprint is the ground width
    in meters one rendered image covers. encoding_strength scales how
    strongly pixel intensity encodes position (1.0 = calibrated default).
    """

    trajectory_length: float = 2000.0
    waypoint_spacing: float = 1.0
    image_size: int = 32
    texture_seed: int = 7
    encoding_strength: float = 1.0
    course: str = "loop"
    laps: int = 1
    ground_footprint: float = 64.0
    center_lat: float = 37.4
    center_lon: float = -122.1

    def __post_init__(self):
        if self.trajectory_length <= 0.0:
            raise ConfigError(f"degenerate trajectory: length {self.trajectory_length} m")
        if self.waypoint_spacing <= 0.0:
            raise ConfigError(f"waypoint_spacing must be positive, got {self.waypoint_spacing}")
        if self.image_size < 8:
            raise ConfigError(f"image_size must be at least 8, got {self.image_size}")
        if not 0.0 < self.encoding_strength <= 2.0:
            raise ConfigError(f"encoding_strength must be in (0, 2], got {self.encoding_strength}")
        if self.course not in ("loop", "line"):
            raise ConfigError(f"course must be 'loop' or 'line', got {self.course!r}")
        if not isinstance(self.laps, int) or self.laps < 1:
            raise ConfigError(f"laps must be a positive integer, got {self.laps!r}")
        if self.ground_footprint <= 0.0:
            raise ConfigError(f"ground_footprint must be positive, got {self.ground_footprint}")


_TILE_M = 8.0
_MED_WAVE_M = 27.0
_FINE_WAVE_M = 6.0
_NOISE_CELL_M = 4.0


def _hash01(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic lattice hash -> [0, 1); uint64 wrap-around arithmetic."""
    x = ix.astype(np.int64).astype(np.uint64)
    y = iy.astype(np.int64).astype(np.uint64)
    h = x * np.uint64(0x9E3779B97F4A7C15)
    h ^= y * np.uint64(0xC2B2AE3D27D4EB4F)
    h ^= np.uint64((seed * 0xD6E8FEB86659FD93) & 0xFFFFFFFFFFFFFFFF)
    h ^= h >> np.uint64(33)
    h *= np.uint64(0xFF51AFD7ED558CCD)
    h ^= h >> np.uint64(33)
    h *= np.uint64(0xC4CEB9FE1A85EC53)
    h ^= h >> np.uint64(33)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _value_noise(e: np.ndarray, n: np.ndarray, seed: int) -> np.ndarray:
    gx = e / _NOISE_CELL_M
    gy = n / _NOISE_CELL_M
    ix = np.floor(gx)
    iy = np.floor(gy)
    fx = gx - ix
    fy = gy - iy
    fx = fx * fx * (3.0 - 2.0 * fx)
    fy = fy * fy * (3.0 - 2.0 * fy)
    v00 = _hash01(ix, iy, seed)
    v10 = _hash01(ix + 1, iy, seed)
    v01 = _hash01(ix, iy + 1, seed)
    v11 = _hash01(ix + 1, iy + 1, seed)
    return (v00 * (1 - fx) + v10 * fx) * (1 - fy) + (v01 * (1 - fx) + v11 * fx) * fy


class SyntheticWorld:
    """A truth track plus a deterministic position-to-image renderer."""

    def __init__(self, config: SyntheticWorldConfig):
        self.config = config
        self.center = GeoPoint(config.center_lat, config.center_lon)
        self.zone = zone_for_longitude(config.center_lon)

        n = max(2, int(round(config.trajectory_length / config.waypoint_spacing)))
        offsets = np.empty((n, 2))
        if config.course == "loop":
            radius = config.trajectory_length / config.laps / (2.0 * math.pi)
            theta = 2.0 * math.pi * config.laps * np.arange(n) / n
            r = radius * (1.0 + 0.08 * np.sin(3.0 * theta))
            offsets[:, 0] = r * np.cos(theta)
            offsets[:, 1] = r * np.sin(theta)
        else:
            azimuth = math.radians(25.0)
            pass_length = config.trajectory_length / config.laps
            u = np.arange(n) / (n - 1) * config.laps
            tri = 1.0 - np.abs(1.0 - np.mod(u, 2.0))
            s = (tri - 0.5) * pass_length
            offsets[:, 0] = s * math.sin(azimuth)
            offsets[:, 1] = s * math.cos(azimuth)

        self._offsets = offsets
        self.track = [
            apply_delta(self.center, DeltaLocation(float(e), float(dn)), self.zone)
            for e, dn in offsets
        ]
        self.timestamps = [float(i) for i in range(n)]

        margin = config.ground_footprint
        self._e_lo = float(offsets[:, 0].min() - margin)
        self._e_hi = float(offsets[:, 0].max() + margin)
        self._n_lo = float(offsets[:, 1].min() - margin)
        self._n_hi = float(offsets[:, 1].max() + margin)

    def render(self, point: GeoPoint) -> np.ndarray:
        """Render the ground texture centered on the given position."""
        d = delta_between(self.center, point, self.zone)
        return self._render_local(d.d_east, d.d_north)

    def _render_local(self, e0: float, n0: float) -> np.ndarray:
        cfg = self.config
        size = cfg.image_size
        res = cfg.ground_footprint / size
        half = (size - 1) / 2.0
        cols = (np.arange(size) - half) * res
        rows = (half - np.arange(size)) * res
        e = e0 + cols[None, :] + np.zeros((size, 1))
        n = n0 + rows[:, None] + np.zeros((1, size))

        parity = (np.floor(e / _TILE_M) + np.floor(n / _TILE_M)) % 2.0
        ramp_e = (e - self._e_lo) / (self._e_hi - self._e_lo)
        ramp_n = (n - self._n_lo) / (self._n_hi - self._n_lo)
        base = np.where(parity < 0.5, ramp_e, ramp_n)

        med = 0.5 + 0.25 * np.sin(2.0 * math.pi * e / _MED_WAVE_M) + 0.25 * np.sin(
            2.0 * math.pi * n / _MED_WAVE_M
        )
        fine_coord = np.where(parity < 0.5, e, n)
        fine = 0.5 + 0.5 * np.sin(2.0 * math.pi * fine_coord / _FINE_WAVE_M)
        noise = _value_noise(e, n, cfg.texture_seed)

        s = cfg.encoding_strength
        img = (
            0.5
            + s * (0.42 * (base - 0.5) + 0.22 * (med - 0.5) + 0.18 * (fine - 0.5))
            + 0.12 * (noise - 0.5)
        )
        return np.clip(img, 0.0, 1.0)


def generate_synthetic_world(config: SyntheticWorldConfig) -> SyntheticWorld:
    """Build the truth track and its image renderer. See SyntheticWorld."""
    return SyntheticWorld(config)


# ---------------------------------------------------------------------------
# targets and splits


def make_targets(
    samples: list[Sample],
    mode: str,
    gcp: GeoPoint | None = None,
    zone: int | None = None,
) -> list[Sample]:
    """Return samples with anchor and target filled for the given mode.

    gps-relative: anchor is each sample's own raw fix. gcp: every anchor is
    the single ground control point. Targets are truth minus anchor in
    meters; truth must be present on every row.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if (gcp is not None) != (mode == "gcp"):
        raise ConfigError(f"a ground control point is required iff mode is 'gcp' (mode={mode!r})")
    out = []
    for idx, sample in enumerate(samples):
        if sample.truth is None:
            raise IncompleteSampleError(
                f"sample {idx} ({sample.image_ref!r}) lacks ground truth; targets need truth"
            )
        if mode == "gcp":
            anchor = gcp
        else:
            if sample.raw_fix is None:
                raise IncompleteSampleError(
                    f"sample {idx} ({sample.image_ref!r}) lacks a raw fix required by "
                    f"gps-relative mode"
                )
            anchor = sample.raw_fix
        target = delta_between(anchor, sample.truth, zone)
        out.append(dataclasses.replace(sample, anchor=anchor, target=target))
    return out


def split_trajectory(
    samples: list[Sample], fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
) -> tuple[list[Sample], list[Sample], list[Sample]]:
    """Cut a trajectory into contiguous train/val/test segments.

    Sizes follow largest-remainder rounding of n * fraction; remainder ties
    go to the later segment. Segments preserve order and jointly cover the
    input exactly.
    """
    if len(fractions) != 3 or any(f <= 0.0 for f in fractions):
        raise ConfigError(f"fractions must be three positive numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {fractions} (sum {sum(fractions)!r})")
    n = len(samples)
    if n < 3:
        raise InsufficientDataError(f"need at least 3 samples to split, got {n}")
    quotas = [n * f for f in fractions]
    sizes = [int(q) for q in quotas]
    leftover = n - sum(sizes)
    by_remainder = sorted(range(3), key=lambda i: (quotas[i] - sizes[i], i), reverse=True)
    for i in by_remainder[:leftover]:
        sizes[i] += 1
    a, b = sizes[0], sizes[0] + sizes[1]
    return samples[:a], samples[a:b], samples[b:]


# ---------------------------------------------------------------------------
# manifest I/O


@dataclass(frozen=True)
class ManifestHeader:
    zone: int
    mode: str
    gcp: GeoPoint | None = None
    version: int = MANIFEST_VERSION

    def __post_init__(self):
        if self.mode not in MODES:
            raise ManifestError(f"mode must be one of {MODES}, got {self.mode!r}")
        if (self.gcp is not None) != (self.mode == "gcp"):
            raise ManifestError("header must carry a GCP exactly when mode is 'gcp'")
        if not 1 <= int(self.zone) <= 60:
            raise ManifestError(f"zone must be in 1..60, got {self.zone}")


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def write_manifest(path, header: ManifestHeader, samples: list[Sample]) -> None:
    """Write a trajectory manifest. Deterministic bytes for identical input."""
    lines = [f"#version={header.version}", f"#zone={header.zone}", f"#mode={header.mode}"]
    if header.gcp is not None:
        lines.append(f"#gcp_lat={_fmt(header.gcp.lat)}")
        lines.append(f"#gcp_lon={_fmt(header.gcp.lon)}")
    lines.append(MANIFEST_COLUMNS)
    last_ts = None
    for idx, s in enumerate(samples):
        if "," in s.image_ref or "\n" in s.image_ref:
            raise ManifestError(f"row {idx + 1}: image_ref {s.image_ref!r} contains a delimiter")
        if last_ts is not None and s.timestamp <= last_ts:
            raise ManifestError(
                f"row {idx + 1}: timestamp {s.timestamp!r} does not increase past {last_ts!r}"
            )
        last_ts = s.timestamp
        if header.mode == "gps-relative" and s.raw_fix is None:
            raise ManifestError(f"row {idx + 1}: gps-relative manifests need a raw fix on every row")
        raw = s.raw_fix
        truth = s.truth
        lines.append(
            ",".join(
                [
                    repr(float(s.timestamp)),
                    s.image_ref,
                    _fmt(raw.lat if raw else None),
                    _fmt(raw.lon if raw else None),
                    _fmt(truth.lat if truth else None),
                    _fmt(truth.lon if truth else None),
                ]
            )
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_float(text: str, line_no: int, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ManifestError(f"line {line_no}: cannot parse {what} from {text!r}") from None


def load_manifest(path) -> tuple[ManifestHeader, list[Sample]]:
    """Read a manifest written by write_manifest; strict about structure."""
    raw_lines = Path(path).read_text(encoding="utf-8").splitlines()
    known = {"version", "zone", "mode", "gcp_lat", "gcp_lon"}
    header_kv: dict[str, str] = {}
    body_start = 0
    for i, line in enumerate(raw_lines):
        if not line.startswith("#"):
            body_start = i
            break
        key, sep, value = line[1:].partition("=")
        if not sep or key not in known:
            raise ManifestError(f"line {i + 1}: unknown header entry {line!r}")
        if key in header_kv:
            raise ManifestError(f"line {i + 1}: duplicate header key {key!r}")
        header_kv[key] = value
    else:
        raise ManifestError(f"{path}: manifest has no data section")

    for required in ("version", "zone", "mode"):
        if required not in header_kv:
            raise ManifestError(f"{path}: header is missing #{required}=")
    if header_kv["version"] != str(MANIFEST_VERSION):
        raise ManifestError(
            f"{path}: unknown manifest version {header_kv['version']!r} "
            f"(this reader understands {MANIFEST_VERSION})"
        )
    mode = header_kv["mode"]
    if mode not in MODES:
        raise ManifestError(f"{path}: unknown mode {mode!r}")
    gcp = None
    has_gcp = ("gcp_lat" in header_kv) or ("gcp_lon" in header_kv)
    if mode == "gcp":
        if not ("gcp_lat" in header_kv and "gcp_lon" in header_kv):
            raise ManifestError(f"{path}: gcp mode requires #gcp_lat= and #gcp_lon=")
        gcp = GeoPoint(
            _parse_float(header_kv["gcp_lat"], 0, "gcp_lat"),
            _parse_float(header_kv["gcp_lon"], 0, "gcp_lon"),
        )
    elif has_gcp:
        raise ManifestError(f"{path}: gcp_lat/gcp_lon are only valid in gcp mode")
    try:
        zone = int(header_kv["zone"])
    except ValueError:
        raise ManifestError(f"{path}: zone {header_kv['zone']!r} is not an integer") from None
    header = ManifestHeader(zone=zone, mode=mode, gcp=gcp)

    if body_start >= len(raw_lines) or raw_lines[body_start] != MANIFEST_COLUMNS:
        raise ManifestError(
            f"line {body_start + 1}: column header must be exactly {MANIFEST_COLUMNS!r}"
        )

    samples: list[Sample] = []
    last_ts = None
    for i in range(body_start + 1, len(raw_lines)):
        line = raw_lines[i]
        if not line:
            continue
        line_no = i + 1
        fields = line.split(",")
        if len(fields) != 6:
            raise ManifestError(f"line {line_no}: expected 6 fields, got {len(fields)}")
        ts = _parse_float(fields[0], line_no, "timestamp")
        if last_ts is not None and ts <= last_ts:
            raise ManifestError(
                f"line {line_no}: timestamp {ts!r} does not increase past {last_ts!r}"
            )
        last_ts = ts
        image_ref = fields[1]
        if not image_ref:
            raise ManifestError(f"line {line_no}: empty image_ref")

        def point(lat_text, lon_text, what):
            if not lat_text and not lon_text:
                return None
            if not lat_text or not lon_text:
                raise ManifestError(f"line {line_no}: {what} needs both lat and lon or neither")
            try:
                return GeoPoint(
                    _parse_float(lat_text, line_no, f"{what} lat"),
                    _parse_float(lon_text, line_no, f"{what} lon"),
                )
            except DomainError as exc:
                raise ManifestError(f"line {line_no}: {exc}") from None

        raw_fix = point(fields[2], fields[3], "raw fix")
        truth = point(fields[4], fields[5], "truth")
        if mode == "gps-relative" and raw_fix is None:
            raise ManifestError(f"line {line_no}: gps-relative manifests need a raw fix")
        samples.append(Sample(image_ref=image_ref, timestamp=ts, raw_fix=raw_fix, truth=truth))
    return header, samples


# ---------------------------------------------------------------------------
# images on disk


def save_png(path, image: np.ndarray) -> None:
    """Store a [0,1] float image as 8-bit grayscale PNG."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="L").save(path)


def load_png(path) -> np.ndarray:
    """Load a grayscale PNG back into a [0,1] float array."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0


class ImageStore:
    """Lazy-loading image lookup for manifest-referenced files.

    Paths resolve relative to the manifest's directory. Loaded arrays are
    cached; entries can also be injected directly (used by the synthetic
    pipeline to skip disk round trips).
    """

    def __init__(self, root):
        self.root = Path(root)
        self._cache: dict[str, np.ndarray] = {}

    def put(self, ref: str, image: np.ndarray) -> None:
        self._cache[ref] = np.asarray(image, dtype=np.float64)

    def load(self, ref: str) -> np.ndarray:
        hit = self._cache.get(ref)
        if hit is None:
            hit = self._cache[ref] = load_png(self.root / ref)
        return hit


# ---------------------------------------------------------------------------
# GeoJSON export


def tracks_to_geojson(tracks: list[tuple[str, list[GeoPoint]]]) -> dict:
    """Build a FeatureCollection with one LineString per named track."""
    features = []
    for role, points in tracks:
        features.append(
            {
                "type": "Feature",
                "properties": {
                    "role": role,
                    "stroke": TRACK_COLORS.get(role, "#7f7f7f"),
                },
                "geometry": {
                    "type": "LineString",
                    "coordinates": [[p.lon, p.lat] for p in points],
                },
            }
        )
    return {"type": "FeatureCollection", "features": features}


def export_tracks_geojson(path, tracks: list[tuple[str, list[GeoPoint]]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(tracks_to_geojson(tracks), fh, indent=2)
        fh.write("\n")
