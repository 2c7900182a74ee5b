"""WGS84 <-> UTM conversions and local planar deltas.

Transverse Mercator is evaluated with the sixth-order Krueger series in the
third flattening (Karney's coefficients), which keeps the forward/inverse
round trip well below a nanodegree inside a zone. The inverse recovers
geographic latitude from the conformal latitude with a Newton iteration.

Positions inside one UTM zone are treated as points on a plane, so
differences between nearby fixes ("delta locations") are plain 2-vectors in
meters east/north. Southern-hemisphere coordinates carry the usual 10,000 km
false northing; deltas are computed on signed northings so the hemisphere
offset can never leak into a difference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DomainError, OutOfBandError, ProjectionDistortionError

# WGS84 ellipsoid.
WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_E = math.sqrt(WGS84_F * (2.0 - WGS84_F))

# UTM conventions.
SCALE_FACTOR = 0.9996
FALSE_EASTING = 500000.0
FALSE_NORTHING_SOUTH = 10000000.0

# Latitude band covered by UTM and the longitude distance from the central
# meridian beyond which a single-zone planar treatment is refused.
LAT_MIN = -80.0
LAT_MAX = 84.0
MAX_MERIDIAN_OFFSET_DEG = 4.0

# Largest delta magnitude (meters) that still counts as "local".
MAX_DELTA_METERS = 10000.0

# Sixth-order Krueger coefficients in the third flattening n.
_N = WGS84_F / (2.0 - WGS84_F)
_N2 = _N * _N
_N3 = _N2 * _N
_N4 = _N3 * _N
_N5 = _N4 * _N
_N6 = _N5 * _N

# Rectifying radius: A = a/(1+n) * (1 + n^2/4 + n^4/64 + n^6/256).
_RECTIFYING_RADIUS = WGS84_A / (1.0 + _N) * (1.0 + _N2 / 4.0 + _N4 / 64.0 + _N6 / 256.0)

_ALPHA = (
    _N / 2.0 - 2.0 * _N2 / 3.0 + 5.0 * _N3 / 16.0 + 41.0 * _N4 / 180.0
    - 127.0 * _N5 / 288.0 + 7891.0 * _N6 / 37800.0,
    13.0 * _N2 / 48.0 - 3.0 * _N3 / 5.0 + 557.0 * _N4 / 1440.0 + 281.0 * _N5 / 630.0
    - 1983433.0 * _N6 / 1935360.0,
    61.0 * _N3 / 240.0 - 103.0 * _N4 / 140.0 + 15061.0 * _N5 / 26880.0
    + 167603.0 * _N6 / 181440.0,
    49561.0 * _N4 / 161280.0 - 179.0 * _N5 / 168.0 + 6601661.0 * _N6 / 7257600.0,
    34729.0 * _N5 / 80640.0 - 3418889.0 * _N6 / 1995840.0,
    212378941.0 * _N6 / 319334400.0,
)

_BETA = (
    _N / 2.0 - 2.0 * _N2 / 3.0 + 37.0 * _N3 / 96.0 - _N4 / 360.0
    - 81.0 * _N5 / 512.0 + 96199.0 * _N6 / 604800.0,
    _N2 / 48.0 + _N3 / 15.0 - 437.0 * _N4 / 1440.0 + 46.0 * _N5 / 105.0
    - 1118711.0 * _N6 / 3870720.0,
    17.0 * _N3 / 480.0 - 37.0 * _N4 / 840.0 - 209.0 * _N5 / 4480.0
    + 5569.0 * _N6 / 90720.0,
    4397.0 * _N4 / 161280.0 - 11.0 * _N5 / 504.0 - 830251.0 * _N6 / 7257600.0,
    4583.0 * _N5 / 161280.0 - 108847.0 * _N6 / 3991680.0,
    20648693.0 * _N6 / 638668800.0,
)


def normalize_longitude(lon: float) -> float:
    """Wrap a longitude in degrees into [-180, 180)."""
    return (lon + 180.0) % 360.0 - 180.0


def zone_for_longitude(lon: float) -> int:
    """UTM zone number (1..60) containing the given longitude."""
    lon = normalize_longitude(lon)
    return int((lon + 180.0) // 6.0) + 1


def central_meridian(zone: int) -> float:
    """Central meridian of a UTM zone, in degrees east."""
    if not 1 <= int(zone) <= 60:
        raise DomainError(f"UTM zone must be in 1..60, got {zone}")
    return -183.0 + 6.0 * int(zone)


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84 geographic position in decimal degrees.

    Longitude is normalized to [-180, 180) on construction. Latitude must
    fall inside the UTM band [-80, 84].
    """

    lat: float
    lon: float

    def __post_init__(self):
        lat = float(self.lat)
        lon = float(self.lon)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise DomainError(f"coordinates must be finite, got lat={lat!r} lon={lon!r}")
        if not LAT_MIN <= lat <= LAT_MAX:
            raise OutOfBandError(
                f"latitude {lat!r} outside the supported band [{LAT_MIN}, {LAT_MAX}]"
            )
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", normalize_longitude(lon))


@dataclass(frozen=True)
class UtmCoord:
    """A projected UTM position: easting/northing in meters plus zone and hemisphere."""

    easting: float
    northing: float
    zone: int
    hemisphere: str

    def __post_init__(self):
        if not 1 <= int(self.zone) <= 60:
            raise DomainError(f"UTM zone must be in 1..60, got {self.zone}")
        if self.hemisphere not in ("north", "south"):
            raise DomainError(f"hemisphere must be 'north' or 'south', got {self.hemisphere!r}")
        if not (math.isfinite(self.easting) and 0.0 < self.easting < 1000000.0):
            raise DomainError(f"easting {self.easting!r} outside (0, 1000000) meters")
        if not (math.isfinite(self.northing) and 0.0 <= self.northing < 10000000.0):
            raise DomainError(f"northing {self.northing!r} outside [0, 10000000) meters")
        object.__setattr__(self, "zone", int(self.zone))
        object.__setattr__(self, "easting", float(self.easting))
        object.__setattr__(self, "northing", float(self.northing))


@dataclass(frozen=True)
class DeltaLocation:
    """A small planar displacement in meters: east and north components."""

    d_east: float
    d_north: float

    def __post_init__(self):
        de = float(self.d_east)
        dn = float(self.d_north)
        if not (math.isfinite(de) and math.isfinite(dn)):
            raise DomainError(f"delta components must be finite, got ({de!r}, {dn!r})")
        if math.hypot(de, dn) >= MAX_DELTA_METERS:
            raise DomainError(
                f"delta magnitude {math.hypot(de, dn):.1f} m exceeds the "
                f"{MAX_DELTA_METERS:.0f} m local-approximation cap"
            )
        object.__setattr__(self, "d_east", de)
        object.__setattr__(self, "d_north", dn)

    def magnitude(self) -> float:
        return math.hypot(self.d_east, self.d_north)


def _check_meridian_offset(lon: float, zone: int) -> float:
    """Signed longitude offset from the zone's central meridian, with guard."""
    lam = normalize_longitude(lon - central_meridian(zone))
    if abs(lam) > MAX_MERIDIAN_OFFSET_DEG:
        raise ProjectionDistortionError(
            f"longitude {lon!r} lies {abs(lam):.3f} deg from the central meridian of "
            f"zone {zone}; beyond {MAX_MERIDIAN_OFFSET_DEG} deg the planar approximation "
            f"is not trustworthy"
        )
    return lam


def geo_to_plane(point: GeoPoint, zone: int) -> tuple[float, float]:
    """Project to plane coordinates: (easting, signed northing).

    The northing is signed (negative south of the equator); no hemisphere
    false northing is added, which makes differences hemisphere-safe.
    """
    lam = math.radians(_check_meridian_offset(point.lon, zone))
    phi = math.radians(point.lat)

    s = math.sin(phi)
    t = math.sinh(math.atanh(s) - WGS84_E * math.atanh(WGS84_E * s))
    xi_p = math.atan2(t, math.cos(lam))
    eta_p = math.asinh(math.sin(lam) / math.sqrt(t * t + math.cos(lam) ** 2))

    xi = xi_p
    eta = eta_p
    for j, a in enumerate(_ALPHA, start=1):
        xi += a * math.sin(2 * j * xi_p) * math.cosh(2 * j * eta_p)
        eta += a * math.cos(2 * j * xi_p) * math.sinh(2 * j * eta_p)

    k0a = SCALE_FACTOR * _RECTIFYING_RADIUS
    return FALSE_EASTING + k0a * eta, k0a * xi


def plane_to_geo(easting: float, signed_northing: float, zone: int) -> GeoPoint:
    """Invert geo_to_plane. The northing must be signed (no false northing)."""
    k0a = SCALE_FACTOR * _RECTIFYING_RADIUS
    xi = signed_northing / k0a
    eta = (easting - FALSE_EASTING) / k0a

    xi_p = xi
    eta_p = eta
    for j, b in enumerate(_BETA, start=1):
        xi_p -= b * math.sin(2 * j * xi) * math.cosh(2 * j * eta)
        eta_p -= b * math.cos(2 * j * xi) * math.sinh(2 * j * eta)

    denom = math.sqrt(math.sinh(eta_p) ** 2 + math.cos(xi_p) ** 2)
    tau = math.sin(xi_p) / denom
    lam = math.atan2(math.sinh(eta_p), math.cos(xi_p))

    # Newton-solve geographic latitude phi from the conformal tangent tau.
    phi = math.atan(tau)
    for _ in range(12):
        s = math.sin(phi)
        t = math.sinh(math.atanh(s) - WGS84_E * math.atanh(WGS84_E * s))
        ds = (
            math.sqrt(1.0 + t * t)
            * (1.0 - WGS84_E * WGS84_E)
            / ((1.0 - (WGS84_E * s) ** 2) * math.cos(phi))
        )
        step = (t - tau) / ds
        phi -= step
        if abs(step) < 1e-15:
            break

    lat = math.degrees(phi)
    lon = central_meridian(zone) + math.degrees(lam)
    if not LAT_MIN <= lat <= LAT_MAX:
        raise OutOfBandError(
            f"projected position ({easting!r}, {signed_northing!r}) in zone {zone} "
            f"inverts to latitude {lat:.6f} outside [{LAT_MIN}, {LAT_MAX}]"
        )
    return GeoPoint(lat, lon)


def geo_to_utm(point: GeoPoint, zone: int | None = None) -> UtmCoord:
    """Project a geographic point into UTM.

    The zone is derived from the longitude unless the caller pins one; a
    pinned zone lets one trajectory that straddles a zone boundary live in a
    single consistent plane. Pinning a far-away zone raises
    ProjectionDistortionError.
    """
    if zone is None:
        zone = zone_for_longitude(point.lon)
    easting, y = geo_to_plane(point, zone)
    if y >= 0.0:
        return UtmCoord(easting, y, zone, "north")
    return UtmCoord(easting, y + FALSE_NORTHING_SOUTH, zone, "south")


def utm_to_geo(coord: UtmCoord) -> GeoPoint:
    """Invert geo_to_utm for either hemisphere."""
    y = coord.northing
    if coord.hemisphere == "south":
        y -= FALSE_NORTHING_SOUTH
    return plane_to_geo(coord.easting, y, coord.zone)


def delta_between(a: GeoPoint, b: GeoPoint, zone: int | None = None) -> DeltaLocation:
    """Planar displacement from a to b, meters east/north, in a shared zone.

    The zone comes from the first argument unless pinned. Both points must
    sit within the distortion guard of that zone's central meridian.
    """
    if zone is None:
        zone = zone_for_longitude(a.lon)
    xa, ya = geo_to_plane(a, zone)
    xb, yb = geo_to_plane(b, zone)
    return DeltaLocation(xb - xa, yb - ya)


def apply_delta(point: GeoPoint, delta: DeltaLocation, zone: int | None = None) -> GeoPoint:
    """Displace a geographic point by a planar delta (inverse of delta_between)."""
    if zone is None:
        zone = zone_for_longitude(point.lon)
    x, y = geo_to_plane(point, zone)
    return plane_to_geo(x + delta.d_east, y + delta.d_north, zone)


def ground_distance(a: GeoPoint, b: GeoPoint, zone: int | None = None) -> float:
    """Euclidean distance in meters between two points in a shared UTM plane.

    Unlike delta_between this has no magnitude cap, so it also serves pairs
    that are tens of kilometers apart (still inside one zone's guard band).
    """
    if zone is None:
        zone = zone_for_longitude(a.lon)
    xa, ya = geo_to_plane(a, zone)
    xb, yb = geo_to_plane(b, zone)
    return math.hypot(xb - xa, yb - ya)
