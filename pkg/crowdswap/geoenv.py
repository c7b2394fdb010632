"""
Geometry, grid decomposition of the operating area, and the Markov-chain
traffic model.

Distances are great-circle (haversine) meters. The grid uses a local
equirectangular projection anchored at the bounding box's south-west
corner; at the scale of a city centre the projection error is negligible.
"""

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple, Sequence

import numpy as np

from crowdswap.errors import DegenerateBBoxError, NonStochasticMatrixError, OutOfAreaError

EARTH_RADIUS_M = 6_371_000.0
METERS_PER_DEG_LAT = EARTH_RADIUS_M * math.pi / 180.0

STOCHASTIC_TOLERANCE = 1e-9
# Points this close to a cell edge are treated as lying on it.
EDGE_TOLERANCE = 1e-9

DEFAULT_CELL_SIZE_M = 500.0
DEFAULT_UPDATE_PERIOD_S = 60.0
DEFAULT_TRANSITION = (
    (0.90, 0.08, 0.02),
    (0.20, 0.70, 0.10),
    (0.05, 0.25, 0.70),
)


@dataclass(frozen=True, slots=True)
class Location:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"Invalid coordinates: ({self.lat}, {self.lon})")


class TrafficState(IntEnum):
    NORMAL = 0
    SLOW = 1
    JAM = 2

    @classmethod
    def parse(cls, name):
        try:
            return cls[str(name).upper()]
        except KeyError:
            raise ValueError(f"Unknown traffic state '{name}'") from None


class CellIndex(NamedTuple):
    row: int
    col: int


@dataclass(frozen=True)
class BBox:
    min_lat: float
    min_lon: float
    max_lat: float
    max_lon: float

    def contains(self, location):
        return (self.min_lat <= location.lat <= self.max_lat
                and self.min_lon <= location.lon <= self.max_lon)


@dataclass
class TrafficGrid:
    bbox: BBox
    cell_size_m: float
    cells: np.ndarray          # int8 TrafficState codes, shape (rows, cols)
    transition: np.ndarray     # 3x3 row-stochastic
    update_period_s: float
    height_m: float
    width_m: float

    @property
    def shape(self):
        return self.cells.shape

    def state_at(self, location):
        return TrafficState(int(self.cells[cell_of(self, location)]))


# ============================================================================
# DISTANCES AND PROJECTION
# ============================================================================

def distance_m(a, b):
    """Haversine distance between two locations, in meters."""
    if a.lat == b.lat and a.lon == b.lon:
        return 0.0
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def polyline_length_m(points: Sequence[Location]):
    return math.fsum(distance_m(a, b) for a, b in zip(points, points[1:]))


def destination_point(origin, bearing_deg, dist_m):
    """Point reached from `origin` travelling `dist_m` along a great circle."""
    delta = dist_m / EARTH_RADIUS_M
    theta = math.radians(bearing_deg)
    phi1 = math.radians(origin.lat)
    lmb1 = math.radians(origin.lon)
    phi2 = math.asin(math.sin(phi1) * math.cos(delta)
                     + math.cos(phi1) * math.sin(delta) * math.cos(theta))
    lmb2 = lmb1 + math.atan2(math.sin(theta) * math.sin(delta) * math.cos(phi1),
                             math.cos(delta) - math.sin(phi1) * math.sin(phi2))
    lon = (math.degrees(lmb2) + 540.0) % 360.0 - 180.0
    return Location(math.degrees(phi2), lon)


def interpolate(a, b, fraction):
    """Linear interpolation in lat/lon; adequate for sub-kilometre segments."""
    return Location(a.lat + (b.lat - a.lat) * fraction, a.lon + (b.lon - a.lon) * fraction)


def _meters_per_deg_lon(bbox):
    mid_lat = (bbox.min_lat + bbox.max_lat) / 2.0
    return METERS_PER_DEG_LAT * math.cos(math.radians(mid_lat))


def project(bbox, location):
    """(north_m, east_m) offsets of `location` from the bbox south-west corner."""
    return ((location.lat - bbox.min_lat) * METERS_PER_DEG_LAT,
            (location.lon - bbox.min_lon) * _meters_per_deg_lon(bbox))


def unproject(bbox, north_m, east_m):
    return Location(bbox.min_lat + north_m / METERS_PER_DEG_LAT,
                    bbox.min_lon + east_m / _meters_per_deg_lon(bbox))


def bbox_around(center, half_height_m, half_width_m=None):
    """Bounding box centred on `center` with the given half extents in meters."""
    if half_width_m is None:
        half_width_m = half_height_m
    dlat = half_height_m / METERS_PER_DEG_LAT
    dlon = half_width_m / (METERS_PER_DEG_LAT * math.cos(math.radians(center.lat)))
    return BBox(center.lat - dlat, center.lon - dlon, center.lat + dlat, center.lon + dlon)


@dataclass(frozen=True)
class OperatingArea:
    """Disc-shaped operating area (the city centre the crowd moves through)."""
    center: Location
    radius_m: float

    @property
    def bbox(self):
        # Padded so that every point of the disc projects inside the grid.
        return bbox_around(self.center, self.radius_m * 1.005)

    def contains(self, location):
        return distance_m(self.center, location) <= self.radius_m

    def sample_point(self, rng):
        r = self.radius_m * math.sqrt(rng.random())
        return destination_point(self.center, 360.0 * rng.random(), r)


# ============================================================================
# GRID
# ============================================================================

def check_transition(transition):
    matrix = np.asarray(transition, dtype=float)
    if matrix.shape != (3, 3):
        raise NonStochasticMatrixError(f"Transition matrix must be 3x3, got shape {matrix.shape}")
    if (matrix < 0).any():
        raise NonStochasticMatrixError("Transition matrix has negative entries")
    for i, row_sum in enumerate(matrix.sum(axis=1)):
        if abs(row_sum - 1.0) > STOCHASTIC_TOLERANCE:
            raise NonStochasticMatrixError(
                f"Row {TrafficState(i).name} sums to {row_sum!r}, expected 1"
            )
    return matrix


def make_grid(bbox, cell_size_m=DEFAULT_CELL_SIZE_M, transition=DEFAULT_TRANSITION,
              initial_state=TrafficState.NORMAL, update_period_s=DEFAULT_UPDATE_PERIOD_S):
    if not (bbox.max_lat > bbox.min_lat and bbox.max_lon > bbox.min_lon):
        raise DegenerateBBoxError(f"Bounding box has no area: {bbox}")
    if cell_size_m <= 0:
        raise ValueError(f"cell_size_m must be positive, got {cell_size_m}")
    matrix = check_transition(transition)

    height_m, width_m = project(bbox, Location(bbox.max_lat, bbox.max_lon))
    rows = max(1, math.ceil(height_m / cell_size_m - EDGE_TOLERANCE))
    cols = max(1, math.ceil(width_m / cell_size_m - EDGE_TOLERANCE))
    cells = np.full((rows, cols), int(TrafficState(initial_state)), dtype=np.int8)
    return TrafficGrid(bbox=bbox, cell_size_m=float(cell_size_m), cells=cells,
                       transition=matrix, update_period_s=float(update_period_s),
                       height_m=height_m, width_m=width_m)


def _axis_index(offset_m, cell_size_m, n):
    # Cells are (lo, hi]: a point on a shared edge belongs to the lower index.
    idx = math.ceil(offset_m / cell_size_m - EDGE_TOLERANCE) - 1
    return min(max(idx, 0), n - 1)


def cell_of(grid, location):
    if not grid.bbox.contains(location):
        raise OutOfAreaError(f"({location.lat}, {location.lon}) is outside the operating area")
    north, east = project(grid.bbox, location)
    rows, cols = grid.cells.shape
    return CellIndex(_axis_index(north, grid.cell_size_m, rows),
                     _axis_index(east, grid.cell_size_m, cols))


def cell_center(grid, index):
    """Centre of the part of cell `index` that lies inside the bbox."""
    row, col = index
    lo_n = row * grid.cell_size_m
    hi_n = min((row + 1) * grid.cell_size_m, grid.height_m)
    lo_e = col * grid.cell_size_m
    hi_e = min((col + 1) * grid.cell_size_m, grid.width_m)
    return unproject(grid.bbox, (lo_n + hi_n) / 2.0, (lo_e + hi_e) / 2.0)


# ============================================================================
# TRAFFIC
# ============================================================================

def step_traffic(grid, rng):
    """Advance every cell one Markov step. Draws exactly one uniform per cell, row-major."""
    cumulative = np.cumsum(grid.transition, axis=1)
    u = rng.random(grid.cells.shape)
    thresholds = cumulative[grid.cells.astype(np.intp)]          # (rows, cols, 3)
    # next state = number of cumulative thresholds not exceeding u
    next_state = (u[..., None] >= thresholds[..., :2]).sum(axis=-1)
    grid.cells = next_state.astype(np.int8)
    return grid


def stationary_distribution(transition):
    """Left eigenvector of the transition matrix for eigenvalue 1, normalised."""
    matrix = check_transition(transition)
    values, vectors = np.linalg.eig(matrix.T)
    vec = np.real(vectors[:, np.argmin(np.abs(values - 1.0))])
    return vec / vec.sum()


def route_traffic_profile(grid, polyline):
    """Split the polyline length by the traffic state at each segment's midpoint."""
    for point in polyline:
        if not grid.bbox.contains(point):
            raise OutOfAreaError(f"({point.lat}, {point.lon}) is outside the operating area")
    parts = ([], [], [])
    for a, b in zip(polyline, polyline[1:]):
        length = distance_m(a, b)
        if length == 0.0:
            continue
        state = grid.state_at(interpolate(a, b, 0.5))
        parts[state].append(length)
    return tuple(math.fsum(p) for p in parts)
