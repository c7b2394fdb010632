"""
Ride traces and task workloads.

Reads and writes the ride CSV format (header `worker_id,mode,t_s,lat,lon`,
one row per GPS point), synthesises random-waypoint rides when no real data
is available, and generates parcel / sensing-chain task workloads.
"""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

from crowdswap.agents import DEFAULT_KINEMATICS, TransportMode
from crowdswap.errors import AreaTooSmallError, EmptyFileError, TraceParseError
from crowdswap.geoenv import Location, destination_point, distance_m
from crowdswap.outputs import atomic_open, write_json
from crowdswap.trace_validator import validate_ride_rows

logger = logging.getLogger(__name__)

TRACE_HEADER = ["worker_id", "mode", "t_s", "lat", "lon"]

DEFAULT_CHAIN_LENGTH = 3
DEFAULT_CHAIN_SPACING_M = 500.0
DEFAULT_WAYPOINTS = (2, 5)
MIN_LEG_M = 1.0
MAX_PLACEMENT_ATTEMPTS = 1000


@dataclass
class Trace:
    worker_id: str
    mode: TransportMode
    start_time: float
    points: list = field(default_factory=list)   # [(Location, t_s), ...]

    @property
    def locations(self):
        return [loc for loc, _ in self.points]


class TaskKind(str, Enum):
    PARCEL = "Parcel"
    SENSING_CHAIN = "SensingChain"


@dataclass
class TaskSpec:
    task_id: str
    kind: TaskKind
    locations: list
    release_time: float
    deadline: float
    reward: float
    penalty: float

    def __post_init__(self):
        self.kind = TaskKind(self.kind)
        if not self.deadline > self.release_time:
            raise ValueError(f"Task {self.task_id}: deadline must be after release time")
        if self.kind is TaskKind.PARCEL and len(self.locations) != 2:
            raise ValueError(f"Task {self.task_id}: a parcel needs exactly 2 locations")
        if not self.locations:
            raise ValueError(f"Task {self.task_id}: needs at least one location")
        if self.reward < 0 or self.penalty < 0:
            raise ValueError(f"Task {self.task_id}: reward and penalty must be non-negative")

    def to_dict(self):
        return {
            "task_id": self.task_id,
            "kind": self.kind.value,
            "locations": [{"lat": loc.lat, "lon": loc.lon} for loc in self.locations],
            "release_time": self.release_time,
            "deadline": self.deadline,
            "reward": self.reward,
            "penalty": self.penalty,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            task_id=str(data["task_id"]),
            kind=TaskKind(data["kind"]),
            locations=[Location(float(p["lat"]), float(p["lon"])) for p in data["locations"]],
            release_time=float(data["release_time"]),
            deadline=float(data["deadline"]),
            reward=float(data["reward"]),
            penalty=float(data["penalty"]),
        )


# ============================================================================
# TRACE FILES
# ============================================================================

def read_trace_file(path, bbox=None):
    """
    Parse a trace CSV into (traces, validation_results).

    Malformed rows raise TraceParseError with the offending line number;
    rides that parse but fail validation are reported and left out.
    """
    rides = {}
    with open(path, 'r', newline='', encoding='utf-8') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise EmptyFileError(f"Trace file '{path}' is empty.")
        if [h.strip() for h in header] != TRACE_HEADER:
            raise TraceParseError(f"expected header {','.join(TRACE_HEADER)}, got {','.join(header)}", line=1)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(TRACE_HEADER):
                raise TraceParseError(f"expected {len(TRACE_HEADER)} fields, got {len(row)}", line=line)
            worker_id, mode, t_s, lat, lon = (cell.strip() for cell in row)
            try:
                parsed = (line, mode, float(t_s), float(lat), float(lon))
            except ValueError as e:
                raise TraceParseError(str(e), line=line) from None
            if not all(math.isfinite(v) for v in parsed[2:]):
                raise TraceParseError("non-finite number", line=line)
            rides.setdefault(worker_id, []).append(parsed)

    if not rides:
        raise EmptyFileError(f"Trace file '{path}' has no GPS rows.")

    traces, results = [], []
    for worker_id, rows in rides.items():
        result = validate_ride_rows(worker_id, rows, bbox)
        results.append(result)
        if not result.is_valid:
            continue
        points = [(Location(lat, lon), t) for _, _, t, lat, lon in rows]
        traces.append(Trace(worker_id=worker_id, mode=TransportMode.parse(rows[0][1]),
                            start_time=points[0][1], points=points))
    traces.sort(key=lambda tr: (tr.start_time, tr.worker_id))
    return traces, results


def load_traces(path, log_callback=logger.warning, bbox=None):
    """
    Load traces sorted by start time. Each rejected ride is reported once
    through log_callback, as is each kept ride with points outside `bbox`.
    """
    traces, results = read_trace_file(path, bbox)
    for result in results:
        for message in result.errors:
            log_callback(f"Dropped ride: {message}")
        for message in result.warnings:
            log_callback(message)
    return traces


def save_traces(traces, path):
    with atomic_open(path, newline='') as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for trace in traces:
            for loc, t in trace.points:
                writer.writerow([trace.worker_id, trace.mode.value, repr(t), repr(loc.lat), repr(loc.lon)])
    return path


# ============================================================================
# SYNTHETIC RIDES
# ============================================================================

def normalize_mode_mix(mode_mix):
    """Accept a mapping mode -> fraction or a (walk, bike, motorbike) tuple."""
    if not isinstance(mode_mix, dict):
        mode_mix = dict(zip(TransportMode, mode_mix))
    mix = {TransportMode.parse(k): float(v) for k, v in mode_mix.items()}
    if any(v < 0 for v in mix.values()) or abs(math.fsum(mix.values()) - 1.0) > 1e-9:
        raise ValueError(f"Mode mix fractions must be non-negative and sum to 1, got {mode_mix}")
    return {mode: mix.get(mode, 0.0) for mode in TransportMode}


def synth_traces(n_workers, area, duration_s, mode_mix, rng, waypoints=DEFAULT_WAYPOINTS,
                 kinematics=DEFAULT_KINEMATICS):
    """
    Random-waypoint rides inside `area`, arriving as a Poisson process over
    [0, duration_s). Timestamps follow each mode's free-flow speed.
    """
    mix = normalize_mode_mix(mode_mix)
    if n_workers <= 0:
        return []
    modes = list(mix)
    probs = [mix[m] for m in modes]
    arrivals = sorted(rng.uniform(0.0, duration_s, size=n_workers))
    width = len(str(n_workers - 1))

    traces = []
    for i, start in enumerate(arrivals):
        mode = modes[int(rng.choice(len(modes), p=probs))]
        speed = kinematics.nominal_speed(mode)
        n_legs = int(rng.integers(waypoints[0], waypoints[1] + 1))
        here = area.sample_point(rng)
        t = float(start)
        points = [(here, t)]
        while len(points) <= n_legs:
            nxt = area.sample_point(rng)
            leg = distance_m(here, nxt)
            if leg < MIN_LEG_M:
                continue
            t += leg / speed
            points.append((nxt, t))
            here = nxt
        traces.append(Trace(worker_id=f"w{i:0{width}d}", mode=mode, start_time=float(start), points=points))
    return traces


# ============================================================================
# TASK WORKLOADS
# ============================================================================

def _chain_fits(area, n_points, spacing_m):
    return 2.0 * area.radius_m > spacing_m * (n_points - 1)


def _sample_chain(area, n_points, spacing_m, rng):
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        anchor = area.sample_point(rng)
        bearing = 360.0 * rng.random()
        chain = [anchor]
        for _ in range(n_points - 1):
            chain.append(destination_point(chain[-1], bearing, spacing_m))
        if all(area.contains(p) for p in chain):
            return chain
    raise AreaTooSmallError(
        f"Could not place a {spacing_m * (n_points - 1):.0f} m chain inside a {area.radius_m:.0f} m radius area"
    )


def gen_tasks(scenario_kind, rate_per_hour, total, area, deadline_s, reward, penalty, rng,
              chain_length=DEFAULT_CHAIN_LENGTH, spacing_m=DEFAULT_CHAIN_SPACING_M):
    """Poisson task arrivals at `rate_per_hour`; deadlines `deadline_s` after release."""
    kind = TaskKind(scenario_kind)
    if rate_per_hour <= 0:
        raise ValueError(f"rate_per_hour must be positive, got {rate_per_hour}")
    if total <= 0:
        raise ValueError(f"total must be positive, got {total}")
    if kind is TaskKind.SENSING_CHAIN and not _chain_fits(area, chain_length, spacing_m):
        raise AreaTooSmallError(
            f"A {spacing_m * (chain_length - 1):.0f} m chain does not fit in a {area.radius_m:.0f} m radius area"
        )

    releases = [float(t) for t in
                (rng.exponential(3600.0 / rate_per_hour, size=total)).cumsum()]
    width = len(str(total - 1))
    tasks = []
    for i, release in enumerate(releases):
        if kind is TaskKind.PARCEL:
            locations = [area.sample_point(rng), area.sample_point(rng)]
        else:
            locations = _sample_chain(area, chain_length, spacing_m, rng)
        tasks.append(TaskSpec(task_id=f"t{i:0{width}d}", kind=kind, locations=locations,
                              release_time=release, deadline=release + deadline_s,
                              reward=float(reward), penalty=float(penalty)))
    return tasks


def save_tasks(tasks, path):
    return write_json(path, [t.to_dict() for t in tasks])


def load_tasks(path):
    with open(path, 'r', encoding='utf-8') as f:
        data = json.load(f)
    if not data:
        raise EmptyFileError(f"Task file '{path}' has no tasks.")
    return sorted((TaskSpec.from_dict(item) for item in data), key=lambda t: (t.release_time, t.task_id))


# ============================================================================
# RUNTIME TASK STATE
# ============================================================================

class TaskStatus(str, Enum):
    PENDING = "pending"        # released, waiting for a worker
    ASSIGNED = "assigned"
    COMPLETED = "completed"
    EXPIRED = "expired"        # never completed before the run ended


@dataclass
class Task:
    """Mutable runtime view of a TaskSpec owned by the simulation engine."""
    spec: TaskSpec
    next_index: int = 0
    assignee: str = None
    status: TaskStatus = TaskStatus.PENDING
    completed_at: float = None
    label_known: bool = False
    n_transfers: int = 0
    quoted_cost: float = 0.0
    last_considered: float = None

    @property
    def task_id(self):
        return self.spec.task_id

    @property
    def deadline(self):
        return self.spec.deadline

    @property
    def reward(self):
        return self.spec.reward

    @property
    def penalty(self):
        return self.spec.penalty

    @property
    def remaining_locations(self):
        return self.spec.locations[self.next_index:]

    @property
    def delayed(self):
        """True once the task is known to miss (or to have missed) its deadline."""
        if self.status is TaskStatus.COMPLETED:
            return self.completed_at > self.deadline
        return self.status is TaskStatus.EXPIRED


def remaining_stops(task):
    """Remaining locations of a runtime Task, or all locations of a bare TaskSpec."""
    stops = getattr(task, "remaining_locations", None)
    return list(task.locations if stops is None else stops)
