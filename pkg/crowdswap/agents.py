"""
Worker agents: state, kinematics by transport mode under traffic, speed
history bookkeeping and detour planning.
"""

import itertools
from dataclasses import dataclass, field
from enum import Enum

from crowdswap.geoenv import CellIndex, Location, TrafficState, cell_of, distance_m, interpolate, polyline_length_m


class TransportMode(str, Enum):
    WALK = "walk"
    BIKE = "bike"
    MOTORBIKE = "motorbike"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"Unknown transport mode '{value}'") from None


WALK_SPEED_MPS = 2.0
BIKE_SPEED_MPS = 5.0

# Exhaustive ordering of task chains up to this many tasks, greedy beyond.
EXHAUSTIVE_PLAN_LIMIT = 4


@dataclass(frozen=True)
class Kinematics:
    motorbike_normal_mps: float = 10.0
    motorbike_slow_mps: float = 3.0
    service_radius_m: float = 5.0

    def nominal_speed(self, mode):
        """Speed under free-flowing traffic; used to time synthetic traces."""
        return mode_speed(mode, TrafficState.NORMAL, self)


DEFAULT_KINEMATICS = Kinematics()


@dataclass
class WorkerAgent:
    id: str
    mode: TransportMode
    position: Location
    route: list                     # remaining waypoints, position excluded
    destination: Location = None
    speed_now: float = 0.0
    tasks: list = field(default_factory=list)
    ledger: float = 0.0
    active: bool = True
    incident_remaining_s: float = 0.0
    odometer_m: float = 0.0
    detoured: bool = False
    participated: bool = False
    cell: CellIndex = None
    reached: list = field(default_factory=list)
    _speed_count: int = 0
    _speed_sum: float = 0.0
    _speed_max: float = 0.0
    _speed_min: float = 0.0

    def __post_init__(self):
        self.mode = TransportMode.parse(self.mode)
        if self.destination is None:
            self.destination = self.route[-1] if self.route else self.position

    @property
    def speed_stats(self):
        """(mean, max, min) over every observed speed; zeros before the first tick."""
        if self._speed_count == 0:
            return (0.0, 0.0, 0.0)
        return (self._speed_sum / self._speed_count, self._speed_max, self._speed_min)

    def observe_speed(self, speed):
        self.speed_now = speed
        if self._speed_count == 0:
            self._speed_max = self._speed_min = speed
        else:
            self._speed_max = max(self._speed_max, speed)
            self._speed_min = min(self._speed_min, speed)
        self._speed_count += 1
        self._speed_sum += speed

    @property
    def immobilized(self):
        return self.incident_remaining_s > 0.0


def mode_speed(mode, traffic_state, kinematics=DEFAULT_KINEMATICS):
    """Travel speed in m/s. Only motorbikes use the road and feel the traffic."""
    mode = TransportMode.parse(mode)
    if mode is TransportMode.WALK:
        return WALK_SPEED_MPS
    if mode is TransportMode.BIKE:
        return BIKE_SPEED_MPS
    if traffic_state == TrafficState.NORMAL:
        return kinematics.motorbike_normal_mps
    if traffic_state == TrafficState.SLOW:
        return kinematics.motorbike_slow_mps
    return 0.0


def advance(agent, dt_s, grid, kinematics=DEFAULT_KINEMATICS):
    """
    Move the agent along its route for dt_s seconds.

    The speed is fixed for the whole tick by the traffic state of the cell the
    agent starts the tick in. Waypoints passed during the tick are collected in
    `agent.reached` so that task stops are never skipped over.
    """
    if not agent.active:
        return agent
    if dt_s <= 0:
        raise ValueError(f"dt_s must be positive, got {dt_s}")

    agent.reached = []
    agent.cell = cell_of(grid, agent.position)
    if agent.immobilized:
        speed = 0.0
        agent.incident_remaining_s = max(0.0, agent.incident_remaining_s - dt_s)
    else:
        speed = mode_speed(agent.mode, TrafficState(int(grid.cells[agent.cell])), kinematics)
    agent.observe_speed(speed)

    budget = speed * dt_s
    while budget > 0.0 and agent.route:
        target = agent.route[0]
        leg = distance_m(agent.position, target)
        if leg <= budget:
            budget -= leg
            agent.odometer_m += leg
            agent.position = target
            agent.reached.append(target)
            agent.route.pop(0)
        else:
            agent.position = interpolate(agent.position, target, budget / leg)
            agent.odometer_m += budget
            budget = 0.0

    if not agent.route:
        agent.active = False
    agent.cell = cell_of(grid, agent.position)
    return agent


def base_trip_m(agent):
    """Length of the trip the agent makes without any task: its own ride, or the direct leg once detoured."""
    if agent.detoured:
        return distance_m(agent.position, agent.destination)
    return polyline_length_m([agent.position, *agent.route])


def detour_route(agent, via):
    """
    Remaining polyline when the agent visits `via` in order before heading to
    its destination. The first point is the agent's current position.
    """
    if not via:
        return [agent.position, *agent.route]
    return [agent.position, *via, agent.destination]


def _chain_route_length(position, destination, ordered_chains):
    total = 0.0
    here = position
    for _, stops in ordered_chains:
        for stop in stops:
            total += distance_m(here, stop)
            here = stop
    return total + distance_m(here, destination)


def plan_stops(position, destination, chains):
    """
    Order task chains (task_id, [stops...]) for the shortest trip from
    `position` to `destination`. Each chain keeps its internal order.
    """
    chains = sorted(chains, key=lambda c: c[0])
    if len(chains) <= 1:
        return chains
    if len(chains) <= EXHAUSTIVE_PLAN_LIMIT:
        best, best_len = None, None
        for perm in itertools.permutations(chains):
            length = _chain_route_length(position, destination, perm)
            if best_len is None or length < best_len:
                best, best_len = list(perm), length
        return best

    ordered = []
    remaining = list(chains)
    here = position
    while remaining:
        nxt = min(remaining, key=lambda c: (distance_m(here, c[1][0]), c[0]))
        remaining.remove(nxt)
        ordered.append(nxt)
        here = nxt[1][-1]
    return ordered


def planned_length_m(position, destination, chains):
    """Length of the planned trip through `chains`; the direct leg when empty."""
    return _chain_route_length(position, destination, plan_stops(position, destination, chains))


def replan(agent, chains):
    """Rebuild the agent's route so it visits every chain's remaining stops."""
    if not chains:
        if agent.detoured:
            agent.route = [agent.destination]
        return agent
    ordered = plan_stops(agent.position, agent.destination, chains)
    via = [stop for _, stops in ordered for stop in stops]
    agent.route = detour_route(agent, via)[1:]
    agent.detoured = True
    return agent
