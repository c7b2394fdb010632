"""
Money: task revenue, worker-specific costs and the realized / expected
utility of a task set.

    U(S)  = -C(S) + sum_j O_j r_j - sum_j (1 - O_j) p_j
    EU(S) = -C(S) + sum_j E[O_j] r_j - sum_j (1 - E[O_j]) p_j

Costs are deterministic given the planned route, so E[C(S)] = C(S).
"""

import math
from dataclasses import dataclass, field

from crowdswap.agents import TransportMode, base_trip_m, plan_stops
from crowdswap.errors import MissingOutcomeError
from crowdswap.geoenv import distance_m
from crowdswap.traces import remaining_stops

# Exact subadditive closure over groupings up to this many tasks.
PARTITION_LIMIT = 4


def _default_cost_per_meter():
    return {TransportMode.WALK: 0.004, TransportMode.BIKE: 0.002, TransportMode.MOTORBIKE: 0.003}


@dataclass(frozen=True)
class CostParams:
    cost_per_meter: dict = field(default_factory=_default_cost_per_meter)
    fixed_cost_per_task: float = 0.25

    def __post_init__(self):
        per_meter = {TransportMode.parse(k): float(v) for k, v in self.cost_per_meter.items()}
        if set(per_meter) != set(TransportMode):
            raise ValueError("cost_per_meter needs a value for every transport mode")
        if any(v < 0 for v in per_meter.values()) or self.fixed_cost_per_task < 0:
            raise ValueError("Cost parameters must be non-negative")
        object.__setattr__(self, "cost_per_meter", per_meter)


DEFAULT_COSTS = CostParams()


def revenue(tasks, outcomes):
    """Rewards of successful tasks minus penalties of failed ones."""
    missing = [t.task_id for t in tasks if t.task_id not in outcomes]
    if missing:
        raise MissingOutcomeError(f"No outcome for task(s): {', '.join(missing)}")
    return _revenue(tasks, {t.task_id: float(outcomes[t.task_id]) for t in tasks})


def _revenue(tasks, success):
    return (math.fsum(success[t.task_id] * t.reward for t in tasks)
            - math.fsum((1.0 - success[t.task_id]) * t.penalty for t in tasks))


def set_utility(cost_value, tasks, success):
    """-C + Rev where `success` maps task id to O_j (realized) or E[O_j] (expected)."""
    return -cost_value + _revenue(tasks, success)


def _detour(worker, chains):
    if not chains:
        return 0.0
    here, goal = worker.position, worker.destination
    planned = plan_stops(here, goal, chains)
    length = 0.0
    for _, stops in planned:
        for stop in stops:
            length += distance_m(here, stop)
            here = stop
    length += distance_m(here, goal)
    return max(0.0, length - base_trip_m(worker))


def marginal_detour_m(worker, task_set):
    """Extra meters over the worker's own remaining trip when serving every task in one planned route."""
    return _detour(worker, [(t.task_id, remaining_stops(t)) for t in task_set])


def _grouped_detour(worker, chains):
    """
    Cheapest way of serving `chains` as one or more separately planned groups.
    Taking the minimum over groupings makes the detour subadditive.
    """
    n = len(chains)
    if n <= 1:
        return _detour(worker, chains)
    if n > PARTITION_LIMIT:
        return min(_detour(worker, chains), math.fsum(_detour(worker, [c]) for c in chains))

    memo = {}

    def best(mask):
        if mask in memo:
            return memo[mask]
        members = [chains[i] for i in range(n) if mask >> i & 1]
        value = _detour(worker, members)
        low = mask & -mask
        rest = mask ^ low
        if not rest:
            memo[mask] = value
            return value
        # every split into A (containing the lowest member) and mask \ A
        sub = (rest - 1) & rest
        while True:
            part = sub | low
            value = min(value, best(part) + best(mask ^ part))
            if sub == 0:
                break
            sub = (sub - 1) & rest
        memo[mask] = value
        return value

    return best((1 << n) - 1)


def cost(worker, task_set, params=DEFAULT_COSTS):
    """Per-meter detour cost of the worker's mode plus a fixed cost per task."""
    task_set = list(task_set)
    if not task_set:
        return 0.0
    chains = [(t.task_id, remaining_stops(t)) for t in task_set]
    detour = _grouped_detour(worker, chains)
    return params.cost_per_meter[worker.mode] * detour + params.fixed_cost_per_task * len(task_set)


def realized_utility(worker, task_set, outcomes, params=DEFAULT_COSTS):
    task_set = list(task_set)
    missing = [t.task_id for t in task_set if t.task_id not in outcomes]
    if missing:
        raise MissingOutcomeError(f"No outcome for task(s): {', '.join(missing)}")
    success = {t.task_id: float(outcomes[t.task_id]) for t in task_set}
    return set_utility(cost(worker, task_set, params), task_set, success)


def expected_success(worker, task_set, predictor, grid, now):
    """E[O_j] for every task when the worker plans one trip through the whole set."""
    return {t.task_id: 1.0 - predictor.prob_delay(worker, t, grid, now, held=task_set) for t in task_set}


def expected_utility(worker, task_set, predictor, grid, now, params=DEFAULT_COSTS):
    task_set = list(task_set)
    success = expected_success(worker, task_set, predictor, grid, now)
    return set_utility(cost(worker, task_set, params), task_set, success)
