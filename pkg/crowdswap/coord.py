"""
Transfer-coordination strategies.

  not           no transfers
  random        blind transfers to the nearest task-free worker
  forced        the platform moves a task to the worker with the best
                predicted success, without consent
  collaborative co-located workers hand a parcel to a better-suited
                task-free worker (service quality = 1 - delay probability)
  att           sellers auction at-risk tasks in one-shot second-price
                (Vickrey) auctions; bidders bid their expected-utility gain

Every strategy is deterministic: candidates are visited in task-id order and
ties are broken by the lexicographically smallest worker id.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

from crowdswap.econ import DEFAULT_COSTS, expected_utility
from crowdswap.geoenv import cell_of, distance_m

logger = logging.getLogger(__name__)

DEFAULT_P_TRANSFER = 0.005
DEFAULT_FORCED_MARGIN = 0.05
DEFAULT_RECONSIDER_PERIOD_S = 30.0


class Mechanism(str, Enum):
    COLLABORATIVE = "Collaborative"
    AUCTION = "Auction"
    RANDOM = "Random"
    FORCED = "Forced"


@dataclass(frozen=True)
class TransferEvent:
    task_id: str
    from_worker: str
    to_worker: str
    time_s: float
    mechanism: Mechanism
    price: float = 0.0

    def __post_init__(self):
        if self.from_worker == self.to_worker:
            raise ValueError(f"Transfer of {self.task_id} to its own assignee {self.from_worker}")

    def to_dict(self):
        return {
            "type": "transfer",
            "task_id": self.task_id,
            "from_worker": self.from_worker,
            "to_worker": self.to_worker,
            "t": self.time_s,
            "mechanism": self.mechanism.value,
            "price": self.price,
        }


@dataclass
class Auction:
    task: str
    seller: str
    neighborhood_radius_m: float = math.inf
    bids: list = field(default_factory=list)      # [(worker_id, amount)]
    outcome: tuple = None                         # (winner, price)


def in_neighborhood(center, agent, radius_m):
    if radius_m is None or math.isinf(radius_m):
        return True
    return distance_m(center, agent.position) <= radius_m


# ============================================================================
# COLLABORATIVE TRANSFERS
# ============================================================================

def service_quality(predictor, agent, task, grid, now):
    """F_qual(c, p) = 1 - prob_delay(c, p)."""
    return 1.0 - predictor.prob_delay(agent, task, grid, now)


def collaborative_step(grid, couriers, candidates, predictor, now, quality=service_quality):
    """
    One time step of collaborative parcel transfer.

    Args:
        couriers: [(agent, task)] pairs, one per courier and the parcel it carries.
        candidates: active workers without a task.
        quality: service-quality function F(predictor, agent, task, grid, now).

    Returns:
        TransferEvents; each candidate receives at most one parcel per step.
    """
    by_cell = {}
    for cand in sorted(candidates, key=lambda a: a.id):
        by_cell.setdefault(cell_of(grid, cand.position), []).append(cand)

    events = []
    for courier, task in sorted(couriers, key=lambda pair: (pair[0].id, pair[1].task_id)):
        pool = by_cell.get(cell_of(grid, courier.position))
        if not pool:
            continue
        own = quality(predictor, courier, task, grid, now)
        best, best_q = None, None
        for cand in pool:
            q = quality(predictor, cand, task, grid, now)
            if best_q is None or q > best_q:
                best, best_q = cand, q
        if own < best_q:
            pool.remove(best)
            events.append(TransferEvent(task.task_id, courier.id, best.id, now, Mechanism.COLLABORATIVE))
    return events


# ============================================================================
# AUCTIONS
# ============================================================================

def should_trigger_auction(agent, task, predictor, grid, now, task_set, params=DEFAULT_COSTS):
    """Conservative seller rule: launch only if EU(S without task) > EU(S) even at a zero transfer reward."""
    task_set = list(task_set)
    remaining = [t for t in task_set if t.task_id != task.task_id]
    keep = expected_utility(agent, task_set, predictor, grid, now, params)
    shed = expected_utility(agent, remaining, predictor, grid, now, params)
    return shed + 0.0 > keep


def compute_bid(agent, task, predictor, grid, now, task_set, params=DEFAULT_COSTS):
    """Truthful bid: EU(S with task) - EU(S), or None when not positive."""
    task_set = list(task_set)
    with_task = task_set + [task]
    b = (expected_utility(agent, with_task, predictor, grid, now, params)
         - expected_utility(agent, task_set, predictor, grid, now, params))
    return b if b > 0 else None


def resolve_auction(bids):
    """
    Vickrey clearing: the highest bidder wins and pays the second-highest
    bid, or 0 when alone. Equal amounts go to the smallest worker id.
    """
    if not bids:
        return None
    ranked = sorted(bids, key=lambda b: (-b[1], b[0]))
    winner = ranked[0][0]
    price = ranked[1][1] if len(ranked) > 1 else 0.0
    return winner, price


def run_auction(seller, task, bidders, predictor, grid, now, tasks_of, params=DEFAULT_COSTS,
                radius_m=math.inf):
    """Collect bids from `bidders` near the seller and clear the auction."""
    auction = Auction(task=task.task_id, seller=seller.id, neighborhood_radius_m=radius_m)
    for bidder in sorted(bidders, key=lambda a: a.id):
        if bidder.id == seller.id or not in_neighborhood(seller.position, bidder, radius_m):
            continue
        amount = compute_bid(bidder, task, predictor, grid, now, tasks_of(bidder), params)
        if amount is not None:
            auction.bids.append((bidder.id, amount))
    auction.outcome = resolve_auction(auction.bids)
    return auction


# ============================================================================
# BASELINES
# ============================================================================

def random_step(tasks, workers, p_transfer, rng, now):
    """
    With probability p_transfer per task, hand it to the nearest task-free
    worker. One uniform draw per task, in task-id order, whether or not a
    recipient exists.
    """
    if not 0.0 <= p_transfer <= 1.0:
        raise ValueError(f"p_transfer must be within [0, 1], got {p_transfer}")
    by_id = {w.id: w for w in workers}
    free = sorted((w for w in workers if w.active and not w.tasks), key=lambda w: w.id)
    events = []
    for task in sorted(tasks, key=lambda t: t.task_id):
        draw = rng.random()
        holder = by_id.get(task.assignee)
        if holder is None or draw >= p_transfer or not free:
            continue
        nearest = min(free, key=lambda w: (distance_m(holder.position, w.position), w.id))
        free.remove(nearest)
        events.append(TransferEvent(task.task_id, holder.id, nearest.id, now, Mechanism.RANDOM))
    return events


def forced_step(tasks, workers, predictor, grid, now, margin=DEFAULT_FORCED_MARGIN,
                radius_m=math.inf, single_task=False):
    """
    Move each task to the neighbour with the highest predicted success when
    it beats the assignee's by at least `margin`.
    """
    by_id = {w.id: w for w in workers}
    received = set()
    events = []
    for task in sorted(tasks, key=lambda t: t.task_id):
        holder = by_id.get(task.assignee)
        if holder is None:
            continue
        current = 1.0 - predictor.prob_delay(holder, task, grid, now)
        best, best_s = None, None
        for cand in sorted(workers, key=lambda w: w.id):
            if cand.id == holder.id or not cand.active:
                continue
            if single_task and (cand.tasks or cand.id in received):
                continue
            if not in_neighborhood(holder.position, cand, radius_m):
                continue
            s = 1.0 - predictor.prob_delay(cand, task, grid, now)
            if best_s is None or s > best_s:
                best, best_s = cand, s
        if best is not None and best_s - current >= margin:
            received.add(best.id)
            events.append(TransferEvent(task.task_id, holder.id, best.id, now, Mechanism.FORCED))
    return events


# ============================================================================
# STRATEGIES (engine plug-ins)
# ============================================================================

class Strategy:
    """
    A coordination strategy invoked by the engine once per tick, after task
    completions are settled. `world` exposes the engine state and applies
    transfers (see sim.World).
    """
    name = "base"

    def __init__(self, config):
        self.config = config

    def step(self, world, now):
        return []

    def _due(self, task, now):
        period = self.config.reconsider_period_s
        if task.last_considered is not None and now - task.last_considered < period:
            return False
        task.last_considered = now
        return True


class NotStrategy(Strategy):
    name = "not"


class RandomStrategy(Strategy):
    name = "random"

    def step(self, world, now):
        events = random_step(world.assigned_tasks(), world.active_agents(),
                             self.config.p_transfer, world.rng, now)
        for event in events:
            world.apply_transfer(event)
        return events


class ForcedStrategy(Strategy):
    name = "forced"

    def step(self, world, now):
        due = [t for t in world.assigned_tasks() if self._due(t, now)]
        if not due:
            return []
        events = forced_step(due, world.active_agents(), world.predictor, world.grid, now,
                             margin=self.config.forced_margin, radius_m=world.neighborhood_radius_m,
                             single_task=world.single_task)
        for event in events:
            world.apply_transfer(event)
        return events


class CollaborativeStrategy(Strategy):
    name = "collaborative"

    def step(self, world, now):
        couriers = [(world.agent(t.assignee), t) for t in world.assigned_tasks()]
        if not couriers:
            return []
        candidates = [a for a in world.active_agents() if not a.tasks]
        events = collaborative_step(world.grid, couriers, candidates, world.predictor, now)
        for event in events:
            world.apply_transfer(event)
        return events


class AuctionStrategy(Strategy):
    name = "att"

    def __init__(self, config):
        super().__init__(config)
        self.auctions = []

    def step(self, world, now):
        events = []
        for task in world.assigned_tasks():
            if not self._due(task, now):
                continue
            seller = world.agent(task.assignee)
            if not should_trigger_auction(seller, task, world.predictor, world.grid, now,
                                          world.tasks_of(seller), world.costs):
                continue
            bidders = [a for a in world.active_agents() if not (world.single_task and a.tasks)]
            auction = run_auction(seller, task, bidders, world.predictor, world.grid, now,
                                  world.tasks_of, world.costs, world.neighborhood_radius_m)
            self.auctions.append(auction)
            logger.debug("Auction for %s by %s: %d bid(s), outcome %s",
                         task.task_id, seller.id, len(auction.bids), auction.outcome)
            if auction.outcome is None:
                continue
            winner, price = auction.outcome
            event = TransferEvent(task.task_id, seller.id, winner, now, Mechanism.AUCTION, price)
            world.apply_transfer(event)
            events.append(event)
        return events


STRATEGIES = {cls.name: cls for cls in
              (NotStrategy, RandomStrategy, ForcedStrategy, CollaborativeStrategy, AuctionStrategy)}


def make_strategy(config):
    try:
        return STRATEGIES[config.name](config)
    except KeyError:
        raise ValueError(f"Unknown strategy '{config.name}'") from None
