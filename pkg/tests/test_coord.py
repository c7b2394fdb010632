import math
import unittest

import numpy as np

from crowdswap.agents import WorkerAgent
from crowdswap.coord import (STRATEGIES, Mechanism, TransferEvent, collaborative_step, compute_bid,
                             forced_step, make_strategy, random_step, resolve_auction, run_auction,
                             should_trigger_auction)
from crowdswap.econ import CostParams, expected_utility
from crowdswap.geoenv import METERS_PER_DEG_LAT, Location, bbox_around, cell_center, make_grid
from crowdswap.scenario import StrategyConfig
from crowdswap.traces import Task, TaskKind, TaskSpec

SOL = Location(40.4169, -3.7035)


def north_of(start, meters):
    return Location(start.lat + meters / METERS_PER_DEG_LAT, start.lon)


def parcel(task_id, pickup, dropoff, assignee=None, reward=5.0, penalty=5.0):
    task = Task(TaskSpec(task_id, TaskKind.PARCEL, [pickup, dropoff], 0.0, 1800.0, reward, penalty))
    task.assignee = assignee
    return task


class PairPredictor:
    """Delay probabilities looked up by (worker id, task id), with a default."""

    def __init__(self, delays, default=0.5):
        self.delays = delays
        self.default = default

    def prob_delay(self, agent, task, grid, now, held=None):
        return self.delays.get((agent.id, task.task_id), self.default)


# ============================================================================
# TRANSFER EVENTS
# ============================================================================

class TestTransferEvent(unittest.TestCase):

    def test_self_transfer_rejected(self):
        """A worker cannot hand a task to itself."""
        with self.assertRaises(ValueError):
            TransferEvent("t0", "w0", "w0", 0.0, Mechanism.RANDOM)

    def test_record_fields(self):
        """Transfer records carry type, mechanism name and price."""
        record = TransferEvent("t0", "w0", "w1", 12.0, Mechanism.AUCTION, 1.5).to_dict()
        self.assertEqual(record["type"], "transfer")
        self.assertEqual(record["mechanism"], "Auction")
        self.assertEqual(record["price"], 1.5)


# ============================================================================
# COLLABORATIVE TRANSFERS
# ============================================================================

class TestCollaborativeStep(unittest.TestCase):

    def setUp(self):
        self.grid = make_grid(bbox_around(SOL, 1000.0), 500.0)
        self.here = cell_center(self.grid, (1, 1))
        self.dest = cell_center(self.grid, (3, 3))
        self.courier = WorkerAgent("c0", "bike", self.here, [self.dest])
        self.task = parcel("t0", self.here, self.dest, assignee="c0")

    def _candidate(self, worker_id, cell=(1, 1)):
        return WorkerAgent(worker_id, "bike", cell_center(self.grid, cell), [self.dest])

    def test_empty_cell(self):
        """A candidate in another cell is not considered."""
        far = self._candidate("w1", cell=(3, 0))
        predictor = PairPredictor({("c0", "t0"): 0.9, ("w1", "t0"): 0.0})
        self.assertEqual(collaborative_step(self.grid, [(self.courier, self.task)], [far], predictor, 0.0), [])

    def test_better_candidate_receives(self):
        """The parcel moves to a co-located worker with lower delay."""
        predictor = PairPredictor({("c0", "t0"): 0.4, ("w1", "t0"): 0.1})
        events = collaborative_step(self.grid, [(self.courier, self.task)], [self._candidate("w1")], predictor, 5.0)
        self.assertEqual(events, [TransferEvent("t0", "c0", "w1", 5.0, Mechanism.COLLABORATIVE)])

    def test_tie_goes_to_lowest_id(self):
        """Equal delays are broken by the lowest worker id."""
        candidates = [self._candidate("w3"), self._candidate("w2"), self._candidate("w1")]
        predictor = PairPredictor({("c0", "t0"): 0.25, ("w1", "t0"): 0.3,
                                   ("w2", "t0"): 0.2, ("w3", "t0"): 0.2})
        events = collaborative_step(self.grid, [(self.courier, self.task)], candidates, predictor, 0.0)
        self.assertEqual([e.to_worker for e in events], ["w2"])

    def test_no_transfer_when_courier_is_best(self):
        """No handover unless the candidate is strictly better."""
        predictor = PairPredictor({("c0", "t0"): 0.1, ("w1", "t0"): 0.1})
        self.assertEqual(
            collaborative_step(self.grid, [(self.courier, self.task)], [self._candidate("w1")], predictor, 0.0), [])

    def test_candidate_takes_at_most_one_parcel(self):
        """A free candidate receives one parcel per step."""
        other = WorkerAgent("c1", "bike", self.here, [self.dest])
        task2 = parcel("t1", self.here, self.dest, assignee="c1")
        predictor = PairPredictor({("w1", "t0"): 0.0, ("w1", "t1"): 0.0}, default=0.9)
        events = collaborative_step(self.grid, [(self.courier, self.task), (other, task2)],
                                    [self._candidate("w1")], predictor, 0.0)
        self.assertEqual([(e.task_id, e.to_worker) for e in events], [("t0", "w1")])

    def test_transfers_strictly_lower_delay(self):
        """Any handover goes to a worker with strictly lower predicted delay."""
        rng = np.random.default_rng(12)
        for _ in range(200):
            names = [f"w{i}" for i in range(4)]
            delays = {(name, "t0"): float(rng.random()) for name in names + ["c0"]}
            predictor = PairPredictor(delays)
            events = collaborative_step(self.grid, [(self.courier, self.task)],
                                        [self._candidate(n) for n in names], predictor, 0.0)
            best = min(names, key=lambda n: (delays[(n, "t0")], n))
            if delays[(best, "t0")] < delays[("c0", "t0")]:
                self.assertEqual([e.to_worker for e in events], [best])
            else:
                self.assertEqual(events, [])


# ============================================================================
# AUCTIONS
# ============================================================================

class TestAuctionRules(unittest.TestCase):

    def setUp(self):
        self.worker = WorkerAgent("w0", "bike", SOL, [north_of(SOL, 1000.0)])
        self.task = parcel("t0", north_of(SOL, 200.0), north_of(SOL, 600.0), assignee="w0")

    def test_sure_success_is_kept(self):
        """A task that cannot fail is not put up for auction."""
        params = CostParams(fixed_cost_per_task=0.0)
        predictor = PairPredictor({("w0", "t0"): 0.0})
        self.assertFalse(should_trigger_auction(self.worker, self.task, predictor, None, 0.0, [self.task], params))

    def test_sure_failure_is_shed(self):
        """A task that is sure to fail is put up for auction."""
        predictor = PairPredictor({("w0", "t0"): 1.0})
        self.assertTrue(should_trigger_auction(self.worker, self.task, predictor, None, 0.0, [self.task]))

    def test_trigger_matches_direct_comparison(self):
        """The trigger fires exactly when dropping the task raises expected utility."""
        rng = np.random.default_rng(21)
        other = parcel("t1", north_of(SOL, -300.0), north_of(SOL, 100.0), assignee="w0")
        for _ in range(300):
            predictor = PairPredictor({("w0", "t0"): float(rng.random()), ("w0", "t1"): float(rng.random())})
            params = CostParams(fixed_cost_per_task=float(rng.uniform(0.0, 3.0)))
            held = [self.task, other]
            keep = expected_utility(self.worker, held, predictor, None, 0.0, params)
            shed = expected_utility(self.worker, [other], predictor, None, 0.0, params)
            self.assertEqual(should_trigger_auction(self.worker, self.task, predictor, None, 0.0, held, params),
                             shed > keep)

    def test_truthful_bid_value(self):
        """The bid is reward 5 minus fixed cost 1."""
        params = CostParams(fixed_cost_per_task=1.0)
        predictor = PairPredictor({("w0", "t0"): 0.0})
        self.assertAlmostEqual(compute_bid(self.worker, self.task, predictor, None, 0.0, [], params), 4.0, places=6)

    def test_no_bid_when_not_positive(self):
        """Workers with nothing to gain do not bid."""
        predictor = PairPredictor({("w0", "t0"): 1.0})
        self.assertIsNone(compute_bid(self.worker, self.task, predictor, None, 0.0, []))

    def test_bid_equals_two_evaluations(self):
        """The bid is the expected-utility gain of adding the task to the held set."""
        rng = np.random.default_rng(5)
        held = parcel("t1", north_of(SOL, -300.0), north_of(SOL, 100.0))
        for _ in range(200):
            predictor = PairPredictor({("w0", "t0"): float(rng.random()), ("w0", "t1"): float(rng.random())})
            gain = (expected_utility(self.worker, [held, self.task], predictor, None, 0.0)
                    - expected_utility(self.worker, [held], predictor, None, 0.0))
            bid = compute_bid(self.worker, self.task, predictor, None, 0.0, [held])
            if gain > 0:
                self.assertEqual(bid, gain)
            else:
                self.assertIsNone(bid)

    def test_second_price(self):
        """The highest bidder pays the second-highest bid."""
        self.assertEqual(resolve_auction([("B", 3.0), ("A", 5.0), ("C", 2.0)]), ("A", 3.0))

    def test_single_bid_clears_at_zero(self):
        """A lone bidder pays nothing."""
        self.assertEqual(resolve_auction([("A", 4.0)]), ("A", 0.0))

    def test_no_bids(self):
        self.assertIsNone(resolve_auction([]))

    def test_equal_bids_go_to_lowest_id(self):
        self.assertEqual(resolve_auction([("B", 2.0), ("A", 2.0)]), ("A", 2.0))

    def test_truthful_bidding_is_dominant(self):
        """No bidder gains by bidding anything but its value."""
        rng = np.random.default_rng(2024)
        for _ in range(10_000):
            n = int(rng.integers(1, 5))
            values = {f"b{i}": float(rng.uniform(0.01, 10.0)) for i in range(n)}
            deviator = f"b{int(rng.integers(0, n))}"

            def payoff(bid):
                bids = [(name, v) for name, v in values.items() if name != deviator]
                if bid > 0:
                    bids.append((deviator, bid))
                outcome = resolve_auction(bids)
                if outcome is None or outcome[0] != deviator:
                    return 0.0
                return values[deviator] - outcome[1]

            truthful = payoff(values[deviator])
            for bid in np.linspace(0.0, 12.0, 25):
                self.assertLessEqual(payoff(float(bid)), truthful + 1e-12)

    def test_run_auction_respects_neighbourhood(self):
        """Only workers within the radius are asked to bid."""
        near = WorkerAgent("w1", "bike", north_of(SOL, 100.0), [north_of(SOL, 1000.0)])
        far = WorkerAgent("w2", "bike", north_of(SOL, 5000.0), [north_of(SOL, 6000.0)])
        predictor = PairPredictor({}, default=0.0)
        valuable = parcel("t0", north_of(SOL, 200.0), north_of(SOL, 600.0), assignee="w0", reward=50.0)
        auction = run_auction(self.worker, valuable, [self.worker, far, near], predictor, None, 0.0,
                              lambda a: [], radius_m=1000.0)
        self.assertEqual([name for name, _ in auction.bids], ["w1"])
        self.assertEqual(auction.outcome, ("w1", 0.0))
        unlimited = run_auction(self.worker, valuable, [far, near], predictor, None, 0.0, lambda a: [])
        self.assertEqual([name for name, _ in unlimited.bids], ["w1", "w2"])
        self.assertTrue(math.isinf(unlimited.neighborhood_radius_m))


# ============================================================================
# BASELINES
# ============================================================================

class TestRandomStep(unittest.TestCase):

    def setUp(self):
        self.holder = WorkerAgent("w0", "bike", SOL, [north_of(SOL, 1000.0)])
        self.task = parcel("t0", SOL, north_of(SOL, 500.0), assignee="w0")
        self.holder.tasks.append("t0")
        self.near = WorkerAgent("w1", "bike", north_of(SOL, 50.0), [north_of(SOL, 900.0)])
        self.far = WorkerAgent("w2", "bike", north_of(SOL, 800.0), [north_of(SOL, 900.0)])

    def test_zero_probability_never_transfers(self):
        """p=0 never moves a task."""
        rng = np.random.default_rng(0)
        for step in range(1000):
            self.assertEqual(random_step([self.task], [self.holder, self.near], 0.0, rng, float(step)), [])

    def test_certain_transfer_goes_to_nearest_free_worker(self):
        """p=1 hands the task to the nearest worker without tasks."""
        events = random_step([self.task], [self.holder, self.far, self.near], 1.0, np.random.default_rng(0), 3.0)
        self.assertEqual(events, [TransferEvent("t0", "w0", "w1", 3.0, Mechanism.RANDOM)])

    def test_no_free_worker(self):
        self.near.tasks.append("t9")
        events = random_step([self.task], [self.holder, self.near], 1.0, np.random.default_rng(0), 0.0)
        self.assertEqual(events, [])

    def test_reproducible_with_seed(self):
        """Equal seeds draw the same transfers."""
        def count(seed):
            rng = np.random.default_rng(seed)
            return sum(len(random_step([self.task], [self.holder, self.near], 0.3, rng, float(s)))
                       for s in range(200))
        self.assertEqual(count(7), count(7))

    def test_probability_out_of_range(self):
        with self.assertRaises(ValueError):
            random_step([self.task], [self.holder], 1.5, np.random.default_rng(0), 0.0)


class TestForcedStep(unittest.TestCase):

    def setUp(self):
        self.holder = WorkerAgent("w0", "bike", SOL, [north_of(SOL, 1000.0)])
        self.task = parcel("t0", SOL, north_of(SOL, 500.0), assignee="w0")
        self.others = [WorkerAgent(f"w{i}", "bike", north_of(SOL, 10.0 * i), [north_of(SOL, 900.0)])
                       for i in range(1, 4)]

    def test_equal_probabilities_no_transfer(self):
        """Nobody is better, so nothing moves."""
        predictor = PairPredictor({}, default=0.3)
        self.assertEqual(forced_step([self.task], [self.holder, *self.others], predictor, None, 0.0), [])

    def test_clearly_better_worker_receives(self):
        """The most likely worker receives the task."""
        predictor = PairPredictor({("w0", "t0"): 0.6, ("w2", "t0"): 0.1})
        events = forced_step([self.task], [self.holder, *self.others], predictor, None, 0.0)
        self.assertEqual(events, [TransferEvent("t0", "w0", "w2", 0.0, Mechanism.FORCED)])

    def test_margin_must_be_reached(self):
        """A gain below the margin is not enough."""
        predictor = PairPredictor({("w0", "t0"): 0.3, ("w1", "t0"): 0.27}, default=0.5)
        self.assertEqual(forced_step([self.task], [self.holder, *self.others], predictor, None, 0.0), [])

    def test_recipient_is_argmax(self):
        """The recipient always has the highest success probability."""
        rng = np.random.default_rng(31)
        for _ in range(200):
            delays = {(w.id, "t0"): float(rng.random()) for w in [self.holder, *self.others]}
            predictor = PairPredictor(delays)
            events = forced_step([self.task], [self.holder, *self.others], predictor, None, 0.0)
            best = max(self.others, key=lambda w: (1.0 - delays[(w.id, "t0")], [-ord(c) for c in w.id]))
            gain = (1.0 - delays[(best.id, "t0")]) - (1.0 - delays[("w0", "t0")])
            if gain >= 0.05:
                self.assertEqual([e.to_worker for e in events], [best.id])
            else:
                self.assertEqual(events, [])

    def test_single_task_skips_busy_workers(self):
        """With single_task set, busy workers are not eligible."""
        self.others[1].tasks.append("t9")
        predictor = PairPredictor({("w0", "t0"): 0.6, ("w2", "t0"): 0.1, ("w3", "t0"): 0.2})
        events = forced_step([self.task], [self.holder, *self.others], predictor, None, 0.0, single_task=True)
        self.assertEqual([e.to_worker for e in events], ["w3"])


class TestStrategyRegistry(unittest.TestCase):

    def test_all_names_registered(self):
        self.assertEqual(sorted(STRATEGIES), ["att", "collaborative", "forced", "not", "random"])

    def test_unknown_name(self):
        with self.assertRaises(ValueError):
            make_strategy(StrategyConfig(name="greedy"))

    def test_reconsider_cadence(self):
        """A task is reconsidered at most once per period."""
        strategy = make_strategy(StrategyConfig(name="forced", reconsider_period_s=30.0))
        task = parcel("t0", SOL, north_of(SOL, 10.0))
        self.assertTrue(strategy._due(task, 0.0))
        self.assertFalse(strategy._due(task, 29.0))
        self.assertTrue(strategy._due(task, 30.0))


if __name__ == '__main__':
    unittest.main()
