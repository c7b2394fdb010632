import unittest

import numpy as np

from crowdswap.agents import WorkerAgent
from crowdswap.econ import (DEFAULT_COSTS, CostParams, cost, expected_utility, marginal_detour_m,
                            realized_utility, revenue)
from crowdswap.errors import MissingOutcomeError
from crowdswap.geoenv import METERS_PER_DEG_LAT, Location, OperatingArea, destination_point
from crowdswap.traces import Task, TaskKind, TaskSpec

SOL = Location(40.4169, -3.7035)


def north_of(start, meters):
    return Location(start.lat + meters / METERS_PER_DEG_LAT, start.lon)


def parcel(task_id, pickup, dropoff, reward=5.0, penalty=5.0):
    return Task(TaskSpec(task_id, TaskKind.PARCEL, [pickup, dropoff], 0.0, 1800.0, reward, penalty))


class FixedPredictor:
    """Delay probabilities looked up by task id."""

    def __init__(self, delays):
        self.delays = delays

    def prob_delay(self, agent, task, grid, now, held=None):
        return self.delays[task.task_id]


# ============================================================================
# REVENUE
# ============================================================================

class TestRevenue(unittest.TestCase):

    def setUp(self):
        self.task = parcel("t0", SOL, north_of(SOL, 100.0))

    def test_success_earns_reward(self):
        """A delivered task earns its reward."""
        self.assertEqual(revenue([self.task], {"t0": 1}), 5.0)

    def test_failure_pays_penalty(self):
        """A failed task costs its penalty."""
        self.assertEqual(revenue([self.task], {"t0": 0}), -5.0)

    def test_empty_set(self):
        self.assertEqual(revenue([], {}), 0.0)

    def test_missing_outcome(self):
        """Every task in the set needs an outcome."""
        with self.assertRaises(MissingOutcomeError):
            revenue([self.task], {})

    def test_additive_over_disjoint_sets(self):
        """Revenue of a union is the sum of the parts."""
        other = parcel("t1", SOL, north_of(SOL, 50.0), reward=3.0, penalty=7.0)
        outcomes = {"t0": 1, "t1": 0}
        self.assertEqual(revenue([self.task, other], outcomes),
                         revenue([self.task], outcomes) + revenue([other], outcomes))


# ============================================================================
# COST
# ============================================================================

class TestCost(unittest.TestCase):

    def setUp(self):
        self.worker = WorkerAgent("w0", "bike", SOL, [north_of(SOL, 1000.0)])

    def test_empty_set_is_free(self):
        self.assertEqual(cost(self.worker, []), 0.0)

    def test_task_on_route_costs_fixed_part_only(self):
        """Pickup and dropoff on the ride add no meters, only the per-task cost."""
        on_route = parcel("t0", north_of(SOL, 200.0), north_of(SOL, 600.0))
        self.assertAlmostEqual(marginal_detour_m(self.worker, [on_route]), 0.0, delta=1e-6)
        self.assertAlmostEqual(cost(self.worker, [on_route]), DEFAULT_COSTS.fixed_cost_per_task, places=6)

    def test_detour_priced_by_mode(self):
        """Walking meters cost twice what cycling meters cost."""
        # pickup 100 m behind the worker: 200 m extra
        behind = parcel("t0", north_of(SOL, -100.0), SOL)
        self.assertAlmostEqual(cost(self.worker, [behind]), 0.002 * 200.0 + 0.25, places=6)
        walker = WorkerAgent("w1", "walk", SOL, [north_of(SOL, 1000.0)])
        self.assertAlmostEqual(cost(walker, [behind]), 0.004 * 200.0 + 0.25, places=6)

    def test_detour_follows_a_turning_ride(self):
        """A task along an L-shaped ride costs no meters; the straight line is not the baseline."""
        corner = north_of(SOL, 1000.0)
        worker = WorkerAgent("w1", "bike", SOL, [corner, destination_point(corner, 90.0, 1000.0)])
        on_corner = parcel("t0", north_of(SOL, 500.0), corner)
        self.assertAlmostEqual(marginal_detour_m(worker, [on_corner]), 0.0, delta=1.0)

    def test_detoured_worker_measured_against_direct_leg(self):
        """Once detoured, the baseline is the straight leg to the destination."""
        corner = north_of(SOL, 1000.0)
        worker = WorkerAgent("w1", "bike", SOL, [corner, destination_point(corner, 90.0, 1000.0)])
        worker.detoured = True
        behind = parcel("t0", north_of(SOL, -100.0), SOL)
        self.assertAlmostEqual(marginal_detour_m(worker, [behind]), 200.0, delta=1.0)

    def test_weakly_monotone_in_set_size(self):
        a = parcel("t0", north_of(SOL, -100.0), SOL)
        b = parcel("t1", north_of(SOL, 300.0), north_of(SOL, 1300.0))
        self.assertGreaterEqual(cost(self.worker, [a, b]), cost(self.worker, [a]))

    def test_subadditive_on_random_instances(self):
        """Serving two tasks in one trip never costs more than serving them apart."""
        area = OperatingArea(SOL, 3000.0)
        rng = np.random.default_rng(17)
        for i in range(1000):
            worker = WorkerAgent(f"w{i}", ("walk", "bike", "motorbike")[i % 3], area.sample_point(rng),
                                 [area.sample_point(rng)])
            t1 = parcel("t1", area.sample_point(rng), area.sample_point(rng))
            t2 = parcel("t2", area.sample_point(rng), area.sample_point(rng))
            together = cost(worker, [t1, t2])
            apart = cost(worker, [t1]) + cost(worker, [t2])
            self.assertLessEqual(together, apart + 1e-9)

    def test_negative_parameters_rejected(self):
        with self.assertRaises(ValueError):
            CostParams(fixed_cost_per_task=-1.0)
        with self.assertRaises(ValueError):
            CostParams(cost_per_meter={"walk": 0.1})


# ============================================================================
# UTILITY
# ============================================================================

class TestExpectedUtility(unittest.TestCase):

    def setUp(self):
        self.worker = WorkerAgent("w0", "bike", SOL, [north_of(SOL, 1000.0)])
        self.task = parcel("t0", north_of(SOL, 200.0), north_of(SOL, 600.0))

    def test_sure_success_minus_cost(self):
        """P(delay)=0: reward 5 minus fixed cost 2."""
        params = CostParams(fixed_cost_per_task=2.0)
        eu = expected_utility(self.worker, [self.task], FixedPredictor({"t0": 0.0}), None, 0.0, params)
        self.assertAlmostEqual(eu, 3.0, places=6)

    def test_sure_failure_costs_penalty(self):
        """P(delay)=1: the penalty is all that is left."""
        params = CostParams(fixed_cost_per_task=0.0)
        eu = expected_utility(self.worker, [self.task], FixedPredictor({"t0": 1.0}), None, 0.0, params)
        self.assertAlmostEqual(eu, -5.0, places=6)

    def test_monotone_in_success_probability(self):
        """Expected utility rises strictly with the success probability."""
        values = [expected_utility(self.worker, [self.task], FixedPredictor({"t0": 1.0 - q}), None, 0.0)
                  for q in np.linspace(0.0, 1.0, 21)]
        self.assertTrue(all(b > a for a, b in zip(values, values[1:])))

    def test_realized_equals_expected_with_known_outcomes(self):
        """Probabilities of exactly 0 and 1 reproduce the realized utility."""
        other = parcel("t1", north_of(SOL, -100.0), SOL, reward=4.0, penalty=6.0)
        tasks = [self.task, other]
        outcomes = {"t0": 1, "t1": 0}
        predictor = FixedPredictor({"t0": 0.0, "t1": 1.0})
        self.assertEqual(realized_utility(self.worker, tasks, outcomes),
                         expected_utility(self.worker, tasks, predictor, None, 0.0))

    def test_empty_set_is_zero(self):
        self.assertEqual(expected_utility(self.worker, [], FixedPredictor({}), None, 0.0), 0.0)


if __name__ == '__main__':
    unittest.main()
