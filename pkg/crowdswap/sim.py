"""
Discrete-time simulation engine.

Each tick of `tick_s` seconds, starting at t0 = k * tick_s, runs in a fixed
order:

  1. step the traffic grid when t0 is a positive multiple of its period
  2. inject workers (trace start <= t0) and release tasks (release <= t0),
     then assign waiting tasks to the nearest eligible worker
  3. draw incidents when t0 is a multiple of one minute
  4. advance every active worker, in worker-id order
  5. settle completed stops, tasks and missed deadlines at now = t0 + tick_s
     (rewards, penalties, costs, learner labels)
  6. record learner observations of assigned tasks
  7. run the coordination strategy (predictions, transfers, payments)

Random draws come from three streams spawned from the scenario seed:
workload (synthetic rides and tasks), learner (forest bagging) and engine.
The engine stream is consumed in this order each tick: traffic (one uniform
per cell, row-major), incidents (per active worker in id order: one uniform,
plus one duration uniform on a hit), then the Random strategy (one uniform
per assigned task in task-id order).
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from crowdswap.agents import WorkerAgent, advance, replan
from crowdswap.coord import make_strategy
from crowdswap.econ import cost
from crowdswap.errors import UnsupportedError
from crowdswap.geoenv import TrafficState, distance_m, make_grid, step_traffic
from crowdswap.learn import DelayPredictor, Label, aggregate_importance, make_model
from crowdswap.scenario import ScenarioKind
from crowdswap.traces import (Task, TaskKind, TaskStatus, gen_tasks, load_tasks, load_traces,
                              remaining_stops, synth_traces)

logger = logging.getLogger(__name__)

INCIDENT_PERIOD_S = 60.0
GRACE_DEADLINES = 2.0


@dataclass
class RunResult:
    strategy: str
    kind: str
    seed: int
    n_tasks: int = 0
    n_completed: int = 0
    n_delayed: int = 0
    n_expired: int = 0
    delay_rate: float = 0.0
    mean_completion_s: float = 0.0
    n_transfers: int = 0
    n_reassigned_tasks: int = 0
    in_time_after_transfer: int = 0
    delayed_after_transfer: int = 0
    n_auctions: int = 0
    n_incidents: int = 0
    n_workers: int = 0
    profits: list = field(default_factory=list)          # participants, by worker id
    mean_profit: float = 0.0
    total_rewards: float = 0.0
    total_penalties: float = 0.0
    total_costs: float = 0.0
    total_payments: float = 0.0
    conservation_error: float = 0.0
    end_time_s: float = 0.0
    learner: dict = field(default_factory=dict)
    events: list = field(default_factory=list)

    def to_dict(self):
        """JSON-ready result; the event log is written separately."""
        out = {k: v for k, v in self.__dict__.items() if k != "events"}
        out["profits"] = list(self.profits)
        return out


@dataclass
class Report:
    strategy: str
    preset: str
    n_runs: int
    means: dict
    stds: dict
    profits: list                 # pooled over runs, sorted ascending
    fraction_nonpositive: float
    errors: list = field(default_factory=list)

    def profit_cdf(self, x):
        """Fraction of pooled worker profits <= x."""
        if not self.profits:
            return 0.0
        return float(np.searchsorted(self.profits, x, side="right")) / len(self.profits)

    def to_dict(self):
        values = np.asarray(self.profits, dtype=float)
        xs, counts = np.unique(values, return_counts=True)
        cdf = np.cumsum(counts) / len(values) if len(values) else counts
        return {
            "strategy": self.strategy,
            "preset": self.preset,
            "n_runs": self.n_runs,
            "means": self.means,
            "stds": self.stds,
            "fraction_nonpositive": self.fraction_nonpositive,
            "profit_cdf": [[float(x), float(f)] for x, f in zip(xs, cdf)],
            "errors": list(self.errors),
        }


SUMMARY_FIELDS = ("delay_rate", "mean_completion_s", "n_transfers", "n_reassigned_tasks",
                  "mean_profit", "f1")


def summarize(runs, preset=""):
    """Mean and population standard deviation of each summary field, plus pooled profits."""
    runs = list(runs)
    if not runs:
        raise ValueError("summarize needs at least one run")
    means, stds = {}, {}
    for name in SUMMARY_FIELDS:
        values = np.array([_summary_value(r, name) for r in runs], dtype=float)
        means[name] = float(values.mean())
        stds[name] = float(values.std(ddof=0))
    pooled = sorted(p for r in runs for p in r.profits)
    nonpositive = sum(1 for p in pooled if p <= 0.0)
    return Report(strategy=runs[0].strategy, preset=preset, n_runs=len(runs), means=means, stds=stds,
                  profits=pooled, fraction_nonpositive=nonpositive / len(pooled) if pooled else 0.0)


def _summary_value(run, name):
    if name == "f1":
        return run.learner.get("f1", 0.0)
    return getattr(run, name)


# ============================================================================
# INCIDENTS
# ============================================================================

def apply_incidents(agents, incident_probability, rng, min_duration_s=120.0, max_duration_s=600.0):
    """
    Give each active agent, in id order, an incident with the given
    probability. A hit immobilises the agent for U[min, max] seconds,
    extending any incident already running. Returns [(agent, duration_s)].
    """
    if not 0.0 <= incident_probability <= 1.0:
        raise ValueError(f"incident_probability must be within [0, 1], got {incident_probability}")
    hits = []
    if incident_probability == 0.0:
        return hits
    for agent in sorted(agents, key=lambda a: a.id):
        if not agent.active:
            continue
        if rng.random() < incident_probability:
            duration = float(rng.uniform(min_duration_s, max_duration_s))
            agent.incident_remaining_s = max(agent.incident_remaining_s, duration)
            hits.append((agent, duration))
    return hits


# ============================================================================
# ENGINE
# ============================================================================

class World:
    """Mutable state of one run, as seen by the coordination strategies."""

    def __init__(self, scenario, grid, predictor, rng):
        self.scenario = scenario
        self.grid = grid
        self.predictor = predictor
        self.rng = rng
        self.costs = scenario.costs
        self.single_task = scenario.single_task
        self.neighborhood_radius_m = scenario.neighborhood_radius_m
        self.agents = {}
        self.tasks = {}
        self.events = []
        self.n_transfers = 0
        self.total_payments = 0.0
        self._active = []
        self._assigned = {}
        self.last_observed = {}

    # --- queries -------------------------------------------------------

    def agent(self, worker_id):
        return self.agents[worker_id]

    def active_agents(self):
        return list(self._active)

    def assigned_tasks(self):
        return [self._assigned[tid] for tid in sorted(self._assigned)]

    def tasks_of(self, agent):
        return [self.tasks[tid] for tid in agent.tasks]

    def log(self, kind, now, **fields):
        self.events.append({"type": kind, "t": now, **fields})

    # --- mutations -----------------------------------------------------

    def add_agent(self, agent):
        self.agents[agent.id] = agent
        self._active.append(agent)
        self._active.sort(key=lambda a: a.id)

    def drop_inactive(self):
        self._active = [a for a in self._active if a.active]

    def assign(self, task, agent, now):
        task.quoted_cost = self._marginal_cost(agent, task)
        agent.tasks.append(task.task_id)
        agent.participated = True
        task.assignee = agent.id
        task.status = TaskStatus.ASSIGNED
        self._assigned[task.task_id] = task
        self._replan(agent)
        self.log("assign", now, task_id=task.task_id, worker_id=agent.id)

    def finish(self, task, status):
        """Take a task out of circulation as COMPLETED or EXPIRED."""
        task.status = status
        self._assigned.pop(task.task_id, None)
        self.last_observed.pop(task.task_id, None)

    def apply_transfer(self, event):
        task = self.tasks[event.task_id]
        if task.assignee != event.from_worker or task.status is not TaskStatus.ASSIGNED:
            raise RuntimeError(f"Transfer of {task.task_id} from {event.from_worker}, "
                               f"but it is held by {task.assignee}")
        seller, buyer = self.agents[event.from_worker], self.agents[event.to_worker]
        seller.tasks.remove(task.task_id)
        self.predictor.discard(seller.id, task.task_id)
        self.last_observed.pop(task.task_id, None)

        task.quoted_cost = self._marginal_cost(buyer, task)
        buyer.tasks.append(task.task_id)
        buyer.participated = True
        task.assignee = buyer.id
        task.n_transfers += 1
        if event.price:
            buyer.ledger -= event.price
            seller.ledger += event.price
            self.total_payments += event.price
        self.n_transfers += 1
        self._replan(seller)
        self._replan(buyer)
        self.events.append(event.to_dict())

    def _marginal_cost(self, agent, task):
        held = self.tasks_of(agent)
        return cost(agent, held + [task], self.costs) - cost(agent, held, self.costs)

    def _replan(self, agent):
        replan(agent, [(t.task_id, remaining_stops(t)) for t in self.tasks_of(agent)])


class Simulation:
    """One run of a scenario. Use `run()` unless stepping by hand."""

    def __init__(self, scenario, traces=None, tasks=None):
        scenario.validate()
        self.scenario = scenario
        workload_ss, learner_ss, engine_ss = np.random.SeedSequence(scenario.seed).spawn(3)
        workload_rng = np.random.default_rng(workload_ss)
        self.learner_rng = np.random.default_rng(learner_ss)
        self.rng = np.random.default_rng(engine_ss)

        self.area = scenario.area.operating_area()
        tc = scenario.traffic
        self.grid = make_grid(self.area.bbox, tc.cell_size_m, tc.transition,
                              TrafficState.parse(tc.initial_state), tc.update_period_s)

        self.traces = self._inside(traces if traces is not None else self._load_traces(workload_rng),
                                   lambda tr: tr.locations, "ride")
        self.task_specs = self._inside(tasks if tasks is not None else self._load_tasks(workload_rng),
                                       lambda t: t.locations, "task")
        self.traces.sort(key=lambda tr: (tr.start_time, tr.worker_id))
        self.task_specs.sort(key=lambda t: (t.release_time, t.task_id))

        lc = scenario.learner
        self.predictor = DelayPredictor(
            lambda: make_model(lc.variant, rng=self.learner_rng, n_trees=lc.n_trees, k=lc.k,
                               window_size=lc.window_size, delta=lc.delta, grace_period=lc.grace_period,
                               tie_threshold=lc.tie_threshold),
            scope=lc.scope,
            tasks_of=lambda agent: self.world.tasks_of(agent),
        )
        self.strategy = make_strategy(scenario.strategy)
        self.world = World(scenario, self.grid, self.predictor, self.rng)
        self.pending = []
        self.n_incidents = 0
        self.totals = {"rewards": 0.0, "penalties": 0.0, "costs": 0.0}
        self._next_trace = 0
        self._next_task = 0
        self._step = 0

    # --- workload ------------------------------------------------------

    def _load_traces(self, rng):
        wc = self.scenario.workers
        if wc.source == "trace_file":
            return load_traces(wc.trace_file, log_callback=logger.warning, bbox=self.grid.bbox)
        return synth_traces(wc.count, self.area, self.scenario.duration_s, wc.mode_mix, rng,
                            waypoints=(wc.min_waypoints, wc.max_waypoints),
                            kinematics=self.scenario.kinematics)

    def _load_tasks(self, rng):
        tc = self.scenario.tasks
        if tc.task_file:
            return load_tasks(tc.task_file)
        if tc.total == 0:
            return []
        kind = TaskKind.PARCEL if self.scenario.kind is ScenarioKind.CROWDSHIPPING else TaskKind.SENSING_CHAIN
        return gen_tasks(kind, tc.rate_per_hour, tc.total, self.area, tc.deadline_s, tc.reward,
                         tc.penalty, rng, chain_length=tc.chain_length, spacing_m=tc.spacing_m)

    def _inside(self, items, locations, what):
        kept = []
        for item in items:
            if all(self.grid.bbox.contains(p) for p in locations(item)):
                kept.append(item)
            else:
                logger.warning("Dropped %s %s: it leaves the operating area", what,
                               getattr(item, "worker_id", getattr(item, "task_id", "?")))
        return kept

    # --- main loop -----------------------------------------------------

    def run(self):
        sc = self.scenario
        cap = sc.duration_s + GRACE_DEADLINES * sc.tasks.deadline_s
        while True:
            t0 = self._step * sc.tick_s
            now = t0 + sc.tick_s
            if t0 >= sc.duration_s and (not self._in_flight() or t0 >= cap):
                break
            self.tick(t0, now)
            self._step += 1
        end = self._step * sc.tick_s
        self._close(end)
        return self._result(end)

    def tick(self, t0, now):
        sc = self.scenario
        world = self.world
        if t0 > 0 and _is_multiple(t0, self.grid.update_period_s):
            step_traffic(self.grid, self.rng)

        self._inject(t0)
        self._assign_pending(t0)

        if _is_multiple(t0, INCIDENT_PERIOD_S):
            for agent, duration in apply_incidents(world.active_agents(), sc.incidents.probability, self.rng,
                                                   sc.incidents.min_duration_s, sc.incidents.max_duration_s):
                self.n_incidents += 1
                world.log("incident", t0, worker_id=agent.id, duration_s=duration)

        for agent in world.active_agents():
            advance(agent, sc.tick_s, self.grid, sc.kinematics)
            self._service_stops(agent, now)
            if not agent.active:
                self._logout(agent, now)
        world.drop_inactive()

        self._check_deadlines(now)
        self._observe(now)
        self.strategy.step(world, now)

    def _in_flight(self):
        return (self._next_task < len(self.task_specs) or bool(self.pending)
                or bool(self.world.assigned_tasks()))

    def _inject(self, t0):
        world = self.world
        while self._next_trace < len(self.traces) and self.traces[self._next_trace].start_time <= t0:
            trace = self.traces[self._next_trace]
            self._next_trace += 1
            locations = trace.locations
            world.add_agent(WorkerAgent(id=trace.worker_id, mode=trace.mode, position=locations[0],
                                        route=list(locations[1:])))
            world.log("worker_start", t0, worker_id=trace.worker_id, mode=trace.mode.value)
        while self._next_task < len(self.task_specs) and self.task_specs[self._next_task].release_time <= t0:
            task = Task(spec=self.task_specs[self._next_task])
            self._next_task += 1
            world.tasks[task.task_id] = task
            self.pending.append(task)
            world.log("release", t0, task_id=task.task_id)

    def _assign_pending(self, t0):
        """Nearest eligible worker to the task's next stop, ties by worker id."""
        world = self.world
        waiting = []
        taken = set()
        for task in self.pending:
            if t0 > task.deadline:
                self._expire(task, t0, "expired unassigned")
                continue
            stop = remaining_stops(task)[0]
            eligible = [a for a in world.active_agents()
                        if not (world.single_task and (a.tasks or a.id in taken))]
            if not eligible:
                waiting.append(task)
                continue
            agent = min(eligible, key=lambda a: (distance_m(a.position, stop), a.id))
            taken.add(agent.id)
            world.assign(task, agent, t0)
        self.pending = waiting

    def _service_stops(self, agent, now):
        radius = self.scenario.kinematics.service_radius_m
        for task in list(self.world.tasks_of(agent)):
            while task.next_index < len(task.spec.locations):
                stop = task.spec.locations[task.next_index]
                if stop in agent.reached or distance_m(agent.position, stop) <= radius:
                    task.next_index += 1
                else:
                    break
            if task.next_index == len(task.spec.locations):
                self._complete(task, agent, now)

    def _complete(self, task, agent, now):
        self.world.finish(task, TaskStatus.COMPLETED)
        task.completed_at = now
        agent.tasks.remove(task.task_id)
        in_time = now <= task.deadline
        self._settle(task, agent, success=in_time)
        self.world.log("complete", now, task_id=task.task_id, worker_id=agent.id, in_time=in_time)
        if not task.label_known:
            self._label(task, Label.NOT_DELAYED if in_time else Label.DELAYED, now)

    def _settle(self, task, agent, success):
        if success:
            agent.ledger += task.reward
            self.totals["rewards"] += task.reward
        else:
            agent.ledger -= task.penalty
            self.totals["penalties"] += task.penalty
        agent.ledger -= task.quoted_cost
        self.totals["costs"] += task.quoted_cost

    def _label(self, task, label, now):
        task.label_known = True
        n = self.predictor.resolve_task(task.task_id, label)
        self.world.last_observed.pop(task.task_id, None)
        self.world.log("label", now, task_id=task.task_id, label=label.name, n_items=n)

    def _check_deadlines(self, now):
        for task in self.world.assigned_tasks():
            if not task.label_known and now > task.deadline:
                self._label(task, Label.DELAYED, now)

    def _logout(self, agent, now):
        world = self.world
        for task in list(world.tasks_of(agent)):
            logger.warning("Worker %s logged out holding %s; the task fails", agent.id, task.task_id)
            agent.tasks.remove(task.task_id)
            self._fail(task, agent, now, "holder logged out")
        world.log("worker_end", now, worker_id=agent.id)

    def _fail(self, task, agent, now, reason):
        self.world.finish(task, TaskStatus.EXPIRED)
        self._settle(task, agent, success=False)
        self.world.log("expire", now, task_id=task.task_id, worker_id=agent.id, reason=reason)
        if not task.label_known:
            self._label(task, Label.DELAYED, now)

    def _expire(self, task, now, reason):
        logger.warning("Task %s %s", task.task_id, reason)
        self.world.finish(task, TaskStatus.EXPIRED)
        self.world.log("expire", now, task_id=task.task_id, reason=reason)

    def _observe(self, now):
        period = self.scenario.learner.observe_period_s
        world = self.world
        for task in world.assigned_tasks():
            last = world.last_observed.get(task.task_id)
            if last is None or now - last >= period:
                # carried past the deadline: the label is known, the item trains right away
                label = Label.DELAYED if task.label_known else None
                self.predictor.observe(world.agent(task.assignee), task, self.grid, now, label)
                world.last_observed[task.task_id] = now

    def _close(self, end):
        """Terminate everything still open at the end of the run."""
        for task in self.pending:
            self._expire(task, end, "expired unassigned")
        self.pending = []
        for task in self.world.assigned_tasks():
            agent = self.world.agent(task.assignee)
            agent.tasks.remove(task.task_id)
            self._fail(task, agent, end, "run ended")
        while self._next_task < len(self.task_specs):
            task = Task(spec=self.task_specs[self._next_task])
            self._next_task += 1
            self.world.tasks[task.task_id] = task
            self._expire(task, end, "released after the run ended")

    # --- results -------------------------------------------------------

    def _result(self, end):
        world = self.world
        tasks = [world.tasks[tid] for tid in sorted(world.tasks)]
        completed = [t for t in tasks if t.status is TaskStatus.COMPLETED]
        delayed = [t for t in tasks if t.delayed]
        reassigned = [t for t in tasks if t.n_transfers > 0]
        participants = [world.agents[wid] for wid in sorted(world.agents) if world.agents[wid].participated]
        profits = [a.ledger for a in participants]

        ledger_sum = math.fsum(a.ledger for a in world.agents.values())
        expected = self.totals["rewards"] - self.totals["penalties"] - self.totals["costs"]

        result = RunResult(
            strategy=self.scenario.strategy.name,
            kind=self.scenario.kind.value,
            seed=self.scenario.seed,
            n_tasks=len(tasks),
            n_completed=len(completed),
            n_delayed=len(delayed),
            n_expired=sum(1 for t in tasks if t.status is TaskStatus.EXPIRED),
            delay_rate=len(delayed) / len(tasks) if tasks else 0.0,
            mean_completion_s=(math.fsum(t.completed_at - t.spec.release_time for t in completed) / len(completed)
                               if completed else 0.0),
            n_transfers=world.n_transfers,
            n_reassigned_tasks=len(reassigned),
            in_time_after_transfer=sum(1 for t in reassigned if not t.delayed),
            delayed_after_transfer=sum(1 for t in reassigned if t.delayed),
            n_auctions=len(getattr(self.strategy, "auctions", ())),
            n_incidents=self.n_incidents,
            n_workers=len(world.agents),
            profits=profits,
            mean_profit=math.fsum(profits) / len(profits) if profits else 0.0,
            total_rewards=self.totals["rewards"],
            total_penalties=self.totals["penalties"],
            total_costs=self.totals["costs"],
            total_payments=world.total_payments,
            conservation_error=ledger_sum - expected,
            end_time_s=end,
            learner=self._learner_summary(),
            events=world.events,
        )
        if abs(result.conservation_error) > 1e-9 * max(1.0, len(tasks)):
            logger.error("Money is not conserved: ledgers %r vs settlements %r", ledger_sum, expected)
        return result

    def _learner_summary(self):
        evaluator = self.predictor.evaluator
        precision, recall, f1 = evaluator.metrics
        summary = {
            "variant": self.scenario.learner.variant,
            "scope": self.scenario.learner.scope,
            "n_resolved": evaluator.n_resolved,
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "f1_history": [list(row) for row in evaluator.history],
            "feature_importance": None,
            "category_importance": None,
        }
        try:
            weights = self.predictor.feature_importance()
        except UnsupportedError:
            return summary
        summary["feature_importance"] = weights
        summary["category_importance"] = aggregate_importance(weights)
        return summary


def _is_multiple(t, period):
    ratio = t / period
    return abs(ratio - round(ratio)) < 1e-9


def run(scenario, traces=None, tasks=None):
    """Run one scenario to completion and return its RunResult."""
    logger.info("Running %s/%s seed %d", scenario.kind.value, scenario.strategy.name, scenario.seed)
    return Simulation(scenario, traces=traces, tasks=tasks).run()
