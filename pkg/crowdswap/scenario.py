"""
Typed scenario configuration.

A Scenario is built from the plain key-value tree of a config file
(`Scenario.from_dict`), rejecting unknown keys, and checked with
`Scenario.validate()`. Both raise ConfigError naming the offending field as
a dotted path such as `scenario.tasks.reward`.
"""

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum

from crowdswap.agents import Kinematics, TransportMode
from crowdswap.coord import (DEFAULT_FORCED_MARGIN, DEFAULT_P_TRANSFER,
                             DEFAULT_RECONSIDER_PERIOD_S, STRATEGIES)
from crowdswap.econ import CostParams
from crowdswap.errors import ConfigError, NonStochasticMatrixError
from crowdswap.geoenv import (DEFAULT_CELL_SIZE_M, DEFAULT_TRANSITION, DEFAULT_UPDATE_PERIOD_S,
                              Location, OperatingArea, TrafficState, check_transition)
from crowdswap.traces import DEFAULT_CHAIN_LENGTH, DEFAULT_CHAIN_SPACING_M, normalize_mode_mix

LEARNER_VARIANTS = ("hoeffding", "knn", "forest")
LEARNER_SCOPES = ("global", "per_agent")
WORKER_SOURCES = ("synthetic", "trace_file")


class ScenarioKind(str, Enum):
    CROWDSHIPPING = "Crowdshipping"
    CROWDSENSING = "Crowdsensing"


@dataclass
class AreaConfig:
    center_lat: float = 40.4168
    center_lon: float = -3.7038
    radius_m: float = 3000.0

    def operating_area(self):
        return OperatingArea(Location(self.center_lat, self.center_lon), self.radius_m)


@dataclass
class WorkerConfig:
    source: str = "synthetic"
    count: int = 3000
    trace_file: str = None
    mode_mix: dict = field(default_factory=lambda: {"walk": 0.3, "bike": 0.4, "motorbike": 0.3})
    min_waypoints: int = 2
    max_waypoints: int = 5


@dataclass
class TaskConfig:
    rate_per_hour: float = 50.0
    total: int = 600
    deadline_s: float = 1800.0
    reward: float = 5.0
    penalty: float = 5.0
    task_file: str = None
    chain_length: int = DEFAULT_CHAIN_LENGTH
    spacing_m: float = DEFAULT_CHAIN_SPACING_M


@dataclass
class TrafficConfig:
    cell_size_m: float = DEFAULT_CELL_SIZE_M
    update_period_s: float = DEFAULT_UPDATE_PERIOD_S
    initial_state: str = "Normal"
    transition: list = field(default_factory=lambda: [list(row) for row in DEFAULT_TRANSITION])


@dataclass
class IncidentConfig:
    probability: float = 0.0            # per active agent per simulated minute
    min_duration_s: float = 120.0
    max_duration_s: float = 600.0


@dataclass
class StrategyConfig:
    name: str = "not"
    p_transfer: float = DEFAULT_P_TRANSFER
    forced_margin: float = DEFAULT_FORCED_MARGIN
    reconsider_period_s: float = DEFAULT_RECONSIDER_PERIOD_S
    neighborhood_radius_m: float = None   # None means unlimited


@dataclass
class LearnerConfig:
    variant: str = "forest"
    scope: str = "global"
    n_trees: int = 20
    k: int = 10
    window_size: int = 1000
    delta: float = 1e-7
    grace_period: int = 200
    tie_threshold: float = 0.1
    observe_period_s: float = 60.0


@dataclass
class Scenario:
    kind: ScenarioKind = ScenarioKind.CROWDSHIPPING
    seed: int = 0
    tick_s: float = 1.0
    duration_s: float = 43200.0
    area: AreaConfig = field(default_factory=AreaConfig)
    workers: WorkerConfig = field(default_factory=WorkerConfig)
    tasks: TaskConfig = field(default_factory=TaskConfig)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    kinematics: Kinematics = field(default_factory=Kinematics)
    incidents: IncidentConfig = field(default_factory=IncidentConfig)
    costs: CostParams = field(default_factory=CostParams)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)

    @property
    def single_task(self):
        """Crowdshipping workers carry at most one parcel."""
        return self.kind is ScenarioKind.CROWDSHIPPING

    @property
    def neighborhood_radius_m(self):
        r = self.strategy.neighborhood_radius_m
        return math.inf if r is None else float(r)

    # ------------------------------------------------------------------
    # (de)serialisation
    # ------------------------------------------------------------------

    @classmethod
    def from_dict(cls, data, path="scenario"):
        data = dict(_check_keys(cls, data, path))
        if "kind" in data:
            try:
                data["kind"] = ScenarioKind(data["kind"])
            except ValueError:
                raise ConfigError(f"{path}.kind", f"must be one of {[k.value for k in ScenarioKind]}") from None
        for name, sub in _SECTIONS.items():
            if name in data:
                data[name] = _build_section(sub, data[name], f"{path}.{name}")
        return cls(**data)

    def to_dict(self):
        out = {"kind": self.kind.value, "seed": self.seed, "tick_s": self.tick_s,
               "duration_s": self.duration_s}
        for name in _SECTIONS:
            section = getattr(self, name)
            if name == "costs":
                out[name] = {
                    "cost_per_meter": {m.value: section.cost_per_meter[m] for m in TransportMode},
                    "fixed_cost_per_task": section.fixed_cost_per_task,
                }
            else:
                out[name] = dataclasses.asdict(section)
        return out

    def replace(self, **changes):
        """Copy with top-level fields or dotted `section.field` keys changed."""
        copy = Scenario.from_dict(self.to_dict())
        for key, value in changes.items():
            if "." in key:
                section, name = key.split(".", 1)
                target = getattr(copy, section)
                if dataclasses.is_dataclass(target) and getattr(target, "__dataclass_params__").frozen:
                    setattr(copy, section, dataclasses.replace(target, **{name: value}))
                else:
                    setattr(target, name, value)
            else:
                setattr(copy, key, value)
        return copy

    # ------------------------------------------------------------------
    # validation
    # ------------------------------------------------------------------

    def validate(self):
        """Raise ConfigError for the first invalid field."""
        _require(isinstance(self.seed, int) and self.seed >= 0, "scenario.seed", "must be a non-negative integer")
        _require(self.tick_s > 0, "scenario.tick_s", "must be positive")
        _require(self.duration_s > 0, "scenario.duration_s", "must be positive")

        a = self.area
        _require(-90.0 <= a.center_lat <= 90.0, "scenario.area.center_lat", "must be within [-90, 90]")
        _require(-180.0 <= a.center_lon <= 180.0, "scenario.area.center_lon", "must be within [-180, 180]")
        _require(a.radius_m > 0, "scenario.area.radius_m", "must be positive")

        w = self.workers
        _require(w.source in WORKER_SOURCES, "scenario.workers.source", f"must be one of {list(WORKER_SOURCES)}")
        _require(w.source != "trace_file" or bool(w.trace_file), "scenario.workers.trace_file",
                 "is required when source is 'trace_file'")
        _require(isinstance(w.count, int) and w.count >= 0, "scenario.workers.count",
                 "must be a non-negative integer")
        _require(1 <= w.min_waypoints <= w.max_waypoints, "scenario.workers.min_waypoints",
                 "must be at least 1 and at most max_waypoints")
        try:
            normalize_mode_mix(w.mode_mix)
        except (ValueError, TypeError) as e:
            raise ConfigError("scenario.workers.mode_mix", str(e)) from None

        t = self.tasks
        _require(t.rate_per_hour > 0, "scenario.tasks.rate_per_hour", "must be positive")
        _require(isinstance(t.total, int) and t.total >= 0, "scenario.tasks.total", "must be a non-negative integer")
        _require(t.deadline_s > 0, "scenario.tasks.deadline_s", "must be positive")
        _require(t.reward >= 0, "scenario.tasks.reward", "must be non-negative")
        _require(t.penalty >= 0, "scenario.tasks.penalty", "must be non-negative")
        _require(t.chain_length >= 1, "scenario.tasks.chain_length", "must be at least 1")
        _require(t.spacing_m > 0, "scenario.tasks.spacing_m", "must be positive")

        tr = self.traffic
        _require(tr.cell_size_m > 0, "scenario.traffic.cell_size_m", "must be positive")
        _require(tr.update_period_s > 0, "scenario.traffic.update_period_s", "must be positive")
        try:
            TrafficState.parse(tr.initial_state)
        except ValueError as e:
            raise ConfigError("scenario.traffic.initial_state", str(e)) from None
        try:
            check_transition(tr.transition)
        except (NonStochasticMatrixError, ValueError) as e:
            raise ConfigError("scenario.traffic.transition", str(e)) from None

        k = self.kinematics
        _require(k.motorbike_normal_mps > 0, "scenario.kinematics.motorbike_normal_mps", "must be positive")
        _require(k.motorbike_slow_mps > 0, "scenario.kinematics.motorbike_slow_mps", "must be positive")
        _require(k.service_radius_m >= 0, "scenario.kinematics.service_radius_m", "must be non-negative")

        i = self.incidents
        _require(0.0 <= i.probability <= 1.0, "scenario.incidents.probability", "must be within [0, 1]")
        _require(0 < i.min_duration_s <= i.max_duration_s, "scenario.incidents.min_duration_s",
                 "must be positive and at most max_duration_s")

        s = self.strategy
        _require(s.name in STRATEGIES, "scenario.strategy.name", f"must be one of {sorted(STRATEGIES)}")
        _require(0.0 <= s.p_transfer <= 1.0, "scenario.strategy.p_transfer", "must be within [0, 1]")
        _require(s.forced_margin >= 0, "scenario.strategy.forced_margin", "must be non-negative")
        _require(s.reconsider_period_s > 0, "scenario.strategy.reconsider_period_s", "must be positive")
        _require(s.neighborhood_radius_m is None or s.neighborhood_radius_m > 0,
                 "scenario.strategy.neighborhood_radius_m", "must be positive or null")

        lc = self.learner
        _require(lc.variant in LEARNER_VARIANTS, "scenario.learner.variant", f"must be one of {list(LEARNER_VARIANTS)}")
        _require(lc.scope in LEARNER_SCOPES, "scenario.learner.scope", f"must be one of {list(LEARNER_SCOPES)}")
        _require(lc.n_trees >= 1, "scenario.learner.n_trees", "must be at least 1")
        _require(lc.k >= 1, "scenario.learner.k", "must be at least 1")
        _require(lc.window_size >= 1, "scenario.learner.window_size", "must be at least 1")
        _require(0.0 < lc.delta < 1.0, "scenario.learner.delta", "must be within (0, 1)")
        _require(lc.grace_period >= 1, "scenario.learner.grace_period", "must be at least 1")
        _require(lc.tie_threshold >= 0, "scenario.learner.tie_threshold", "must be non-negative")
        _require(lc.observe_period_s > 0, "scenario.learner.observe_period_s", "must be positive")


def _require(ok, field_path, message):
    if not ok:
        raise ConfigError(field_path, message)


_SECTIONS = {
    "area": AreaConfig,
    "workers": WorkerConfig,
    "tasks": TaskConfig,
    "traffic": TrafficConfig,
    "kinematics": Kinematics,
    "incidents": IncidentConfig,
    "costs": CostParams,
    "strategy": StrategyConfig,
    "learner": LearnerConfig,
}


def _check_keys(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(path, "must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}", "unknown key")
    return data


def _build_section(cls, data, path):
    data = _check_keys(cls, data, path)
    try:
        return cls(**data)
    except (ValueError, TypeError) as e:
        raise ConfigError(path, str(e)) from None


# ============================================================================
# PRESETS
# ============================================================================

PRESETS = {
    "crowdshipping": {
        "kind": ScenarioKind.CROWDSHIPPING,
        "tasks.rate_per_hour": 50.0, "tasks.total": 600,
        "incidents.probability": 0.0,
    },
    "sensing-1": {
        "kind": ScenarioKind.CROWDSENSING,
        "tasks.rate_per_hour": 50.0, "tasks.total": 600,
        "incidents.probability": 0.05,
    },
    "sensing-2": {
        "kind": ScenarioKind.CROWDSENSING,
        "tasks.rate_per_hour": 100.0, "tasks.total": 1200,
        "incidents.probability": 0.05,
    },
    "sensing-3": {
        "kind": ScenarioKind.CROWDSENSING,
        "tasks.rate_per_hour": 50.0, "tasks.total": 600,
        "incidents.probability": 0.10,
    },
}


def apply_preset(scenario, preset):
    """Scenario with a named preset's fields applied over it."""
    try:
        changes = PRESETS[preset]
    except KeyError:
        raise ConfigError("preset", f"unknown preset '{preset}', expected one of {sorted(PRESETS)}") from None
    return scenario.replace(**changes)
