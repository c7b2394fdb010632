"""
Online classification of task outcomes (DELAYED vs NOT_DELAYED).

Three stream learners share one interface (`predict_proba`, `learn_one`,
`n_seen`), all built on river: a Hoeffding tree, a sliding-window kNN over
running z-scores, and an online-bagging forest of Hoeffding trees. The
classes here only add what the engine needs on top of river: the untrained
prior, Laplace-smoothed leaf probabilities and impurity-share importance.
Predictions are evaluated prequentially: every item is predicted first and
trained on only once its label resolves.
"""

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from river import metrics, neighbors, preprocessing, tree
from river.tree.nodes.branch import DTBranch

from crowdswap.agents import plan_stops
from crowdswap.errors import DoubleResolutionError, UnknownKeyError, UnsupportedError
from crowdswap.geoenv import polyline_length_m, route_traffic_profile
from crowdswap.traces import remaining_stops

FEATURE_NAMES = (
    "speed_now", "speed_mean", "speed_max", "speed_min",
    "remaining_dist_m", "remaining_time_s",
    "dist_normal_m", "dist_slow_m", "dist_jam_m",
)
FEATURE_CATEGORIES = {
    "capability": ("speed_now", "speed_mean", "speed_max", "speed_min"),
    "parcel_state": ("remaining_time_s", "remaining_dist_m"),
    "environment": ("dist_normal_m", "dist_slow_m", "dist_jam_m"),
}
N_FEATURES = len(FEATURE_NAMES)

UNTRAINED_PRIOR = 0.5
LAPLACE_ALPHA = 1.0
DECISION_THRESHOLD = 0.5
HISTORY_EVERY = 100


class Label(IntEnum):
    NOT_DELAYED = 0
    DELAYED = 1


@dataclass(frozen=True, slots=True)
class FeatureVector:
    speed_now: float
    speed_mean: float
    speed_max: float
    speed_min: float
    remaining_dist_m: float
    remaining_time_s: float
    dist_normal_m: float
    dist_slow_m: float
    dist_jam_m: float

    def values(self):
        return tuple(getattr(self, name) for name in FEATURE_NAMES)

    def to_dict(self):
        return dict(zip(FEATURE_NAMES, self.values()))


def _as_dict(x):
    """river models take {feature: value} dicts."""
    if isinstance(x, FeatureVector):
        return x.to_dict()
    if isinstance(x, dict):
        return {name: float(x[name]) for name in FEATURE_NAMES}
    return {name: float(v) for name, v in zip(FEATURE_NAMES, x)}


def planned_path(agent, task, held=()):
    """
    The agent's route from its position up to `task`'s last stop when it plans
    one trip through `held` plus `task`. Stops of tasks planned after `task`
    are not part of the path.
    """
    chains = [(t.task_id, remaining_stops(t)) for t in held if t.task_id != task.task_id]
    chains.append((task.task_id, remaining_stops(task)))
    path = [agent.position]
    for task_id, stops in plan_stops(agent.position, agent.destination, chains):
        path.extend(stops)
        if task_id == task.task_id:
            break
    return path


def extract_features(agent, task, grid, now_s, held=()):
    """
    Features of `agent` carrying `task` at time now_s. Distances follow the
    agent's planned route through its other tasks `held` and this one.
    """
    path = planned_path(agent, task, held)
    normal, slow, jam = route_traffic_profile(grid, path)
    mean, vmax, vmin = agent.speed_stats
    return FeatureVector(
        speed_now=agent.speed_now,
        speed_mean=mean,
        speed_max=vmax,
        speed_min=vmin,
        remaining_dist_m=polyline_length_m(path),
        remaining_time_s=task.deadline - now_s,
        dist_normal_m=normal,
        dist_slow_m=slow,
        dist_jam_m=jam,
    )


# ============================================================================
# METRICS
# ============================================================================

def hoeffding_bound(value_range, confidence, n):
    """Deviation bound eps = sqrt(R^2 ln(1/delta) / (2n))."""
    return math.sqrt(value_range * value_range * math.log(1.0 / confidence) / (2.0 * n))


def classification_metrics(tp, fp, fn):
    """(precision, recall, f1) with every 0/0 taken as 0."""
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def _entropy(stats):
    total = math.fsum(stats.values())
    if total <= 0:
        return 0.0, 0.0
    h = 0.0
    for c in stats.values():
        if c > 0:
            p = c / total
            h -= p * math.log2(p)
    return h, total


# ============================================================================
# HOEFFDING TREE
# ============================================================================

class HoeffdingTree:
    """
    river's HoeffdingTreeClassifier with Laplace-smoothed leaf probabilities.

    A leaf is re-evaluated every `grace_period` units of weight and splits when
    the best candidate beats the runner-up by more than the Hoeffding bound, or
    the bound falls below `tie_threshold`.
    """

    def __init__(self, delta=1e-7, grace_period=200, tie_threshold=0.05):
        self.delta = delta
        self.grace_period = grace_period
        self.tie_threshold = tie_threshold
        self.model = tree.HoeffdingTreeClassifier(
            grace_period=grace_period, delta=delta, tau=tie_threshold, leaf_prediction="mc")
        self.n_seen = 0

    def _leaf(self, x):
        root = self.model._root
        if isinstance(root, DTBranch):
            return root.traverse(x, until_leaf=True)
        return root

    def predict_proba(self, x):
        leaf = self._leaf(_as_dict(x))
        if leaf is None:
            return UNTRAINED_PRIOR
        n = math.fsum(leaf.stats.values())
        if n <= 0:
            return UNTRAINED_PRIOR
        return (leaf.stats.get(int(Label.DELAYED), 0.0) + LAPLACE_ALPHA) / (n + 2 * LAPLACE_ALPHA)

    def learn_one(self, x, y, w=1.0):
        self.n_seen += 1
        if w > 0:
            self.model.learn_one(_as_dict(x), int(y), w=w)
        return self

    def _branches(self):
        stack = [self.model._root]
        while stack:
            node = stack.pop()
            if isinstance(node, DTBranch):
                yield node
                stack.extend(node.children)

    @property
    def n_splits(self):
        return sum(1 for _ in self._branches())

    def feature_importance(self):
        """Share of the total weighted entropy decrease credited to each feature's splits."""
        gains = dict.fromkeys(FEATURE_NAMES, 0.0)
        for branch in self._branches():
            parent, weight = _entropy(branch.stats)
            children = [_entropy(child.stats) for child in branch.children]
            child_weight = math.fsum(w for _, w in children)
            if weight <= 0 or child_weight <= 0:
                continue
            after = math.fsum(h * w for h, w in children) / child_weight
            gains[branch.feature] += weight * max(0.0, parent - after)
        total = math.fsum(gains.values())
        if total <= 0:
            return dict.fromkeys(FEATURE_NAMES, 0.0)
        return {name: gains[name] / total for name in FEATURE_NAMES}


# ============================================================================
# WINDOWED KNN
# ============================================================================

class WindowKnn:
    """
    K nearest neighbours over the last `window_size` items. Distances are
    Euclidean over the items' z-scores under the running feature statistics.
    """

    def __init__(self, k=10, window_size=1000):
        if k < 1 or window_size < 1:
            raise ValueError("k and window_size must be >= 1")
        self.k = k
        self.window_size = window_size
        self.scaler = preprocessing.StandardScaler()
        self.engine = neighbors.LazySearch(window_size=window_size, dist_func=self._distance)
        self.n_seen = 0

    @property
    def window(self):
        return [(tuple(x[name] for name in FEATURE_NAMES), Label(y)) for x, y in self.engine.window]

    def _distance(self, a, b):
        za = self.scaler.transform_one(a[0])
        zb = self.scaler.transform_one(b[0])
        return math.sqrt(math.fsum((za[name] - zb[name]) ** 2 for name in FEATURE_NAMES))

    def learn_one(self, x, y, w=1.0):
        x = _as_dict(x)
        self.n_seen += 1
        self.scaler.learn_one(x)
        self.engine.append((x, int(y)))
        return self

    def predict_proba(self, x):
        if self.n_seen == 0:
            return UNTRAINED_PRIOR
        nearest, _ = self.engine.search((_as_dict(x), None), n_neighbors=self.k)
        return sum(1 for _, y in nearest if y == Label.DELAYED) / len(nearest)


# ============================================================================
# ONLINE FOREST
# ============================================================================

class OnlineForest:
    """Online bagging of Hoeffding trees: each member sees every item with a Poisson(1) weight."""

    def __init__(self, n_trees=20, rng=None, weighting="poisson", **tree_params):
        if n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if weighting not in ("poisson", "unit"):
            raise ValueError(f"Unknown weighting '{weighting}'")
        self.members = [HoeffdingTree(**tree_params) for _ in range(n_trees)]
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.weighting = weighting
        self.n_seen = 0

    def learn_one(self, x, y, w=1.0):
        x = _as_dict(x)
        self.n_seen += 1
        for member in self.members:
            k = int(self.rng.poisson(1.0)) if self.weighting == "poisson" else 1
            if k > 0:
                member.learn_one(x, y, w * k)
        return self

    def predict_proba(self, x):
        x = _as_dict(x)
        return math.fsum(m.predict_proba(x) for m in self.members) / len(self.members)

    def feature_importance(self):
        shares = [m.feature_importance() for m in self.members]
        shares = [s for s in shares if math.fsum(s.values()) > 0]
        if not shares:
            return dict.fromkeys(FEATURE_NAMES, 0.0)
        summed = {name: math.fsum(s[name] for s in shares) for name in FEATURE_NAMES}
        total = math.fsum(summed.values())
        return {name: value / total for name, value in summed.items()}


def make_model(variant, rng=None, n_trees=20, k=10, window_size=1000, delta=1e-7,
               grace_period=200, tie_threshold=0.1):
    if variant == "hoeffding":
        return HoeffdingTree(delta=delta, grace_period=grace_period, tie_threshold=tie_threshold)
    if variant == "knn":
        return WindowKnn(k=k, window_size=window_size)
    if variant == "forest":
        return OnlineForest(n_trees=n_trees, rng=rng, delta=delta, grace_period=grace_period,
                            tie_threshold=tie_threshold)
    raise ValueError(f"Unknown learner variant '{variant}'")


def predict_proba(model, x):
    return model.predict_proba(x)


def learn_one(model, x, y):
    return model.learn_one(x, Label(y))


def feature_importance(model):
    if not hasattr(model, "feature_importance"):
        raise UnsupportedError(f"{type(model).__name__} does not expose feature importance")
    return model.feature_importance()


def aggregate_importance(weights):
    """Sum per-feature importance into capability / parcel_state / environment."""
    return {category: math.fsum(weights.get(name, 0.0) for name in names)
            for category, names in FEATURE_CATEGORIES.items()}


# ============================================================================
# PREQUENTIAL EVALUATION
# ============================================================================

@dataclass
class PendingPrediction:
    key: tuple                 # (worker_id, task_id)
    features: FeatureVector
    predicted: float
    issued_at: float


@dataclass
class PrequentialEvaluator:
    n_resolved: int = 0
    history: list = field(default_factory=list)      # (n_resolved, precision, recall, f1)
    log: list = field(default_factory=list)          # (predicted Label, true Label)
    confusion: metrics.ConfusionMatrix = field(default_factory=metrics.ConfusionMatrix)
    _pending: dict = field(default_factory=dict)
    _resolved: set = field(default_factory=set)
    _by_task: dict = field(default_factory=dict)

    def __post_init__(self):
        positive = int(Label.DELAYED)
        self._precision = metrics.Precision(cm=self.confusion, pos_val=positive)
        self._recall = metrics.Recall(cm=self.confusion, pos_val=positive)
        self._f1 = metrics.F1(cm=self.confusion, pos_val=positive)

    def _cell(self, truth, predicted):
        return int(self.confusion[int(truth)][int(predicted)])

    @property
    def tp(self):
        return self._cell(Label.DELAYED, Label.DELAYED)

    @property
    def fp(self):
        return self._cell(Label.NOT_DELAYED, Label.DELAYED)

    @property
    def fn(self):
        return self._cell(Label.DELAYED, Label.NOT_DELAYED)

    @property
    def tn(self):
        return self._cell(Label.NOT_DELAYED, Label.NOT_DELAYED)

    @property
    def f1_history(self):
        return [(n, f1) for n, _, _, f1 in self.history]

    @property
    def metrics(self):
        return self._precision.get(), self._recall.get(), self._f1.get()

    def pending_keys(self, task_id):
        return list(self._by_task.get(task_id, ()))

    def predict(self, key, x, model, now):
        """Record a prediction for an item the model has not been trained on."""
        if key in self._resolved:
            raise DoubleResolutionError(f"{key} has already been resolved")
        p = model.predict_proba(x)
        self._pending.setdefault(key, []).append(PendingPrediction(key, x, p, now))
        keys = self._by_task.setdefault(key[1], [])
        if key not in keys:
            keys.append(key)
        return p

    def resolve(self, key, label, model):
        """Score and then train on every pending item of `key`; returns the number of items."""
        if key in self._resolved:
            raise DoubleResolutionError(f"{key} has already been resolved")
        if key not in self._pending:
            raise UnknownKeyError(f"No pending prediction for {key}")
        label = Label(label)
        items = self._pending.pop(key)
        self._forget(key)
        self._resolved.add(key)
        for item in items:
            self.score(item.predicted, label)
            model.learn_one(item.features, label)
        return len(items)

    def score(self, predicted_p, label):
        """Count one prediction against its true label."""
        predicted = Label.DELAYED if predicted_p > DECISION_THRESHOLD else Label.NOT_DELAYED
        label = Label(label)
        self.confusion.update(int(label), int(predicted))
        self.log.append((predicted, label))
        self.n_resolved += 1
        if self.n_resolved % HISTORY_EVERY == 0:
            self.history.append((self.n_resolved, *self.metrics))

    def discard(self, key):
        """Drop a pair's pending items without scoring or training (assignment broken)."""
        self._pending.pop(key, None)
        self._forget(key)

    def _forget(self, key):
        keys = self._by_task.get(key[1])
        if keys and key in keys:
            keys.remove(key)
            if not keys:
                del self._by_task[key[1]]


def prequential_step(evaluator, model, key, x, now, label=None):
    """Predict `x` first; when its label is already known, resolve right away."""
    p = evaluator.predict(key, x, model, now)
    if label is not None:
        evaluator.resolve(key, label, model)
    return p


# ============================================================================
# DELAY PREDICTOR
# ============================================================================

class DelayPredictor:
    """
    The learner as used inside a run: delay probabilities for (worker, task)
    pairs plus the prequential bookkeeping of the assignees' observations.

    scope="global" shares one model across all workers; scope="per_agent"
    gives every worker a model of its own built by `model_factory`.
    `tasks_of(agent)` returns the tasks an agent currently holds; they shape
    the planned route its features are measured on.
    """

    def __init__(self, model_factory, scope="global", tasks_of=None):
        if scope not in ("global", "per_agent"):
            raise ValueError(f"Unknown learner scope '{scope}'")
        self.model_factory = model_factory
        self.scope = scope
        self.tasks_of = tasks_of if tasks_of is not None else (lambda agent: ())
        self.evaluator = PrequentialEvaluator()
        self._global = model_factory() if scope == "global" else None
        self._models = {}
        # per-tick memo of delay probabilities; reset when time or the models move on
        self._version = 0
        self._stamp = None
        self._memo = {}

    def model_for(self, worker_id):
        if self._global is not None:
            return self._global
        if worker_id not in self._models:
            self._models[worker_id] = self.model_factory()
        return self._models[worker_id]

    def features(self, agent, task, grid, now, held=None):
        """Features of `agent` with `task`; `held` defaults to the agent's current tasks."""
        if held is None:
            held = self.tasks_of(agent)
        return extract_features(agent, task, grid, now, held)

    def prob_delay(self, agent, task, grid, now, held=None):
        stamp = (now, self._version)
        if stamp != self._stamp:
            self._stamp, self._memo = stamp, {}
        if held is None:
            held = self.tasks_of(agent)
        plan = tuple(sorted((t.task_id, len(remaining_stops(t))) for t in held if t.task_id != task.task_id))
        key = (agent.id, task.task_id, agent.position, len(remaining_stops(task)), plan)
        if key not in self._memo:
            x = extract_features(agent, task, grid, now, held)
            self._memo[key] = self.model_for(agent.id).predict_proba(x)
        return self._memo[key]

    def prob_success(self, agent, task, grid, now, held=None):
        return 1.0 - self.prob_delay(agent, task, grid, now, held)

    def observe(self, agent, task, grid, now, label=None):
        """
        Predict the assignee's outcome for `task` now. An item whose label is
        already known (task past its deadline) is scored and trained at once.
        """
        x = self.features(agent, task, grid, now)
        model = self.model_for(agent.id)
        if label is None:
            return self.evaluator.predict((agent.id, task.task_id), x, model, now)
        self._version += 1
        p = model.predict_proba(x)
        self.evaluator.score(p, label)
        model.learn_one(x, Label(label))
        return p

    def resolve_task(self, task_id, label):
        self._version += 1
        n = 0
        for key in self.evaluator.pending_keys(task_id):
            n += self.evaluator.resolve(key, label, self.model_for(key[0]))
        return n

    def discard(self, worker_id, task_id):
        self.evaluator.discard((worker_id, task_id))

    def feature_importance(self):
        """Importance of the shared model, or the mean over per-agent models that have split."""
        if self._global is not None:
            return feature_importance(self._global)
        shares = []
        for worker_id in sorted(self._models):
            weights = feature_importance(self._models[worker_id])
            if math.fsum(weights.values()) > 0:
                shares.append(weights)
        if not shares:
            return dict.fromkeys(FEATURE_NAMES, 0.0)
        return {name: math.fsum(s[name] for s in shares) / len(shares) for name in FEATURE_NAMES}
