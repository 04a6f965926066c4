"""Decision rounds: filter, predict, decide, execute, sense, reward, learn."""

from __future__ import annotations

import operator
import random
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .bandit import ArmScore, argmax_action
from .core import Action, AllocationDelta, Direction, TuningStep, VmState, action_to_delta, apply_delta
from .policies import Policy, PolicyKind
from .reward import GoodBadState, Thresholds, compute_reward
from .sensing import TelemetryStore, VmView, sense
from .simulator import SimState, oracle_rewards, observe, step

__all__ = [
    "FilterStrategy", "ForceRule", "DomainRules", "VmRoundRecord", "RegretTracker",
    "ExecutionError", "SimExecutor", "Controller", "filter_vms", "decide",
    "track_regret", "GoodBadState", "compute_reward",
]

_COMPARATORS: dict[str, Callable[[float, float], bool]] = {
    ">": operator.gt, ">=": operator.ge, "<": operator.lt, "<=": operator.le,
}
METRICS = ("cpu_usage", "mem_usage", "cpu_ready", "swap_rate", "achieved_iops", "io_latency_ms")


@dataclass(frozen=True)
class FilterStrategy:
    """Which VMs are eligible for tuning in a round.

    ``kind`` is one of ``all``, ``random_fraction``, ``usage_threshold`` or
    ``top_k``; the remaining fields are read according to the kind.
    """

    kind: str = "all"
    fraction: float = 1.0
    seed: int = 0
    resource: str = "cpu"
    comparator: str = ">"
    value: float = 0.75
    metric: str = "cpu_usage"
    k: int = 1

    def __post_init__(self) -> None:
        if self.kind not in ("all", "random_fraction", "usage_threshold", "top_k"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("fraction must be in (0, 1]")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.comparator not in _COMPARATORS:
            raise ValueError(f"unknown comparator {self.comparator!r}")
        if self.resource not in ("cpu", "mem"):
            raise ValueError("resource must be 'cpu' or 'mem'")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")


def filter_vms(strategy: FilterStrategy, views: Mapping[str, VmView],
               round_index: int = 0) -> list[str]:
    ids = list(views)
    if strategy.kind == "all":
        return ids
    if strategy.kind == "random_fraction":
        n = int(strategy.fraction * len(ids) + 0.5)
        rng = random.Random(f"{strategy.seed}:{round_index}")
        chosen = set(rng.sample(ids, n))
        return [i for i in ids if i in chosen]
    if strategy.kind == "usage_threshold":
        cmp = _COMPARATORS[strategy.comparator]
        attr = f"{strategy.resource}_usage"
        return [i for i in ids if cmp(getattr(views[i].last, attr), strategy.value)]
    ranked = sorted(ids, key=lambda i: (-getattr(views[i].last, strategy.metric), i))
    return sorted(ranked[:strategy.k], key=ids.index)


@dataclass(frozen=True)
class ForceRule:
    """Always scale ``resource`` up once its usage reaches ``threshold``."""

    resource: str = "cpu"
    threshold: float = 0.90

    def __post_init__(self) -> None:
        if self.resource not in ("cpu", "mem"):
            raise ValueError("resource must be 'cpu' or 'mem'")


@dataclass(frozen=True)
class DomainRules:
    step: TuningStep = TuningStep()
    force_scale_up: ForceRule | None = None
    thresholds: Thresholds = Thresholds()

    def __post_init__(self) -> None:
        f = self.force_scale_up
        if f is not None and f.threshold <= self.thresholds.under:
            raise ValueError("forced scale-up threshold must exceed the underprovisioned threshold")


def decide(scores: Sequence[ArmScore] | None, vm: VmState, rules: DomainRules,
           usage: tuple[float, float], proposed: Action | None = None) -> tuple[Action, bool]:
    """Final action for one VM before clamping.

    The base choice is the top-scoring arm (lowest index on ties) or, for
    policies without scores, ``proposed``.  An active forced scale-up rule
    then overrides the matching resource direction.
    """
    action = argmax_action(scores) if scores is not None else proposed
    if action is None:
        raise ValueError("need either arm scores or a proposed action")
    rule = rules.force_scale_up
    if rule is None:
        return action, False
    cpu, mem = action.cpu, action.mem
    if rule.resource == "cpu" and usage[0] >= rule.threshold and cpu is not Direction.UP:
        return Action.of(Direction.UP, mem), True
    if rule.resource == "mem" and usage[1] >= rule.threshold and mem is not Direction.UP:
        return Action.of(cpu, Direction.UP), True
    return action, False


@dataclass
class VmRoundRecord:
    vm_id: str
    context: np.ndarray
    action: Action
    clamped: tuple[bool, bool] = (False, False)
    reward: int = 0
    scores: tuple[ArmScore, ...] | None = None
    overridden: bool = False
    failed: bool = False
    error: str = ""


@dataclass
class RegretTracker:
    chosen: float = 0.0
    oracle: float = 0.0
    rounds: int = 0

    @property
    def regret(self) -> float:
        return self.oracle - self.chosen


def track_regret(tracker: RegretTracker, chosen: Sequence[float],
                 oracle: Sequence[float]) -> RegretTracker:
    tracker.chosen += float(sum(chosen))
    tracker.oracle += float(sum(oracle))
    tracker.rounds += 1
    return tracker


class ExecutionError(RuntimeError):
    pass


class SimExecutor:
    """Applies allocation deltas to a simulator state."""

    def __init__(self, state: SimState) -> None:
        self.state = state

    def __call__(self, vm_id: str, delta: AllocationDelta) -> tuple[VmState, tuple[bool, bool]]:
        vm, clamped = apply_delta(self.state.vms[vm_id], delta)
        self.state.vms[vm_id] = vm
        return vm, clamped


@dataclass
class Controller:
    """Runs decision rounds of one policy against one simulated cluster."""

    state: SimState
    policy: Policy
    rules: DomainRules = field(default_factory=DomainRules)
    strategy: FilterStrategy = field(default_factory=FilterStrategy)
    interval_s: float = 300.0
    track_regret: bool = False
    executor: Callable[[str, AllocationDelta], tuple[VmState, tuple[bool, bool]]] | None = None
    store: TelemetryStore = field(default_factory=TelemetryStore)
    cumulative_reward: float = 0.0
    regret: RegretTracker | None = None
    round_index: int = 0
    views: dict[str, VmView] = field(default_factory=dict)
    last_samples: list = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.executor is None:
            self.executor = SimExecutor(self.state)
        if self.track_regret:
            self.regret = RegretTracker()
        self.store.extend(observe(self.state))
        self.views = sense(self.state, self.store)

    def run_round(self) -> list[VmRoundRecord]:
        views = self.views
        selected = filter_vms(self.strategy, views, self.round_index)
        filtered = {vm_id: views[vm_id] for vm_id in selected}
        proposals = self.policy.propose(filtered, self.state.clock_s)

        records: list[VmRoundRecord] = []
        oracle: dict[str, list[int]] = {}
        for vm_id in selected:
            v, prop = filtered[vm_id], proposals[vm_id]
            if self.policy.kind is PolicyKind.PASSIVE:
                action, overridden = prop.action, False
            else:
                action, overridden = decide(prop.scores, v.vm, self.rules,
                                            (v.last.cpu_usage, v.last.mem_usage), prop.action)
            if self.regret is not None:
                oracle[vm_id] = oracle_rewards(self.state, vm_id, self.rules.step,
                                               self.interval_s, v.last, self.rules.thresholds)
            records.append(VmRoundRecord(vm_id, v.context, action, scores=prop.scores,
                                         overridden=overridden))

        for rec in records:
            try:
                _, rec.clamped = self.executor(rec.vm_id, action_to_delta(rec.action, self.rules.step))
            except ExecutionError as exc:
                rec.failed, rec.error = True, str(exc)

        samples = step(self.state, self.interval_s)
        self.store.extend(samples)
        self.last_samples = samples
        next_views = sense(self.state, self.store)

        for rec in records:
            if rec.failed:
                continue
            prev, nxt = views[rec.vm_id].last, next_views[rec.vm_id].last
            rec.reward = compute_reward(GoodBadState.from_metrics(prev), prev.cpu_usage,
                                        prev.mem_usage, rec.action,
                                        GoodBadState.from_metrics(nxt), rec.clamped,
                                        self.rules.thresholds)
            self.cumulative_reward += rec.reward

        if self.regret is not None:
            ok = [r for r in records if not r.failed]
            track_regret(self.regret,
                         [oracle[r.vm_id][r.action] for r in ok],
                         [max(oracle[r.vm_id]) for r in ok])

        self.policy.feedback(records, {vm_id: self.store.samples(vm_id) for vm_id in self.state.vms},
                             self.state.clock_s)
        self.views = next_views
        self.round_index += 1
        return records
