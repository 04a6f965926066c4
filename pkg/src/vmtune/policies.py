"""Decision policies: passive, reactive, proactive and the LinUCB bandit.

All policies share one small interface used by the controller:
``propose(views)`` returns an action (and optional arm scores) per VM, and
``feedback(...)`` folds the outcome of a round back in.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .bandit import ArmScore, LinUcbModel, argmax_action
from .core import NOOP, Action, Direction
from .reward import Thresholds
from .sensing import VmView
from .simulator import TelemetrySample

__all__ = [
    "PolicyKind", "Thresholds", "Proposal", "Policy", "PassivePolicy",
    "ReactivePolicy", "ProactivePolicy", "BanditPolicy", "OnlineLinearRegressor",
    "LagBuffer", "threshold_direction", "passive_decide", "reactive_decide",
    "proactive_decide", "sgd_update", "harvest_targets",
]


class PolicyKind(str, enum.Enum):
    PASSIVE = "passive"
    REACTIVE = "reactive"
    PROACTIVE = "proactive"
    BANDITS = "bandits"


@dataclass(frozen=True)
class Proposal:
    action: Action
    scores: tuple[ArmScore, ...] | None = None


def threshold_direction(usage: float, th: Thresholds) -> Direction:
    if usage > th.under:
        return Direction.UP
    if usage < th.over:
        return Direction.DOWN
    return Direction.NOOP


def passive_decide(vm_ids: Sequence[str]) -> dict[str, Action]:
    return {vm_id: NOOP for vm_id in vm_ids}


def reactive_decide(usages: Mapping[str, tuple[float, float]],
                    th: Thresholds = Thresholds()) -> dict[str, Action]:
    """``usages`` maps vm_id to current (cpu_usage, mem_usage)."""
    return {
        vm_id: Action.of(threshold_direction(cpu, th), threshold_direction(mem, th))
        for vm_id, (cpu, mem) in usages.items()
    }


# -- proactive -------------------------------------------------------------

@dataclass
class OnlineLinearRegressor:
    """Squared-loss linear model trained by plain SGD with an L2 penalty."""

    d: int
    learning_rate: float = 0.01
    l2_coeff: float = 1e-4
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]
    n_steps: int = 0

    def __post_init__(self) -> None:
        if self.weights is None:
            self.weights = np.zeros(self.d)

    def predict(self, x: np.ndarray) -> float:
        return float(self.weights @ x)


def sgd_update(reg: OnlineLinearRegressor, x: np.ndarray, y: float) -> OnlineLinearRegressor:
    residual = reg.predict(x) - y
    grad = residual * np.asarray(x, dtype=float) + reg.l2_coeff * reg.weights
    reg.weights = reg.weights - reg.learning_rate * grad
    reg.n_steps += 1
    return reg


@dataclass
class LagBuffer:
    """Decisions waiting for the max usage they will see over the next horizon."""

    horizon_s: float = 600.0
    pending: deque = field(default_factory=deque)

    def add(self, vm_id: str, x: np.ndarray, t: float) -> None:
        self.pending.append((vm_id, x, t))


def harvest_targets(
    lag: LagBuffer,
    telemetry: Mapping[str, Sequence[TelemetrySample]],
    now: float,
) -> list[tuple[np.ndarray, float, float]]:
    """Pop every pair whose horizon has elapsed and label it with max usage.

    The target is the max over samples stamped in ``(t, t + horizon]``.
    Pairs with no samples in that window are dropped.
    """
    out = []
    while lag.pending and lag.pending[0][2] + lag.horizon_s <= now:
        vm_id, x, t = lag.pending.popleft()
        window = [s.metrics for s in telemetry.get(vm_id, ())
                  if t < s.timestamp_s <= t + lag.horizon_s]
        if window:
            out.append((x, max(m.cpu_usage for m in window), max(m.mem_usage for m in window)))
    return out


def proactive_decide(
    contexts: Mapping[str, np.ndarray],
    cpu_model: OnlineLinearRegressor,
    mem_model: OnlineLinearRegressor,
    th: Thresholds = Thresholds(),
    warmed: bool = True,
) -> dict[str, Action]:
    if not warmed:
        return {vm_id: NOOP for vm_id in contexts}
    out = {}
    for vm_id, x in contexts.items():
        cpu = min(1.0, max(0.0, cpu_model.predict(x)))
        mem = min(1.0, max(0.0, mem_model.predict(x)))
        out[vm_id] = Action.of(threshold_direction(cpu, th), threshold_direction(mem, th))
    return out


# -- policy objects used by the controller -------------------------------------

class Policy:
    kind: PolicyKind
    learns = False

    def propose(self, views: Mapping[str, VmView], now: float) -> dict[str, Proposal]:
        raise NotImplementedError

    def feedback(self, records: Sequence, telemetry: Mapping[str, Sequence[TelemetrySample]],
                 now: float) -> None:
        """Called once per round after execution and sensing."""


class PassivePolicy(Policy):
    kind = PolicyKind.PASSIVE

    def propose(self, views, now):
        return {vm_id: Proposal(a) for vm_id, a in passive_decide(list(views)).items()}


class ReactivePolicy(Policy):
    kind = PolicyKind.REACTIVE

    def __init__(self, thresholds: Thresholds = Thresholds()) -> None:
        self.thresholds = thresholds

    def propose(self, views, now):
        usages = {vm_id: (v.last.cpu_usage, v.last.mem_usage) for vm_id, v in views.items()}
        return {vm_id: Proposal(a)
                for vm_id, a in reactive_decide(usages, self.thresholds).items()}


class ProactivePolicy(Policy):
    kind = PolicyKind.PROACTIVE

    def __init__(self, d: int, thresholds: Thresholds = Thresholds(),
                 learning_rate: float = 0.01, l2_coeff: float = 1e-4,
                 horizon_s: float = 600.0, warmup_min_pairs: int = 24) -> None:
        self.thresholds = thresholds
        self.cpu_model = OnlineLinearRegressor(d, learning_rate, l2_coeff)
        self.mem_model = OnlineLinearRegressor(d, learning_rate, l2_coeff)
        self.lag = LagBuffer(horizon_s)
        self.warmup_min_pairs = warmup_min_pairs

    @property
    def warmed(self) -> bool:
        return self.cpu_model.n_steps >= self.warmup_min_pairs

    def propose(self, views, now):
        contexts = {vm_id: v.context for vm_id, v in views.items()}
        actions = proactive_decide(contexts, self.cpu_model, self.mem_model,
                                   self.thresholds, self.warmed)
        for vm_id, x in contexts.items():
            self.lag.add(vm_id, x, now)
        return {vm_id: Proposal(a) for vm_id, a in actions.items()}

    def feedback(self, records, telemetry, now):
        for x, y_cpu, y_mem in harvest_targets(self.lag, telemetry, now):
            sgd_update(self.cpu_model, x, y_cpu)
            sgd_update(self.mem_model, x, y_mem)


class BanditPolicy(Policy):
    kind = PolicyKind.BANDITS
    learns = True

    def __init__(self, model: LinUcbModel) -> None:
        self.model = model

    def propose(self, views, now):
        out = {}
        for vm_id, v in views.items():
            scores = self.model.predict(v.context)
            out[vm_id] = Proposal(argmax_action(scores), tuple(scores))
        return out

    def feedback(self, records, telemetry, now):
        for rec in records:
            if rec.failed:
                continue
            self.model.learn(rec.context, rec.action, rec.reward)
        self.model.rounds += 1
