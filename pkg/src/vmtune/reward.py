"""Good/bad VM states and the binary reward used to train the bandit."""

from __future__ import annotations

from dataclasses import dataclass

from .core import Action, Direction

CPU_OVERLOAD_USAGE = 0.95
CPU_OVERLOAD_READY = 0.05


@dataclass(frozen=True)
class Thresholds:
    """Usage band: above ``under`` is underprovisioned, below ``over`` overprovisioned."""

    under: float = 0.75
    over: float = 0.25

    def __post_init__(self) -> None:
        if not 0.0 <= self.over < self.under <= 1.0:
            raise ValueError("thresholds must satisfy 0 <= over < under <= 1")

    def in_band(self, usage: float) -> bool:
        return self.over <= usage <= self.under


@dataclass(frozen=True)
class GoodBadState:
    swapping: bool
    cpu_overloaded: bool

    @property
    def bad(self) -> bool:
        return self.swapping or self.cpu_overloaded

    @classmethod
    def from_metrics(cls, m) -> GoodBadState:
        return cls(
            swapping=m.swap_rate > 0,
            cpu_overloaded=m.cpu_usage >= CPU_OVERLOAD_USAGE or m.cpu_ready >= CPU_OVERLOAD_READY,
        )


def _component(direction: Direction, usage: float, prev_bad: bool, next_bad: bool,
               th: Thresholds) -> int:
    if direction is Direction.DOWN:
        return int(not next_bad)
    if direction is Direction.UP:
        return int(prev_bad)
    return int(th.in_band(usage))


def compute_reward(
    prev: GoodBadState,
    prev_cpu_usage: float,
    prev_mem_usage: float,
    a: Action,
    nxt: GoodBadState,
    clamped: tuple[bool, bool],
    th: Thresholds = Thresholds(),
) -> int:
    """Score one executed action with a reward in {0, 1}.

    Precedence: a move blocked by hard bounds earns nothing; leaving a bad
    state earns 1 whatever the action; entering one earns 0.  Otherwise each
    resource is scored on its own and the two scores are combined with min.
    """
    if clamped[0] or clamped[1]:
        return 0
    if prev.bad and not nxt.bad:
        return 1
    if not prev.bad and nxt.bad:
        return 0
    return min(
        _component(a.cpu, prev_cpu_usage, prev.bad, nxt.bad, th),
        _component(a.mem, prev_mem_usage, prev.bad, nxt.bad, th),
    )
