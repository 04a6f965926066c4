"""Domain types shared across the simulator, controller and policies.

Memory is tracked in integer MiB everywhere inside the package so that
512 MiB tuning steps stay exact; GiB only shows up in config files.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Mapping


class Direction(enum.Enum):
    UP = "UP"
    NOOP = "NOOP"
    DOWN = "DOWN"

    @property
    def sign(self) -> int:
        return _SIGN[self]


_SIGN = {Direction.UP: 1, Direction.NOOP: 0, Direction.DOWN: -1}
# Index order within a resource: UP < NOOP < DOWN.
_DIR_ORDER = (Direction.UP, Direction.NOOP, Direction.DOWN)


class Action(enum.IntEnum):
    """Joint (CPU, memory) adjustment arm, cpu-major."""

    CPU_UP_MEM_UP = 0
    CPU_UP_MEM_NOOP = 1
    CPU_UP_MEM_DOWN = 2
    CPU_NOOP_MEM_UP = 3
    CPU_NOOP_MEM_NOOP = 4
    CPU_NOOP_MEM_DOWN = 5
    CPU_DOWN_MEM_UP = 6
    CPU_DOWN_MEM_NOOP = 7
    CPU_DOWN_MEM_DOWN = 8

    @property
    def cpu(self) -> Direction:
        return _DIR_ORDER[self.value // 3]

    @property
    def mem(self) -> Direction:
        return _DIR_ORDER[self.value % 3]

    @property
    def index(self) -> int:
        return int(self.value)

    @classmethod
    def from_index(cls, i: int) -> Action:
        return cls(i)

    @classmethod
    def of(cls, cpu: Direction, mem: Direction) -> Action:
        return cls(_DIR_ORDER.index(cpu) * 3 + _DIR_ORDER.index(mem))


NUM_ACTIONS = len(Action)
NOOP = Action.CPU_NOOP_MEM_NOOP


@dataclass(frozen=True)
class InstanceTypeSpec:
    name: str
    initial_vcpus: int
    initial_mem_mib: int
    min_vcpus: int
    max_vcpus: int
    min_mem_mib: int
    max_mem_mib: int

    def __post_init__(self) -> None:
        if self.min_vcpus < 1:
            raise ValueError(f"{self.name}: min_vcpus must be >= 1")
        if self.min_mem_mib < 2048:
            raise ValueError(f"{self.name}: min_mem_mib must be >= 2048")
        if not self.min_vcpus <= self.initial_vcpus <= self.max_vcpus:
            raise ValueError(f"{self.name}: initial_vcpus outside [min, max]")
        if not self.min_mem_mib <= self.initial_mem_mib <= self.max_mem_mib:
            raise ValueError(f"{self.name}: initial_mem_mib outside [min, max]")


INSTANCE_PRESETS: dict[str, InstanceTypeSpec] = {
    "large": InstanceTypeSpec("large", 2, 3840, 1, 4, 2048, 7680),
    "xlarge": InstanceTypeSpec("xlarge", 4, 7680, 1, 8, 2048, 15360),
    "2xlarge": InstanceTypeSpec("2xlarge", 8, 15360, 1, 16, 2048, 30720),
}

IO_TYPES = ("rand_read_8k", "rand_write_8k", "rand_mixed_8k", "seq_write_1m")

DEFAULT_IO_PROFILE: dict[str, float] = {
    "rand_read_8k": 25000.0,
    "rand_write_8k": 15000.0,
    "rand_mixed_8k": 18000.0,
    "seq_write_1m": 3000.0,
}


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    cores: int
    core_ghz: float
    mem_mib: int
    io_service_profile: Mapping[str, float] = field(
        default_factory=lambda: dict(DEFAULT_IO_PROFILE)
    )

    def __post_init__(self) -> None:
        if self.cores < 1:
            raise ValueError(f"{self.node_id}: cores must be >= 1")
        if self.core_ghz <= 0:
            raise ValueError(f"{self.node_id}: core_ghz must be > 0")
        if any(rate <= 0 for rate in self.io_service_profile.values()):
            raise ValueError(f"{self.node_id}: I/O service rates must be > 0")

    @property
    def capacity_ghz(self) -> float:
        return self.cores * self.core_ghz


def default_nodes(n_nodes: int = 4) -> list[NodeSpec]:
    """Split the 48-core / 115.2 GHz / 512 GiB evaluation cluster over nodes."""
    if 48 % n_nodes:
        raise ValueError("n_nodes must divide 48")
    cores = 48 // n_nodes
    mem = 512 * 1024 // n_nodes
    return [NodeSpec(f"node-{i}", cores, 115.2 / 48, mem) for i in range(n_nodes)]


@dataclass(frozen=True)
class VmState:
    vm_id: str
    node_id: str
    instance_type: InstanceTypeSpec
    vcpus: int
    mem_mib: int
    workload_id: str

    def __post_init__(self) -> None:
        t = self.instance_type
        if not t.min_vcpus <= self.vcpus <= t.max_vcpus:
            raise ValueError(f"{self.vm_id}: vcpus {self.vcpus} outside bounds")
        if not t.min_mem_mib <= self.mem_mib <= t.max_mem_mib:
            raise ValueError(f"{self.vm_id}: mem_mib {self.mem_mib} outside bounds")

    @classmethod
    def initial(cls, vm_id: str, node_id: str, itype: InstanceTypeSpec,
                workload_id: str) -> VmState:
        return cls(vm_id, node_id, itype, itype.initial_vcpus,
                   itype.initial_mem_mib, workload_id)


@dataclass(frozen=True)
class TuningStep:
    cpu_step: int = 1
    mem_step_mib: int = 512

    def __post_init__(self) -> None:
        if self.cpu_step <= 0 or self.mem_step_mib <= 0:
            raise ValueError("tuning steps must be positive")


@dataclass(frozen=True)
class AllocationDelta:
    d_vcpus: int
    d_mem_mib: int


def action_to_delta(a: Action, step: TuningStep = TuningStep()) -> AllocationDelta:
    return AllocationDelta(a.cpu.sign * step.cpu_step, a.mem.sign * step.mem_step_mib)


def _clamp(value: int, lo: int, hi: int) -> tuple[int, bool]:
    if value < lo:
        return lo, True
    if value > hi:
        return hi, True
    return value, False


def apply_delta(vm: VmState, d: AllocationDelta) -> tuple[VmState, tuple[bool, bool]]:
    """Apply ``d`` to ``vm``, clamping each resource to its instance bounds.

    Returns the new state and ``(cpu_clamped, mem_clamped)``; a flag is set
    when the unclamped target would have left the allowed range.
    """
    t = vm.instance_type
    vcpus, cpu_clamped = _clamp(vm.vcpus + d.d_vcpus, t.min_vcpus, t.max_vcpus)
    mem, mem_clamped = _clamp(vm.mem_mib + d.d_mem_mib, t.min_mem_mib, t.max_mem_mib)
    return replace(vm, vcpus=vcpus, mem_mib=mem), (cpu_clamped, mem_clamped)
