"""Shared builders for small hand-checkable clusters."""

from __future__ import annotations

import pytest

from vmtune.core import INSTANCE_PRESETS, NodeSpec, VmState
from vmtune.simulator import SimState, WorkloadPattern


def make_state(workloads: dict[str, WorkloadPattern], itype: str = "large",
               cores: int = 12, core_ghz: float = 2.4, mem_gib: int = 128,
               seed: int = 0) -> SimState:
    """Every VM on one node, at its instance type's initial allocation."""
    node = NodeSpec("node-0", cores, core_ghz, mem_gib * 1024)
    spec = INSTANCE_PRESETS[itype]
    vms = {vm_id: VmState.initial(vm_id, "node-0", spec, vm_id) for vm_id in workloads}
    return SimState([node], vms, dict(workloads), seed=seed)


@pytest.fixture
def large() -> VmState:
    return VmState.initial("vm-0", "node-0", INSTANCE_PRESETS["large"], "vm-0")
