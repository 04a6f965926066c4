"""Telemetry aggregation and per-VM context featurization."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import INSTANCE_PRESETS, NodeSpec, VmState
from .simulator import SimState, TelemetrySample, VmInstantMetrics, effective_service_rate

__all__ = [
    "CONTEXT_DIM", "LAYOUT_VERSION", "FEATURE_NAMES", "OrderingError",
    "TelemetrySample", "TelemetryStore", "RollingStats", "NodeContext",
    "ClusterContext", "percentile", "rolling_stats", "build_context",
    "node_contexts", "cluster_context", "sense",
]

LAYOUT_VERSION = "vm-ctx-26/1"
WINDOW_S = 3600.0

FEATURE_NAMES = (
    "bias",
    "vcpus_frac", "mem_frac",
    "cpu_usage_now", "mem_usage_now",
    "cpu_mean", "cpu_max", "cpu_p95",
    "mem_mean", "mem_max", "mem_p95",
    "swap", "cpu_ready", "latency", "iops",
    "type_large", "type_xlarge", "type_2xlarge",
    "node_cpu_usage", "node_mem_usage", "node_cpu_overcommit", "node_mem_overcommit",
    "cluster_cpu_usage", "cluster_mem_usage",
    "day_sin", "day_cos",
)
CONTEXT_DIM = len(FEATURE_NAMES)
_TYPE_SLOTS = {name: i for i, name in enumerate(INSTANCE_PRESETS)}
# Soft swap indicator: pages/s mapped onto [0, 1].
SWAP_SCALE = 1000.0
OVERCOMMIT_SCALE = 4.0


class OrderingError(ValueError):
    """A sample was not newer than the last one stored for its VM."""


class TelemetryStore:
    """Per-VM trailing window of samples."""

    def __init__(self, window_s: float = WINDOW_S) -> None:
        self.window_s = window_s
        self._samples: dict[str, deque[TelemetrySample]] = {}

    def ingest(self, sample: TelemetrySample) -> None:
        q = self._samples.setdefault(sample.vm_id, deque())
        if q and sample.timestamp_s <= q[-1].timestamp_s:
            raise OrderingError(
                f"{sample.vm_id}: timestamp {sample.timestamp_s} not after {q[-1].timestamp_s}")
        q.append(sample)
        horizon = sample.timestamp_s - self.window_s
        while q[0].timestamp_s < horizon:
            q.popleft()

    def extend(self, samples: Iterable[TelemetrySample]) -> None:
        for s in samples:
            self.ingest(s)

    def samples(self, vm_id: str) -> Sequence[TelemetrySample]:
        return self._samples.get(vm_id, ())

    def last(self, vm_id: str) -> TelemetrySample:
        return self._samples[vm_id][-1]

    def __len__(self) -> int:
        return sum(len(q) for q in self._samples.values())

    def vm_ids(self) -> list[str]:
        return list(self._samples)


def percentile(samples: Sequence[float], q: float) -> float:
    """Nearest-rank percentile: the ceil(q*n)-th smallest value (1-based)."""
    if not samples:
        raise ValueError("percentile of an empty sequence")
    if not 0.0 < q <= 1.0:
        raise ValueError("q must be in (0, 1]")
    ordered = sorted(samples)
    rank = max(1, math.ceil(q * len(ordered)))
    return ordered[rank - 1]


@dataclass(frozen=True)
class RollingStats:
    cpu_mean: float
    cpu_max: float
    cpu_min: float
    cpu_p95: float
    mem_mean: float
    mem_max: float
    mem_min: float
    mem_p95: float


def rolling_stats(samples: Sequence[TelemetrySample]) -> RollingStats:
    if not samples:
        raise ValueError("rolling stats need at least one sample")
    cpu = [s.metrics.cpu_usage for s in samples]
    mem = [s.metrics.mem_usage for s in samples]
    return RollingStats(
        cpu_mean=_mean(cpu), cpu_max=max(cpu), cpu_min=min(cpu),
        cpu_p95=percentile(cpu, 0.95),
        mem_mean=_mean(mem), mem_max=max(mem), mem_min=min(mem),
        mem_p95=percentile(mem, 0.95),
    )


def _mean(values: Sequence[float]) -> float:
    # fsum can still land one ulp outside [min, max] after the division.
    return min(max(values), max(min(values), math.fsum(values) / len(values)))


@dataclass(frozen=True)
class NodeContext:
    cpu_usage: float
    mem_usage: float
    cpu_overcommit: float
    mem_overcommit: float


ClusterContext = NodeContext


def _aggregate(pairs: Sequence[tuple[VmState, VmInstantMetrics]], cores_ghz: float,
               core_ghz_of: Mapping[str, float], mem_mib: float) -> NodeContext:
    granted = sum(m.cpu_usage * vm.vcpus * core_ghz_of[vm.node_id] for vm, m in pairs)
    resident = sum(m.mem_usage * vm.mem_mib for vm, m in pairs)
    vcpu_ghz = sum(vm.vcpus * core_ghz_of[vm.node_id] for vm, _ in pairs)
    alloc_mem = sum(vm.mem_mib for vm, _ in pairs)
    return NodeContext(
        cpu_usage=min(1.0, granted / cores_ghz),
        mem_usage=min(1.0, resident / mem_mib),
        cpu_overcommit=vcpu_ghz / cores_ghz,
        mem_overcommit=alloc_mem / mem_mib,
    )


def node_contexts(nodes: Sequence[NodeSpec], vms: Mapping[str, VmState],
                  last: Mapping[str, VmInstantMetrics]) -> dict[str, NodeContext]:
    core_ghz = {n.node_id: n.core_ghz for n in nodes}
    out = {}
    for n in nodes:
        pairs = [(vm, last[vm.vm_id]) for vm in vms.values() if vm.node_id == n.node_id]
        out[n.node_id] = _aggregate(pairs, n.capacity_ghz, core_ghz, n.mem_mib)
    return out


def cluster_context(nodes: Sequence[NodeSpec], vms: Mapping[str, VmState],
                    last: Mapping[str, VmInstantMetrics]) -> ClusterContext:
    core_ghz = {n.node_id: n.core_ghz for n in nodes}
    pairs = [(vm, last[vm.vm_id]) for vm in vms.values()]
    return _aggregate(pairs, sum(n.capacity_ghz for n in nodes), core_ghz,
                      sum(n.mem_mib for n in nodes))


def _unit(x: float) -> float:
    return min(1.0, max(0.0, x))


def build_context(
    vm: VmState,
    stats: RollingStats,
    last: VmInstantMetrics,
    node: NodeContext,
    cluster: ClusterContext,
    clock_s: float,
    latency_cap_ms: float = 50.0,
    node_service_rate: float = 25000.0,
) -> np.ndarray:
    """Fixed 26-entry feature vector; see ``FEATURE_NAMES`` for the layout."""
    t = vm.instance_type
    onehot = [0.0, 0.0, 0.0]
    if t.name in _TYPE_SLOTS:
        onehot[_TYPE_SLOTS[t.name]] = 1.0
    phase = 2.0 * math.pi * clock_s / 86400.0
    x = np.array([
        1.0,
        vm.vcpus / t.max_vcpus,
        vm.mem_mib / t.max_mem_mib,
        last.cpu_usage,
        last.mem_usage,
        stats.cpu_mean, stats.cpu_max, stats.cpu_p95,
        stats.mem_mean, stats.mem_max, stats.mem_p95,
        _unit(last.swap_rate / SWAP_SCALE),
        _unit(last.cpu_ready),
        _unit(last.io_latency_ms / latency_cap_ms),
        _unit(last.achieved_iops / node_service_rate),
        *onehot,
        node.cpu_usage,
        node.mem_usage,
        _unit(node.cpu_overcommit / OVERCOMMIT_SCALE),
        _unit(node.mem_overcommit / OVERCOMMIT_SCALE),
        cluster.cpu_usage,
        cluster.mem_usage,
        math.sin(phase),
        math.cos(phase),
    ])
    return x


@dataclass(frozen=True)
class VmView:
    """Everything the decision layer sees about one VM at a round boundary."""

    vm: VmState
    context: np.ndarray
    last: VmInstantMetrics
    stats: RollingStats


def sense(state: SimState, store: TelemetryStore) -> dict[str, VmView]:
    """Build the context of every VM from the store and current allocations."""
    last = {vm_id: store.last(vm_id).metrics for vm_id in state.vms}
    nodes = node_contexts(state.nodes, state.vms, last)
    cluster = cluster_context(state.nodes, state.vms, last)
    mu = {n.node_id: effective_service_rate(n.io_service_profile, []) for n in state.nodes}
    views = {}
    for vm_id, vm in state.vms.items():
        stats = rolling_stats(store.samples(vm_id))
        x = build_context(vm, stats, last[vm_id], nodes[vm.node_id], cluster, state.clock_s,
                          state.params.latency_cap_ms, mu[vm.node_id])
        views[vm_id] = VmView(vm, x, last[vm_id], stats)
    return views
