"""Deterministic discrete-time cluster environment.

Each tick evaluates every VM's workload demand, shares node CPU among VMs
with max-min fair (round-robin style) progressive filling, derives swap
activity from working-set size versus allocated memory, and estimates I/O
latency per node with a single-server M/M/1 queue.
"""

from __future__ import annotations

import hashlib
import math
import struct
import zlib
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .core import (
    Action,
    NodeSpec,
    TuningStep,
    VmState,
    action_to_delta,
    apply_delta,
)
from .reward import GoodBadState, Thresholds, compute_reward

WORKLOAD_KINDS = ("static", "increasing_wss", "periodic_cpu")


@dataclass(frozen=True)
class WorkloadPattern:
    kind: str = "static"
    cpu_base_ghz: float = 1.0
    cpu_amplitude_ghz: float = 0.0
    period_s: float = 7200.0
    duty_fraction: float = 0.5
    wss_base_mib: float = 2048.0
    wss_step_mib: float = 0.0
    wss_step_interval_s: float = 1200.0
    io_rate_iops: float = 0.0
    io_type: str = "rand_read_8k"
    noise_fraction: float = 0.0
    seed: int = 0
    phase_s: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in WORKLOAD_KINDS:
            raise ValueError(f"unknown workload kind {self.kind!r}")
        magnitudes = (self.cpu_base_ghz, self.cpu_amplitude_ghz, self.wss_base_mib,
                      self.wss_step_mib, self.io_rate_iops, self.noise_fraction)
        if any(m < 0 for m in magnitudes):
            raise ValueError("workload magnitudes must be >= 0")
        if not 0.0 <= self.duty_fraction <= 1.0:
            raise ValueError("duty_fraction must be in [0, 1]")
        if self.kind == "periodic_cpu" and self.period_s <= 0:
            raise ValueError("period_s must be > 0 for periodic_cpu")
        if self.kind == "increasing_wss" and self.wss_step_interval_s <= 0:
            raise ValueError("wss_step_interval_s must be > 0 for increasing_wss")
        if self.noise_fraction > 1.0:
            raise ValueError("noise_fraction must be <= 1")


@dataclass(frozen=True)
class Demand:
    cpu_demand_ghz: float
    wss_mib: float
    offered_iops: float
    io_type: str


@dataclass(frozen=True)
class VmInstantMetrics:
    cpu_usage: float
    cpu_ready: float
    mem_usage: float
    swap_rate: float
    achieved_iops: float
    io_latency_ms: float


@dataclass(frozen=True)
class TelemetrySample:
    vm_id: str
    timestamp_s: float
    metrics: VmInstantMetrics


@dataclass(frozen=True)
class SimParams:
    tick_s: float = 30.0
    swap_rate_per_deficit_gib: float = 256.0
    swap_latency_penalty_ms_per_page_s: float = 0.01
    rho_max: float = 0.99
    latency_cap_ms: float = 50.0


@dataclass
class SimState:
    nodes: list[NodeSpec]
    vms: dict[str, VmState]
    workloads: dict[str, WorkloadPattern]
    params: SimParams = field(default_factory=SimParams)
    seed: int = 0
    clock_s: float = 0.0

    def __post_init__(self) -> None:
        node_ids = {n.node_id for n in self.nodes}
        for vm in self.vms.values():
            if vm.node_id not in node_ids:
                raise ValueError(f"{vm.vm_id} placed on unknown node {vm.node_id}")
            if vm.workload_id not in self.workloads:
                raise ValueError(f"{vm.vm_id} bound to unknown workload {vm.workload_id}")

    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)

    def copy(self) -> SimState:
        # VmState, NodeSpec and WorkloadPattern are immutable; shallow copies suffice.
        return SimState(list(self.nodes), dict(self.vms), dict(self.workloads),
                        self.params, self.seed, self.clock_s)

    def set_allocation(self, vm_id: str, vcpus: int, mem_mib: int) -> VmState:
        vm = replace(self.vms[vm_id], vcpus=vcpus, mem_mib=mem_mib)
        self.vms[vm_id] = vm
        return vm


# -- workload demand --------------------------------------------------------

def _unit_uniform(*key: int) -> float:
    """Counter-based uniform draw in [0, 1) from an integer key tuple."""
    digest = hashlib.blake2b(struct.pack(f"<{len(key)}q", *key), digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0**64


def vm_key(vm_id: str) -> int:
    return zlib.crc32(vm_id.encode())


def demand_at(p: WorkloadPattern, t: float, key: int = 0, base_seed: int = 0) -> Demand:
    """Workload requirement at time ``t``.

    ``key`` identifies the VM and ``base_seed`` the experiment; together with
    the pattern seed and ``t`` they fully determine the noise draw, so replay
    does not depend on evaluation order.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    cpu = p.cpu_base_ghz
    wss = p.wss_base_mib
    if p.kind == "increasing_wss":
        wss = p.wss_base_mib + p.wss_step_mib * math.floor(t / p.wss_step_interval_s)
    elif p.kind == "periodic_cpu":
        if (t + p.phase_s) % p.period_s < p.duty_fraction * p.period_s:
            cpu = p.cpu_base_ghz + p.cpu_amplitude_ghz
    iops = p.io_rate_iops
    if p.noise_fraction > 0:
        t_ms = int(round(t * 1000))
        u_cpu = _unit_uniform(base_seed, p.seed, key, t_ms, 0)
        u_io = _unit_uniform(base_seed, p.seed, key, t_ms, 1)
        cpu *= 1.0 + p.noise_fraction * (2.0 * u_cpu - 1.0)
        iops *= 1.0 + p.noise_fraction * (2.0 * u_io - 1.0)
    return Demand(cpu, wss, iops, p.io_type)


# -- resource models ----------------------------------------------------------

def schedule_cpu(
    node: NodeSpec, requests: Sequence[tuple[str, float, int]]
) -> list[tuple[str, float, float]]:
    """Share node CPU among VMs.

    Each VM asks for ``min(demand, vcpus * core_ghz)``.  When the node is
    oversubscribed, capacity is handed out by max-min fair progressive
    filling: every unsatisfied VM gets an equal share of what is left.
    Returns ``(vm_id, granted_ghz, ready_fraction)`` in input order.
    """
    caps = [min(max(d, 0.0), v * node.core_ghz) for _, d, v in requests]
    capacity = node.capacity_ghz
    if sum(caps) <= capacity:
        granted = caps
    else:
        granted = [0.0] * len(caps)
        order = sorted(range(len(caps)), key=lambda i: caps[i])
        remaining = capacity
        for pos, i in enumerate(order):
            share = remaining / (len(order) - pos)
            g = min(caps[i], share)
            granted[i] = g
            remaining -= g
    out = []
    for (vm_id, _, _), cap, g in zip(requests, caps, granted):
        ready = (cap - g) / cap if cap > 0 else 0.0
        out.append((vm_id, g, ready))
    return out


def memory_model(mem_mib: float, wss_mib: float, k: float = 256.0) -> tuple[float, float]:
    """Return ``(mem_usage, swap_rate)``; swap grows linearly with the GiB deficit."""
    if mem_mib <= 0:
        raise ValueError("mem_mib must be > 0")
    usage = min(wss_mib, mem_mib) / mem_mib
    swap = max(0.0, (wss_mib - mem_mib) / 1024.0) * k
    return usage, swap


def mm1_latency_ms(mu: float, lam: float) -> float:
    """Mean M/M/1 sojourn time ``1 / (mu - lam)`` in milliseconds."""
    return 1000.0 / (mu - lam)


def effective_service_rate(profile: Mapping[str, float],
                           offered: Sequence[tuple[str, float, str]]) -> float:
    """Single-server rate for a mix: harmonic composition weighted by offered IOPS.

    With nothing offered, the types present (or the whole profile) weigh equally.
    """
    weights: dict[str, float] = {}
    for _, iops, io_type in offered:
        weights[io_type] = weights.get(io_type, 0.0) + iops
    if sum(weights.values()) <= 0:
        types = {io_type for _, _, io_type in offered} or set(profile)
        weights = {t: 1.0 for t in types}
    if len(weights) == 1:
        return float(profile[next(iter(weights))])
    total = sum(weights.values())
    return total / sum(w / profile[t] for t, w in weights.items())


def io_model(
    node: NodeSpec,
    offered: Sequence[tuple[str, float, str]],
    rho_max: float = 0.99,
    latency_cap_ms: float = 50.0,
) -> tuple[float, list[tuple[str, float]]]:
    mu = effective_service_rate(node.io_service_profile, offered)
    lam = sum(iops for _, iops, _ in offered)
    if lam <= rho_max * mu:
        # Slow profiles can exceed the cap before saturation; keep latency monotone.
        latency = min(mm1_latency_ms(mu, lam), latency_cap_ms)
        return latency, [(vm_id, iops) for vm_id, iops, _ in offered]
    scale = rho_max * mu / lam
    return latency_cap_ms, [(vm_id, iops * scale) for vm_id, iops, _ in offered]


# -- stepping -------------------------------------------------------------------

def _by_node(state: SimState) -> dict[str, list[VmState]]:
    groups: dict[str, list[VmState]] = {n.node_id: [] for n in state.nodes}
    for vm in state.vms.values():
        groups[vm.node_id].append(vm)
    return groups


def _evaluate(state: SimState, t: float) -> dict[str, VmInstantMetrics]:
    p = state.params
    out: dict[str, VmInstantMetrics] = {}
    for node in state.nodes:
        vms = [vm for vm in state.vms.values() if vm.node_id == node.node_id]
        if not vms:
            continue
        demands = [demand_at(state.workloads[vm.workload_id], t, vm_key(vm.vm_id), state.seed)
                   for vm in vms]
        cpu = schedule_cpu(node, [(vm.vm_id, d.cpu_demand_ghz, vm.vcpus)
                                  for vm, d in zip(vms, demands)])
        latency, achieved = io_model(
            node, [(vm.vm_id, d.offered_iops, d.io_type) for vm, d in zip(vms, demands)],
            p.rho_max, p.latency_cap_ms)
        for vm, d, (_, granted, ready), (_, iops) in zip(vms, demands, cpu, achieved):
            mem_usage, swap = memory_model(vm.mem_mib, d.wss_mib, p.swap_rate_per_deficit_gib)
            usage = granted / (vm.vcpus * node.core_ghz)
            out[vm.vm_id] = VmInstantMetrics(
                cpu_usage=min(1.0, usage),
                cpu_ready=ready,
                mem_usage=mem_usage,
                swap_rate=swap,
                achieved_iops=iops,
                io_latency_ms=latency + p.swap_latency_penalty_ms_per_page_s * swap,
            )
    return {vm_id: out[vm_id] for vm_id in state.vms}


def observe(state: SimState) -> list[TelemetrySample]:
    """Instantaneous reading at the current clock; does not advance time."""
    return [TelemetrySample(vm_id, state.clock_s, m)
            for vm_id, m in _evaluate(state, state.clock_s).items()]


def step(state: SimState, dt: float) -> list[TelemetrySample]:
    """Advance ``state`` by ``dt`` seconds in place.

    Emits one sample per VM per internal tick, stamped at the end of the
    tick; demand is evaluated at the start of the tick.
    """
    tick = state.params.tick_s
    n_ticks = round(dt / tick)
    if dt <= 0 or not math.isclose(n_ticks * tick, dt):
        raise ValueError(f"dt={dt} is not a positive multiple of tick_s={tick}")
    samples: list[TelemetrySample] = []
    start = state.clock_s
    for i in range(n_ticks):
        t = start + i * tick
        for vm_id, m in _evaluate(state, t).items():
            samples.append(TelemetrySample(vm_id, start + (i + 1) * tick, m))
    state.clock_s = start + n_ticks * tick
    return samples


def node_substate(state: SimState, node_id: str) -> SimState:
    vms = {k: v for k, v in state.vms.items() if v.node_id == node_id}
    return SimState([state.node(node_id)], vms, state.workloads, state.params,
                    state.seed, state.clock_s)


def oracle_rewards(
    state: SimState,
    vm_id: str,
    step_size: TuningStep = TuningStep(),
    interval_s: float = 300.0,
    prev: VmInstantMetrics | None = None,
    thresholds: Thresholds | None = None,
) -> list[int]:
    """Reward of each of the 9 arms for ``vm_id``, by counterfactual replay.

    Every arm is applied to a private copy of the VM's node (other nodes
    cannot affect it), the copy is advanced one decision interval, and the
    resulting end-of-interval metrics are scored with the controller reward.
    """
    th = thresholds or Thresholds()
    if prev is None:
        prev = {s.vm_id: s.metrics for s in observe(state)}[vm_id]
    base = node_substate(state, state.vms[vm_id].node_id)
    prev_state = GoodBadState.from_metrics(prev)
    rewards = []
    for a in Action:
        sim = base.copy()
        vm, clamped = apply_delta(sim.vms[vm_id], action_to_delta(a, step_size))
        sim.vms[vm_id] = vm
        last = step(sim, interval_s)[-len(sim.vms):]
        nxt = next(s.metrics for s in last if s.vm_id == vm_id)
        rewards.append(compute_reward(prev_state, prev.cpu_usage, prev.mem_usage, a,
                                      GoodBadState.from_metrics(nxt), clamped, th))
    return rewards


def oracle_best_action(
    state: SimState,
    vm_id: str,
    step_size: TuningStep = TuningStep(),
    interval_s: float = 300.0,
    prev: VmInstantMetrics | None = None,
    thresholds: Thresholds | None = None,
) -> Action:
    """Arm with maximal counterfactual reward; ties go to the lowest index."""
    rewards = oracle_rewards(state, vm_id, step_size, interval_s, prev, thresholds)
    return Action(max(range(len(rewards)), key=lambda i: (rewards[i], -i)))


def iter_last_tick(samples: Iterable[TelemetrySample]) -> dict[str, TelemetrySample]:
    """Latest sample per VM from a tick stream."""
    last: dict[str, TelemetrySample] = {}
    for s in samples:
        last[s.vm_id] = s
    return last
