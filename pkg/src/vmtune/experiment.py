"""Wiring configs into simulator + policy + controller runs."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .bandit import LinUcbModel, new_model
from .config import ConfigError, ExperimentConfig, MethodConfig
from .controller import Controller, DomainRules, FilterStrategy, ForceRule
from .core import Action, TuningStep, VmState
from .policies import (
    BanditPolicy,
    PassivePolicy,
    Policy,
    PolicyKind,
    ProactivePolicy,
    ReactivePolicy,
)
from .reward import Thresholds
from .sensing import CONTEXT_DIM, LAYOUT_VERSION
from .simulator import SimParams, SimState, WorkloadPattern

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricsRow:
    time_s: float
    total_vcpus: int
    total_mem_mib: int
    mean_vm_cpu_usage: float
    mean_vm_mem_usage: float
    frac_vms_swapping: float
    mean_latency_ms: float
    total_iops: float
    cumulative_reward: float
    regret: float | None = None


METRICS_COLUMNS = tuple(f.name for f in fields(MetricsRow))


@dataclass
class RunResult:
    label: str
    rows: list[MetricsRow]
    controller: Controller

    @property
    def vcpu_hours(self) -> float:
        dt_h = self.controller.interval_s / 3600.0
        return sum(r.total_vcpus for r in self.rows) * dt_h


# -- building --------------------------------------------------------------------

def build_state(cfg: ExperimentConfig, seed: int | None = None) -> SimState:
    """Instantiate the cluster; VMs are placed round-robin over nodes in config order."""
    seed = cfg.seed if seed is None else seed
    nodes = cfg.cluster.build()
    specs = cfg.instance_specs()
    rng = np.random.default_rng(seed)
    vms: dict[str, VmState] = {}
    workloads: dict[str, WorkloadPattern] = {}
    idx = 0
    for group in cfg.vm_groups:
        for _ in range(group.count):
            vm_id = f"vm-{idx:03d}"
            params = group.workload.model_dump()
            for key, (lo, hi) in group.vary.items():
                params[key] = float(rng.uniform(lo, hi))
            workloads[vm_id] = WorkloadPattern(**params)
            node = nodes[idx % len(nodes)]
            vms[vm_id] = VmState.initial(vm_id, node.node_id, specs[group.instance_type], vm_id)
            idx += 1
    return SimState(nodes, vms, workloads, SimParams(**cfg.sim.model_dump()), seed=seed)


def build_rules(cfg: ExperimentConfig) -> DomainRules:
    r = cfg.rules
    force = ForceRule(**r.force_scale_up.model_dump()) if r.force_scale_up else None
    return DomainRules(TuningStep(r.cpu_step, r.mem_step_mib), force,
                       Thresholds(**r.thresholds.model_dump()))


def load_checkpoint(path: str) -> LinUcbModel:
    return LinUcbModel.load(path, d=CONTEXT_DIM, layout_version=LAYOUT_VERSION)


def build_policy(method: MethodConfig, thresholds: Thresholds,
                 checkpoint_in: str | None = None) -> Policy:
    if method.kind is PolicyKind.PASSIVE:
        return PassivePolicy()
    if method.kind is PolicyKind.REACTIVE:
        return ReactivePolicy(thresholds)
    if method.kind is PolicyKind.PROACTIVE:
        return ProactivePolicy(CONTEXT_DIM, thresholds, method.learning_rate, method.l2_coeff,
                               method.horizon_s, method.warmup_min_pairs)
    path = checkpoint_in or method.checkpoint_in
    if path:
        return BanditPolicy(load_checkpoint(path))
    return BanditPolicy(new_model(CONTEXT_DIM, method.alpha, method.lam, LAYOUT_VERSION))


def build_controller(cfg: ExperimentConfig, policy: Policy, seed: int | None = None) -> Controller:
    return Controller(
        state=build_state(cfg, seed),
        policy=policy,
        rules=build_rules(cfg),
        strategy=FilterStrategy(**cfg.filter.model_dump()),
        interval_s=cfg.decision_interval_s,
        track_regret=cfg.track_regret,
    )


# -- running ------------------------------------------------------------------

def metrics_row(ctl: Controller) -> MetricsRow:
    vms = ctl.state.vms
    last = [ctl.views[vm_id].last for vm_id in vms]
    n = len(last)
    return MetricsRow(
        time_s=ctl.state.clock_s,
        total_vcpus=sum(vm.vcpus for vm in vms.values()),
        total_mem_mib=sum(vm.mem_mib for vm in vms.values()),
        mean_vm_cpu_usage=sum(m.cpu_usage for m in last) / n,
        mean_vm_mem_usage=sum(m.mem_usage for m in last) / n,
        frac_vms_swapping=sum(m.swap_rate > 0 for m in last) / n,
        mean_latency_ms=sum(m.io_latency_ms for m in last) / n,
        total_iops=sum(m.achieved_iops for m in last),
        cumulative_reward=ctl.cumulative_reward,
        regret=ctl.regret.regret if ctl.regret is not None else None,
    )


def run_controller(ctl: Controller, rounds: int) -> list[MetricsRow]:
    rows = []
    for _ in range(rounds):
        ctl.run_round()
        rows.append(metrics_row(ctl))
    return rows


def resolve_method(cfg: ExperimentConfig) -> MethodConfig:
    if cfg.method is not None:
        return cfg.method
    if cfg.methods and len(cfg.methods) == 1:
        return cfg.methods[0]
    raise ConfigError("method: a single method is required for this command")


def run(cfg: ExperimentConfig, method: MethodConfig | None = None, seed: int | None = None,
        checkpoint_in: str | None = None, model: LinUcbModel | None = None) -> RunResult:
    """Execute one method end to end and return its per-round metrics."""
    method = method or resolve_method(cfg)
    if model is not None and method.kind is PolicyKind.BANDITS:
        policy: Policy = BanditPolicy(model)
    else:
        policy = build_policy(method, build_rules(cfg).thresholds, checkpoint_in)
    ctl = build_controller(cfg, policy, seed)
    rows = run_controller(ctl, cfg.rounds)
    return RunResult(method.label, rows, ctl)


def warmup(cfg: ExperimentConfig, seed: int | None = None,
           model: LinUcbModel | None = None) -> tuple[LinUcbModel, float]:
    """Pre-train a bandit in the simulator over ``cfg.episodes`` fresh clusters.

    Returns the trained model and the cumulative reward it collected.
    """
    method = resolve_method(cfg)
    if method.kind is not PolicyKind.BANDITS:
        raise ConfigError("method.kind: warmup requires the bandits method")
    seed = cfg.seed if seed is None else seed
    if model is None:
        model = new_model(CONTEXT_DIM, method.alpha, method.lam, LAYOUT_VERSION)
    policy = BanditPolicy(model)
    total = 0.0
    for episode in range(cfg.episodes):
        ctl = build_controller(cfg, policy, seed + episode)
        for _ in range(cfg.rounds):
            ctl.run_round()
        total += ctl.cumulative_reward
        log.info("warmup episode %d: cumulative reward %.0f", episode, ctl.cumulative_reward)
    return model, total


def _run_for_compare(args):
    cfg, method, seed = args
    res = run(cfg, method, seed)
    return res.label, res.rows, res.vcpu_hours


def compare(cfg: ExperimentConfig, seed: int | None = None,
            jobs: int = 1) -> tuple[dict[str, list[MetricsRow]], dict]:
    """Run every method on its own copy of the same seeded cluster."""
    methods = cfg.methods or []
    if len(methods) < 2:
        raise ConfigError("methods: compare needs at least two methods")
    labels = [m.label for m in methods]
    if len(set(labels)) != len(labels):
        raise ConfigError("methods: method labels must be unique (set 'name')")
    tasks = [(cfg, m, seed) for m in methods]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_for_compare, tasks))
    else:
        results = [_run_for_compare(t) for t in tasks]
    per_method = {label: rows for label, rows, _ in results}
    hours = {label: h for label, _, h in results}
    return per_method, summarize(per_method, hours)


def summarize(per_method: dict[str, list[MetricsRow]], vcpu_hours: dict[str, float]) -> dict:
    baseline = "passive" if "passive" in per_method else next(iter(per_method))
    base = per_method[baseline][-1]

    def pct(value: float, ref: float) -> float:
        return 0.0 if ref == 0 else 100.0 * (value - ref) / ref

    summary = {"baseline": baseline, "methods": {}}
    for label, rows in per_method.items():
        final = rows[-1]
        summary["methods"][label] = {
            "final_total_vcpus": final.total_vcpus,
            "final_total_mem_mib": final.total_mem_mib,
            "final_frac_vms_swapping": final.frac_vms_swapping,
            "final_mean_vm_cpu_usage": final.mean_vm_cpu_usage,
            "vcpu_hours": vcpu_hours[label],
            "cumulative_reward": final.cumulative_reward,
            "delta_vcpus_pct": pct(final.total_vcpus, base.total_vcpus),
            "delta_mem_pct": pct(final.total_mem_mib, base.total_mem_mib),
        }
    return summary


def explain(cfg: ExperimentConfig, model: LinUcbModel, vm_id: str | None = None,
            group: str | None = None, after_rounds: int = 0,
            seed: int | None = None) -> tuple[str, list[tuple[str, float, float, float]]]:
    """Per-arm scores for one VM context, highest score first.

    The context is taken from a fresh cluster built from ``cfg`` after
    ``after_rounds`` passive rounds.
    """
    ctl = build_controller(cfg, PassivePolicy(), seed)
    for _ in range(after_rounds):
        ctl.run_round()
    if vm_id is None:
        vm_id = _first_vm_of_group(cfg, group) if group else next(iter(ctl.state.vms))
    if vm_id not in ctl.views:
        raise ConfigError(f"unknown VM {vm_id!r}")
    scores = model.predict(ctl.views[vm_id].context)
    rows = [(Action(i).name, s.estimate, s.width, s.score) for i, s in enumerate(scores)]
    rows.sort(key=lambda r: -r[3])
    return vm_id, rows


def _first_vm_of_group(cfg: ExperimentConfig, group: str) -> str:
    idx = 0
    for g in cfg.vm_groups:
        if g.name == group:
            return f"vm-{idx:03d}"
        idx += g.count
    raise ConfigError(f"unknown VM group {group!r}")


# -- output -----------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return f"{value:.6f}"


def metrics_csv(rows: Sequence[MetricsRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(v) for v in astuple(row)])
    return buf.getvalue()


def write_metrics(path: str | Path, rows: Sequence[MetricsRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(metrics_csv(rows))


def read_metrics(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_summary(path: str | Path, summary: dict) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
