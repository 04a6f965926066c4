"""Experiment configuration files.

A config is a JSON document; unknown keys anywhere are rejected so that
typos in an experiment matrix fail loudly.  Memory in cluster and
instance-type sections is given in GiB and converted to MiB on load.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .core import DEFAULT_IO_PROFILE, INSTANCE_PRESETS, InstanceTypeSpec, NodeSpec, default_nodes
from .policies import PolicyKind
from .simulator import WORKLOAD_KINDS


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class WorkloadConfig(_Strict):
    kind: str = "static"
    cpu_base_ghz: float = Field(1.0, ge=0)
    cpu_amplitude_ghz: float = Field(0.0, ge=0)
    period_s: float = Field(7200.0, gt=0)
    duty_fraction: float = Field(0.5, ge=0, le=1)
    wss_base_mib: float = Field(2048.0, ge=0)
    wss_step_mib: float = Field(0.0, ge=0)
    wss_step_interval_s: float = Field(1200.0, gt=0)
    io_rate_iops: float = Field(0.0, ge=0)
    io_type: str = "rand_read_8k"
    noise_fraction: float = Field(0.0, ge=0, le=1)
    seed: int = 0
    phase_s: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def _known(self):
        if self.kind not in WORKLOAD_KINDS:
            raise ValueError(f"kind must be one of {WORKLOAD_KINDS}")
        if self.io_type not in DEFAULT_IO_PROFILE:
            raise ValueError(f"io_type must be one of {tuple(DEFAULT_IO_PROFILE)}")
        return self


class VmGroupConfig(_Strict):
    name: str = ""
    count: int = Field(ge=1)
    instance_type: str
    workload: WorkloadConfig = Field(default_factory=WorkloadConfig)
    # Per-VM uniform draws for workload fields: {"cpu_base_ghz": [lo, hi]}.
    vary: dict[str, tuple[float, float]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _vary_fields(self):
        for key, (lo, hi) in self.vary.items():
            if key not in WorkloadConfig.model_fields or key in ("kind", "io_type", "seed"):
                raise ValueError(f"vary: {key!r} is not a numeric workload field")
            if lo > hi:
                raise ValueError(f"vary: {key!r} has lo > hi")
        return self


class NodeConfig(_Strict):
    node_id: str
    cores: int = Field(ge=1)
    core_ghz: float = Field(gt=0)
    mem_gib: float = Field(gt=0)
    io_service_profile: dict[str, float] = Field(default_factory=lambda: dict(DEFAULT_IO_PROFILE))


class ClusterConfig(_Strict):
    nodes: Optional[list[NodeConfig]] = None
    # Without explicit nodes the 48-core / 512 GiB cluster is split evenly.
    preset_nodes: int = Field(4, ge=1)

    def build(self) -> list[NodeSpec]:
        if self.nodes is None:
            return default_nodes(self.preset_nodes)
        return [NodeSpec(n.node_id, n.cores, n.core_ghz, round(n.mem_gib * 1024),
                         dict(n.io_service_profile)) for n in self.nodes]


class InstanceTypeConfig(_Strict):
    initial_vcpus: int
    initial_mem_gib: float
    min_vcpus: int
    max_vcpus: int
    min_mem_gib: float
    max_mem_gib: float


class MethodConfig(_Strict):
    kind: PolicyKind
    name: Optional[str] = None
    alpha: float = Field(0.5, ge=0)
    lam: float = Field(0.01, gt=0, alias="lambda")
    learning_rate: float = Field(0.01, gt=0)
    l2_coeff: float = Field(1e-4, ge=0)
    horizon_s: float = Field(600.0, gt=0)
    warmup_min_pairs: int = Field(24, ge=0)
    checkpoint_in: Optional[str] = None

    @property
    def label(self) -> str:
        return self.name or self.kind.value


class FilterConfig(_Strict):
    kind: str = "all"
    fraction: float = 1.0
    seed: int = 0
    resource: str = "cpu"
    comparator: str = ">"
    value: float = 0.75
    metric: str = "cpu_usage"
    k: int = 1


class ForceRuleConfig(_Strict):
    resource: str = "cpu"
    threshold: float = 0.90


class ThresholdsConfig(_Strict):
    under: float = 0.75
    over: float = 0.25


class RulesConfig(_Strict):
    cpu_step: int = Field(1, ge=1)
    mem_step_mib: int = Field(512, ge=1)
    force_scale_up: Optional[ForceRuleConfig] = None
    thresholds: ThresholdsConfig = Field(default_factory=ThresholdsConfig)


class SimConfig(_Strict):
    tick_s: float = Field(30.0, gt=0)
    swap_rate_per_deficit_gib: float = Field(256.0, ge=0)
    swap_latency_penalty_ms_per_page_s: float = Field(0.01, ge=0)
    rho_max: float = Field(0.99, gt=0, lt=1)
    latency_cap_ms: float = Field(50.0, gt=0)


class ExperimentConfig(_Strict):
    seed: int = 0
    duration_s: float = Field(gt=0)
    decision_interval_s: float = Field(300.0, gt=0)
    episodes: int = Field(1, ge=1)
    cluster: ClusterConfig = Field(default_factory=ClusterConfig)
    instance_types: dict[str, InstanceTypeConfig] = Field(default_factory=dict)
    vm_groups: list[VmGroupConfig] = Field(min_length=1)
    method: Optional[MethodConfig] = None
    methods: Optional[list[MethodConfig]] = None
    filter: FilterConfig = Field(default_factory=FilterConfig)
    rules: RulesConfig = Field(default_factory=RulesConfig)
    sim: SimConfig = Field(default_factory=SimConfig)
    track_regret: bool = False
    checkpoint_in: Optional[str] = None
    checkpoint_out: Optional[str] = None
    metrics_out: Optional[str] = None

    @model_validator(mode="after")
    def _timing(self):
        if self.duration_s < self.decision_interval_s:
            raise ValueError("duration_s must be >= decision_interval_s")
        rounds = self.duration_s / self.decision_interval_s
        if not math.isclose(rounds, round(rounds)):
            raise ValueError("duration_s must be a multiple of decision_interval_s")
        ticks = self.decision_interval_s / self.sim.tick_s
        if not math.isclose(ticks, round(ticks)):
            raise ValueError("decision_interval_s must be a multiple of sim.tick_s")
        known = set(INSTANCE_PRESETS) | set(self.instance_types)
        for i, g in enumerate(self.vm_groups):
            if g.instance_type not in known:
                raise ValueError(f"vm_groups.{i}.instance_type: unknown type {g.instance_type!r}")
        return self

    @property
    def rounds(self) -> int:
        return round(self.duration_s / self.decision_interval_s)

    def instance_specs(self) -> dict[str, InstanceTypeSpec]:
        specs = dict(INSTANCE_PRESETS)
        for name, t in self.instance_types.items():
            try:
                specs[name] = InstanceTypeSpec(
                    name, t.initial_vcpus, round(t.initial_mem_gib * 1024), t.min_vcpus,
                    t.max_vcpus, round(t.min_mem_gib * 1024), round(t.max_mem_gib * 1024))
            except ValueError as exc:
                raise ConfigError(f"instance_types.{name}: {exc}") from exc
        return specs


def _format_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "invalid config:\n  " + "\n  ".join(lines)


def parse_config(doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from None
    cfg.instance_specs()
    if base_dir is not None:
        cfg = _resolve_paths(cfg, base_dir)
    return cfg


def _resolve_paths(cfg: ExperimentConfig, base_dir: Path) -> ExperimentConfig:
    def fix(p: Optional[str]) -> Optional[str]:
        if p is None or Path(p).is_absolute():
            return p
        return str(base_dir / p)

    update = {k: fix(getattr(cfg, k)) for k in ("checkpoint_in", "checkpoint_out", "metrics_out")}
    methods = cfg.methods
    if methods is not None:
        methods = [m.model_copy(update={"checkpoint_in": fix(m.checkpoint_in)}) for m in methods]
    method = cfg.method
    if method is not None:
        method = method.model_copy(update={"checkpoint_in": fix(method.checkpoint_in)})
    return cfg.model_copy(update={**update, "methods": methods, "method": method})


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return parse_config(doc, path.parent)
