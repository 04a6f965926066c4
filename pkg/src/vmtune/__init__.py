"""Simulated VM right-sizing with a contextual bandit controller."""

from .bandit import ArmScore, LinUcbModel, new_model
from .controller import Controller, DomainRules, FilterStrategy
from .core import Action, Direction, InstanceTypeSpec, NodeSpec, TuningStep, VmState
from .simulator import SimState, WorkloadPattern

__version__ = "0.1.0"

__all__ = [
    "Action", "ArmScore", "Controller", "Direction", "DomainRules", "FilterStrategy",
    "InstanceTypeSpec", "LinUcbModel", "NodeSpec", "SimState", "TuningStep", "VmState",
    "WorkloadPattern", "new_model",
]
