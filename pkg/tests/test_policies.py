"""Passive, reactive and proactive baselines plus the bandit policy wrapper."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vmtune.core import NOOP, Action, Direction
from vmtune.policies import (
    BanditPolicy,
    LagBuffer,
    OnlineLinearRegressor,
    PassivePolicy,
    ProactivePolicy,
    ReactivePolicy,
    harvest_targets,
    passive_decide,
    proactive_decide,
    reactive_decide,
    sgd_update,
    threshold_direction,
)
from vmtune.bandit import new_model
from vmtune.reward import Thresholds
from vmtune.sensing import RollingStats, VmView
from vmtune.simulator import TelemetrySample, VmInstantMetrics

unit = st.floats(0, 1)
_RANK = {Direction.DOWN: 0, Direction.NOOP: 1, Direction.UP: 2}


def ts(t, cpu=0.5, mem=0.5, vm="a"):
    return TelemetrySample(vm, t, VmInstantMetrics(cpu, 0.0, mem, 0.0, 0.0, 0.0))


class TestThresholds:
    def test_validation(self):
        with pytest.raises(ValueError):
            Thresholds(under=0.2, over=0.3)
        with pytest.raises(ValueError):
            Thresholds(under=1.2, over=0.3)

    @pytest.mark.parametrize("u,d", [(0.80, Direction.UP), (0.20, Direction.DOWN),
                                     (0.75, Direction.NOOP), (0.25, Direction.NOOP)])
    def test_direction_examples(self, u, d):
        assert threshold_direction(u, Thresholds()) is d

    @given(unit, unit)
    def test_direction_monotone(self, a, b):
        lo, hi = sorted((a, b))
        th = Thresholds()
        assert _RANK[threshold_direction(lo, th)] <= _RANK[threshold_direction(hi, th)]


class TestPassive:
    def test_all_noop(self):
        assert passive_decide(["a", "b"]) == {"a": NOOP, "b": NOOP}
        assert passive_decide([]) == {}
        assert passive_decide(["a"]) == passive_decide(["a"])


class TestReactive:
    @pytest.mark.parametrize("cpu,mem,action", [
        (0.9, 0.1, Action.CPU_UP_MEM_DOWN),
        (0.5, 0.5, Action.CPU_NOOP_MEM_NOOP),
        (0.8, 0.8, Action.CPU_UP_MEM_UP),
    ])
    def test_examples(self, cpu, mem, action):
        assert reactive_decide({"a": (cpu, mem)}) == {"a": action}

    @given(unit, unit)
    def test_resources_independent(self, cpu, mem):
        a = reactive_decide({"a": (cpu, mem)})["a"]
        assert a.cpu is threshold_direction(cpu, Thresholds())
        assert a.mem is threshold_direction(mem, Thresholds())


class TestSgd:
    def test_first_step(self):
        reg = OnlineLinearRegressor(3, 0.01, 1e-4)
        sgd_update(reg, np.array([1.0, 0.0, 0.0]), 1.0)
        assert reg.weights[0] == pytest.approx(0.01) and reg.n_steps == 1

    def test_zero_residual_without_l2_is_fixed_point(self):
        reg = OnlineLinearRegressor(2, 0.01, 0.0, np.array([0.3, 0.2]))
        sgd_update(reg, np.array([1.0, 1.0]), 0.5)
        assert np.array_equal(reg.weights, [0.3, 0.2])

    def test_zero_input_only_decays(self):
        reg = OnlineLinearRegressor(2, 0.01, 1e-4, np.array([1.0, -2.0]))
        for _ in range(2):
            sgd_update(reg, np.zeros(2), 0.7)
        assert np.allclose(reg.weights, np.array([1.0, -2.0]) * (1 - 0.01 * 1e-4) ** 2)

    @given(st.lists(st.tuples(st.lists(unit, min_size=4, max_size=4), unit), max_size=200))
    def test_weights_stay_finite(self, data):
        reg = OnlineLinearRegressor(4)
        for x, y in data:
            sgd_update(reg, np.array(x), y)
        assert np.all(np.isfinite(reg.weights))


class TestLagBuffer:
    def test_horizon_incomplete(self):
        lag = LagBuffer(600)
        lag.add("a", np.ones(2), 0)
        assert harvest_targets(lag, {"a": [ts(300)]}, 599) == []
        assert len(lag.pending) == 1

    def test_max_over_window(self):
        lag = LagBuffer(600)
        lag.add("a", np.ones(2), 0)
        tele = {"a": [ts(0, 0.9), ts(200, 0.3, 0.2), ts(400, 0.7, 0.1), ts(600, 0.5, 0.4),
                      ts(630, 1.0, 1.0)]}
        [(x, y_cpu, y_mem)] = harvest_targets(lag, tele, 600)
        assert (y_cpu, y_mem) == (0.7, 0.4)
        assert not lag.pending

    def test_empty(self):
        assert harvest_targets(LagBuffer(), {}, 1e6) == []


class TestProactive:
    def test_not_warmed_is_noop(self):
        cpu, mem = OnlineLinearRegressor(2), OnlineLinearRegressor(2)
        assert proactive_decide({"a": np.ones(2)}, cpu, mem, warmed=False) == {"a": NOOP}

    def test_predicted_thresholds_and_clamp(self):
        cpu = OnlineLinearRegressor(1, weights=np.array([0.9]))
        mem = OnlineLinearRegressor(1, weights=np.array([0.5]))
        assert proactive_decide({"a": np.ones(1)}, cpu, mem)["a"] is Action.CPU_UP_MEM_NOOP
        cpu.weights = np.array([1.2])
        mem.weights = np.array([-0.4])
        assert proactive_decide({"a": np.ones(1)}, cpu, mem)["a"] is Action.CPU_UP_MEM_DOWN

    @given(unit, unit)
    def test_perfect_predictor_equals_reactive_on_future_max(self, y_cpu, y_mem):
        x = np.array([1.0, 0.3, 0.9])
        cpu = OnlineLinearRegressor(3, weights=np.array([y_cpu, 0.0, 0.0]))
        mem = OnlineLinearRegressor(3, weights=np.array([y_mem, 0.0, 0.0]))
        assert proactive_decide({"a": x}, cpu, mem) == reactive_decide({"a": (y_cpu, y_mem)})

    def test_policy_warms_after_enough_pairs(self):
        pol = ProactivePolicy(2, warmup_min_pairs=2, horizon_s=300)
        stats = RollingStats(*(0.5,) * 8)
        view = VmView(None, np.array([1.0, 0.5]), None, stats)
        tele = {"a": [ts(300 * k, 0.95) for k in range(1, 6)]}
        for k in range(2):
            assert not pol.warmed
            assert pol.propose({"a": view}, 300.0 * k)["a"].action is NOOP
            pol.feedback([], tele, 300.0 * (k + 1))
        assert pol.warmed and pol.cpu_model.n_steps == 2
        x = view.context
        expected = proactive_decide({"a": x}, pol.cpu_model, pol.mem_model)["a"]
        assert pol.propose({"a": view}, 600.0)["a"].action is expected


class TestPolicyObjects:
    def test_passive_and_reactive_proposals(self):
        last = VmInstantMetrics(0.9, 0.0, 0.1, 0.0, 0.0, 0.0)
        view = VmView(None, np.zeros(2), last, None)
        assert PassivePolicy().propose({"a": view}, 0)["a"].action is NOOP
        assert ReactivePolicy().propose({"a": view}, 0)["a"].action is Action.CPU_UP_MEM_DOWN

    def test_bandit_proposal_carries_scores(self):
        pol = BanditPolicy(new_model(2))
        prop = pol.propose({"a": VmView(None, np.array([1.0, 0.0]), None, None)}, 0)["a"]
        assert len(prop.scores) == 9 and prop.action is Action(0)
