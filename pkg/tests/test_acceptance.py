"""Acceptance criteria, one test each, printing a PASS/FAIL line per criterion."""

import itertools
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from vmtune.bandit import LinUcbModel, argmax_action, new_model
from vmtune.cli import main
from vmtune.config import MethodConfig, load_config
from vmtune.core import (
    INSTANCE_PRESETS,
    Action,
    Direction,
    NodeSpec,
    VmState,
    action_to_delta,
    apply_delta,
)
from vmtune.experiment import build_controller, run, warmup
from vmtune.policies import PassivePolicy, reactive_decide
from vmtune.reward import GoodBadState, compute_reward
from vmtune.simulator import mm1_latency_ms, schedule_cpu

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SEEDS = range(10)
BANDITS = MethodConfig(kind="bandits")
PASSIVE = MethodConfig(kind="passive")


@pytest.fixture
def report(capsys):
    def emit(n, text, ok, started):
        elapsed = time.perf_counter() - started
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {text} ({elapsed:.1f}s)")
        return elapsed
    return emit


@pytest.fixture(scope="module")
def warm_checkpoint(tmp_path_factory):
    model, _ = warmup(load_config(CONFIGS / "warmup.json"))
    path = tmp_path_factory.mktemp("warm") / "warm.json"
    model.save(path)
    return str(path)


def ridge_scores(history, x, d, lam, alpha, arms=9):
    out = []
    for a in range(arms):
        A, b = lam * np.eye(d), np.zeros(d)
        for xs, arm, r in history:
            if arm == a:
                A += np.outer(xs, xs)
                b += r * xs
        theta = np.linalg.solve(A, b)
        out.append(theta @ x + alpha * math.sqrt(x @ np.linalg.solve(A, x)))
    return np.array(out)


def test_c1_linucb_matches_dense_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    model = new_model(26)
    history = []
    for _ in range(200):
        x, a, r = rng.uniform(-1, 1, 26), int(rng.integers(9)), float(rng.integers(2))
        model.learn(x, a, r)
        history.append((x, a, r))
    worst = 0.0
    for _ in range(5):
        x = rng.uniform(-1, 1, 26)
        got = np.array([s.score for s in model.predict(x)])
        worst = max(worst, float(np.max(np.abs(got - ridge_scores(history, x, 26, 0.01, 0.5)))))
    ok = worst <= 1e-8
    elapsed = report(1, f"LinUCB vs dense ridge oracle, max abs error {worst:.2e}", ok, t0)
    assert ok and elapsed < 5


def test_c2_linucb_hand_example(report):
    t0 = time.perf_counter()
    model = new_model(2, alpha=0.5, lam=0.01)
    x = np.array([1.0, 0.0])
    fresh = [s.score for s in model.predict(x)]
    model.learn(x, 0, 1.0)
    after = model.predict(x)[0].score
    expected = 1 / 1.01 + 0.5 * math.sqrt(1 / 1.01)
    ok = all(abs(s - 5.0) <= 1e-9 for s in fresh) and abs(after - expected) <= 1e-9
    report(2, f"fresh score 5.0 on all arms, after one update {after:.12f}", ok, t0)
    assert ok


def expected_reward(prev_bad, next_bad, action, clamped, band):
    if any(clamped):
        return 0
    if prev_bad and not next_bad:
        return 1
    if next_bad and not prev_bad:
        return 0
    wanted = {Direction.UP: prev_bad, Direction.DOWN: not next_bad}
    return int(all(wanted.get(d, band[i]) for i, d in enumerate((action.cpu, action.mem))))


def test_c3_reward_truth_table(report):
    t0 = time.perf_counter()
    cases = itertools.product(Action, (False, True), (False, True),
                              itertools.product((False, True), repeat=2),
                              itertools.product((False, True), repeat=2))
    n = bad = 0
    for a, pb, nb, clamped, band in cases:
        usage = [0.5 if b else 0.9 for b in band]
        got = compute_reward(GoodBadState(pb, False), usage[0], usage[1], a,
                             GoodBadState(nb, False), clamped)
        n += 1
        bad += got != expected_reward(pb, nb, a, clamped, band)
    ok = bad == 0 and n == 9 * 4 * 4 * 4
    elapsed = report(3, f"reward table, {n} cases enumerated, {bad} mismatches", ok, t0)
    assert ok and elapsed < 1


def progressive_filling(capacity, caps):
    granted, active, left = [0.0] * len(caps), set(range(len(caps))), capacity
    while active and left > 1e-12:
        share = left / len(active)
        for i in sorted(active):
            give = min(share, caps[i] - granted[i])
            granted[i] += give
            left -= give
        active = {i for i in active if caps[i] - granted[i] > 1e-12}
    return granted


def test_c4_queue_and_scheduler_closed_forms(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    exact = True
    for _ in range(50):
        mu = float(rng.uniform(10, 5000))
        lam = float(rng.uniform(0, 0.99 * mu))
        exact &= mm1_latency_ms(mu, lam) == 1000 / (mu - lam)
    node = NodeSpec("n", 4, 2.4, 65536, {"rand_read_8k": 1000.0})
    out = schedule_cpu(node, [(f"v{i}", 4.8, 2) for i in range(3)])
    oracle = progressive_filling(9.6, [4.8] * 3)
    sched = all(math.isclose(g, 3.2) and math.isclose(r, 1 / 3) and math.isclose(g, o)
                for (_, g, r), o in zip(out, oracle))
    ok = exact and sched
    elapsed = report(4, "M/M/1 latency exact on 50 pairs, oversubscribed node grants 3.2 GHz "
                        "with ready 1/3", ok, t0)
    assert ok and elapsed < 1


def test_c5_reactive_baseline_sweep(report):
    t0 = time.perf_counter()
    usages = [i * 0.05 for i in range(21)]

    def want(u):
        return Direction.UP if u > 0.75 else Direction.DOWN if u < 0.25 else Direction.NOOP

    ok = True
    for spec in INSTANCE_PRESETS.values():
        for vcpus, mem in ((spec.min_vcpus, spec.min_mem_mib), (spec.max_vcpus, spec.max_mem_mib),
                           (spec.initial_vcpus, spec.initial_mem_mib)):
            vm = VmState("vm", "n", spec, vcpus, mem, "w")
            for cpu, memu in itertools.product(usages, repeat=2):
                action = reactive_decide({"vm": (cpu, memu)})["vm"]
                ok &= (action.cpu, action.mem) == (want(cpu), want(memu))
                after, _ = apply_delta(vm, action_to_delta(action))
                ok &= spec.min_vcpus <= after.vcpus <= spec.max_vcpus
                ok &= spec.min_mem_mib <= after.mem_mib <= spec.max_mem_mib
    report(5, "reactive thresholds 0.75/0.25 over a 21x21 usage sweep within bounds", ok, t0)
    assert ok


@pytest.mark.slow
def test_c6_bandit_learns_cpu_up_under_overload(report):
    t0 = time.perf_counter()
    cfg = load_config(CONFIGS / "cpu-overload.json")
    hits, picks = 0, []
    for s in SEEDS:
        model = run(cfg, BANDITS, seed=s).controller.policy.model
        view = build_controller(cfg, PassivePolicy(), seed=100 + s).views["vm-000"]
        assert view.last.cpu_usage >= 0.95 and view.last.swap_rate == 0
        action = argmax_action(model.predict(view.context))
        picks.append(action.name)
        hits += action.cpu is Direction.UP
    ok = hits >= 9
    elapsed = report(6, f"CPU-UP argmax in {hits}/10 seeds after {cfg.rounds} rounds", ok, t0)
    assert ok and elapsed < 120, picks


@pytest.mark.slow
def test_c7_transfer_learning_saves_vcpu_hours(report, warm_checkpoint):
    t0 = time.perf_counter()
    cfg = load_config(CONFIGS / "static.json")
    ratios = []
    for s in SEEDS:
        warm = run(cfg, BANDITS, seed=s, checkpoint_in=warm_checkpoint)
        scratch = run(cfg, BANDITS, seed=s)
        ratios.append(warm.vcpu_hours / scratch.vcpu_hours)
    hits = sum(r <= 0.8 for r in ratios)
    ok = hits >= 8 and cfg.duration_s == 4 * 3600
    elapsed = report(7, f"warm/scratch vCPU-hours <= 0.8 in {hits}/10 seeds "
                        f"(max ratio {max(ratios):.2f})", ok, t0)
    assert ok and elapsed < 300, ratios


@pytest.mark.slow
def test_c8_static_savings_against_passive(report, warm_checkpoint):
    t0 = time.perf_counter()
    cfg = load_config(CONFIGS / "static.json")
    start = build_controller(cfg, PassivePolicy())
    over = sum(v.last.cpu_usage < 0.25 or v.last.mem_usage < 0.25 for v in start.views.values())
    passive = run(cfg, PASSIVE).rows[-1]
    bandits = run(cfg, BANDITS, checkpoint_in=warm_checkpoint).rows[-1]
    saving = 1 - bandits.total_vcpus / passive.total_vcpus
    ok = (len(start.views) == 36 and over >= 0.3 * 36 and saving >= 0.2
          and bandits.frac_vms_swapping <= passive.frac_vms_swapping)
    elapsed = report(8, f"{over}/36 VMs overprovisioned, vCPUs {bandits.total_vcpus} vs "
                        f"{passive.total_vcpus} ({saving:.0%} fewer), swapping "
                        f"{bandits.frac_vms_swapping:.3f} vs {passive.frac_vms_swapping:.3f}",
                     ok, t0)
    assert ok and elapsed < 300


@pytest.mark.slow
def test_c9_increasing_wss_reduces_swapping(report, warm_checkpoint):
    t0 = time.perf_counter()
    cfg = load_config(CONFIGS / "increasing-wss.json")
    bandits = next(m for m in cfg.methods if m.kind.value == "bandits")
    hits = 0
    for s in SEEDS:
        b = run(cfg, bandits, seed=s, checkpoint_in=warm_checkpoint).rows[-1]
        p = run(cfg, PASSIVE, seed=s).rows[-1]
        hits += b.frac_vms_swapping < p.frac_vms_swapping
    ok = hits >= 8
    elapsed = report(9, f"bandits swap strictly less than passive in {hits}/10 seeds", ok, t0)
    assert ok and elapsed < 300


@pytest.mark.slow
def test_c10_same_seed_byte_identical(report, warm_checkpoint, tmp_path):
    t0 = time.perf_counter()
    identical = True
    for src in sorted(CONFIGS.glob("*.json")):
        doc = json.loads(src.read_text())
        if "episodes" in doc:
            continue
        for m in doc.get("methods", []):
            if "checkpoint_in" in m:
                m["checkpoint_in"] = warm_checkpoint
        cfg = tmp_path / src.name
        cfg.write_text(json.dumps(doc))
        outputs = []
        for attempt in ("a", "b"):
            out = tmp_path / attempt / f"{src.stem}.csv"
            cmd = "compare" if "methods" in doc else "run"
            assert main([cmd, "--config", str(cfg), "--metrics-out", str(out)]) == 0
            outputs.append({p.name: p.read_bytes() for p in out.parent.glob(f"{src.stem}*")})
        identical &= outputs[0] == outputs[1] and len(outputs[0]) >= 1
    elapsed = report(10, "every shipped config reproduces byte-identical metrics", identical, t0)
    assert identical and elapsed < 60


def test_c11_checkpoint_round_trip(report, tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    model = new_model(26)
    for _ in range(700):
        model.learn(rng.uniform(-1, 1, 26), int(rng.integers(9)), float(rng.integers(2)))
    model.save(tmp_path / "ck.json")
    loaded = LinUcbModel.load(tmp_path / "ck.json")
    contexts = rng.uniform(-1, 1, (100, 26))
    ok = all(model.predict(x) == loaded.predict(x) for x in contexts)
    report(11, "save/load preserves predictions exactly on 100 contexts", ok, t0)
    assert ok
