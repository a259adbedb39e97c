import math
from dataclasses import replace

import numpy as np
import pytest

from ritforecast.forecasting import ConstantMonitor
from ritforecast.policies import (
    ExecutorConfig,
    Mode,
    PolicyGains,
    ScriptedInsertionPolicy,
    read_trajectories,
    recovery_policy,
    run_episode,
    write_trajectories,
)
from ritforecast.pose import PlanarPose
from ritforecast.sim import Observation, SimConfig, StepSize, reset, step

CFG = SimConfig()
POLICY = ScriptedInsertionPolicy(CFG)


def obs(rel):
    return Observation(rel, CFG.goal_rel, 0)


def test_policy_at_goal_descends():
    quiet = ScriptedInsertionPolicy(CFG, replace(PolicyGains(), jitter_pos=0.0, jitter_rot=0.0))
    a = quiet.act(obs(PlanarPose(0, 0, 0.005, 0)), np.random.default_rng(0))
    assert a.x == 0 and a.y == 0 and a.yaw == 0 and a.z < 0


def test_policy_sign():
    a = POLICY.act(obs(PlanarPose(0.005, 0, 0.005, 0)), np.random.default_rng(0))
    assert a.x < 0


def test_policy_output_within_step():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        rel = PlanarPose(*rng.uniform(-0.05, 0.05, 3), rng.uniform(-math.pi, math.pi))
        a = POLICY.act(obs(rel), rng)
        assert abs(a.x) <= CFG.step_pos and abs(a.y) <= CFG.step_pos
        assert abs(a.z) <= CFG.step_pos and abs(a.yaw) <= CFG.step_rot


def test_noise_free_alignment_error_decreases_until_contact():
    cfg = replace(CFG, obs_pos_noise=0.0, obs_yaw_noise=0.0)
    quiet = ScriptedInsertionPolicy(cfg, replace(PolicyGains(), jitter_pos=0.0, jitter_rot=0.0))
    state, o, rng = reset(cfg, 4)
    prev = math.inf
    while not state.in_contact and state.rel.z > 0:
        err = math.hypot(state.rel.x, state.rel.y) + abs(math.remainder(state.rel.yaw, cfg.sector))
        assert err < prev or err == 0.0
        prev = err
        state, o, _, done = step(state, quiet.act(o, rng), cfg, rng)
        if done:
            break


def test_recovery_policy_examples():
    step_ = StepSize(0.01, math.radians(10))
    p = PlanarPose(0.0, 0.0, 0.01, 0.2)
    np.testing.assert_allclose(recovery_policy(p, p, step_).to_list(), 0.0, atol=1e-12)
    d = recovery_policy(PlanarPose(0, 0, -0.02, 0), PlanarPose(0, 0, 0.01, 0), step_)
    assert d.z == pytest.approx(0.01) and d.x == pytest.approx(0) and d.yaw == pytest.approx(0)
    rng = np.random.default_rng(2)
    for _ in range(500):
        cur = PlanarPose(*rng.uniform(-0.1, 0.1, 3), rng.uniform(-math.pi, math.pi))
        d = recovery_policy(cur, PlanarPose(0, 0, 0.01, 0), step_)
        assert max(abs(d.x), abs(d.y), abs(d.z)) <= step_.pos + 1e-12
        assert abs(d.yaw) <= step_.rot + 1e-12


def test_no_monitor_matches_never_fire_bitwise():
    a = run_episode(CFG, POLICY, None, seed=3)
    b = run_episode(CFG, POLICY, ConstantMonitor(False), seed=3)
    assert a.steps == b.steps and a.outcome == b.outcome


def test_episode_is_deterministic():
    a = run_episode(CFG, POLICY, seed=7)
    b = run_episode(CFG, POLICY, seed=7)
    assert a.steps == b.steps and a.outcome == b.outcome


def test_outcome_contract():
    for s in range(30):
        tr = run_episode(CFG, POLICY, seed=s)
        if tr.success:
            assert tr.success_time < CFG.max_steps and len(tr.steps) == tr.success_time
        else:
            assert tr.success_time == CFG.max_steps and len(tr.steps) == CFG.max_steps


class CountingMonitor:
    def __init__(self, fire_at):
        self.fire_at = fire_at
        self.calls = []

    def should_recover(self, history, t):
        self.calls.append((t, len(history)))
        return t == self.fire_at


def test_always_fire_recovers_first_and_never_succeeds():
    tr = run_episode(CFG, POLICY, ConstantMonitor(True), seed=1)
    modes = tr.modes()
    assert np.all(modes[:30] == Mode.RECOVER)
    assert not tr.success


def test_recovery_segments_have_length_t_r():
    ex = ExecutorConfig()
    tr = run_episode(CFG, POLICY, ConstantMonitor(True), ex, seed=2)
    modes = tr.modes()
    edges = np.flatnonzero(np.diff(np.r_[0, modes, 0]))
    runs = edges[1::2] - edges[::2]
    assert np.all(runs[:-1] == ex.recovery_steps)
    assert runs[-1] == min(ex.recovery_steps, len(modes) - edges[-2])
    # insert gaps between recoveries are the suppression window
    gaps = edges[2::2] - edges[1:-1:2]
    assert np.all(gaps == ex.history)


def test_monitor_not_consulted_while_recovering():
    mon = CountingMonitor(fire_at=5)
    tr = run_episode(CFG, POLICY, mon, seed=5)
    modes = tr.modes()
    assert np.all(modes[5:35] == Mode.RECOVER)
    # one call per insert step, plus the firing call at t=5, minus the refill window
    assert len(mon.calls) == int(np.sum(modes == Mode.INSERT)) + 1 - 10
    # attempt clock restarts after the hand-over and the history is refilled
    after = mon.calls[6]
    assert after == (10, 10) and mon.calls[5] == (5, 6)


def test_trajectory_roundtrip(tmp_path):
    trajs = [run_episode(CFG, POLICY, ConstantMonitor(True), seed=s, episode_id=s) for s in range(3)]
    path = tmp_path / "t.jsonl"
    write_trajectories(path, trajs)
    back = read_trajectories(path)
    for a, b in zip(trajs, back):
        assert a.outcome == b.outcome and a.episode_id == b.episode_id
        assert [r.mode for r in a.steps] == [r.mode for r in b.steps]
        np.testing.assert_array_equal(a.observations(), b.observations())
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"episode_id": 0, "t": 0}\n')
    with pytest.raises(ValueError):
        read_trajectories(bad)


def test_executor_config_validation():
    with pytest.raises(ValueError):
        ExecutorConfig(recovery_steps=0)
    with pytest.raises(ValueError):
        ExecutorConfig(retry_pose="elsewhere")
    init = PlanarPose(0.003, 0, 0.007, 0.1)
    assert ExecutorConfig(retry_pose="initial").pre_insertion(init) == init
    assert ExecutorConfig().pre_insertion(init) == PlanarPose(0, 0, 0.01, 0)
