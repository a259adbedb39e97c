"""Insertion controller, lift-and-retry recovery, and the episode executor."""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Iterable, Iterator, List, Optional, Protocol, Sequence

import numpy as np

from .pose import PlanarPose, interpolate_path, wrap_angle
from .sim import Observation, Outcome, SimConfig, SimState, StepSize, clamp_action, reset, step


class Mode(IntEnum):
    INSERT = 0
    RECOVER = 1


class InsertionPolicy(Protocol):
    def act(self, obs: Observation, rng: np.random.Generator) -> PlanarPose:
        ...


class Monitor(Protocol):
    """Decides from the recent insert-mode history whether to trigger recovery."""

    def should_recover(self, history: Sequence[PlanarPose], t: int) -> bool:
        ...


@dataclass(frozen=True)
class PolicyGains:
    kp_xy: float = 0.1
    kp_yaw: float = 0.04
    descend: float = 0.5  # fraction of the z step used when descending
    gate_xy: float = 0.007
    gate_yaw: float = math.radians(15.0)
    jitter_pos: float = 0.0002
    jitter_rot: float = math.radians(0.5)


class ScriptedInsertionPolicy:
    """Proportional alignment toward the goal with gated descent and jitter.

    A stand-in for a learned object-centric policy: it reads only the tool
    pose relative to the nut and emits a displacement in the nut frame.
    """

    def __init__(self, config: SimConfig, gains: PolicyGains = PolicyGains()):
        self.config = config
        self.gains = gains

    def act(self, obs: Observation, rng: np.random.Generator) -> PlanarPose:
        g, cfg = self.gains, self.config
        cur, goal = obs.rel_pose, obs.goal_rel
        ex, ey = goal.x - cur.x, goal.y - cur.y
        eyaw = math.remainder(goal.yaw - cur.yaw, cfg.sector)
        aligned = math.hypot(ex, ey) < g.gate_xy and abs(eyaw) < g.gate_yaw
        j = rng.uniform(-1.0, 1.0, 3)
        return clamp_action(
            PlanarPose(
                g.kp_xy * ex + g.jitter_pos * j[0],
                g.kp_xy * ey + g.jitter_pos * j[1],
                -g.descend * cfg.step_pos if aligned else 0.0,
                g.kp_yaw * eyaw + g.jitter_rot * j[2],
            ),
            cfg,
        )


def recovery_policy(current: PlanarPose, pre_insertion: PlanarPose, action_step: StepSize) -> PlanarPose:
    """Displacement toward the first sub-goal of the path back to the pre-insertion pose."""
    first = interpolate_path(current.to_pose(), pre_insertion.to_pose(), action_step.pos, action_step.rot)[0]
    tx, ty, tz = first.translation
    return PlanarPose(
        tx - current.x,
        ty - current.y,
        tz - current.z,
        wrap_angle(first.yaw - current.yaw),
    )


@dataclass(frozen=True)
class StepRecord:
    t: int
    rel_pose: PlanarPose
    goal_rel: PlanarPose
    action: PlanarPose
    mode: Mode


@dataclass
class Trajectory:
    episode_id: int
    steps: List[StepRecord]
    outcome: Outcome
    final_state: Optional[SimState] = None  # not serialized

    @property
    def success(self) -> bool:
        return self.outcome.success

    @property
    def success_time(self) -> int:
        return self.outcome.success_time

    @property
    def n_recoveries(self) -> int:
        prev, n = Mode.INSERT, 0
        for rec in self.steps:
            if rec.mode == Mode.RECOVER and prev == Mode.INSERT:
                n += 1
            prev = rec.mode
        return n

    def observations(self) -> np.ndarray:
        return np.array([r.rel_pose.to_list() for r in self.steps]).reshape(-1, 4)

    def modes(self) -> np.ndarray:
        return np.array([int(r.mode) for r in self.steps], dtype=int)


@dataclass(frozen=True)
class ExecutorConfig:
    recovery_steps: int = 30  # T_R
    history: int = 10  # T_H
    # "nominal": centered and aligned, retry_height above the nut top
    # "initial": the episode's starting pose relative to the nut
    retry_pose: str = "nominal"
    retry_height: float = 0.01

    def __post_init__(self):
        if self.recovery_steps < 1 or self.history < 1:
            raise ValueError("recovery_steps and history must be >= 1")
        if self.retry_pose not in ("nominal", "initial"):
            raise ValueError("retry_pose must be 'nominal' or 'initial'")

    def pre_insertion(self, initial_rel: PlanarPose) -> PlanarPose:
        if self.retry_pose == "initial":
            return initial_rel
        return PlanarPose(0.0, 0.0, self.retry_height, 0.0)


@dataclass
class ExecutorState:
    pre_insertion: PlanarPose
    history: deque
    mode: Mode = Mode.INSERT
    recover_remaining: int = 0
    suppress_remaining: int = 0
    attempt_start: int = 0


def run_episode(
    config: SimConfig,
    policy: InsertionPolicy,
    monitor: Optional[Monitor] = None,
    exec_config: ExecutorConfig = ExecutorConfig(),
    seed=None,
    episode_id: int = 0,
    start=None,
) -> Trajectory:
    """Roll out one insertion attempt with optional forecast-triggered recovery.

    The monitor is asked once per insert-mode step. When it fires, the
    recovery policy drives the tool back toward the pre-insertion pose for
    ``recovery_steps`` steps. The history is then refilled with fresh
    insert-mode observations before the monitor is asked again.

    The monitor's clock counts steps since the current insertion attempt
    began. A retry starts from the pre-insertion pose, like the episode
    start, so forecasters trained on monitor-free rollouts see it in
    distribution. Without recoveries this is the episode step.

    ``start`` optionally supplies ``(state, obs, rng)`` in place of a reset,
    for chaining rounds on one nut.
    """
    state, obs, rng = start if start is not None else reset(config, seed)
    ex = ExecutorState(
        pre_insertion=exec_config.pre_insertion(state.rel),
        history=deque(maxlen=exec_config.history),
    )
    records = []
    success = False
    while True:
        if ex.mode == Mode.INSERT:
            ex.history.append(obs.rel_pose)
            if monitor is not None:
                if ex.suppress_remaining > 0:
                    ex.suppress_remaining -= 1
                elif monitor.should_recover(ex.history, obs.t - ex.attempt_start):
                    ex.mode = Mode.RECOVER
                    ex.recover_remaining = exec_config.recovery_steps
        if ex.mode == Mode.RECOVER:
            action = recovery_policy(obs.rel_pose, ex.pre_insertion, config.action_step)
        else:
            action = policy.act(obs, rng)
        records.append(StepRecord(obs.t, obs.rel_pose, obs.goal_rel, clamp_action(action, config), ex.mode))
        if ex.mode == Mode.RECOVER:
            ex.recover_remaining -= 1
            if ex.recover_remaining == 0:
                ex.mode = Mode.INSERT
                ex.history.clear()
                ex.suppress_remaining = exec_config.history
                ex.attempt_start = obs.t + 1
        state, obs, success, done = step(state, action, config, rng)
        if done:
            break
    outcome = Outcome(success, state.t if success else config.max_steps)
    return Trajectory(episode_id, records, outcome, state)


# -- line-delimited trajectory files ----------------------------------------


def _r(p: PlanarPose) -> List[float]:
    return [float(v) for v in p.to_list()]


def trajectory_records(traj: Trajectory) -> Iterator[dict]:
    for rec in traj.steps:
        yield {
            "episode_id": traj.episode_id,
            "t": int(rec.t),
            "rel_pose": _r(rec.rel_pose),
            "goal_rel": _r(rec.goal_rel),
            "action": _r(rec.action),
            "mode": int(rec.mode),
            "success": bool(traj.success),
            "success_time": int(traj.success_time),
        }


def write_trajectories(path, trajectories: Iterable[Trajectory]) -> None:
    with open(path, "w") as fh:
        for traj in sorted(trajectories, key=lambda tr: tr.episode_id):
            for row in trajectory_records(traj):
                fh.write(json.dumps(row) + "\n")


def read_trajectories(path) -> List[Trajectory]:
    grouped = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            missing = {"episode_id", "t", "rel_pose", "goal_rel", "action", "mode", "success", "success_time"} - row.keys()
            if missing:
                raise ValueError(f"{path}:{lineno}: missing fields {sorted(missing)}")
            grouped.setdefault(row["episode_id"], []).append(row)
    out = []
    for eid in sorted(grouped):
        rows = sorted(grouped[eid], key=lambda r: r["t"])
        steps = [
            StepRecord(r["t"], PlanarPose(*r["rel_pose"]), PlanarPose(*r["goal_rel"]), PlanarPose(*r["action"]), Mode(r["mode"]))
            for r in rows
        ]
        out.append(Trajectory(eid, steps, Outcome(bool(rows[0]["success"]), int(rows[0]["success_time"]))))
    return out
