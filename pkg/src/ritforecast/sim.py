"""Kinematic wrench-on-nut insertion surrogate.

The state is four-DOF (x, y, z, yaw). The nut sits on a bolt at a random
world placement and can spin about the bolt axis when the tool rubs against
its top face; ``friction_mu`` scales that coupling. The tool drops onto the
nut only when it is aligned in xy and in yaw modulo the nut's rotational
symmetry. Landing badly off-center jams the tool on the nut rim until it is
lifted clear.

All distances are relative to the nut top: ``z = 0`` is the top face and the
goal sits ``insert_depth`` below it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np

from .pose import PlanarPose, planar_compose, planar_perturb, planar_relative, wrap_angle

SeedLike = Union[int, np.random.Generator, None]


class StepSize(NamedTuple):
    pos: float
    rot: float


@dataclass(frozen=True)
class SimConfig:
    friction_mu: float = 0.0
    # success tolerances are calibration constants for the surrogate
    tol_xy: float = 0.0015
    tol_yaw: float = math.radians(3.0)
    insert_depth: float = 0.025
    init_xy_range: float = 0.01
    init_z_range: Tuple[float, float] = (0.005, 0.01)
    init_yaw_range: float = math.radians(10.0)
    obs_pos_noise: float = 0.002
    obs_yaw_noise: float = math.radians(10.0)
    max_steps: int = 255
    step_pos: float = 0.001
    step_rot: float = math.radians(2.0)
    nut_symmetry_order: int = 6
    # contact coupling: nut yaw gained per meter of tangential tool slide
    k_drag: float = 20.0
    drag_limit: float = math.radians(2.0)
    # landing farther than this off-center wedges the tool on the rim
    jam_xy: float = 0.002
    jam_clearance: float = 0.001
    # world placement of the nut; irrelevant to the relative dynamics
    nut_xy_range: float = 0.05
    nut_height: float = 0.1

    def __post_init__(self):
        lo, hi = self.init_z_range
        object.__setattr__(self, "init_z_range", (float(lo), float(hi)))
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "init_z_range":
                if lo < 0 or hi < lo:
                    raise ValueError(f"init_z_range must satisfy 0 <= lo <= hi, got {v}")
            elif isinstance(v, (int, float)) and v < 0:
                raise ValueError(f"{f.name} must be non-negative, got {v}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.nut_symmetry_order < 1:
            raise ValueError("nut_symmetry_order must be >= 1")
        if self.step_pos <= 0 or self.step_rot <= 0:
            raise ValueError("action step bounds must be positive")

    @property
    def action_step(self) -> StepSize:
        return StepSize(self.step_pos, self.step_rot)

    @property
    def goal_rel(self) -> PlanarPose:
        return PlanarPose(0.0, 0.0, -self.insert_depth, 0.0)

    @property
    def sector(self) -> float:
        return 2.0 * math.pi / self.nut_symmetry_order


@dataclass(frozen=True)
class SimState:
    tool: PlanarPose
    nut: PlanarPose  # nut top-center in world; yaw is the free spin about the bolt
    t: int = 0
    in_contact: bool = False
    jammed: bool = False

    @property
    def nut_yaw(self) -> float:
        return self.nut.yaw

    @property
    def rel(self) -> PlanarPose:
        """Ground-truth tool pose in the nut frame."""
        return planar_relative(self.tool, self.nut)


@dataclass(frozen=True)
class Observation:
    rel_pose: PlanarPose
    goal_rel: PlanarPose
    t: int


@dataclass(frozen=True)
class Outcome:
    success: bool
    success_time: int


class StepResult(NamedTuple):
    state: SimState
    obs: Observation
    success: bool
    done: bool


def yaw_error(rel_yaw: float, config: SimConfig) -> float:
    """Yaw misalignment folded into the nut's symmetry sector."""
    return math.remainder(rel_yaw - config.goal_rel.yaw, config.sector)


def is_aligned(rel: PlanarPose, config: SimConfig) -> bool:
    return (
        math.hypot(rel.x, rel.y) <= config.tol_xy
        and abs(yaw_error(rel.yaw, config)) <= config.tol_yaw
    )


def is_success(state: SimState, config: SimConfig) -> bool:
    rel = state.rel
    # 1e-12 absorbs round-off of the depth accumulated over many steps
    return is_aligned(rel, config) and rel.z <= -config.insert_depth + 1e-12


def observe(state: SimState, config: SimConfig, rng: np.random.Generator) -> Observation:
    noisy = planar_perturb(state.rel, config.obs_pos_noise, config.obs_yaw_noise, rng)
    return Observation(noisy, config.goal_rel, state.t)


def initial_rel(config: SimConfig, rng: np.random.Generator) -> PlanarPose:
    u = rng.uniform(-1.0, 1.0, 2)
    z = rng.uniform(*config.init_z_range)
    yaw = rng.uniform(-1.0, 1.0) * config.init_yaw_range
    return PlanarPose(u[0] * config.init_xy_range, u[1] * config.init_xy_range, z, yaw)


def reset(config: SimConfig, seed: SeedLike = None) -> Tuple[SimState, Observation, np.random.Generator]:
    """Draw a fresh episode.

    Returns the state, the first observation and the generator that drives
    the rest of the episode (observation noise), so one seed fixes the whole
    rollout.
    """
    rng = np.random.default_rng(seed)
    nxy = rng.uniform(-1.0, 1.0, 2) * config.nut_xy_range
    nut = PlanarPose(nxy[0], nxy[1], config.nut_height, rng.uniform(-math.pi, math.pi))
    state = SimState(tool=planar_compose(nut, initial_rel(config, rng)), nut=nut)
    return state, observe(state, config, rng), rng


def clamp_action(action: PlanarPose, config: SimConfig) -> PlanarPose:
    p, r = config.step_pos, config.step_rot
    return PlanarPose(
        min(max(action.x, -p), p),
        min(max(action.y, -p), p),
        min(max(action.z, -p), p),
        min(max(action.yaw, -r), r),
    )


def _spin(rel: PlanarPose, dyaw: float) -> PlanarPose:
    """Tool pose in the nut frame after the nut spins by ``dyaw`` under a fixed tool."""
    c, s = math.cos(dyaw), math.sin(dyaw)
    return PlanarPose(c * rel.x + s * rel.y, -s * rel.x + c * rel.y, rel.z, wrap_angle(rel.yaw - dyaw))


def _drag(rel: PlanarPose, dx: float, dy: float, config: SimConfig) -> float:
    r = math.hypot(rel.x, rel.y)
    if r < 1e-9:
        return 0.0
    tangential = (rel.x * dy - rel.y * dx) / r
    return min(max(config.k_drag * tangential, -config.drag_limit), config.drag_limit)


def step(
    state: SimState, action: PlanarPose, config: SimConfig, rng: np.random.Generator
) -> StepResult:
    """Advance one control step with ``action`` given in the nut frame."""
    if state.t >= config.max_steps:
        raise ValueError(f"episode already at its time limit ({config.max_steps})")
    a = clamp_action(action, config)
    rel = state.rel
    mu = config.friction_mu
    jammed = state.jammed
    in_contact = False
    spin = 0.0

    if jammed:
        # wedged on the rim: only lifting moves the tool; pushing sideways
        # or twisting drags the nut around instead
        new = PlanarPose(rel.x, rel.y, rel.z + max(a.z, 0.0), rel.yaw)
        if new.z >= config.jam_clearance:
            jammed = False
        else:
            in_contact = True
            spin = mu * (a.yaw + _drag(rel, a.x, a.y, config))
    elif rel.z < 0.0:
        # inside the nut the walls hold x, y and yaw
        new = PlanarPose(rel.x, rel.y, max(rel.z + a.z, -config.insert_depth), rel.yaw)
    else:
        new = PlanarPose(rel.x + a.x, rel.y + a.y, rel.z + a.z, wrap_angle(rel.yaw + a.yaw))
        if new.z <= 0.0 and not is_aligned(new, config):
            new = replace(new, z=0.0)
            in_contact = True
            spin = mu * (a.yaw + _drag(rel, a.x, a.y, config))
            if math.hypot(new.x, new.y) > config.jam_xy and rel.z > 0.0:
                jammed = True
        elif new.z < -config.insert_depth:
            new = replace(new, z=-config.insert_depth)

    nut = state.nut
    if spin != 0.0:
        new = _spin(new, spin)
        nut = replace(nut, yaw=wrap_angle(nut.yaw + spin))
    nxt = SimState(
        tool=planar_compose(nut, new),
        nut=nut,
        t=state.t + 1,
        in_contact=in_contact,
        jammed=jammed,
    )
    success = is_success(nxt, config) and nxt.t < config.max_steps
    done = success or nxt.t >= config.max_steps
    return StepResult(nxt, observe(nxt, config, rng), success, done)


def load_config(path) -> dict:
    """Parse a flat ``key = value`` file into a dict of Python values.

    Blank lines and ``#`` comments are skipped. Values are parsed as int,
    float, comma-separated float tuple, ``on/off/true/false`` or left as str.
    """
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key] = parse_value(value)
    return out


def parse_value(value: str):
    low = value.lower()
    if low in ("true", "on", "yes"):
        return True
    if low in ("false", "off", "no"):
        return False
    if "," in value:
        return tuple(float(v) for v in value.split(","))
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def sim_config_from(values: dict, **overrides) -> SimConfig:
    """Build a SimConfig from the subset of ``values`` naming its fields.

    Angles in config files are given in degrees under ``*_deg`` keys.
    """
    names = {f.name for f in fields(SimConfig)}
    kwargs = {}
    for key, v in {**values, **overrides}.items():
        if key.endswith("_deg") and key[:-4] in names:
            kwargs[key[:-4]] = math.radians(v)
        elif key in names:
            kwargs[key] = v
    return SimConfig(**kwargs)
