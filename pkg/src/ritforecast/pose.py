"""Rigid-body poses and the object-centric transforms built on them.

Rotations are unit quaternions stored as ``(w, x, y, z)`` tuples of floats.
Plain tuples keep the per-step arithmetic cheap inside long rollouts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

Quat = Tuple[float, float, float, float]
Vec3 = Tuple[float, float, float]

IDENTITY_QUAT: Quat = (1.0, 0.0, 0.0, 0.0)


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


def _qmul(a: Quat, b: Quat) -> Quat:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def _qnormalize(q: Quat) -> Quat:
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    if n == 0.0:
        raise ValueError("zero quaternion")
    return (q[0] / n, q[1] / n, q[2] / n, q[3] / n)


def _qconj(q: Quat) -> Quat:
    return (q[0], -q[1], -q[2], -q[3])


def _qrotate(q: Quat, v: Vec3) -> Vec3:
    # v' = v + 2w (u x v) + 2 u x (u x v), u the vector part
    w, ux, uy, uz = q
    vx, vy, vz = v
    cx = uy * vz - uz * vy
    cy = uz * vx - ux * vz
    cz = ux * vy - uy * vx
    ccx = uy * cz - uz * cy
    ccy = uz * cx - ux * cz
    ccz = ux * cy - uy * cx
    return (
        vx + 2.0 * (w * cx + ccx),
        vy + 2.0 * (w * cy + ccy),
        vz + 2.0 * (w * cz + ccz),
    )


def quat_from_yaw(yaw: float) -> Quat:
    return (math.cos(0.5 * yaw), 0.0, 0.0, math.sin(0.5 * yaw))


def quat_from_axis_angle(axis: Sequence[float], angle: float) -> Quat:
    ax = np.asarray(axis, dtype=float)
    ax = ax / np.linalg.norm(ax)
    s = math.sin(0.5 * angle)
    return (math.cos(0.5 * angle), float(ax[0] * s), float(ax[1] * s), float(ax[2] * s))


@dataclass(frozen=True)
class Pose:
    """Rigid transform: unit quaternion ``rotation`` (w, x, y, z) and ``translation`` in meters."""

    rotation: Quat = IDENTITY_QUAT
    translation: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self):
        q = tuple(float(c) for c in self.rotation)
        t = tuple(float(c) for c in self.translation)
        if len(q) != 4 or len(t) != 3:
            raise ValueError("Pose needs a 4-component rotation and a 3-component translation")
        object.__setattr__(self, "rotation", _qnormalize(q))
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=float)
        r = m[:3, :3]
        tr = np.trace(r)
        # Shepperd's method, picking the largest diagonal term for stability
        if tr > 0:
            s = math.sqrt(tr + 1.0) * 2
            q = (0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s)
        elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
            s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
            q = ((r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s)
        elif r[1, 1] > r[2, 2]:
            s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
            q = ((r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s)
        else:
            s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
            q = ((r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s)
        return cls(q, tuple(m[:3, 3]))

    def as_matrix(self) -> np.ndarray:
        w, x, y, z = self.rotation
        m = np.eye(4)
        m[:3, :3] = [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
        m[:3, 3] = self.translation
        return m

    def to_list(self) -> List[float]:
        """Seven numbers ``[qw, qx, qy, qz, tx, ty, tz]``."""
        return [*self.rotation, *self.translation]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Pose":
        if len(values) != 7:
            raise ValueError(f"expected 7 numbers, got {len(values)}")
        return cls(tuple(values[:4]), tuple(values[4:]))

    @property
    def yaw(self) -> float:
        w, x, y, z = self.rotation
        return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


@dataclass(frozen=True)
class PlanarPose:
    """Four-DOF pose: position in meters and yaw about +z in radians."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    yaw: float = 0.0

    def to_pose(self) -> Pose:
        return Pose(quat_from_yaw(self.yaw), (self.x, self.y, self.z))

    @classmethod
    def from_pose(cls, p: Pose) -> "PlanarPose":
        """Drop roll and pitch; exact when both are zero."""
        x, y, z = p.translation
        return cls(x, y, z, wrap_angle(p.yaw))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.yaw])

    def to_list(self) -> List[float]:
        return [self.x, self.y, self.z, self.yaw]


def compose(a: Pose, b: Pose) -> Pose:
    """Rigid transform ``a`` applied after ``b`` (homogeneous ``A @ B``)."""
    ta = a.translation
    rb = _qrotate(a.rotation, b.translation)
    return Pose(
        _qmul(a.rotation, b.rotation),
        (ta[0] + rb[0], ta[1] + rb[1], ta[2] + rb[2]),
    )


def inverse(p: Pose) -> Pose:
    qc = _qconj(p.rotation)
    t = _qrotate(qc, p.translation)
    return Pose(qc, (-t[0], -t[1], -t[2]))


def relative(tool_cam: Pose, obj_cam: Pose) -> Pose:
    """Tool pose expressed in the object's frame.

    Any rigid transform applied on the left of both inputs cancels out,
    which is what makes object-centric observations independent of where
    the camera, robot or object sit in the world.
    """
    return compose(inverse(obj_cam), tool_cam)


def rotation_angle(q1: Quat, q2: Quat) -> float:
    """Geodesic angle between two rotations, in [0, pi].

    Equal to ``2 * acos(|<q1, q2>|)`` but evaluated through ``atan2`` so
    that angles near zero keep full precision.
    """
    d = _qmul(_qconj(q1), q2)
    vec = math.sqrt(d[1] * d[1] + d[2] * d[2] + d[3] * d[3])
    return 2.0 * math.atan2(vec, abs(d[0]))


def translation_distance(a: Pose, b: Pose) -> float:
    ta, tb = a.translation, b.translation
    return math.sqrt((ta[0] - tb[0]) ** 2 + (ta[1] - tb[1]) ** 2 + (ta[2] - tb[2]) ** 2)


def _slerp(q0: Quat, q1: Quat, s: float) -> Quat:
    dot = sum(a * b for a, b in zip(q0, q1))
    if dot < 0.0:
        q1 = (-q1[0], -q1[1], -q1[2], -q1[3])
        dot = -dot
    if dot > 1.0 - 1e-12:
        return _qnormalize(tuple(a + s * (b - a) for a, b in zip(q0, q1)))
    theta = math.acos(min(1.0, dot))
    sin_t = math.sin(theta)
    w0 = math.sin((1.0 - s) * theta) / sin_t
    w1 = math.sin(s * theta) / sin_t
    return _qnormalize(tuple(w0 * a + w1 * b for a, b in zip(q0, q1)))


def path_length(d_pos: float, d_rot: float, step_pos: float, step_rot: float) -> int:
    n = max(d_pos / step_pos, d_rot / step_rot)
    # absorb round-off so that 0.05 / 0.01 counts as 5, not 6
    return max(1, math.ceil(n - 1e-9))


def interpolate_path(start: Pose, goal: Pose, step_pos: float, step_rot: float) -> List[Pose]:
    """Sub-goals from ``start`` (excluded) to ``goal`` (included).

    Consecutive poses differ by at most ``step_pos`` meters and ``step_rot``
    radians; translation is interpolated linearly and rotation by slerp.
    """
    if step_pos <= 0 or step_rot <= 0:
        raise ValueError("step bounds must be strictly positive")
    d_pos = translation_distance(start, goal)
    d_rot = rotation_angle(start.rotation, goal.rotation)
    n = path_length(d_pos, d_rot, step_pos, step_rot)
    ts, tg = start.translation, goal.translation
    path = []
    for k in range(1, n):
        s = k / n
        path.append(
            Pose(
                _slerp(start.rotation, goal.rotation, s),
                tuple(a + s * (b - a) for a, b in zip(ts, tg)),
            )
        )
    path.append(goal)
    return path


def perturb(p: Pose, pos_noise: float, yaw_noise: float, rng: np.random.Generator) -> Pose:
    """Add uniform xyz noise in +-pos_noise and a yaw offset in +-yaw_noise.

    The yaw offset is applied about the parent +z axis so roll and pitch are
    untouched.
    """
    if pos_noise < 0 or yaw_noise < 0:
        raise ValueError("noise bounds must be non-negative")
    u = rng.uniform(-1.0, 1.0, 4)
    t = p.translation
    return Pose(
        _qmul(quat_from_yaw(yaw_noise * u[3]), p.rotation),
        (t[0] + pos_noise * u[0], t[1] + pos_noise * u[1], t[2] + pos_noise * u[2]),
    )


# Closed-form planar versions. These are what the simulator runs every step;
# tests pin them to the quaternion path above.


def planar_compose(a: PlanarPose, b: PlanarPose) -> PlanarPose:
    c, s = math.cos(a.yaw), math.sin(a.yaw)
    return PlanarPose(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.z + b.z,
        wrap_angle(a.yaw + b.yaw),
    )


def planar_relative(tool: PlanarPose, obj: PlanarPose) -> PlanarPose:
    c, s = math.cos(obj.yaw), math.sin(obj.yaw)
    dx, dy = tool.x - obj.x, tool.y - obj.y
    return PlanarPose(c * dx + s * dy, -s * dx + c * dy, tool.z - obj.z, wrap_angle(tool.yaw - obj.yaw))


def planar_perturb(p: PlanarPose, pos_noise: float, yaw_noise: float, rng: np.random.Generator) -> PlanarPose:
    """Planar counterpart of :func:`perturb`; consumes the same random draws."""
    u = rng.uniform(-1.0, 1.0, 4)
    return PlanarPose(
        p.x + pos_noise * u[0],
        p.y + pos_noise * u[1],
        p.z + pos_noise * u[2],
        wrap_angle(p.yaw + yaw_noise * u[3]),
    )
