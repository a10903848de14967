"""Forward kinematics for serial chains of revolute joints with capsule links.

Quaternions are stored scalar-first, ``(w, x, y, z)``. Each link applies the
joint rotation about its axis in the current frame and then translates by
its offset expressed in that rotated frame. The control point of a link is
the midpoint of its segment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

UNIT_TOL = 1e-9
DEFAULT_LIMITS = (-math.pi, math.pi)


class InvalidSpecError(ValueError):
    """A robot or obstacle description violates its invariants."""


@dataclass(frozen=True)
class LinkSpec:
    joint_axis: tuple[float, float, float]
    link_offset: tuple[float, float, float]
    capsule_radius: float
    joint_limits: tuple[float, float] = DEFAULT_LIMITS

    def __post_init__(self):
        axis = np.asarray(self.joint_axis, dtype=float)
        if axis.shape != (3,) or abs(np.linalg.norm(axis) - 1.0) > UNIT_TOL:
            raise InvalidSpecError(f"joint_axis must be a unit 3-vector, got {self.joint_axis}")
        if np.asarray(self.link_offset, dtype=float).shape != (3,):
            raise InvalidSpecError("link_offset must be a 3-vector")
        if not self.capsule_radius > 0:
            raise InvalidSpecError(f"capsule_radius must be positive, got {self.capsule_radius}")
        lo, hi = self.joint_limits
        if not lo < hi:
            raise InvalidSpecError(f"joint limits must satisfy lo < hi, got {self.joint_limits}")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.link_offset))


@dataclass(frozen=True)
class RobotChainSpec:
    base_position: tuple[float, float, float]
    base_orientation: tuple[float, float, float, float]
    links: tuple[LinkSpec, ...]

    def __post_init__(self):
        q = np.asarray(self.base_orientation, dtype=float)
        if q.shape != (4,) or abs(np.linalg.norm(q) - 1.0) > UNIT_TOL:
            raise InvalidSpecError(f"base_orientation must be a unit quaternion, got {self.base_orientation}")
        if np.asarray(self.base_position, dtype=float).shape != (3,):
            raise InvalidSpecError("base_position must be a 3-vector")
        if len(self.links) < 1:
            raise InvalidSpecError("a robot needs at least one link")
        object.__setattr__(self, "links", tuple(self.links))

    @property
    def dof(self) -> int:
        return len(self.links)

    @property
    def reach(self) -> float:
        return sum(link.length for link in self.links)

    def joint_limits(self) -> np.ndarray:
        return np.array([link.joint_limits for link in self.links], dtype=float)


@dataclass
class ControlPointSet:
    """Per-link world-frame segments and their midpoints for one configuration."""

    starts: np.ndarray
    ends: np.ndarray
    points: np.ndarray = field(init=False)

    def __post_init__(self):
        self.points = 0.5 * (self.starts + self.ends)


def desk_robot(base_position=(0.0, 0.0, 0.0), base_orientation=(1.0, 0.0, 0.0, 0.0),
               n_links: int = 7, link_length: float = 0.2, radius: float = 0.05) -> RobotChainSpec:
    """Desk arm (seven joints by default): axes alternate z, y, z, ... with offsets along local z."""
    axes = [(0.0, 0.0, 1.0), (0.0, 1.0, 0.0)]
    links = tuple(
        LinkSpec(joint_axis=axes[j % 2], link_offset=(0.0, 0.0, link_length), capsule_radius=radius)
        for j in range(n_links)
    )
    return RobotChainSpec(tuple(map(float, base_position)), tuple(map(float, base_orientation)), links)


# -- quaternion helpers (batched over leading axes) --------------------------

def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_from_axis_angle(axis, angle) -> np.ndarray:
    angle = np.asarray(angle, dtype=float)
    half = 0.5 * angle
    s = np.sin(half)[..., None]
    return np.concatenate([np.cos(half)[..., None], s * np.asarray(axis, dtype=float)], axis=-1)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) ``v`` by unit quaternion(s) ``q``."""
    w = q[..., :1]
    u = q[..., 1:]
    v = np.broadcast_to(v, u.shape)
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


# -- forward kinematics -------------------------------------------------------

def joint_positions(robot: RobotChainSpec, q: np.ndarray) -> np.ndarray:
    """Joint positions for a batch of configurations.

    ``q`` has shape ``(N, dof)``; the result has shape ``(N, dof + 1, 3)``
    where entry ``j`` is the start of link ``j`` and entry ``dof`` is the tip.
    """
    q = np.asarray(q, dtype=float)
    if q.ndim != 2 or q.shape[1] != robot.dof:
        raise ValueError(f"expected configurations of shape (N, {robot.dof}), got {q.shape}")
    n = q.shape[0]
    orient = np.broadcast_to(np.asarray(robot.base_orientation, dtype=float), (n, 4))
    pos = np.broadcast_to(np.asarray(robot.base_position, dtype=float), (n, 3))
    out = np.empty((n, robot.dof + 1, 3))
    out[:, 0] = pos
    for j, link in enumerate(robot.links):
        orient = quat_mul(orient, quat_from_axis_angle(link.joint_axis, q[:, j]))
        pos = pos + quat_rotate(orient, np.asarray(link.link_offset, dtype=float))
        out[:, j + 1] = pos
    return out


def forward_kinematics(robot: RobotChainSpec, q: Sequence[float]) -> ControlPointSet:
    q = np.asarray(q, dtype=float)
    if q.shape != (robot.dof,):
        raise ValueError(f"expected {robot.dof} joint angles, got shape {q.shape}")
    joints = joint_positions(robot, q[None, :])[0]
    return ControlPointSet(starts=joints[:-1].copy(), ends=joints[1:].copy())


def total_dof(robots: Sequence[RobotChainSpec]) -> int:
    return sum(r.dof for r in robots)


def _split(robots: Sequence[RobotChainSpec], q: np.ndarray) -> list[np.ndarray]:
    if q.shape[-1] != total_dof(robots):
        raise ValueError(f"configuration has {q.shape[-1]} angles, robots need {total_dof(robots)}")
    bounds = np.cumsum([0] + [r.dof for r in robots])
    return [q[:, bounds[i]:bounds[i + 1]] for i in range(len(robots))]


def link_segments(robots: Sequence[RobotChainSpec], q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """World-frame link segments for a batch: two arrays of shape ``(N, links, 3)``."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    starts, ends = [], []
    for robot, qr in zip(robots, _split(robots, q)):
        joints = joint_positions(robot, qr)
        starts.append(joints[:, :-1])
        ends.append(joints[:, 1:])
    return np.concatenate(starts, axis=1), np.concatenate(ends, axis=1)


def fk_features_batch(robots: Sequence[RobotChainSpec], q: np.ndarray) -> np.ndarray:
    """Control-point features of shape ``(N, 3 * links)``, robot-major then link-major."""
    starts, ends = link_segments(robots, q)
    mid = 0.5 * (starts + ends)
    return mid.reshape(mid.shape[0], -1)


def fk_features(robots: Sequence[RobotChainSpec], q: Sequence[float]) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim != 1:
        raise ValueError("fk_features takes a single configuration; use fk_features_batch")
    return fk_features_batch(robots, q[None, :])[0]
