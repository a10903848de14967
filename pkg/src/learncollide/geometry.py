"""Environments, seeded generation and the analytic collision oracle.

Robot links are capsules (segment plus radius). Obstacles are spheres or
oriented boxes. A configuration is in collision (+1) when any link capsule
touches an obstacle, a link of another robot, or a non-adjacent link of its
own chain; otherwise it is free (-1). Touching counts as collision.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .kinematics import (
    InvalidSpecError,
    LinkSpec,
    RobotChainSpec,
    DEFAULT_LIMITS,
    UNIT_TOL,
    desk_robot,
    link_segments,
    quat_to_matrix,
    total_dof,
)
from .seeding import substream

FREE = -1
COLLISION = 1

DEFAULT_BOUNDS = ((-1.5, -1.5, -1.5), (1.5, 1.5, 1.5))
SIZE_RANGE = (0.05, 0.25)
FAR_MIN_SPACING = 1.5
CLOSE_MAX_SPACING = 0.8
MAX_PLACEMENT_ATTEMPTS = 10_000
TERNARY_WIDTH = 1e-9
SAMPLE_CHUNK = 4096
LABEL_CHUNK = 2048


class GenerationError(RuntimeError):
    """Random environment generation could not satisfy a placement constraint."""


@dataclass(frozen=True)
class Obstacle:
    kind: str
    center: tuple[float, float, float]
    radius: float | None = None
    half_extents: tuple[float, float, float] | None = None
    orientation: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if np.asarray(self.center, dtype=float).shape != (3,):
            raise InvalidSpecError("obstacle center must be a 3-vector")
        if self.kind == "sphere":
            if self.radius is None or not self.radius > 0:
                raise InvalidSpecError(f"sphere radius must be positive, got {self.radius}")
        elif self.kind == "box":
            h = np.asarray(self.half_extents, dtype=float)
            if h.shape != (3,) or not np.all(h > 0):
                raise InvalidSpecError(f"box half_extents must be positive, got {self.half_extents}")
            q = np.asarray(self.orientation, dtype=float)
            if q.shape != (4,) or abs(np.linalg.norm(q) - 1.0) > UNIT_TOL:
                raise InvalidSpecError(f"box orientation must be a unit quaternion, got {self.orientation}")
        else:
            raise InvalidSpecError(f"unknown obstacle kind {self.kind!r}")

    @property
    def bounding_radius(self) -> float:
        if self.kind == "sphere":
            return float(self.radius)
        return float(np.linalg.norm(self.half_extents))

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "center": list(self.center)}
        if self.kind == "sphere":
            d["radius"] = self.radius
        else:
            d["half_extents"] = list(self.half_extents)
            d["orientation"] = list(self.orientation)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Obstacle":
        if d["kind"] == "sphere":
            return cls("sphere", tuple(d["center"]), radius=float(d["radius"]))
        return cls("box", tuple(d["center"]), half_extents=tuple(d["half_extents"]),
                   orientation=tuple(d["orientation"]))


@dataclass(frozen=True)
class Environment:
    robots: tuple[RobotChainSpec, ...]
    obstacles: tuple[Obstacle, ...]
    seed: int = 0
    workspace_bounds: tuple[tuple[float, float, float], tuple[float, float, float]] = DEFAULT_BOUNDS

    def __post_init__(self):
        object.__setattr__(self, "robots", tuple(self.robots))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if len(self.robots) < 1:
            raise InvalidSpecError("an environment needs at least one robot")
        lo, hi = (np.asarray(b, dtype=float) for b in self.workspace_bounds)
        for ob in self.obstacles:
            c = np.asarray(ob.center, dtype=float)
            if np.any(c < lo) or np.any(c > hi):
                raise InvalidSpecError(f"obstacle center {ob.center} outside workspace bounds")

    @property
    def dof(self) -> int:
        return total_dof(self.robots)

    @property
    def n_links(self) -> int:
        return sum(r.dof for r in self.robots)

    @property
    def feature_dim(self) -> int:
        return 3 * self.n_links

    def link_radii(self) -> np.ndarray:
        return np.array([link.capsule_radius for r in self.robots for link in r.links])

    def joint_limits(self) -> np.ndarray:
        return np.concatenate([r.joint_limits() for r in self.robots], axis=0)

    def link_pairs(self) -> np.ndarray:
        """Index pairs of links tested against each other.

        Same-robot pairs skip neighbours (they share a joint); pairs across
        robots are all tested.
        """
        owner, local = [], []
        for ri, r in enumerate(self.robots):
            owner += [ri] * r.dof
            local += list(range(r.dof))
        pairs = [(i, j) for i, j in combinations(range(len(owner)), 2)
                 if owner[i] != owner[j] or abs(local[i] - local[j]) >= 2]
        return np.array(pairs, dtype=int).reshape(-1, 2)

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        robots = []
        for r in self.robots:
            links = []
            for link in r.links:
                ld = {"joint_axis": list(link.joint_axis), "link_offset": list(link.link_offset),
                      "capsule_radius": link.capsule_radius}
                if tuple(link.joint_limits) != DEFAULT_LIMITS:
                    ld["joint_limits"] = list(link.joint_limits)
                links.append(ld)
            robots.append({"base_position": list(r.base_position),
                           "base_orientation": list(r.base_orientation), "links": links})
        return {
            "seed": self.seed,
            "workspace_bounds": [list(self.workspace_bounds[0]), list(self.workspace_bounds[1])],
            "robots": robots,
            "obstacles": [ob.to_dict() for ob in self.obstacles],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Environment":
        robots = []
        for rd in d["robots"]:
            links = tuple(
                LinkSpec(tuple(ld["joint_axis"]), tuple(ld["link_offset"]), float(ld["capsule_radius"]),
                         tuple(ld.get("joint_limits", DEFAULT_LIMITS)))
                for ld in rd["links"]
            )
            robots.append(RobotChainSpec(tuple(rd["base_position"]), tuple(rd["base_orientation"]), links))
        bounds = tuple(tuple(float(v) for v in b) for b in d["workspace_bounds"])
        return cls(tuple(robots), tuple(Obstacle.from_dict(o) for o in d["obstacles"]),
                   int(d["seed"]), bounds)

    @classmethod
    def from_json(cls, text: str) -> "Environment":
        return cls.from_dict(json.loads(text))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()[:16]


# -- generation ---------------------------------------------------------------

def random_quaternion(rng: np.random.Generator) -> tuple[float, float, float, float]:
    """Uniform rotation (Shoemake's subgroup algorithm), scalar-first."""
    u1, u2, u3 = rng.random(3)
    a, b = math.sqrt(1.0 - u1), math.sqrt(u1)
    x, y = a * math.sin(2 * math.pi * u2), a * math.cos(2 * math.pi * u2)
    z, w = b * math.sin(2 * math.pi * u3), b * math.cos(2 * math.pi * u3)
    q = np.array([w, x, y, z])
    q /= np.linalg.norm(q)
    return tuple(float(v) for v in q)


def _place_bases(n_robots: int, placement: str, lo: np.ndarray, hi: np.ndarray,
                 rng: np.random.Generator) -> list[np.ndarray]:
    if placement == "far":
        ok = lambda p, placed: all(np.linalg.norm(p - o) >= FAR_MIN_SPACING for o in placed)
        constraint = f"minimum base spacing {FAR_MIN_SPACING} m"
    elif placement == "close":
        ok = lambda p, placed: all(np.linalg.norm(p - o) <= CLOSE_MAX_SPACING for o in placed)
        constraint = f"maximum base spacing {CLOSE_MAX_SPACING} m"
    else:
        raise ValueError(f"placement must be 'far' or 'close', got {placement!r}")
    placed: list[np.ndarray] = []
    for k in range(n_robots):
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            p = rng.uniform(lo, hi)
            if ok(p, placed):
                placed.append(p)
                break
        else:
            raise GenerationError(
                f"could not place robot {k} of {n_robots} with {constraint} "
                f"after {MAX_PLACEMENT_ATTEMPTS} attempts")
    return placed


def generate_environment(n_robots: int, n_obstacles: int, seed: int, placement: str = "far",
                         bounds=DEFAULT_BOUNDS) -> Environment:
    if n_robots < 1:
        raise ValueError("n_robots must be at least 1")
    if n_obstacles < 0:
        raise ValueError("n_obstacles must be nonnegative")
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    bases = _place_bases(n_robots, placement, lo, hi, substream(seed, "env-bases"))
    robots = tuple(desk_robot(base_position=tuple(float(v) for v in p)) for p in bases)

    rng = substream(seed, "env-obstacles")
    obstacles = []
    for i in range(n_obstacles):
        center = tuple(float(v) for v in rng.uniform(lo, hi))
        if i % 2 == 0:
            half = tuple(float(v) for v in rng.uniform(*SIZE_RANGE, size=3))
            obstacles.append(Obstacle("box", center, half_extents=half, orientation=random_quaternion(rng)))
        else:
            obstacles.append(Obstacle("sphere", center, radius=float(rng.uniform(*SIZE_RANGE))))
    bounds = (tuple(map(float, lo)), tuple(map(float, hi)))
    return Environment(robots, tuple(obstacles), int(seed), bounds)


# -- distances ----------------------------------------------------------------

def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def point_segment_distance(p, a, b) -> np.ndarray:
    p, a, b = (np.asarray(v, dtype=float) for v in (p, a, b))
    ab = b - a
    denom = _dot(ab, ab)
    t = np.where(denom > 0, _dot(p - a, ab) / np.where(denom > 0, denom, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    return np.linalg.norm(a + t[..., None] * ab - p, axis=-1)


def segment_segment_distance(p1, q1, p2, q2) -> np.ndarray:
    """Closest distance between segments ``p1-q1`` and ``p2-q2`` (batched)."""
    p1, q1, p2, q2 = (np.asarray(v, dtype=float) for v in (p1, q1, p2, q2))
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = _dot(d1, d1)
    e = _dot(d2, d2)
    f = _dot(d2, r)
    c = _dot(d1, r)
    b = _dot(d1, d2)
    tiny = 1e-300
    a_ok = a > tiny
    e_ok = e > tiny
    safe_a = np.where(a_ok, a, 1.0)
    safe_e = np.where(e_ok, e, 1.0)
    denom = a * e - b * b
    s = np.where(denom > tiny, np.clip((b * f - c * e) / np.where(denom > tiny, denom, 1.0), 0.0, 1.0), 0.0)
    t = (b * s + f) / safe_e
    s = np.where(t < 0.0, np.clip(-c / safe_a, 0.0, 1.0), np.where(t > 1.0, np.clip((b - c) / safe_a, 0.0, 1.0), s))
    t = np.clip(t, 0.0, 1.0)
    # degenerate segments collapse to points
    both = a_ok & e_ok
    s = np.where(both, s, np.where(a_ok, np.clip(-c / safe_a, 0.0, 1.0), 0.0))
    t = np.where(both, t, np.where(e_ok, np.clip(f / safe_e, 0.0, 1.0), 0.0))
    c1 = p1 + s[..., None] * d1
    c2 = p2 + t[..., None] * d2
    return np.linalg.norm(c1 - c2, axis=-1)


def _point_box_local(p, half):
    return np.linalg.norm(np.maximum(np.abs(p) - half, 0.0), axis=-1)


def segment_box_distance(a, b, center, half_extents, orientation, width: float = TERNARY_WIDTH) -> np.ndarray:
    """Distance from segment(s) to an oriented box; zero when touching or inside.

    The point-to-box distance along the segment is convex in the segment
    parameter, so a ternary search brackets its minimum.
    """
    rot = quat_to_matrix(orientation)
    center = np.asarray(center, dtype=float)
    half = np.asarray(half_extents, dtype=float)
    la = (np.asarray(a, dtype=float) - center) @ rot
    lb = (np.asarray(b, dtype=float) - center) @ rot
    d = lb - la
    lo = np.zeros(la.shape[:-1])
    hi = np.ones(la.shape[:-1])
    while True:
        if np.all(hi - lo <= width):
            break
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        f1 = _point_box_local(la + m1[..., None] * d, half)
        f2 = _point_box_local(la + m2[..., None] * d, half)
        left = f1 > f2
        lo = np.where(left, m1, lo)
        hi = np.where(left, hi, m2)
    t = 0.5 * (lo + hi)
    best = _point_box_local(la + t[..., None] * d, half)
    # endpoints are evaluated exactly so boundary minima are not lost to the bracket width
    best = np.minimum(best, _point_box_local(la, half))
    return np.minimum(best, _point_box_local(lb, half))


def segment_primitive_distance(a, b, obstacle: Obstacle) -> np.ndarray:
    """Distance from segment ``a-b`` to the obstacle surface, clamped at zero."""
    if obstacle.kind == "sphere":
        return np.maximum(point_segment_distance(obstacle.center, a, b) - obstacle.radius, 0.0)
    return segment_box_distance(a, b, obstacle.center, obstacle.half_extents, obstacle.orientation)


# -- collision oracle -----------------------------------------------------------

def _label_chunk(env: Environment, q: np.ndarray, radii: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    starts, ends = link_segments(env.robots, q)
    hit = np.zeros(q.shape[0], dtype=bool)
    for ob in env.obstacles:
        center = np.asarray(ob.center, dtype=float)
        # exact for spheres; for boxes a conservative prefilter on the circumscribed sphere
        d_center = point_segment_distance(center, starts, ends)
        near = d_center <= radii + ob.bounding_radius
        if ob.kind == "sphere":
            hit |= np.any(near, axis=1)
            continue
        rows, cols = np.nonzero(near & ~hit[:, None])
        if rows.size == 0:
            continue
        d = segment_box_distance(starts[rows, cols], ends[rows, cols], center, ob.half_extents, ob.orientation)
        touching = rows[d <= radii[cols]]
        hit[touching] = True
    if pairs.size:
        i, j = pairs[:, 0], pairs[:, 1]
        d = segment_segment_distance(starts[:, i], ends[:, i], starts[:, j], ends[:, j])
        hit |= np.any(d <= radii[i] + radii[j], axis=1)
    return np.where(hit, COLLISION, FREE).astype(np.int8)


def label_configurations(env: Environment, q: np.ndarray) -> np.ndarray:
    """Collision labels (+1/-1, int8) for a batch of configurations ``(N, dof)``."""
    q = np.asarray(q, dtype=float)
    if q.ndim != 2 or q.shape[1] != env.dof:
        raise ValueError(f"expected configurations of shape (N, {env.dof}), got {q.shape}")
    radii = env.link_radii()
    pairs = env.link_pairs()
    out = np.empty(q.shape[0], dtype=np.int8)
    for s in range(0, q.shape[0], LABEL_CHUNK):
        out[s:s + LABEL_CHUNK] = _label_chunk(env, q[s:s + LABEL_CHUNK], radii, pairs)
    return out


def check_collision(env: Environment, q: Sequence[float]) -> int:
    q = np.asarray(q, dtype=float)
    if q.shape != (env.dof,):
        raise ValueError(f"expected {env.dof} joint angles, got shape {q.shape}")
    return int(label_configurations(env, q[None, :])[0])


def sample_configurations(env: Environment, n: int, seed: int, tag: str = "configs") -> np.ndarray:
    """Uniform joint angles within limits, drawn in fixed-size seeded chunks.

    Chunk ``k`` always comes from substream ``(seed, tag, k)``, so any prefix
    of rows is independent of ``n`` and chunks can be drawn in parallel.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    limits = env.joint_limits()
    lo, hi = limits[:, 0], limits[:, 1]
    chunks = []
    for k in range(0, -(-n // SAMPLE_CHUNK)):
        rows = min(SAMPLE_CHUNK, n - k * SAMPLE_CHUNK)
        chunks.append(substream(seed, tag, k).uniform(lo, hi, size=(rows, env.dof)))
    return np.concatenate(chunks, axis=0)


def measure_collision_density(env: Environment, n: int, seed: int) -> float:
    q = sample_configurations(env, n, seed, tag="density")
    return float(np.mean(label_configurations(env, q) == COLLISION))
