"""Ground-truth scene: a bin riding a conveyor (or being nudged) with objects inside.

Objects are rigid boxes or upright cylinders with fixed poses in the bin frame,
so they move with the bin until picked.  Bin positions are evaluated in closed
form from the motion profile, which keeps long runs drift-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from binpick.kinematics import Pose, rot_about
from binpick.world import BinModel, Cuboid

Z_AXIS = np.array([0.0, 0.0, 1.0])

BIN_SIZES = {
    "small": (0.30, 0.20, 0.12),
    "middle": (0.41, 0.30, 0.15),
    "large": (0.48, 0.35, 0.22),
}

SPEEDS = {"slow": 0.06, "middle": 0.08, "fast": 0.10}


@dataclass
class ObjectSpec:
    """A box (``half = hx, hy, hz``) or upright cylinder (``half = r, r, hz``)."""

    object_id: int
    kind: str
    half: np.ndarray
    local: Pose  # object center in the bin frame; rotation is a yaw only

    def __post_init__(self):
        if self.kind not in ("box", "cylinder"):
            raise ValueError(f"unknown object kind {self.kind!r}")
        self.half = np.asarray(self.half, dtype=float).reshape(3)
        if np.any(self.half <= 0):
            raise ValueError("object half extents must be positive")

    @property
    def face_radius(self) -> float:
        """Radius of the largest circle inscribed in the top face."""
        return float(min(self.half[0], self.half[1]))

    def top_height_local(self) -> float:
        return float(self.local.d[2] + self.half[2])

    def contains_xy(self, local_xy: np.ndarray) -> np.ndarray:
        """Whether bin-frame xy points lie in this object's footprint."""
        p = np.atleast_2d(local_xy)[:, :2] - self.local.d[:2]
        c, s = self.local.R[0, 0], self.local.R[1, 0]
        u = p[:, 0] * c + p[:, 1] * s
        v = -p[:, 0] * s + p[:, 1] * c
        if self.kind == "box":
            return (np.abs(u) <= self.half[0]) & (np.abs(v) <= self.half[1])
        return u * u + v * v <= self.half[0] ** 2

    def face_distance(self, u: float, v: float) -> float:
        """Signed distance of object-frame xy ``(u, v)`` to the top-face boundary (negative inside)."""
        if self.kind == "box":
            q = np.abs([u, v]) - self.half[:2]
            return float(np.linalg.norm(np.maximum(q, 0.0)) + min(max(q[0], q[1]), 0.0))
        return float(np.hypot(u, v) - self.half[0])


# ---------------------------------------------------------------------------
# bin motion


@dataclass
class MotionProfile:
    """Conveyor or disturbance motion of the bin, relative to its start pose.

    ``kind`` is ``constant`` (speed along ``axis``), ``varying`` (speed swings
    sinusoidally between ``speed_lo`` and ``speed_hi`` with ``period``) or
    ``disturbed`` (static, with scheduled xy jumps executed at ``jump_rate``).
    """

    kind: str = "constant"
    speed: float = 0.06
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    speed_lo: float = 0.06
    speed_hi: float = 0.10
    period: float = 4.0
    jumps: list = field(default_factory=list)  # (start time, dx, dy)
    jump_rate: float = 0.15

    def __post_init__(self):
        if self.kind not in ("constant", "varying", "disturbed"):
            raise ValueError(f"unknown motion profile {self.kind!r}")
        self.axis = np.asarray(self.axis, dtype=float).reshape(3)
        self.axis = self.axis / np.linalg.norm(self.axis)
        if self.jump_rate <= 0 or self.period <= 0:
            raise ValueError("jump_rate and period must be positive")

    def displacement(self, t: float) -> np.ndarray:
        if self.kind == "constant":
            return self.speed * t * self.axis
        if self.kind == "varying":
            mid = 0.5 * (self.speed_lo + self.speed_hi)
            amp = 0.5 * (self.speed_hi - self.speed_lo)
            w = 2.0 * np.pi / self.period
            # integral of mid - amp*cos(w t): starts at the low speed
            return (mid * t - amp * np.sin(w * t) / w) * self.axis
        out = np.zeros(3)
        for t0, dx, dy in self.jumps:
            delta = np.array([dx, dy, 0.0])
            length = np.linalg.norm(delta)
            if length == 0:
                continue
            frac = np.clip((t - t0) * self.jump_rate / length, 0.0, 1.0)
            out += frac * delta
        return out

    def velocity(self, t: float) -> np.ndarray:
        if self.kind == "constant":
            return self.speed * self.axis
        if self.kind == "varying":
            mid = 0.5 * (self.speed_lo + self.speed_hi)
            amp = 0.5 * (self.speed_hi - self.speed_lo)
            return (mid - amp * np.cos(2.0 * np.pi * t / self.period)) * self.axis
        out = np.zeros(3)
        for t0, dx, dy in self.jumps:
            delta = np.array([dx, dy, 0.0])
            length = np.linalg.norm(delta)
            if length == 0:
                continue
            if t0 <= t < t0 + length / self.jump_rate:
                out += delta / length * self.jump_rate
        return out

    @property
    def max_speed(self) -> float:
        if self.kind == "constant":
            return self.speed
        if self.kind == "varying":
            return self.speed_hi
        return self.jump_rate


# ---------------------------------------------------------------------------
# scene state


@dataclass
class SceneState:
    bin: BinModel
    start: Pose
    motion: MotionProfile
    objects: list[ObjectSpec]
    clock: float = 0.0
    picked: set = field(default_factory=set)
    held: int | None = None
    held_offset: Pose | None = None  # object pose relative to the tool while held

    def __post_init__(self):
        self._sync()

    def _sync(self) -> None:
        self.bin.pose = self.start.translated(self.motion.displacement(self.clock))

    def set_clock(self, t: float) -> None:
        self.clock = float(t)
        self._sync()

    @property
    def bin_pose(self) -> Pose:
        return self.bin.pose

    @property
    def bin_velocity(self) -> np.ndarray:
        return self.motion.velocity(self.clock)

    def bin_pose_at(self, t: float) -> Pose:
        return self.start.translated(self.motion.displacement(t))

    def remaining(self) -> list[ObjectSpec]:
        return [o for o in self.objects if o.object_id not in self.picked]

    def object(self, object_id: int) -> ObjectSpec:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise KeyError(object_id)

    def object_pose(self, obj: ObjectSpec, bin_pose: Pose | None = None) -> Pose:
        return (self.bin.pose if bin_pose is None else bin_pose) @ obj.local

    def occluders(self, obj: ObjectSpec) -> list[ObjectSpec]:
        """Remaining objects resting higher than ``obj`` (their footprint may cover it)."""
        top = obj.top_height_local()
        return [o for o in self.remaining()
                if o.object_id != obj.object_id and o.local.d[2] - o.half[2] >= top - 1e-9]

    def copy_at(self, t: float) -> SceneState:
        """The same scene evaluated at another time (objects keep their bin-frame poses)."""
        out = SceneState(BinModel(self.bin.size, self.bin.wall), self.start, self.motion,
                         self.objects, t, set(self.picked), self.held, self.held_offset)
        return out


def step_scene(state: SceneState, dt: float) -> None:
    """Advance the clock by ``dt`` and re-pose the bin; objects follow rigidly."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if dt == 0:
        return
    state.clock += dt
    state._sync()


def object_cuboid(obj: ObjectSpec, bin_pose: Pose) -> Cuboid:
    """Bounding cuboid of an object in the world (exact for boxes)."""
    return Cuboid(bin_pose @ obj.local, obj.half)


# ---------------------------------------------------------------------------
# arrangements


def _yaw_pose(x: float, y: float, z: float, yaw: float) -> Pose:
    return Pose(rot_about(Z_AXIS, yaw), [x, y, z])


def _random_object(object_id: int, rng: np.random.Generator) -> tuple[str, np.ndarray]:
    kind = "box" if rng.random() < 0.7 else "cylinder"
    hz = rng.uniform(0.025, 0.05)
    if kind == "box":
        half = np.array([rng.uniform(0.03, 0.06), rng.uniform(0.03, 0.05), hz])
    else:
        r = rng.uniform(0.03, 0.045)
        half = np.array([r, r, hz])
    return kind, half


def _footprint_radius(half: np.ndarray) -> float:
    return float(np.hypot(half[0], half[1]))


def arrange_objects(bin_model: BinModel, count: int, arrangement: str,
                    rng: np.random.Generator) -> list[ObjectSpec]:
    """Place ``count`` objects in the bin.

    ``neat`` lays objects on the floor in a grid without rotation.  ``clutter``
    drops them at random positions and yaws; an object that cannot find free
    floor space rests on top of an earlier one, which makes occlusion possible.
    """
    if arrangement not in ("neat", "clutter"):
        raise ValueError(f"unknown arrangement {arrangement!r}")
    if count < 0:
        raise ValueError("object count must be non-negative")
    inner = bin_model.inner_half
    floor = bin_model.wall
    objects: list[ObjectSpec] = []
    if arrangement == "neat":
        cols = int(np.ceil(np.sqrt(count * inner[0] / inner[1]))) if count else 1
        rows = int(np.ceil(count / cols)) if count else 1
        cell = np.array([2 * inner[0] / cols, 2 * inner[1] / rows])
        for k in range(count):
            i, j = k % cols, k // cols
            kind, half = _random_object(k, rng)
            lim = 0.5 * cell - 0.008
            half[0] = min(half[0], lim[0])
            half[1] = min(half[1], lim[1])
            if kind == "cylinder":
                half[0] = half[1] = min(half[0], half[1])
            cx = -inner[0] + (i + 0.5) * cell[0]
            cy = -inner[1] + (j + 0.5) * cell[1]
            objects.append(ObjectSpec(k, kind, half, _yaw_pose(cx, cy, floor + half[2], 0.0)))
        return objects
    for k in range(count):
        kind, half = _random_object(k, rng)
        yaw = rng.uniform(-np.pi / 2, np.pi / 2)
        rad = _footprint_radius(half)
        placed = False
        for _ in range(60):
            lim = inner[:2] - rad - 0.005
            if np.any(lim <= 0):
                break
            x, y = rng.uniform(-lim, lim)
            clear = all(np.hypot(x - o.local.d[0], y - o.local.d[1])
                        > rad + _footprint_radius(o.half) + 0.005 for o in objects)
            if clear:
                objects.append(ObjectSpec(k, kind, half, _yaw_pose(x, y, floor + half[2], yaw)))
                placed = True
                break
        if not placed and objects:
            base = objects[int(rng.integers(len(objects)))]
            z = base.top_height_local() + half[2]
            objects.append(ObjectSpec(k, kind, half,
                                      _yaw_pose(base.local.d[0], base.local.d[1], z, yaw)))
    return objects
