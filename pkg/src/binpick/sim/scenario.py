"""Declarative scenario files and the fixed cell layout.

The robot base sits on a pedestal at the origin.  A conveyor belt with its top
surface at ``z = 0`` runs along world +y in front of the robot.  The bin starts
upstream and is perceivable once its center passes ``region[0]`` along the
conveyor axis; a trial is lost once it passes ``region[1]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from binpick.kinematics import Pose
from binpick.sim.perception import PerceptionConfig
from binpick.sim.scene import (BIN_SIZES, SPEEDS, MotionProfile, SceneState, arrange_objects)
from binpick.textfmt import FormatError, Section, parse_file, parse_text
from binpick.world import BinModel, Cuboid, Sphere


def default_static_obstacles() -> list:
    return [
        # conveyor belt, top surface at z = 0
        Cuboid(Pose(np.eye(3), [0.5, 0.0, -0.05]), [0.25, 1.2, 0.05]),
        # robot pedestal
        Cuboid(Pose(np.eye(3), [0.0, 0.0, -0.25]), [0.15, 0.15, 0.25]),
    ]


@dataclass
class Scenario:
    name: str = "scenario"
    family: str = "fully-dynamic"
    bin_size: np.ndarray = field(default_factory=lambda: np.array(BIN_SIZES["middle"]))
    wall: float = 0.01
    start: np.ndarray = field(default_factory=lambda: np.array([0.5, -0.55, 0.0]))
    motion: MotionProfile = field(default_factory=MotionProfile)
    region: tuple = (-0.40, 0.40)
    random_jumps: tuple | None = None  # (count, max size, window start, window end)
    object_count: int = 5
    arrangement: str = "neat"
    object_seed: int = 0
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    trials: int = 100
    timeout: float = 30.0
    static_obstacles: list = field(default_factory=default_static_obstacles)

    def __post_init__(self):
        self.bin_size = np.asarray(self.bin_size, dtype=float).reshape(3)
        self.start = np.asarray(self.start, dtype=float).reshape(3)
        if self.trials < 1:
            raise ValueError("trial count must be at least 1")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.family not in ("fully-dynamic", "disturbed-static"):
            raise ValueError(f"unknown scenario family {self.family!r}")

    def with_(self, **kw) -> Scenario:
        return replace(self, **kw)

    def axis_coordinate(self, p: np.ndarray) -> float:
        return float(np.asarray(p) @ self.motion.axis)

    def build_scene(self, rng: np.random.Generator) -> SceneState:
        """Fresh ground-truth scene; objects and any random disturbances come from ``rng``."""
        motion = self.motion
        if self.random_jumps is not None:
            n, size, t0, t1 = self.random_jumps
            times = np.sort(rng.uniform(t0, t1, int(n)))
            jumps = []
            for t in times:
                ang = rng.uniform(-np.pi, np.pi)
                mag = rng.uniform(0.3 * size, size)
                jumps.append((float(t), float(mag * np.cos(ang)), float(mag * np.sin(ang))))
            motion = replace(motion, jumps=list(motion.jumps) + jumps)
        bin_model = BinModel(self.bin_size, self.wall)
        # the file-level object seed shifts every trial's layout without touching other streams
        layout_rng = np.random.default_rng([self.object_seed, *rng.integers(0, 2**32, 2)])
        objects = arrange_objects(bin_model, self.object_count, self.arrangement, layout_rng)
        return SceneState(bin_model, Pose(np.eye(3), self.start), motion, objects)


# ---------------------------------------------------------------------------
# file format


def _obstacles(section: Section) -> list:
    out = []
    for row in section.rows:
        kind, vals = row[0], [float(v) for v in row[1:]]
        if kind == "cuboid":
            if len(vals) != 10:
                raise FormatError("cuboid needs cx cy cz qw qx qy qz hx hy hz")
            qw, qx, qy, qz = vals[3:7]
            R = Rotation.from_quat([qx, qy, qz, qw]).as_matrix()
            out.append(Cuboid(Pose(R, vals[:3]), vals[7:]))
        elif kind == "sphere":
            if len(vals) != 4:
                raise FormatError("sphere needs cx cy cz r")
            out.append(Sphere(vals[:3], vals[3]))
        else:
            raise FormatError(f"unknown obstacle kind {kind!r}")
    return out


def _speed(tok: str) -> float:
    return SPEEDS[tok] if tok in SPEEDS else float(tok)


def scenario_from_sections(sections: list[Section], name: str = "scenario") -> Scenario:
    kw: dict = {"name": name}
    perception: dict = {}
    motion: dict = {}
    for sec in sections:
        if sec.name == "scenario":
            kw["name"] = sec.str("name", name)
            kw["family"] = sec.str("family", "fully-dynamic")
        elif sec.name == "bin":
            size = sec.get("size", ["middle"])
            kw["bin_size"] = BIN_SIZES[size[0]] if size[0] in BIN_SIZES else [float(v) for v in size]
            kw["wall"] = sec.float("wall", 0.01)
            if sec.has("start"):
                kw["start"] = sec.floats("start", 3)
        elif sec.name == "conveyor":
            profile = sec.str("profile", "constant")
            speed_tok = sec.get("speed", ["slow"])
            if profile == "constant":
                motion.update(kind="constant", speed=_speed(speed_tok[0]))
            elif profile == "varying":
                lo, hi = (_speed(t) for t in speed_tok) if len(speed_tok) == 2 else (0.06, 0.10)
                motion.update(kind="varying", speed_lo=lo, speed_hi=hi,
                              period=sec.float("period", 4.0))
            elif profile == "disturbed":
                jumps = [tuple(float(v) for v in row[1:]) for row in sec.rows if row[0] == "jump"]
                motion.update(kind="disturbed", jumps=jumps,
                              jump_rate=sec.float("jump_rate", 0.15))
                if sec.has("random_jumps"):
                    kw["random_jumps"] = tuple(sec.floats("random_jumps", 4))
            else:
                raise FormatError(f"unknown conveyor profile {profile!r}")
            if sec.has("axis"):
                motion["axis"] = sec.floats("axis", 3)
            if sec.has("region"):
                kw["region"] = tuple(sec.floats("region", 2))
        elif sec.name == "objects":
            kw["object_count"] = sec.int("count", 5)
            kw["arrangement"] = sec.str("arrangement", "neat")
            kw["object_seed"] = sec.int("seed", 0)
        elif sec.name == "perception":
            keys = {"object_rate": "object_rate", "env_rate": "env_rate",
                    "control_rate": "control_rate", "latency": "latency", "noise": "bin_noise",
                    "process_noise": "track_sigma_q"}
            for key, attr in keys.items():
                if sec.has(key):
                    perception[attr] = sec.float(key)
        elif sec.name == "trials":
            kw["trials"] = sec.int("count", 100)
            kw["timeout"] = sec.float("timeout", 30.0)
        elif sec.name == "obstacles":
            kw["static_obstacles"] = _obstacles(sec)
        else:
            raise FormatError(f"line {sec.lineno}: unknown section [{sec.name}]")
    if motion:
        kw["motion"] = MotionProfile(**motion)
    if perception:
        kw["perception"] = PerceptionConfig(**perception)
    return Scenario(**kw)


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    return scenario_from_sections(parse_text(text), name)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    return scenario_from_sections(parse_file(path), path.stem)
