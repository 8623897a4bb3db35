"""Analytic signed-distance world: static obstacles plus the moving bin.

Obstacles are cuboids and spheres.  The static set is fixed for a task; the
dynamic set (the bin's five cuboids) is re-posed on every bin observation.
Distances are negative inside an obstacle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from binpick.kinematics import KinematicChain, Pose, link_spheres_world


@dataclass
class Cuboid:
    pose: Pose
    half_extents: np.ndarray

    def __post_init__(self):
        self.half_extents = np.asarray(self.half_extents, dtype=float).reshape(3)
        if np.any(self.half_extents <= 0):
            raise ValueError("cuboid half extents must be positive")


@dataclass
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")


def sdf_box_local(local: np.ndarray, half: np.ndarray) -> np.ndarray:
    q = np.abs(local) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside


def sdf_cuboid(point: np.ndarray, c: Cuboid) -> float | np.ndarray:
    """Exact signed distance from ``point`` (or an array of points) to ``c``."""
    local = (np.asarray(point, dtype=float) - c.pose.d) @ c.pose.R
    out = sdf_box_local(local, c.half_extents)
    return float(out) if np.ndim(out) == 0 else out


def sdf_sphere(point: np.ndarray, s: Sphere) -> float | np.ndarray:
    out = np.linalg.norm(np.asarray(point, dtype=float) - s.center, axis=-1) - s.radius
    return float(out) if np.ndim(out) == 0 else out


def closest_point_cuboid(point: np.ndarray, c: Cuboid) -> np.ndarray:
    """Nearest point on the surface of ``c``."""
    local = (np.asarray(point, dtype=float) - c.pose.d) @ c.pose.R
    h = c.half_extents
    if np.all(np.abs(local) <= h):
        k = int(np.argmin(h - np.abs(local)))
        surf = local.copy()
        surf[k] = np.copysign(h[k], local[k]) if local[k] != 0 else h[k]
    else:
        surf = np.clip(local, -h, h)
    return c.pose.R @ surf + c.pose.d


def closest_point_sphere(point: np.ndarray, s: Sphere) -> np.ndarray:
    v = np.asarray(point, dtype=float) - s.center
    n = np.linalg.norm(v)
    direction = v / n if n > 0 else np.array([0.0, 0.0, 1.0])
    return s.center + s.radius * direction


def sdf_obstacle(point, obs) -> float | np.ndarray:
    return sdf_cuboid(point, obs) if isinstance(obs, Cuboid) else sdf_sphere(point, obs)


def closest_point(point, obs) -> np.ndarray:
    if isinstance(obs, Cuboid):
        return closest_point_cuboid(point, obs)
    return closest_point_sphere(point, obs)


@dataclass
class BinModel:
    """Open-top bin as five cuboids in the bin frame (origin at the outer bottom center).

    ``size`` is the outer length (bin x), width (bin y) and height.
    """

    size: np.ndarray
    wall: float = 0.01
    pose: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        self.size = np.asarray(self.size, dtype=float).reshape(3)
        L, W, H = self.size
        t = self.wall
        if t <= 0 or 2 * t >= min(L, W) or t >= H:
            raise ValueError("wall thickness incompatible with bin size")
        eye = np.eye(3)
        self.local = [
            Cuboid(Pose(eye, [0, 0, t / 2]), [L / 2, W / 2, t / 2]),
            Cuboid(Pose(eye, [L / 2 - t / 2, 0, H / 2]), [t / 2, W / 2, H / 2]),
            Cuboid(Pose(eye, [-(L / 2 - t / 2), 0, H / 2]), [t / 2, W / 2, H / 2]),
            Cuboid(Pose(eye, [0, W / 2 - t / 2, H / 2]), [L / 2, t / 2, H / 2]),
            Cuboid(Pose(eye, [0, -(W / 2 - t / 2), H / 2]), [L / 2, t / 2, H / 2]),
        ]

    @property
    def cuboids(self) -> list[Cuboid]:
        return [Cuboid(self.pose @ c.pose, c.half_extents) for c in self.local]

    @property
    def inner_half(self) -> np.ndarray:
        """Half extents of the free interior footprint (x, y) and usable height."""
        return np.array([self.size[0] / 2 - self.wall, self.size[1] / 2 - self.wall,
                         self.size[2] - self.wall])


class _PrimitiveSet:
    """Stacked arrays for fast batched distance queries."""

    def __init__(self, obstacles):
        boxes = [o for o in obstacles if isinstance(o, Cuboid)]
        balls = [o for o in obstacles if isinstance(o, Sphere)]
        self.box_c = np.array([b.pose.d for b in boxes]).reshape(-1, 3)
        self.box_R = np.array([b.pose.R for b in boxes]).reshape(-1, 3, 3)
        self.box_h = np.array([b.half_extents for b in boxes]).reshape(-1, 3)
        self.ball_c = np.array([b.center for b in balls]).reshape(-1, 3)
        self.ball_r = np.array([b.radius for b in balls]).reshape(-1)
        self.empty = not obstacles

    def arrays(self):
        return self.box_c, self.box_R, self.box_h, self.ball_c, self.ball_r

    def sdf(self, points: np.ndarray) -> np.ndarray:
        """Minimum signed distance over the set, shape ``points.shape[:-1]``."""
        out = np.full(points.shape[:-1], np.inf)
        if len(self.box_c):
            diff = points[..., None, :] - self.box_c
            local = np.einsum("...ci,cij->...cj", diff, self.box_R)
            out = np.minimum(out, sdf_box_local(local, self.box_h).min(axis=-1))
        if len(self.ball_c):
            d = np.linalg.norm(points[..., None, :] - self.ball_c, axis=-1) - self.ball_r
            out = np.minimum(out, d.min(axis=-1))
        return out


class SdfWorld:
    """Static obstacles, the dynamic bin, and the collision-constraint parameters."""

    def __init__(self, static_obstacles=(), bin_model: BinModel | None = None, *,
                 eps_env: float = 0.02, eps_self: float = 0.01, phi_static: float = 1.0,
                 phi_dynamic: float = 1.0):
        if eps_env <= 0 or eps_self <= 0:
            raise ValueError("collision thresholds must be positive")
        if phi_static <= 0 or phi_dynamic <= 0:
            raise ValueError("constraint weights must be positive")
        self.static_obstacles = list(static_obstacles)
        self.bin = bin_model
        self.eps_env = eps_env
        self.eps_self = eps_self
        self.phi_static = phi_static
        self.phi_dynamic = phi_dynamic
        self._static = _PrimitiveSet(self.static_obstacles)
        self._dynamic = _PrimitiveSet(self.dynamic_obstacles)

    @property
    def dynamic_obstacles(self) -> list[Cuboid]:
        return self.bin.cuboids if self.bin is not None else []

    def primitive_arrays(self):
        """Stacked ``(box_c, box_R, box_h, ball_c, ball_r)`` for the static and dynamic sets."""
        return self._static.arrays(), self._dynamic.arrays()

    def update_dynamic(self, p_bin: Pose) -> None:
        """Rigidly re-pose the bin; the static set is untouched."""
        if self.bin is None:
            return
        self.bin.pose = Pose(p_bin.R, p_bin.d)
        self._dynamic = _PrimitiveSet(self.dynamic_obstacles)

    def without_dynamic(self) -> SdfWorld:
        return SdfWorld(self.static_obstacles, None, eps_env=self.eps_env,
                        eps_self=self.eps_self, phi_static=self.phi_static,
                        phi_dynamic=self.phi_dynamic)

    def sphere_distances(self, centers: np.ndarray, radii: np.ndarray):
        """Per-sphere clearances to the static and dynamic sets, shape ``(..., m)``."""
        return self._static.sdf(centers) - radii, self._dynamic.sdf(centers) - radii

    def distances(self, centers: np.ndarray, radii: np.ndarray):
        """Global minimum clearances ``(d_static, d_dynamic)`` over all spheres."""
        ds, dd = self.sphere_distances(centers, radii)
        return ds.min(axis=-1), dd.min(axis=-1)

    def constraint_value(self, d_static, d_dynamic, strict: bool = False):
        """Env-collision constraint from clearances; an empty set contributes nothing."""
        ts = self.phi_static * np.asarray(d_static, dtype=float)
        td = self.phi_dynamic * np.asarray(d_dynamic, dtype=float)
        ts_f, td_f = np.isfinite(ts), np.isfinite(td)
        if strict:
            val = np.minimum(ts, td)
        else:
            val = np.where(ts_f, ts, 0.0) + np.where(td_f, td, 0.0)
            val = np.where(ts_f | td_f, val, np.inf)
        return val - self.eps_env


def min_distance(spheres, world: SdfWorld):
    """Minimum clearance of a sphere list to the static and dynamic obstacle sets.

    ``spheres`` is a list of ``(center, radius)``.  Returns
    ``(d_static, d_dynamic, w_static, w_dynamic)`` where the witness vectors run
    from the closest obstacle surface point to the sphere center (``None`` for an
    empty set).
    """
    if not spheres:
        raise ValueError("sphere list must be non-empty")

    def best(obstacles):
        d_best, w_best = np.inf, None
        for center, radius in spheres:
            center = np.asarray(center, dtype=float)
            for obs in obstacles:
                d = sdf_obstacle(center, obs) - radius
                if d < d_best:
                    d_best, w_best = d, center - closest_point(center, obs)
        return d_best, w_best

    ds, ws = best(world.static_obstacles)
    dd, wd = best(world.dynamic_obstacles)
    return ds, dd, ws, wd


def self_pairs(chain: KinematicChain, min_gap: int = 2):
    """Sphere index pairs on links at least ``min_gap`` apart."""
    links = chain.sphere_link
    i, j = np.triu_indices(len(links), k=1)
    keep = np.abs(links[i] - links[j]) >= min_gap
    return i[keep], j[keep]


def self_distance_batch(centers: np.ndarray, radii: np.ndarray, pairs) -> np.ndarray:
    i, j = pairs
    if len(i) == 0:
        return np.full(centers.shape[:-2], np.inf)
    d = np.linalg.norm(centers[..., i, :] - centers[..., j, :], axis=-1) - radii[i] - radii[j]
    return d.min(axis=-1)


def self_collision_distance(chain: KinematicChain, q: np.ndarray) -> float:
    """Minimum sphere-sphere clearance over non-adjacent link pairs."""
    centers, radii = link_spheres_world(chain, q)
    return float(self_distance_batch(centers, radii, self_pairs(chain)))


def env_constraint(chain: KinematicChain, q: np.ndarray, world: SdfWorld,
                   strict: bool = False) -> float:
    """``phi1*d_static + phi2*d_dynamic - eps_env``; ``strict`` uses the minimum of the terms."""
    centers, radii = link_spheres_world(chain, q)
    ds, dd = world.distances(centers, radii)
    return float(world.constraint_value(ds, dd, strict))


def self_constraint(chain: KinematicChain, q: np.ndarray, world: SdfWorld) -> float:
    return self_collision_distance(chain, q) - world.eps_self
