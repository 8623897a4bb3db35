"""Simulated cameras.

The object camera rides on the tool, looking along the tool z-axis from a
point ``camera_offset`` behind the tip.  Each frame images the scene as it was
``latency`` seconds before delivery and returns suction candidates degraded by
three effects: a field-of-view cone, a point count that collapses when the
camera is too close, and candidate tilt that grows with oblique viewing.  The
environment camera reports the bin position with Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from binpick.kinematics import Pose, rot_about
from binpick.selection import SuctionCandidate, simulate_candidates
from binpick.sim.scene import SceneState


@dataclass(frozen=True)
class PerceptionConfig:
    object_rate: float = 10.0
    env_rate: float = 30.0
    control_rate: float = 50.0
    latency: float = 0.08
    bin_noise: float = 0.003
    track_sigma_q: float = 0.01  # acceleration noise density of the bin tracker
    camera_offset: float = 0.06
    fov_half_angle: float = np.deg2rad(32.0)
    n_full: int = 4096
    near: float = 0.06       # point count is zero at this camera distance ...
    span: float = 0.24       # ... and full at near + span
    oblique_start: float = np.deg2rad(30.0)
    oblique_gain: float = 2.5
    position_noise: float = 0.001
    candidate_seed: int = 0

    def __post_init__(self):
        if min(self.object_rate, self.env_rate, self.control_rate) <= 0:
            raise ValueError("rates must be positive")
        if self.latency < 0 or self.bin_noise < 0:
            raise ValueError("latency and noise must be non-negative")


def camera_pose(ee_pose: Pose, offset: float) -> Pose:
    return Pose(ee_pose.R, ee_pose.d - offset * ee_pose.R[:, 2])


def point_count(distance: float, cfg: PerceptionConfig) -> int:
    frac = np.clip((distance - cfg.near) / cfg.span, 0.0, 1.0)
    return int(round(cfg.n_full * frac))


def _tilt_toward(R: np.ndarray, toward: np.ndarray, angle: float) -> np.ndarray:
    """Rotate a downward approach frame so its axis leans by ``angle`` toward ``toward``."""
    z = R[:, 2]
    axis = np.cross(z, toward)
    n = np.linalg.norm(axis)
    if n < 1e-12 or angle == 0.0:
        return R
    return rot_about(axis / n, angle) @ R


def view_candidates(scene: SceneState, cam: Pose, cfg: PerceptionConfig,
                    rng: np.random.Generator) -> tuple[list[SuctionCandidate], int]:
    """Candidates seen from ``cam`` and the point count of the closest visible object."""
    truth = simulate_candidates(scene, seed=cfg.candidate_seed)
    axis = cam.R[:, 2]
    seen: list[SuctionCandidate] = []
    nearest = np.inf
    for c in truth:
        ray = c.pose.d - cam.d
        dist = np.linalg.norm(ray)
        if dist < 1e-9:
            continue
        if np.arccos(np.clip(ray @ axis / dist, -1.0, 1.0)) > cfg.fov_half_angle:
            continue
        nearest = min(nearest, dist)
        # angle between the line of sight and the surface normal (up)
        up = -c.pose.R[:, 2]
        view = np.arccos(np.clip(-ray @ up / dist, -1.0, 1.0))
        tilt = min(np.pi / 2, cfg.oblique_gain * max(view - cfg.oblique_start, 0.0))
        R = _tilt_toward(c.pose.R, -ray / dist, tilt)
        d = c.pose.d + rng.normal(0.0, cfg.position_noise, 3)
        seen.append(SuctionCandidate(Pose(R, d), c.score, c.object_id, len(seen)))
    n_pcl = point_count(nearest, cfg) if seen else 0
    return seen, n_pcl


def measure_bin(scene: SceneState, t: float, cfg: PerceptionConfig,
                rng: np.random.Generator) -> np.ndarray:
    return scene.bin_pose_at(t).d + rng.normal(0.0, cfg.bin_noise, 3)
