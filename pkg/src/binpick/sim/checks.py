"""Ground-truth geometric checks: arm collisions, tool contact and pick success."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from binpick.kinematics import KinematicChain, Pose, link_spheres_world
from binpick.selection import suction_quality
from binpick.sim.scene import ObjectSpec, SceneState
from binpick.world import SdfWorld


def check_collision(chain: KinematicChain, q: np.ndarray, world: SdfWorld) -> bool:
    """True iff any link sphere penetrates a static obstacle or the bin.

    ``world`` must hold the true bin pose; only geometry is consulted.
    """
    centers, radii = link_spheres_world(chain, q)
    ds, dd = world.distances(centers, radii)
    return bool(min(ds, dd) < 0.0)


CONTACT_GAP = 0.002


@dataclass
class Contact:
    object_id: int
    local_uv: np.ndarray  # tip position on the object's top face, object frame
    height: float         # tip height above the top face


def detect_contact(scene: SceneState, tip: np.ndarray) -> Contact | None:
    """Tip within ``CONTACT_GAP`` above (or below) a top face while inside its footprint.

    The highest such face wins, which is the one the tool meets first.
    """
    best: Contact | None = None
    for obj in scene.remaining():
        pose = scene.object_pose(obj)
        local = pose.inverse().transform(tip)
        h = local[2] - obj.half[2]
        if h > CONTACT_GAP or local[2] < -obj.half[2]:
            continue
        if obj.face_distance(local[0], local[1]) > 0.0:
            continue
        if best is None or h > best.height:
            best = Contact(obj.object_id, local[:2].copy(), float(h))
    return best


@dataclass(frozen=True)
class SuccessThresholds:
    max_rel_speed: float = 0.02
    max_tilt: float = np.deg2rad(20.0)
    min_quality: float = 0.3


def check_success(ee_pose: Pose, ee_velocity: np.ndarray, obj: ObjectSpec, contact: Contact,
                  object_velocity: np.ndarray, object_pose: Pose,
                  thr: SuccessThresholds = SuccessThresholds()) -> tuple[bool, str]:
    """Whether the suction cup seals at this contact; returns ``(ok, reason)``.

    The relative speed is measured in the face plane: the tool is meant to
    close in along the normal, so only sliding across the face breaks the seal.
    """
    normal = object_pose.R[:, 2]
    rel = np.asarray(ee_velocity, dtype=float) - np.asarray(object_velocity, dtype=float)
    lateral = rel - (rel @ normal) * normal
    if np.linalg.norm(lateral) >= thr.max_rel_speed:
        return False, "relative-speed"
    tilt = np.arccos(np.clip(-ee_pose.R[:, 2] @ normal, -1.0, 1.0))
    if tilt >= thr.max_tilt:
        return False, "tilt"
    u, v = contact.local_uv
    if obj.face_distance(u, v) > 0.0:
        return False, "off-face"
    if suction_quality(obj, u, v) < thr.min_quality:
        return False, "low-quality"
    return True, "ok"
