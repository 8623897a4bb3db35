"""Suction candidate generation and pose selection.

Candidates stand in for a learned suction detector: points on visible object
top faces, scored by a synthetic quality ``U = flatness * centrality``.  A
candidate's z-axis is the approach direction (pointing into the object), which
matches the tool frame of the arm.

The selection metric adds five weighted terms: reachability of the candidate
from the current tool pose, manipulability along the approach velocity,
consistency with the previously chosen pose, height preference and ``U``.
The two manipulability terms are normalised by a reference TAM value so that
they are on the same scale as the others.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from binpick.kinematics import KinematicChain, Pose, fk, ik, jacobian, inv_cond_at
from binpick.mlp import MlpModel, infer_tam_batch
from binpick.planner import pose_distance, v_ref
from binpick.sim.scene import SceneState
from binpick.tam import UNREACHABLE, default_seed
from binpick.textfmt import fmt

WORLD_DOWN = np.array([0.0, 0.0, -1.0])
EPS_PD = 1e-3
DEFAULT_WEIGHTS = (0.2, 0.3, 0.1, 0.15, 0.25)


@dataclass
class SuctionCandidate:
    pose: Pose
    score: float
    object_id: int
    index: int = 0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("suction score must lie in [0, 1]")


@dataclass
class SelectionContext:
    ee_pose: Pose
    q: np.ndarray | None = None
    s_prev: Pose | None = None
    v_bin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    weights: tuple = DEFAULT_WEIGHTS
    alpha_v: float = 0.05

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (5,) or np.any(w < 0) or not np.any(w > 0):
            raise ValueError("need five non-negative weights with at least one positive")
        self.weights = tuple(float(x) for x in w)
        self.v_bin = np.asarray(self.v_bin, dtype=float)

    @classmethod
    def from_state(cls, chain: KinematicChain, q: np.ndarray, **kw) -> SelectionContext:
        return cls(fk(chain, q), np.asarray(q, dtype=float), **kw)


# ---------------------------------------------------------------------------
# TAM scorers


class NetworkTam:
    """TAM predicted by the network, divided by the model's reference score."""

    def __init__(self, model: MlpModel):
        self.model = model
        self.ref = model.tam_ref if model.tam_ref > 0 else 1.0

    def __call__(self, poses: list[Pose], dirs: np.ndarray) -> np.ndarray:
        return infer_tam_batch(self.model, poses, dirs) / self.ref


class AnalyticTam:
    """TAM from IK and the Jacobian, divided by ``ref``; unreachable poses give -1/ref."""

    def __init__(self, chain: KinematicChain, ref: float = 1.0, seed: np.ndarray | None = None):
        self.chain = chain
        self.ref = ref
        self.seed = default_seed(chain) if seed is None else seed

    def __call__(self, poses: list[Pose], dirs: np.ndarray) -> np.ndarray:
        out = np.empty(len(poses))
        for i, (p, n) in enumerate(zip(poses, np.atleast_2d(dirs))):
            q = ik(self.chain, p, self.seed)
            if q is None:
                out[i] = UNREACHABLE
            else:
                out[i] = np.linalg.norm(jacobian(self.chain, q)[:3].T @ n) * inv_cond_at(self.chain, q)
        return out / self.ref


def _direction(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 1e-12 else WORLD_DOWN.copy()


def tendency_terms(cands: list[SuctionCandidate], ctx: SelectionContext, tam) -> np.ndarray:
    """Normalised TAM of the current pose toward each candidate and of each candidate
    along its reference velocity, shape ``(len(cands), 2)``."""
    if not cands:
        return np.zeros((0, 2))
    to_cand = np.array([_direction(c.pose.d - ctx.ee_pose.d) for c in cands])
    along = np.array([_direction(v_ref(c.pose, ctx.v_bin, ctx.alpha_v)) for c in cands])
    t1 = tam([ctx.ee_pose] * len(cands), to_cand)
    t2 = tam([c.pose for c in cands], along)
    return np.stack([t1, t2], axis=1)


def metric_terms(cands: list[SuctionCandidate], ctx: SelectionContext, tam) -> np.ndarray:
    """Unweighted terms of the selection metric, shape ``(len(cands), 5)``."""
    n = len(cands)
    out = np.zeros((n, 5))
    if n == 0:
        return out
    w = ctx.weights
    if w[0] > 0 or w[1] > 0:
        out[:, :2] = tendency_terms(cands, ctx, tam)
    if ctx.s_prev is not None:
        pd = np.array([pose_distance(c.pose, ctx.s_prev) for c in cands])
        out[:, 2] = 1.0 / np.maximum(pd, EPS_PD)
    z = np.array([c.pose.d[2] for c in cands])
    zbar = z.mean()
    out[:, 3] = z / zbar if zbar != 0 else 0.0
    out[:, 4] = [c.score for c in cands]
    return out


def selection_metrics(cands: list[SuctionCandidate], ctx: SelectionContext, tam) -> np.ndarray:
    return metric_terms(cands, ctx, tam) @ np.asarray(ctx.weights)


def selection_metric(s: SuctionCandidate, S: list[SuctionCandidate], ctx: SelectionContext,
                     tam) -> float:
    """Metric of one candidate ``s`` within the set ``S`` (which fixes the mean height)."""
    idx = next((i for i, c in enumerate(S) if c is s), None)
    if idx is None:
        raise ValueError("candidate must be a member of the set")
    return float(selection_metrics(S, ctx, tam)[idx])


class NoCandidates(LookupError):
    pass


def argmax_candidate(metrics: np.ndarray, cands: list[SuctionCandidate]) -> int:
    """Highest metric; ties go to the higher suction score, then the lower index."""
    best = 0
    for i in range(1, len(cands)):
        a = (metrics[i], cands[i].score)
        b = (metrics[best], cands[best].score)
        if a > b:
            best = i
    return best


def select_optimal(S: list[SuctionCandidate], ctx: SelectionContext, tam) -> SuctionCandidate:
    if not S:
        raise NoCandidates("no suction candidates")
    return S[argmax_candidate(selection_metrics(S, ctx, tam), S)]


# ---------------------------------------------------------------------------
# synthetic candidates


def candidate_rotation(yaw: float) -> np.ndarray:
    """Approach straight down with the tool x-axis at ``yaw`` (folded into [-pi/2, pi/2])."""
    yaw = (yaw + np.pi / 2) % np.pi - np.pi / 2
    c, s = np.cos(yaw), np.sin(yaw)
    x = np.array([c, s, 0.0])
    z = WORLD_DOWN
    return np.stack([x, np.cross(z, x), z], axis=1)


def centrality(dist: float, face_radius: float) -> float:
    return float(np.exp(-2.0 * (dist / face_radius) ** 2))


def suction_quality(obj, u: float, v: float) -> float:
    """Synthetic suction score at object-frame point ``(u, v)`` on the top face.

    All faces here are flat, so flatness is 1 on the face and 0 off it.
    """
    flat = 1.0 if obj.face_distance(u, v) <= 0.0 else 0.0
    return float(np.clip(flat * centrality(np.hypot(u, v), obj.face_radius), 0.0, 1.0))


def face_samples(obj, k: int, seed: int) -> np.ndarray:
    """``k`` object-frame top-face points; the first is the face centroid."""
    rng = np.random.default_rng([seed, obj.object_id])
    pts = [np.zeros(2)]
    while len(pts) < k:
        if obj.kind == "box":
            p = rng.uniform(-obj.half[:2], obj.half[:2])
        else:
            r = obj.half[0] * np.sqrt(rng.random())
            a = rng.uniform(-np.pi, np.pi)
            p = np.array([r * np.cos(a), r * np.sin(a)])
        pts.append(p)
    return np.array(pts)


def is_occluded(scene: SceneState, obj, local_xy: np.ndarray) -> bool:
    """Whether a bin-frame xy point of ``obj``'s top face lies under a higher object."""
    return any(bool(o.contains_xy(local_xy)[0]) for o in scene.occluders(obj))


def simulate_candidates(scene: SceneState, max_n: int = 40, seed: int = 0,
                        per_object: int = 6, bin_pose: Pose | None = None,
                        wall_clearance: float = 0.05, min_score: float = 0.35
                        ) -> list[SuctionCandidate]:
    """Candidates on the visible top faces of the remaining objects.

    Sample points are fixed per ``(seed, object)`` in the object frame, so the
    same physical spots are proposed on every call.  Points closer than
    ``wall_clearance`` to an inner bin wall are dropped because the suction
    tool cannot descend there, and so are points scoring below ``min_score``.
    At most ``max_n`` are returned, best ``U`` first (stable for equal scores).
    """
    pose_bin = scene.bin_pose if bin_pose is None else bin_pose
    free_xy = scene.bin.inner_half[:2] - wall_clearance
    out: list[SuctionCandidate] = []
    for obj in scene.remaining():
        obj_world = pose_bin @ obj.local
        yaw = float(np.arctan2(obj_world.R[1, 0], obj_world.R[0, 0]))
        R = candidate_rotation(yaw)
        for uv in face_samples(obj, per_object, seed):
            local_xy = obj.local.R[:2, :2] @ uv + obj.local.d[:2]
            if is_occluded(scene, obj, local_xy) or np.any(np.abs(local_xy) > free_xy):
                continue
            point = obj_world.transform(np.array([uv[0], uv[1], obj.half[2]]))
            U = suction_quality(obj, uv[0], uv[1])
            if U < min_score:
                continue
            out.append(SuctionCandidate(Pose(R, point), U, obj.object_id))
    order = sorted(range(len(out)), key=lambda i: -out[i].score)[:max_n]
    ranked = [out[i] for i in order]
    for i, c in enumerate(ranked):
        c.index = i
    return ranked


def dump_candidates(path: str | Path, cands: list[SuctionCandidate],
                    metrics: np.ndarray | None = None) -> None:
    """Debug dump: ``id tx ty tz r00..r22 U M`` per line."""
    lines = []
    for i, c in enumerate(cands):
        m = float("nan") if metrics is None else metrics[i]
        vals = [*c.pose.d, *c.pose.R.reshape(-1), c.score, m]
        lines.append(f"{c.object_id} " + " ".join(fmt(v) for v in vals))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
