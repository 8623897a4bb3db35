"""Tendency-aware manipulability (TAM): scoring and dataset generation.

The TAM score of a pose ``p`` and unit moving direction ``n`` is the
directional quality ``|J_lin(q)^T n|`` times the inverse condition number of
``J(q)``, where ``q`` is the IK solution of ``p``.  Unreachable poses score -1.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from binpick.kinematics import (HOME_Q, KinematicChain, Pose, ik, inv_cond_at, jacobian)
from binpick.textfmt import fmt

UNREACHABLE = -1.0


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if not n > 0:
        raise ValueError("direction must be non-zero")
    return v / n


def fibonacci_directions(n: int) -> np.ndarray:
    """``n`` near-uniform unit vectors on the sphere (golden-angle spiral)."""
    if n < 1:
        raise ValueError("need at least one direction")
    i = np.arange(n, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def quality_index(chain: KinematicChain, q: np.ndarray, n_p: np.ndarray) -> float:
    n_p = np.asarray(n_p, dtype=float)
    if abs(np.linalg.norm(n_p) - 1.0) > 1e-9:
        raise ValueError("moving direction must be a unit vector")
    J_lin = jacobian(chain, q)[:3]
    return float(np.linalg.norm(J_lin.T @ n_p))


def default_seed(chain: KinematicChain) -> np.ndarray:
    if chain.n == len(HOME_Q):
        return chain.clip(HOME_Q.copy())
    return chain.clip(np.full(chain.n, 0.3))


def tam_score(chain: KinematicChain, p: Pose, n_p: np.ndarray,
              seed: np.ndarray | None = None) -> float:
    q = ik(chain, p, default_seed(chain) if seed is None else seed)
    if q is None:
        return UNREACHABLE
    return quality_index(chain, q, n_p) * inv_cond_at(chain, q)


def tam_scores_at(chain: KinematicChain, q: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """TAM for many directions at one (already solved) configuration."""
    J_lin = jacobian(chain, q)[:3]
    return np.linalg.norm(dirs @ J_lin, axis=1) * inv_cond_at(chain, q)


@dataclass
class Workspace:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float).reshape(3)
        self.hi = np.asarray(self.hi, dtype=float).reshape(3)
        if np.any(self.hi <= self.lo):
            raise ValueError("workspace box is empty")


DEFAULT_WORKSPACE = Workspace([0.30, -0.40, 0.02], [0.70, 0.40, 0.30])


def downward_rotation(z_axis: np.ndarray, yaw: float) -> np.ndarray:
    """Rotation with the given z-axis; ``yaw`` spins the frame about it."""
    z = unit(z_axis)
    ref = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = ref - (ref @ z) * z
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    c, s = np.cos(yaw), np.sin(yaw)
    x, y = c * x + s * y, -s * x + c * y
    return np.stack([x, y, z], axis=1)


def sample_poses(workspace: Workspace, n: int, rng: np.random.Generator,
                 max_tilt: float = np.deg2rad(60.0)) -> list[Pose]:
    """Uniform positions; z-axis within ``max_tilt`` of world-down.

    Yaw is uniform in [-pi/2, pi/2]: suction tools are axisymmetric, so candidate
    poses are normalised into that range.
    """
    pos = rng.uniform(workspace.lo, workspace.hi, size=(n, 3))
    cos_t = rng.uniform(np.cos(max_tilt), 1.0, size=n)
    az = rng.uniform(-np.pi, np.pi, size=n)
    yaw = rng.uniform(-np.pi / 2, np.pi / 2, size=n)
    sin_t = np.sqrt(1.0 - cos_t ** 2)
    zs = np.stack([sin_t * np.cos(az), sin_t * np.sin(az), -cos_t], axis=1)
    return [Pose(downward_rotation(zs[i], yaw[i]), pos[i]) for i in range(n)]


@dataclass
class TamDataset:
    poses: np.ndarray       # (n_poses, 12): translation then row-major rotation
    directions: np.ndarray  # (n_dirs, 3)
    scores: np.ndarray      # (n_poses, n_dirs)
    workspace: Workspace
    seed: int

    @property
    def n_samples(self) -> int:
        return self.scores.size

    def features(self) -> tuple[np.ndarray, np.ndarray]:
        """Network inputs (translation, first two rotation columns, direction) and labels."""
        n_p, n_d = self.scores.shape
        t = self.poses[:, :3]
        R = self.poses[:, 3:].reshape(-1, 3, 3)
        pose_feat = np.concatenate([t, R[:, :, 0], R[:, :, 1]], axis=1)
        X = np.concatenate([np.repeat(pose_feat, n_d, axis=0),
                            np.tile(self.directions, (n_p, 1))], axis=1)
        return X, self.scores.reshape(-1).copy()


def generate_dataset(chain: KinematicChain, workspace: Workspace = DEFAULT_WORKSPACE,
                     n_poses: int = 5000, n_dirs: int = 32, seed: int = 0,
                     ik_seed: np.ndarray | None = None) -> TamDataset:
    if n_poses < 1 or n_dirs < 1:
        raise ValueError("n_poses and n_dirs must be positive")
    rng = np.random.default_rng(seed)
    poses = sample_poses(workspace, n_poses, rng)
    dirs = fibonacci_directions(n_dirs)
    q_seed = default_seed(chain) if ik_seed is None else ik_seed
    scores = np.empty((n_poses, n_dirs))
    for i, p in enumerate(poses):
        q = ik(chain, p, q_seed)
        scores[i] = UNREACHABLE if q is None else tam_scores_at(chain, q, dirs)
    flat = np.array([np.concatenate([p.d, p.R.reshape(-1)]) for p in poses])
    return TamDataset(flat, dirs, scores, workspace, seed)


def save_dataset(ds: TamDataset, path: str | Path, extra: dict | None = None) -> None:
    """One sample per line: ``tx ty tz r00..r22 nx ny nz score``."""
    header = {
        "format": "tam-dataset-v1",
        "n_poses": ds.scores.shape[0],
        "n_dirs": ds.scores.shape[1],
        "seed": ds.seed,
        "workspace_lo": " ".join(fmt(v) for v in ds.workspace.lo),
        "workspace_hi": " ".join(fmt(v) for v in ds.workspace.hi),
        **(extra or {}),
    }
    lines = [f"# {k} = {v}" for k, v in header.items()]
    for i in range(ds.scores.shape[0]):
        pose = " ".join(fmt(v) for v in ds.poses[i])
        for j in range(ds.scores.shape[1]):
            d = " ".join(fmt(v) for v in ds.directions[j])
            lines.append(f"{pose} {d} {fmt(ds.scores[i, j])}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path: str | Path) -> TamDataset:
    header: dict[str, str] = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            if "=" in line:
                k, v = line[1:].split("=", 1)
                header[k.strip()] = v.strip()
            continue
        if line.strip():
            rows.append([float(v) for v in line.split()])
    data = np.array(rows)
    n_poses, n_dirs = int(header["n_poses"]), int(header["n_dirs"])
    if data.shape != (n_poses * n_dirs, 16):
        raise ValueError(f"{path}: expected {n_poses * n_dirs} rows of 16 numbers")
    data = data.reshape(n_poses, n_dirs, 16)
    ws = Workspace([float(v) for v in header["workspace_lo"].split()],
                   [float(v) for v in header["workspace_hi"].split()])
    return TamDataset(data[:, 0, :12].copy(), data[0, :, 12:15].copy(), data[:, :, 15].copy(),
                      ws, int(header["seed"]))
