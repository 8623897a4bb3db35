"""Serial-chain kinematics for revolute arms.

Forward kinematics, geometric Jacobian, damped least-squares IK, the inverse
condition number used as a manipulability measure, and the link-sphere model
used for collision queries.  Every batched routine accepts joint arrays of shape
``(n,)`` or ``(..., n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from binpick.textfmt import FormatError, Section, parse_file, parse_text


@dataclass
class Pose:
    """Rigid transform: rotation ``R`` (3x3) and translation ``d`` (3,)."""

    R: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)
        self.d = np.asarray(self.d, dtype=float).reshape(3)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> Pose:
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_xyz_rpy(cls, xyz, rpy) -> Pose:
        return cls(rpy_matrix(rpy), xyz)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.d
        return T

    def __matmul__(self, other: Pose) -> Pose:
        return Pose(self.R @ other.R, self.R @ other.d + self.d)

    def inverse(self) -> Pose:
        return Pose(self.R.T, -self.R.T @ self.d)

    def transform(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.R.T + self.d

    def translated(self, r: np.ndarray) -> Pose:
        return Pose(self.R.copy(), self.d + np.asarray(r, dtype=float))

    @property
    def z_axis(self) -> np.ndarray:
        return self.R[:, 2].copy()

    def is_valid(self, tol: float = 1e-9) -> bool:
        return (np.allclose(self.R.T @ self.R, np.eye(3), atol=tol)
                and abs(np.linalg.det(self.R) - 1.0) < tol and np.all(np.isfinite(self.d)))


@dataclass
class Twist:
    linear: np.ndarray
    angular: np.ndarray

    @classmethod
    def from_vector(cls, v: np.ndarray) -> Twist:
        v = np.asarray(v, dtype=float)
        return cls(v[:3].copy(), v[3:6].copy())

    def vector(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])


@dataclass
class JointState:
    q: np.ndarray
    qdot: np.ndarray
    qddot: np.ndarray
    stamp: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.qdot = np.asarray(self.qdot, dtype=float)
        self.qddot = np.asarray(self.qddot, dtype=float)
        if not (self.q.shape == self.qdot.shape == self.qddot.shape) or self.q.ndim != 1:
            raise ValueError("q, qdot and qddot must be vectors of equal length")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qdot))
                and np.all(np.isfinite(self.qddot))):
            raise ValueError("joint state must be finite")

    @classmethod
    def at_rest(cls, q, stamp: float = 0.0) -> JointState:
        q = np.asarray(q, dtype=float)
        return cls(q.copy(), np.zeros_like(q), np.zeros_like(q), stamp)


def rpy_matrix(rpy) -> np.ndarray:
    """URDF convention: fixed-axis roll, pitch, yaw (R = Rz @ Ry @ Rx)."""
    return Rotation.from_euler("xyz", np.asarray(rpy, dtype=float)).as_matrix()


def rot_about(axis: np.ndarray, angle: float) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(axis, dtype=float) * angle).as_matrix()


def rotation_error(R_target: np.ndarray, R_current: np.ndarray) -> np.ndarray:
    """World-frame rotation vector taking ``R_current`` onto ``R_target``."""
    return Rotation.from_matrix(R_target @ R_current.T).as_rotvec()


@dataclass
class Joint:
    origin: Pose
    axis: np.ndarray
    lower: float
    upper: float
    vel_limit: float
    acc_limit: float


@dataclass
class KinematicChain:
    """Revolute serial chain with per-link collision spheres.

    Link ``i`` (0-based) is the body moved by joint ``i``; its spheres are given in
    that joint's frame.  ``ee_offset`` is the fixed tool transform after the last
    joint.
    """

    joints: list[Joint]
    link_spheres: list[np.ndarray]
    ee_offset: Pose = field(default_factory=Pose.identity)
    name: str = "chain"

    def __post_init__(self):
        if len(self.joints) < 2:
            raise ValueError("chain needs at least two joints")
        for i, j in enumerate(self.joints):
            if not j.lower < j.upper:
                raise ValueError(f"joint {i}: lower limit must be below upper limit")
            j.axis = np.asarray(j.axis, dtype=float) / np.linalg.norm(j.axis)
        if len(self.link_spheres) != len(self.joints):
            raise ValueError("one sphere list per link is required")
        spheres = []
        for i, s in enumerate(self.link_spheres):
            s = np.asarray(s, dtype=float).reshape(-1, 4)
            if np.any(s[:, 3] <= 0):
                raise ValueError(f"link {i}: sphere radii must be positive")
            spheres.append(s)
        self.link_spheres = spheres
        self.lower = np.array([j.lower for j in self.joints])
        self.upper = np.array([j.upper for j in self.joints])
        self.vel_limit = np.array([j.vel_limit for j in self.joints])
        self.acc_limit = np.array([j.acc_limit for j in self.joints])
        self._origin_R = np.stack([j.origin.R for j in self.joints])
        self._origin_d = np.stack([j.origin.d for j in self.joints])
        self._axes = np.stack([j.axis for j in self.joints])
        self._z_only = bool(np.allclose(self._axes, [0.0, 0.0, 1.0]))
        link_of, centers, radii = [], [], []
        for i, s in enumerate(self.link_spheres):
            link_of.extend([i] * len(s))
            centers.append(s[:, :3])
            radii.append(s[:, 3])
        self.sphere_link = np.array(link_of, dtype=int)
        self.sphere_local = np.concatenate(centers) if centers else np.zeros((0, 3))
        self.sphere_radius = np.concatenate(radii) if radii else np.zeros(0)

    @property
    def n(self) -> int:
        return len(self.joints)

    def clip(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.lower, self.upper)

    def scaled(self, k: float) -> KinematicChain:
        """Copy with every length (joint offsets, tool, spheres) multiplied by ``k``."""
        joints = [Joint(Pose(j.origin.R, j.origin.d * k), j.axis.copy(), j.lower, j.upper,
                        j.vel_limit, j.acc_limit) for j in self.joints]
        spheres = [s * k for s in self.link_spheres]
        ee = Pose(self.ee_offset.R, self.ee_offset.d * k)
        return KinematicChain(joints, spheres, ee, name=f"{self.name}x{k:g}")


# ---------------------------------------------------------------------------
# chain files


def _chain_from_sections(sections: list[Section], name: str) -> KinematicChain:
    joints: dict[int, Joint] = {}
    spheres: dict[int, list[list[float]]] = {}
    ee = Pose.identity()
    for sec in sections:
        if sec.name == "joint":
            idx = int(sec.attrs.get("id", -1))
            joints[idx] = Joint(
                origin=Pose.from_xyz_rpy(sec.floats("origin_xyz", 3, [0.0] * 3),
                                         sec.floats("origin_rpy", 3, [0.0] * 3)),
                axis=np.array(sec.floats("axis", 3, [0.0, 0.0, 1.0])),
                lower=sec.float("limit_lo"),
                upper=sec.float("limit_hi"),
                vel_limit=sec.float("vel_limit"),
                acc_limit=sec.float("acc_limit"),
            )
        elif sec.name == "spheres":
            link = int(sec.attrs.get("link", sec.attrs.get("id", -1)))
            rows = spheres.setdefault(link, [])
            for row in sec.rows:
                if len(row) != 4:
                    raise FormatError(f"[spheres link={link}]: expected 'cx cy cz r'")
                rows.append([float(v) for v in row])
        elif sec.name == "tool":
            ee = Pose.from_xyz_rpy(sec.floats("origin_xyz", 3, [0.0] * 3),
                                   sec.floats("origin_rpy", 3, [0.0] * 3))
        elif sec.name == "chain":
            name = sec.str("name", name)
        else:
            raise FormatError(f"unknown section [{sec.name}]")
    order = sorted(joints)
    if order != list(range(1, len(order) + 1)):
        raise FormatError("joints must be numbered 1..n")
    for link in spheres:
        if link not in joints:
            raise FormatError(f"spheres for unknown link {link}")
    return KinematicChain(
        [joints[i] for i in order],
        [np.array(spheres.get(i, []), dtype=float).reshape(-1, 4) for i in order],
        ee,
        name=name,
    )


def load_chain(path: str | Path) -> KinematicChain:
    return _chain_from_sections(parse_file(path), Path(path).stem)


def parse_chain(text: str, name: str = "chain") -> KinematicChain:
    return _chain_from_sections(parse_text(text), name)


def default_chain() -> KinematicChain:
    """The shipped 7-joint arm (illustrative parameters, not a calibrated robot)."""
    ref = resources.files("binpick") / "data" / "panda_like.chain"
    return parse_chain(ref.read_text(), "panda_like")


# Nominal joint configuration of the shipped arm: elbow up, tool pointing down.
HOME_Q = np.array([0.0, -0.785, 0.0, -2.356, 0.0, 1.571, 0.785])


def planar_chain(lengths=(1.0, 1.0), sphere_radius: float = 0.05) -> KinematicChain:
    """Planar chain in the xy plane with z joint axes and the given link lengths."""
    joints = []
    offset = 0.0
    for length in lengths:
        joints.append(Joint(Pose(np.eye(3), [offset, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]),
                            -np.pi, np.pi, 3.0, 20.0))
        offset = length
    spheres = [np.array([[0.5 * length, 0.0, 0.0, sphere_radius]]) for length in lengths]
    return KinematicChain(joints, spheres, Pose(np.eye(3), [lengths[-1], 0.0, 0.0]),
                          name="planar")


# ---------------------------------------------------------------------------
# forward kinematics


def _joint_rotations(chain: KinematicChain, q: np.ndarray) -> np.ndarray:
    """Rotation about each joint axis, shape ``q.shape + (3, 3)``."""
    c, s = np.cos(q), np.sin(q)
    if chain._z_only:
        out = np.zeros(q.shape + (3, 3))
        out[..., 0, 0] = c
        out[..., 0, 1] = -s
        out[..., 1, 0] = s
        out[..., 1, 1] = c
        out[..., 2, 2] = 1.0
        return out
    k = chain._axes
    K = np.zeros((chain.n, 3, 3))
    K[:, 0, 1], K[:, 0, 2], K[:, 1, 2] = -k[:, 2], k[:, 1], -k[:, 0]
    K[:, 1, 0], K[:, 2, 0], K[:, 2, 1] = k[:, 2], -k[:, 1], k[:, 0]
    KK = K @ K
    return np.eye(3) + s[..., None, None] * K + (1.0 - c)[..., None, None] * KK


def fk_frames(chain: KinematicChain, q: np.ndarray):
    """Link frames for a (batch of) configuration(s).

    Returns ``(R, p, R_ee, p_ee)`` with ``R`` of shape ``(..., n, 3, 3)`` and ``p``
    of shape ``(..., n, 3)`` holding each joint frame after its rotation.
    """
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != chain.n:
        raise ValueError(f"expected {chain.n} joint values, got {q.shape[-1]}")
    batch = q.shape[:-1]
    rots = _joint_rotations(chain, q)
    Rs = np.empty(batch + (chain.n, 3, 3))
    ps = np.empty(batch + (chain.n, 3))
    R = np.broadcast_to(np.eye(3), batch + (3, 3))
    p = np.zeros(batch + (3,))
    for i in range(chain.n):
        p = p + R @ chain._origin_d[i]
        R = R @ chain._origin_R[i] @ rots[..., i, :, :]
        Rs[..., i, :, :] = R
        ps[..., i, :] = p
    p_ee = p + R @ chain.ee_offset.d
    R_ee = R @ chain.ee_offset.R
    return Rs, ps, R_ee, p_ee


def fk(chain: KinematicChain, q: np.ndarray) -> Pose:
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.n,):
        raise ValueError(f"expected {chain.n} joint values, got shape {q.shape}")
    _, _, R, p = fk_frames(chain, q)
    return Pose(R, p)


def jacobian_from_frames(chain: KinematicChain, Rs, ps, p_ee) -> np.ndarray:
    """Geometric Jacobian (..., 6, n), linear rows first."""
    axes = np.einsum("...ij,...j->...i", Rs, chain._axes)
    lever = p_ee[..., None, :] - ps
    lin = np.cross(axes, lever)
    return np.concatenate([np.swapaxes(lin, -1, -2), np.swapaxes(axes, -1, -2)], axis=-2)


def jacobian(chain: KinematicChain, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != chain.n:
        raise ValueError(f"expected {chain.n} joint values, got {q.shape[-1]}")
    Rs, ps, _, p_ee = fk_frames(chain, q)
    return jacobian_from_frames(chain, Rs, ps, p_ee)


def ee_velocity(chain: KinematicChain, q: np.ndarray, qdot: np.ndarray) -> Twist:
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    if q.shape != (chain.n,) or qdot.shape != (chain.n,):
        raise ValueError("q and qdot must both have one entry per joint")
    return Twist.from_vector(jacobian(chain, q) @ qdot)


def ee_linear_velocity_batch(chain: KinematicChain, Rs, ps, p_ee, qdot) -> np.ndarray:
    """Linear end-effector velocity for batched frames, shape ``(..., 3)``."""
    axes = np.einsum("...ij,...j->...i", Rs, chain._axes)
    lin = np.cross(axes, p_ee[..., None, :] - ps)
    return np.einsum("...ji,...j->...i", lin, qdot)


def link_spheres_world(chain: KinematicChain, q: np.ndarray):
    """World sphere centers ``(..., m, 3)`` and radii ``(m,)`` for configuration(s) ``q``."""
    Rs, ps, _, _ = fk_frames(chain, q)
    return spheres_from_frames(chain, Rs, ps), chain.sphere_radius.copy()


def spheres_from_frames(chain: KinematicChain, Rs, ps) -> np.ndarray:
    R = Rs[..., chain.sphere_link, :, :]
    p = ps[..., chain.sphere_link, :]
    return np.einsum("...ij,...j->...i", R, chain.sphere_local) + p


# ---------------------------------------------------------------------------
# inverse kinematics and manipulability


def ik(chain: KinematicChain, target: Pose, seed: np.ndarray, *, max_iter: int = 200,
       damping: float = 1e-3, step_cap: float = 0.2, pos_tol: float = 1e-3,
       rot_tol: float = 1e-2) -> np.ndarray | None:
    """Damped least-squares IK on the 6D pose error.

    Joints whose step would leave their limits are locked and the step is
    re-solved with the remaining ones.  Iterates until the error is at numerical
    precision or ``max_iter`` is spent; the result is accepted when it lies
    within ``pos_tol`` (m) and ``rot_tol`` (rad) of ``target``.  Returns ``None``
    otherwise.

    The rotation error always takes the short way round, which can drive the
    last (tool roll) joint into a limit when the long way is the feasible one.
    A failed solve is therefore retried with that joint seeded half a turn to
    either side.
    """
    seed = chain.clip(np.asarray(seed, dtype=float).copy())
    kw = dict(max_iter=max_iter, damping=damping, step_cap=step_cap, pos_tol=pos_tol,
              rot_tol=rot_tol)
    q = _ik_from(chain, target, seed, **kw)
    for shift in (np.pi, -np.pi):
        if q is not None:
            break
        alt = seed.copy()
        alt[-1] += shift
        if chain.lower[-1] <= alt[-1] <= chain.upper[-1]:
            q = _ik_from(chain, target, alt, **kw)
    return q


def _ik_from(chain: KinematicChain, target: Pose, seed: np.ndarray, *, max_iter, damping,
             step_cap, pos_tol, rot_tol) -> np.ndarray | None:
    q = chain.clip(np.asarray(seed, dtype=float).copy())
    best, best_err = None, np.inf
    eye = np.eye(6)
    for _ in range(max_iter):
        Rs, ps, R_ee, p_ee = fk_frames(chain, q)
        e_pos = target.d - p_ee
        e_rot = rotation_error(target.R, R_ee)
        ep, er = np.linalg.norm(e_pos), np.linalg.norm(e_rot)
        if ep < pos_tol and er < rot_tol and ep + er < best_err:
            best, best_err = q.copy(), ep + er
        if ep < 1e-10 and er < 1e-10:
            break
        J = jacobian_from_frames(chain, Rs, ps, p_ee)
        e = np.concatenate([e_pos, e_rot])
        free = np.ones(chain.n, dtype=bool)
        dq = np.zeros(chain.n)
        while free.any():
            Jf = J[:, free]
            dq = np.zeros(chain.n)
            dq[free] = Jf.T @ np.linalg.solve(Jf @ Jf.T + damping * eye, e)
            peak = np.max(np.abs(dq))
            if peak > step_cap:
                dq *= step_cap / peak
            stepped = q + dq
            out = free & ((stepped < chain.lower) | (stepped > chain.upper))
            if not out.any():
                break
            free &= ~out
        q = chain.clip(q + dq)
    if best is None:
        Rs, ps, R_ee, p_ee = fk_frames(chain, q)
        if (np.linalg.norm(target.d - p_ee) < pos_tol
                and np.linalg.norm(rotation_error(target.R, R_ee)) < rot_tol):
            best = q
    return best


def singular_values(A: np.ndarray, tol: float = 1e-12, max_sweeps: int = 60) -> np.ndarray:
    """Singular values (descending) by one-sided Jacobi rotations."""
    A = np.asarray(A, dtype=float)
    U = A.T.copy() if A.shape[0] < A.shape[1] else A.copy()
    n = U.shape[1]
    for _ in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                ui, uj = U[:, i], U[:, j]
                a = ui @ ui
                b = uj @ uj
                c = ui @ uj
                if a == 0.0 or b == 0.0 or abs(c) <= tol * np.sqrt(a * b):
                    continue
                rotated = True
                zeta = (b - a) / (2.0 * c)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = cs * t
                new_i = cs * ui - sn * uj
                U[:, j] = sn * ui + cs * uj
                U[:, i] = new_i
        if not rotated:
            break
    return np.sort(np.linalg.norm(U, axis=0))[::-1]


def inv_cond_matrix(J: np.ndarray) -> float:
    s = singular_values(J)
    if s[0] == 0.0:
        return 0.0
    return float(s[-1] / s[0])


def _jac_rows(J: np.ndarray, rows: str) -> np.ndarray:
    if rows == "full":
        return J
    if rows == "linear":
        return J[:3]
    raise ValueError(f"rows must be 'full' or 'linear', not {rows!r}")


def inv_cond_at(chain: KinematicChain, q: np.ndarray, rows: str = "full") -> float:
    J = _jac_rows(jacobian(chain, q), rows)
    if rows == "linear" and np.allclose(J[2], 0.0):
        J = J[:2]  # planar chains have no z motion
    return inv_cond_matrix(J)


def inv_cond(chain: KinematicChain, p: Pose, seed: np.ndarray | None = None,
             rows: str = "full") -> float:
    """Inverse condition number of J at the IK solution of ``p``; -1 when unreachable."""
    if seed is None:
        seed = np.clip(np.zeros(chain.n), chain.lower, chain.upper)
    q = ik(chain, p, seed)
    if q is None:
        return -1.0
    return inv_cond_at(chain, q, rows)
