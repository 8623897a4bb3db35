"""Horizon-based joint-space trajectory optimisation solved with MPPI.

A horizon trajectory is driven by per-step joint accelerations.  Positions and
velocities follow the explicit-Euler recurrences

    qdot[t+1] = qdot[t] + qddot[t+1] * dt
    q[t+1]    = q[t]    + qdot[t+1]  * dt

with every step clamped into the joint position, velocity and acceleration
boxes.  The cost per step combines end-effector pose matching, velocity
matching and hinge penalties on the collision constraints.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from binpick._kernels import rollout_batch as _rollout_kernel
from binpick.kinematics import (JointState, KinematicChain, Pose, ee_linear_velocity_batch, fk,
                                fk_frames, jacobian, rotation_error, spheres_from_frames)
from binpick.textfmt import Section
from binpick.world import SdfWorld, self_distance_batch, self_pairs


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 24
    dt: float = 0.02
    samples: int = 256
    beta: float = 0.5
    noise_std: float = 2.0
    lambda_pose: float = 10.0
    lambda_vel: float = 2.0
    alpha_rot: float = 1.0
    alpha_trans: float = 5.0
    alpha_v: float = 0.05
    rho_env: float = 1e3
    rho_self: float = 1e3
    eps_env: float = 0.02
    eps_self: float = 0.01
    seed: int = 0
    # rollouts whose worst constraint violation exceeds this are discarded
    reject_violation: float = 0.05
    # "strict" takes the smaller of the static and dynamic clearances, "sum" adds them
    env_mode: str = "strict"
    # the last ``wide_fraction`` of the samples use ``wide_scale`` times the noise, which
    # keeps large corrections reachable while the rest stay fine-grained
    wide_fraction: float = 0.0
    wide_scale: float = 4.0
    # > 0 adds one proposal rollout from a resolved-rate controller with this gain (1/s)
    guide_gain: float = 0.0
    guide_speed: float = 0.5   # m/s cap on the proposal's linear speed

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.samples < 1:
            raise ValueError("need at least one sample")
        if not self.beta > 0:
            raise ValueError("temperature beta must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if not 0.0 <= self.wide_fraction <= 1.0 or self.wide_scale <= 0:
            raise ValueError("wide_fraction must lie in [0, 1] and wide_scale be positive")
        if self.env_mode not in ("strict", "sum"):
            raise ValueError(f"unknown env_mode {self.env_mode!r}")

    @classmethod
    def from_section(cls, section: Section) -> PlannerConfig:
        kw = {}
        for f in fields(cls):
            if not section.has(f.name):
                continue
            if f.name in ("horizon", "samples", "seed"):
                kw[f.name] = section.int(f.name)
            elif f.name == "env_mode":
                kw[f.name] = section.str(f.name)
            else:
                kw[f.name] = section.float(f.name)
        unknown = {row[0] for row in section.rows} - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown planner keys: {sorted(unknown)}")
        return cls(**kw)

    def with_(self, **kw) -> PlannerConfig:
        return replace(self, **kw)


# ---------------------------------------------------------------------------
# objectives


def pose_distance(p_a: Pose, p_b: Pose, alpha_rot: float = 1.0,
                  alpha_trans: float = 1.0) -> float:
    """Weighted rotation (Frobenius) plus translation distance between two poses."""
    rot = np.linalg.norm(alpha_rot * (np.eye(3) - p_b.R.T @ p_a.R))
    trans = np.linalg.norm(alpha_trans * (p_b.R.T @ p_a.d - p_b.R.T @ p_b.d))
    return float(rot + trans)


def pose_distance_batch(R_a: np.ndarray, d_a: np.ndarray, target: Pose,
                        alpha_rot: float, alpha_trans: float) -> np.ndarray:
    M = np.eye(3) - np.einsum("ji,...jk->...ik", target.R, R_a)
    rot = np.sqrt(np.einsum("...ij,...ij->...", M, M))
    trans = np.linalg.norm((d_a - target.d) @ target.R, axis=-1)
    return abs(alpha_rot) * rot + abs(alpha_trans) * trans


def f_pose(chain: KinematicChain, q: np.ndarray, s_tar: Pose,
           config: PlannerConfig = PlannerConfig()) -> float:
    _, _, R, p = fk_frames(chain, np.asarray(q, dtype=float))
    return float(pose_distance_batch(R, p, s_tar, config.alpha_rot, config.alpha_trans))


def v_ref(s: Pose, v_bin: np.ndarray, alpha_v: float) -> np.ndarray:
    """Follow the bin while moving along the pose's approach axis at ``alpha_v``."""
    return np.asarray(v_bin, dtype=float) + alpha_v * s.R[:, 2]


def f_vel(chain: KinematicChain, q: np.ndarray, qdot: np.ndarray, v_bin: np.ndarray,
          s_tar: Pose, alpha_v: float) -> float:
    Rs, ps, _, p_ee = fk_frames(chain, np.asarray(q, dtype=float))
    v = ee_linear_velocity_batch(chain, Rs, ps, p_ee, np.asarray(qdot, dtype=float))
    return float(np.abs(v - v_ref(s_tar, v_bin, alpha_v)).sum())


# ---------------------------------------------------------------------------
# rollout


@dataclass
class HorizonTrajectory:
    q: np.ndarray          # (H, n)
    qdot: np.ndarray       # (H, n)
    qddot: np.ndarray      # (H, n)
    costs: dict            # term name -> (H,) per-step weighted cost
    total: float
    dt: float
    start: JointState
    stuck: bool = False

    @property
    def horizon(self) -> int:
        return self.q.shape[0]


def _integrate(chain: KinematicChain, q0, qd0, accels, dt):
    """Clamped Euler integration of ``accels`` (..., H, n) from ``(q0, qd0)``."""
    H = accels.shape[-2]
    shape = accels.shape
    Q = np.empty(shape)
    QD = np.empty(shape)
    QDD = np.empty(shape)
    q = np.broadcast_to(q0, shape[:-2] + (chain.n,)).astype(float)
    qd = np.broadcast_to(qd0, shape[:-2] + (chain.n,)).astype(float)
    lo, hi = chain.lower, chain.upper
    vmax, amax = chain.vel_limit, chain.acc_limit
    for t in range(H):
        a = np.clip(accels[..., t, :], -amax, amax)
        # velocity window: velocity box, position box after one step, and room to brake
        room_hi = np.maximum(hi - q, 0.0)
        room_lo = np.maximum(q - lo, 0.0)
        v_hi = np.minimum(np.minimum(vmax, room_hi / dt), np.sqrt(2.0 * amax * room_hi))
        v_lo = -np.minimum(np.minimum(vmax, room_lo / dt), np.sqrt(2.0 * amax * room_lo))
        # intersect with what the acceleration box can reach this step
        r_lo = qd - amax * dt
        r_hi = qd + amax * dt
        w_lo = np.maximum(v_lo, r_lo)
        w_hi = np.minimum(v_hi, r_hi)
        bad = w_lo > w_hi
        if np.any(bad):
            # infeasible window (started outside the braking envelope): honour the
            # acceleration box and decelerate as hard as possible
            w_lo = np.where(bad, np.clip(0.0, r_lo, r_hi), w_lo)
            w_hi = np.where(bad, np.clip(0.0, r_lo, r_hi), w_hi)
        qd_new = np.clip(qd + a * dt, w_lo, w_hi)
        QDD[..., t, :] = (qd_new - qd) / dt
        q = np.clip(q + qd_new * dt, lo, hi)
        qd = qd_new
        Q[..., t, :] = q
        QD[..., t, :] = qd
    return Q, QD, QDD


TERMS = ("pose", "vel", "env", "self")


class CostModel:
    """Per-step cost over batches of horizon states.

    ``evaluate`` is the vectorised numpy reference; ``rollout_batch`` integrates
    and scores in one compiled pass and is what the MPPI loop uses.
    """

    def __init__(self, chain: KinematicChain, config: PlannerConfig, world: SdfWorld | None):
        self.chain = chain
        self.config = config
        self.world = world
        self.pairs = self_pairs(chain)

    def _weights(self, lambda_pose, lambda_vel, alpha_v):
        cfg = self.config
        return (cfg.lambda_pose if lambda_pose is None else lambda_pose,
                cfg.lambda_vel if lambda_vel is None else lambda_vel,
                cfg.alpha_v if alpha_v is None else alpha_v)

    def evaluate(self, Q, QD, s_tar: Pose, v_bin, lambda_pose=None, lambda_vel=None,
                 alpha_v=None):
        cfg = self.config
        lp, lv, av = self._weights(lambda_pose, lambda_vel, alpha_v)
        Rs, ps, R_ee, p_ee = fk_frames(self.chain, Q)
        terms = {"pose": lp * pose_distance_batch(R_ee, p_ee, s_tar, cfg.alpha_rot,
                                                  cfg.alpha_trans)}
        if lv != 0.0:
            v = ee_linear_velocity_batch(self.chain, Rs, ps, p_ee, QD)
            terms["vel"] = lv * np.abs(v - v_ref(s_tar, v_bin, av)).sum(axis=-1)
        else:
            terms["vel"] = np.zeros(Q.shape[:-1])
        centers = spheres_from_frames(self.chain, Rs, ps)
        radii = self.chain.sphere_radius
        if self.world is not None:
            ds, dd = self.world.distances(centers, radii)
            env = self.world.constraint_value(ds, dd, strict=cfg.env_mode == "strict")
        else:
            env = np.full(Q.shape[:-1], np.inf)
        self_c = self_distance_batch(centers, radii, self.pairs) - cfg.eps_self
        v_env = np.maximum(-env, 0.0)
        v_self = np.maximum(-self_c, 0.0)
        terms["env"] = cfg.rho_env * v_env
        terms["self"] = cfg.rho_self * v_self
        worst = np.maximum(v_env, v_self)
        return terms, worst

    def rollout_batch(self, state: JointState, accels: np.ndarray, s_tar: Pose, v_bin,
                      lambda_pose=None, lambda_vel=None, alpha_v=None):
        cfg, ch = self.config, self.chain
        lp, lv, av = self._weights(lambda_pose, lambda_vel, alpha_v)
        accels = np.ascontiguousarray(accels, dtype=float)
        K, H, n = accels.shape
        Q, QD, QDD = np.empty((K, H, n)), np.empty((K, H, n)), np.empty((K, H, n))
        terms = np.empty((K, H, 4))
        worst = np.empty((K, H))
        world = self.world
        if world is not None:
            st, dy = world.primitive_arrays()
            phi_s, phi_d = world.phi_static, world.phi_dynamic
            eps_env = world.eps_env
        else:
            st = dy = _EMPTY_SET
            phi_s = phi_d = 1.0
            eps_env = cfg.eps_env
        _rollout_kernel(
            np.asarray(state.q, dtype=float), np.asarray(state.qdot, dtype=float), accels,
            float(cfg.dt), ch.lower, ch.upper, ch.vel_limit, ch.acc_limit,
            ch._origin_R, ch._origin_d, ch._axes, ch.ee_offset.R, ch.ee_offset.d,
            ch.sphere_link, ch.sphere_local, ch.sphere_radius,
            self.pairs[0], self.pairs[1], *st, *dy,
            s_tar.R, s_tar.d, float(cfg.alpha_rot), float(cfg.alpha_trans), float(lp),
            float(lv), v_ref(s_tar, v_bin, av), float(eps_env), float(cfg.eps_self),
            float(phi_s), float(phi_d), cfg.env_mode == "strict", float(cfg.rho_env),
            float(cfg.rho_self), Q, QD, QDD, terms, worst)
        return Q, QD, QDD, {name: terms[..., i] for i, name in enumerate(TERMS)}, worst


_EMPTY_SET = (np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros((0, 3)), np.zeros((0, 3)),
              np.zeros(0))


def _totals(terms, worst, reject):
    step = sum(terms.values())
    total = step.sum(axis=-1)
    rejected = worst.max(axis=-1) > reject
    return np.where(rejected, np.inf, total)


def rollout(chain: KinematicChain, state: JointState, accels: np.ndarray,
            config: PlannerConfig, world: SdfWorld | None, s_tar: Pose, v_bin,
            **weights) -> tuple[HorizonTrajectory, float]:
    """Integrate one acceleration sequence and score it; returns (trajectory, total cost)."""
    accels = np.asarray(accels, dtype=float)
    if accels.shape != (config.horizon, chain.n):
        raise ValueError(f"expected accelerations of shape {(config.horizon, chain.n)}")
    Q, QD, QDD = _integrate(chain, state.q, state.qdot, accels, config.dt)
    model = CostModel(chain, config, world)
    terms, worst = model.evaluate(Q, QD, s_tar, np.asarray(v_bin, dtype=float), **weights)
    total = float(_totals(terms, worst, config.reject_violation))
    traj = HorizonTrajectory(Q, QD, QDD, terms, total, config.dt, state)
    return traj, total


# ---------------------------------------------------------------------------
# MPPI


def guide_accels(chain: KinematicChain, state: JointState, s_tar: Pose, v_ff: np.ndarray,
                 config: PlannerConfig, damping: float = 0.05, tau: float = 0.1) -> np.ndarray:
    """Acceleration sequence that steers the tool toward ``s_tar`` at a capped speed.

    A damped least-squares resolved-rate step computes one joint velocity
    target, which the sequence approaches with time constant ``tau``.
    """
    ee = fk(chain, state.q)
    v = config.guide_gain * (s_tar.d - ee.d)
    speed = np.linalg.norm(v)
    if speed > config.guide_speed:
        v *= config.guide_speed / speed
    w = np.clip(config.guide_gain * rotation_error(s_tar.R, ee.R), -1.0, 1.0)
    J = jacobian(chain, state.q)
    twist = np.concatenate([v + v_ff, w])
    qd_des = J.T @ np.linalg.solve(J @ J.T + damping ** 2 * np.eye(6), twist)
    qd_des = np.clip(qd_des, -chain.vel_limit, chain.vel_limit)
    out = np.empty((config.horizon, chain.n))
    qd = np.asarray(state.qdot, dtype=float).copy()
    for h in range(config.horizon):
        a = np.clip((qd_des - qd) / max(tau, config.dt), -chain.acc_limit, chain.acc_limit)
        out[h] = a
        qd = qd + a * config.dt
    return out


class MppiPlanner:
    """Stateful MPPI solver holding the warm start and its random stream."""

    def __init__(self, chain: KinematicChain, config: PlannerConfig = PlannerConfig(),
                 rng: np.random.Generator | None = None, backend: str = "compiled"):
        if backend not in ("compiled", "numpy"):
            raise ValueError(f"unknown backend {backend!r}")
        self.backend = backend
        self.chain = chain
        self.config = config
        self.rng = np.random.default_rng(config.seed) if rng is None else rng
        self.mean = np.zeros((config.horizon, chain.n))
        self.last: HorizonTrajectory | None = None

    def reset(self) -> None:
        self.mean = np.zeros_like(self.mean)
        self.last = None

    def solve(self, state: JointState, s_tar: Pose, v_bin, world: SdfWorld | None,
              **weights) -> HorizonTrajectory:
        cfg = self.config
        v_bin = np.asarray(v_bin, dtype=float)
        model = CostModel(self.chain, cfg, world)
        K, H, n = cfg.samples, cfg.horizon, self.chain.n
        noise = self.rng.standard_normal((K, H, n)) * cfg.noise_std
        n_wide = int(round(K * cfg.wide_fraction))
        if n_wide:
            noise[K - n_wide:] *= cfg.wide_scale
        noise[0] = 0.0
        accels = self.mean[None] + noise
        if K > 1:
            # a hold-still candidate so the solver can always fall back to stopping
            accels[1] = -state.qdot / cfg.dt
        if K > 2 and cfg.guide_gain > 0:
            lv = weights.get("lambda_vel", cfg.lambda_vel)
            av = weights.get("alpha_v", cfg.alpha_v)
            v_ff = v_bin + av * s_tar.R[:, 2] if lv else np.zeros(3)
            accels[2] = guide_accels(self.chain, state, s_tar, v_ff, cfg)
        Q, QD, QDD, terms, worst = self._batch(model, state, accels, s_tar, v_bin, weights)
        totals = _totals(terms, worst, cfg.reject_violation)
        finite = np.isfinite(totals)
        if not finite.any():
            return self._stuck(state, model, s_tar, v_bin, weights)
        c_min = totals[finite].min()
        w = np.where(finite, np.exp(-(totals - c_min) / cfg.beta), 0.0)
        w /= w.sum()
        # the executed sequences (after clamping) are averaged, in fixed sample order
        new_mean = np.tensordot(w, QDD, axes=1)
        Qm, QDm, QDDm, terms_m, worst_m = self._batch(model, state, new_mean[None], s_tar,
                                                      v_bin, weights)
        total_m = float(_totals(terms_m, worst_m, cfg.reject_violation)[0])
        best = int(np.argmin(np.where(finite, totals, np.inf)))
        if not total_m <= totals[best]:
            Qm, QDm, QDDm = Q[best:best + 1], QD[best:best + 1], QDD[best:best + 1]
            terms_m = {k: v[best:best + 1] for k, v in terms.items()}
            total_m = float(totals[best])
        self.mean = QDDm[0].copy()
        traj = HorizonTrajectory(Qm[0], QDm[0], QDDm[0], {k: v[0] for k, v in terms_m.items()},
                                 total_m, cfg.dt, state)
        self.last = traj
        return traj

    def _batch(self, model: CostModel, state, accels, s_tar, v_bin, weights):
        if self.backend == "compiled":
            return model.rollout_batch(state, accels, s_tar, v_bin, **weights)
        Q, QD, QDD = _integrate(self.chain, state.q, state.qdot, accels, self.config.dt)
        terms, worst = model.evaluate(Q, QD, s_tar, v_bin, **weights)
        return Q, QD, QDD, terms, worst

    def _stuck(self, state, model, s_tar, v_bin, weights) -> HorizonTrajectory:
        cfg = self.config
        # decelerate at the acceleration limit until at rest, then hold
        brake = np.zeros((cfg.horizon, self.chain.n))
        qd = np.asarray(state.qdot, dtype=float).copy()
        for h in range(cfg.horizon):
            brake[h] = np.clip(-qd / cfg.dt, -self.chain.acc_limit, self.chain.acc_limit)
            qd = qd + brake[h] * cfg.dt
        Q, QD, QDD, terms, _ = self._batch(model, state, brake[None], s_tar, v_bin, weights)
        self.mean = np.zeros_like(self.mean)
        traj = HorizonTrajectory(Q[0], QD[0], QDD[0], {k: v[0] for k, v in terms.items()},
                                 float(sum(v[0].sum() for v in terms.values())), cfg.dt, state,
                                 stuck=True)
        self.last = traj
        return traj

    def step(self, traj: HorizonTrajectory) -> JointState:
        """First point of ``traj`` as the command; the warm start shifts by one step."""
        cmd = step(traj)
        self.mean = np.vstack([self.mean[1:], np.zeros((1, self.chain.n))])
        return cmd


def step(traj: HorizonTrajectory) -> JointState:
    return JointState(traj.q[0].copy(), traj.qdot[0].copy(), traj.qddot[0].copy(),
                      traj.start.stamp + traj.dt)


def mppi_solve(chain: KinematicChain, state: JointState, s_tar: Pose, v_bin,
               world: SdfWorld | None, config: PlannerConfig = PlannerConfig(),
               warm_start: np.ndarray | None = None,
               rng: np.random.Generator | None = None, **weights) -> HorizonTrajectory:
    """One MPPI iteration as a pure function of its inputs (warm start and seed)."""
    planner = MppiPlanner(chain, config, rng)
    if warm_start is not None:
        planner.mean = np.array(warm_start, dtype=float).reshape(config.horizon, chain.n)
    return planner.solve(state, s_tar, v_bin, world, **weights)
