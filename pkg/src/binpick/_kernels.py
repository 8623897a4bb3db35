"""Compiled inner loop for MPPI: integrate and score a batch of acceleration sequences.

This mirrors ``planner._integrate`` and ``planner.CostModel.evaluate`` (the
numpy reference implementation) one configuration at a time, which avoids the
large temporaries the vectorised version needs.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _box_sdf(x, y, z, c, R, h):
    dx, dy, dz = x - c[0], y - c[1], z - c[2]
    lx = dx * R[0, 0] + dy * R[1, 0] + dz * R[2, 0]
    ly = dx * R[0, 1] + dy * R[1, 1] + dz * R[2, 1]
    lz = dx * R[0, 2] + dy * R[1, 2] + dz * R[2, 2]
    qx, qy, qz = abs(lx) - h[0], abs(ly) - h[1], abs(lz) - h[2]
    ox, oy, oz = max(qx, 0.0), max(qy, 0.0), max(qz, 0.0)
    outside = math.sqrt(ox * ox + oy * oy + oz * oz)
    inside = min(max(qx, max(qy, qz)), 0.0)
    return outside + inside


@njit(cache=True)
def _set_sdf(x, y, z, box_c, box_R, box_h, ball_c, ball_r):
    best = np.inf
    for b in range(box_c.shape[0]):
        d = _box_sdf(x, y, z, box_c[b], box_R[b], box_h[b])
        if d < best:
            best = d
    for b in range(ball_c.shape[0]):
        dx, dy, dz = x - ball_c[b, 0], y - ball_c[b, 1], z - ball_c[b, 2]
        d = math.sqrt(dx * dx + dy * dy + dz * dz) - ball_r[b]
        if d < best:
            best = d
    return best


@njit(cache=True)
def rollout_batch(q0, qd0, accels, dt, lower, upper, vmax, amax,
                  origin_R, origin_d, axes, ee_R, ee_d,
                  sph_link, sph_local, sph_r, pair_i, pair_j,
                  s_box_c, s_box_R, s_box_h, s_ball_c, s_ball_r,
                  d_box_c, d_box_R, d_box_h, d_ball_c, d_ball_r,
                  tgt_R, tgt_d, alpha_rot, alpha_trans, lam_pose, lam_vel, vref,
                  eps_env, eps_self, phi_s, phi_d, strict, rho_env, rho_self,
                  Q, QD, QDD, terms, worst):
    K, H, n = accels.shape
    m = sph_r.shape[0]
    Rs = np.empty((n, 3, 3))
    ps = np.empty((n, 3))
    R = np.empty((3, 3))
    T = np.empty((3, 3))
    Rj = np.empty((3, 3))
    centers = np.empty((m, 3))
    q = np.empty(n)
    qd = np.empty(n)
    for k in range(K):
        for j in range(n):
            q[j] = q0[j]
            qd[j] = qd0[j]
        for t in range(H):
            # --- clamped integration step
            for j in range(n):
                a = min(max(accels[k, t, j], -amax[j]), amax[j])
                room_hi = max(upper[j] - q[j], 0.0)
                room_lo = max(q[j] - lower[j], 0.0)
                v_hi = min(min(vmax[j], room_hi / dt), math.sqrt(2.0 * amax[j] * room_hi))
                v_lo = -min(min(vmax[j], room_lo / dt), math.sqrt(2.0 * amax[j] * room_lo))
                r_lo = qd[j] - amax[j] * dt
                r_hi = qd[j] + amax[j] * dt
                w_lo = max(v_lo, r_lo)
                w_hi = min(v_hi, r_hi)
                if w_lo > w_hi:
                    w_lo = min(max(0.0, r_lo), r_hi)
                    w_hi = w_lo
                qd_new = min(max(qd[j] + a * dt, w_lo), w_hi)
                QDD[k, t, j] = (qd_new - qd[j]) / dt
                q[j] = min(max(q[j] + qd_new * dt, lower[j]), upper[j])
                qd[j] = qd_new
                Q[k, t, j] = q[j]
                QD[k, t, j] = qd[j]
            # --- forward kinematics
            for a_ in range(3):
                for b_ in range(3):
                    R[a_, b_] = 1.0 if a_ == b_ else 0.0
            px, py, pz = 0.0, 0.0, 0.0
            for i in range(n):
                od = origin_d[i]
                px += R[0, 0] * od[0] + R[0, 1] * od[1] + R[0, 2] * od[2]
                py += R[1, 0] * od[0] + R[1, 1] * od[1] + R[1, 2] * od[2]
                pz += R[2, 0] * od[0] + R[2, 1] * od[1] + R[2, 2] * od[2]
                # T = R @ origin_R[i]
                for a_ in range(3):
                    for b_ in range(3):
                        T[a_, b_] = (R[a_, 0] * origin_R[i, 0, b_] + R[a_, 1] * origin_R[i, 1, b_]
                                     + R[a_, 2] * origin_R[i, 2, b_])
                c, s = math.cos(q[i]), math.sin(q[i])
                kx, ky, kz = axes[i, 0], axes[i, 1], axes[i, 2]
                v1 = 1.0 - c
                Rj[0, 0] = c + kx * kx * v1
                Rj[0, 1] = kx * ky * v1 - kz * s
                Rj[0, 2] = kx * kz * v1 + ky * s
                Rj[1, 0] = ky * kx * v1 + kz * s
                Rj[1, 1] = c + ky * ky * v1
                Rj[1, 2] = ky * kz * v1 - kx * s
                Rj[2, 0] = kz * kx * v1 - ky * s
                Rj[2, 1] = kz * ky * v1 + kx * s
                Rj[2, 2] = c + kz * kz * v1
                for a_ in range(3):
                    for b_ in range(3):
                        R[a_, b_] = T[a_, 0] * Rj[0, b_] + T[a_, 1] * Rj[1, b_] + T[a_, 2] * Rj[2, b_]
                        Rs[i, a_, b_] = R[a_, b_]
                ps[i, 0], ps[i, 1], ps[i, 2] = px, py, pz
            ex = px + R[0, 0] * ee_d[0] + R[0, 1] * ee_d[1] + R[0, 2] * ee_d[2]
            ey = py + R[1, 0] * ee_d[0] + R[1, 1] * ee_d[1] + R[1, 2] * ee_d[2]
            ez = pz + R[2, 0] * ee_d[0] + R[2, 1] * ee_d[1] + R[2, 2] * ee_d[2]
            # R_ee = R @ ee_R, then M = I - tgt_R^T R_ee
            fro = 0.0
            for a_ in range(3):
                for b_ in range(3):
                    T[a_, b_] = R[a_, 0] * ee_R[0, b_] + R[a_, 1] * ee_R[1, b_] + R[a_, 2] * ee_R[2, b_]
            for a_ in range(3):
                for b_ in range(3):
                    mv = (1.0 if a_ == b_ else 0.0) - (tgt_R[0, a_] * T[0, b_] + tgt_R[1, a_] * T[1, b_]
                                                        + tgt_R[2, a_] * T[2, b_])
                    fro += mv * mv
            dx, dy, dz = ex - tgt_d[0], ey - tgt_d[1], ez - tgt_d[2]
            tr = 0.0
            for b_ in range(3):
                comp = dx * tgt_R[0, b_] + dy * tgt_R[1, b_] + dz * tgt_R[2, b_]
                tr += comp * comp
            terms[k, t, 0] = lam_pose * (abs(alpha_rot) * math.sqrt(fro) + abs(alpha_trans) * math.sqrt(tr))
            # --- linear end-effector velocity
            if lam_vel != 0.0:
                vx, vy, vz = 0.0, 0.0, 0.0
                for i in range(n):
                    ax = Rs[i, 0, 0] * axes[i, 0] + Rs[i, 0, 1] * axes[i, 1] + Rs[i, 0, 2] * axes[i, 2]
                    ay = Rs[i, 1, 0] * axes[i, 0] + Rs[i, 1, 1] * axes[i, 1] + Rs[i, 1, 2] * axes[i, 2]
                    az = Rs[i, 2, 0] * axes[i, 0] + Rs[i, 2, 1] * axes[i, 1] + Rs[i, 2, 2] * axes[i, 2]
                    lx, ly, lz = ex - ps[i, 0], ey - ps[i, 1], ez - ps[i, 2]
                    vx += (ay * lz - az * ly) * qd[i]
                    vy += (az * lx - ax * lz) * qd[i]
                    vz += (ax * ly - ay * lx) * qd[i]
                terms[k, t, 1] = lam_vel * (abs(vx - vref[0]) + abs(vy - vref[1]) + abs(vz - vref[2]))
            else:
                terms[k, t, 1] = 0.0
            # --- collision spheres
            ds_min = np.inf
            dd_min = np.inf
            for si in range(m):
                li = sph_link[si]
                loc = sph_local[si]
                cx = Rs[li, 0, 0] * loc[0] + Rs[li, 0, 1] * loc[1] + Rs[li, 0, 2] * loc[2] + ps[li, 0]
                cy = Rs[li, 1, 0] * loc[0] + Rs[li, 1, 1] * loc[1] + Rs[li, 1, 2] * loc[2] + ps[li, 1]
                cz = Rs[li, 2, 0] * loc[0] + Rs[li, 2, 1] * loc[1] + Rs[li, 2, 2] * loc[2] + ps[li, 2]
                centers[si, 0], centers[si, 1], centers[si, 2] = cx, cy, cz
                d = _set_sdf(cx, cy, cz, s_box_c, s_box_R, s_box_h, s_ball_c, s_ball_r) - sph_r[si]
                if d < ds_min:
                    ds_min = d
                d = _set_sdf(cx, cy, cz, d_box_c, d_box_R, d_box_h, d_ball_c, d_ball_r) - sph_r[si]
                if d < dd_min:
                    dd_min = d
            ts = phi_s * ds_min
            td = phi_d * dd_min
            if strict:
                env = min(ts, td)
            else:
                fs, fd = math.isfinite(ts), math.isfinite(td)
                if fs or fd:
                    env = (ts if fs else 0.0) + (td if fd else 0.0)
                else:
                    env = np.inf
            env -= eps_env
            self_min = np.inf
            for pi in range(pair_i.shape[0]):
                a_, b_ = pair_i[pi], pair_j[pi]
                dx = centers[a_, 0] - centers[b_, 0]
                dy = centers[a_, 1] - centers[b_, 1]
                dz = centers[a_, 2] - centers[b_, 2]
                d = math.sqrt(dx * dx + dy * dy + dz * dz) - sph_r[a_] - sph_r[b_]
                if d < self_min:
                    self_min = d
            self_c = self_min - eps_self
            v_env = max(-env, 0.0)
            v_self = max(-self_c, 0.0)
            terms[k, t, 2] = rho_env * v_env
            terms[k, t, 3] = rho_self * v_self
            worst[k, t] = max(v_env, v_self)
