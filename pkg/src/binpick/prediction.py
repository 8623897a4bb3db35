"""Constant-velocity Kalman tracking of the bin and target advancement."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from binpick.kinematics import Pose


@dataclass
class BinState:
    """Snapshot handed to readers: estimated position, velocity and covariance."""

    position: np.ndarray
    velocity: np.ndarray
    covariance: np.ndarray
    stamp: float


@dataclass
class BinTrack:
    """State ``[px, py, pz, vx, vy, vz]`` with a white-noise-acceleration model.

    ``sigma_q`` is the acceleration noise density (m/s^2/sqrt(Hz)), ``sigma_r``
    the position measurement noise (m).  ``max_speed`` clamps the velocity
    estimate as a sanity bound.
    """

    sigma_q: float = 0.01
    sigma_r: float = 0.003
    max_speed: float = 0.2
    state: np.ndarray = field(default_factory=lambda: np.zeros(6))
    covariance: np.ndarray = field(default_factory=lambda: np.diag([1.0] * 3 + [0.25] * 3))
    stamp: float | None = None

    @property
    def initialized(self) -> bool:
        return self.stamp is not None

    def snapshot(self) -> BinState:
        return BinState(self.state[:3].copy(), self.state[3:].copy(), self.covariance.copy(),
                        -np.inf if self.stamp is None else self.stamp)

    def position_at(self, t: float) -> np.ndarray:
        if self.stamp is None:
            return self.state[:3].copy()
        return self.state[:3] + self.state[3:] * (t - self.stamp)


def transition(dt: float) -> np.ndarray:
    F = np.eye(6)
    F[:3, 3:] = dt * np.eye(3)
    return F


def process_noise(dt: float, sigma_q: float) -> np.ndarray:
    q = sigma_q ** 2
    Q = np.zeros((6, 6))
    Q[:3, :3] = q * dt ** 3 / 3.0 * np.eye(3)
    Q[:3, 3:] = Q[3:, :3] = q * dt ** 2 / 2.0 * np.eye(3)
    Q[3:, 3:] = q * dt * np.eye(3)
    return Q


_H = np.hstack([np.eye(3), np.zeros((3, 3))])


def kf_predict(track: BinTrack, dt: float) -> None:
    if not dt > 0:
        raise ValueError("prediction step must be positive")
    F = transition(dt)
    track.state = F @ track.state
    P = F @ track.covariance @ F.T + process_noise(dt, track.sigma_q)
    track.covariance = 0.5 * (P + P.T)
    if track.stamp is not None:
        track.stamp += dt


def kf_update(track: BinTrack, measurement: np.ndarray, stamp: float) -> BinState:
    """Fuse a bin position measurement taken at ``stamp``."""
    z = np.asarray(measurement, dtype=float).reshape(3)
    if track.stamp is None:
        track.state = np.concatenate([z, np.zeros(3)])
        track.covariance = np.diag([track.sigma_r ** 2] * 3 + [0.25] * 3)
        track.stamp = stamp
        return track.snapshot()
    if stamp < track.stamp:
        raise ValueError(f"out-of-order measurement: {stamp} < {track.stamp}")
    if stamp > track.stamp:
        kf_predict(track, stamp - track.stamp)
    track.stamp = stamp
    P = track.covariance
    S = _H @ P @ _H.T + track.sigma_r ** 2 * np.eye(3)
    K = np.linalg.solve(S, _H @ P).T
    track.state = track.state + K @ (z - _H @ track.state)
    I_KH = np.eye(6) - K @ _H
    P = I_KH @ P @ I_KH.T + track.sigma_r ** 2 * K @ K.T
    track.covariance = 0.5 * (P + P.T)
    speed = np.linalg.norm(track.state[3:])
    if speed > track.max_speed:
        track.state[3:] *= track.max_speed / speed
    return track.snapshot()


def predict_displacement(track: BinTrack, horizon_dt: float) -> np.ndarray:
    """Displacement of the bin over ``horizon_dt`` under the current velocity estimate."""
    return track.state[3:] * horizon_dt


def advance_target(s_opt: Pose, r: np.ndarray) -> Pose:
    """Shift a suction pose by the predicted displacement; rotation is kept."""
    return s_opt.translated(r)
