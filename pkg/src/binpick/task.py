"""Task-level action machine and the resight policy.

Actions run one at a time: ``Wait`` for the bin, ``Observe`` it from a still
camera, ``Track`` the chosen suction pose, ``Surpass`` (move ahead of the bin to
get a better view), ``Approach`` the object while matching its velocity, and
``PickPlace`` (carry the object to the drop point).  Whether a fresh observation is trusted is
decided by three gates: enough points on the target, a candidate that did not
jump, and a good enough manipulability score.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from binpick.kinematics import Pose
from binpick.prediction import BinState
from binpick.selection import (DEFAULT_WEIGHTS, NoCandidates, SelectionContext,
                               SuctionCandidate, select_optimal, tendency_terms)


class Action(enum.Enum):
    WAIT = "Wait"
    OBSERVE = "Observe"
    TRACK = "Track"
    SURPASS = "Surpass"
    APPROACH = "Approach"
    PICKPLACE = "PickPlace"


MOTION_ACTIONS = frozenset({Action.TRACK, Action.SURPASS, Action.APPROACH, Action.PICKPLACE})


@dataclass(frozen=True)
class ResightParams:
    n_min: int = 1024
    eps_shift: float = 0.05
    m_min: float = 0.3
    sigma: float = 1.3

    def __post_init__(self):
        if min(self.n_min, self.eps_shift, self.m_min, self.sigma) <= 0:
            raise ValueError("resight parameters must be positive")


@dataclass
class Observation:
    candidates: list[SuctionCandidate]
    n_pcl: int
    bin_position: np.ndarray  # bin position estimate at capture time
    stamp: float              # delivery time
    capture: float            # time the scene was imaged

    def __post_init__(self):
        if self.n_pcl < 0:
            raise ValueError("point count must be non-negative")


@dataclass
class ResightResult:
    action: Action
    s_tar: Pose
    gates: tuple[bool, bool, bool]
    m: float


def gate_score(s_opt: SuctionCandidate, ee_pose: Pose, tam, weights, alpha_v: float,
               v_bin) -> float:
    """Weighted mean of the two normalised TAM terms used by the third gate."""
    w1, w2 = weights[0], weights[1]
    if w1 + w2 <= 0:
        return np.inf
    ctx = SelectionContext(ee_pose, v_bin=v_bin, weights=(w1, w2, 0.0, 0.0, 1.0),
                           alpha_v=alpha_v)
    t1, t2 = tendency_terms([s_opt], ctx, tam)[0]
    return float((w1 * t1 + w2 * t2) / (w1 + w2))


def surpass_target(s_prev: Pose, r: np.ndarray, sigma: float, standoff: float = 0.0) -> Pose:
    """Ahead of the previous target by ``(sigma + 1) * r``, raised by ``standoff``."""
    return s_prev.translated((sigma + 1.0) * np.asarray(r) + np.array([0.0, 0.0, standoff]))


def resight_decide(obs: Observation, s_opt: SuctionCandidate, s_prev: Pose | None,
                   r: np.ndarray, ee_pose: Pose, tam, params: ResightParams = ResightParams(),
                   *, weights=DEFAULT_WEIGHTS, alpha_v: float = 0.05, v_bin=np.zeros(3),
                   force_pass: bool = False, skip_tam_gate: bool = False,
                   standoff: float = 0.0) -> ResightResult:
    """Track ``s_opt + r`` if all gates pass, otherwise Surpass.

    A missing ``s_prev`` passes the shift gate and anchors the surpass target at
    ``s_opt`` instead.
    """
    r = np.asarray(r, dtype=float)
    g1 = obs.n_pcl > params.n_min
    if s_prev is None:
        g2 = True
    else:
        g2 = bool(np.linalg.norm(s_opt.pose.d - s_prev.d) < np.linalg.norm(r) + params.eps_shift)
    if skip_tam_gate or force_pass:
        m, g3 = float("nan"), True
    else:
        m = gate_score(s_opt, ee_pose, tam, weights, alpha_v, v_bin)
        g3 = m > params.m_min
    if force_pass or (g1 and g2 and g3):
        return ResightResult(Action.TRACK, s_opt.pose.translated(r), (g1, g2, g3), m)
    anchor = s_opt.pose if s_prev is None else s_prev
    return ResightResult(Action.SURPASS, surpass_target(anchor, r, params.sigma, standoff),
                         (g1, g2, g3), m)


# ---------------------------------------------------------------------------
# transitions


@dataclass
class Events:
    bin_entered: bool = False
    observed: Action | None = None  # outcome of a resight decision this tick
    near_target: bool = False
    arrived: bool = False
    contact: bool = False
    lifted: bool = False
    dropped: bool = False
    target_lost: bool = False


def transition(action: Action, ev: Events) -> Action:
    """Next action; simultaneous events resolve as contact > near_target > observed."""
    if action is Action.WAIT:
        return Action.OBSERVE if ev.bin_entered else action
    if action is Action.PICKPLACE:
        return Action.WAIT if ev.dropped else action
    if ev.contact and action is Action.APPROACH:
        return Action.PICKPLACE
    if ev.target_lost and action in (Action.TRACK, Action.APPROACH):
        return Action.SURPASS
    if ev.near_target and action is Action.TRACK:
        return Action.APPROACH
    if ev.observed is not None and action in (Action.OBSERVE, Action.TRACK):
        return ev.observed
    if ev.arrived and action is Action.SURPASS:
        return Action.OBSERVE
    return action


# ---------------------------------------------------------------------------
# the machine


@dataclass(frozen=True)
class TaskConfig:
    weights: tuple = DEFAULT_WEIGHTS
    alpha_v: float = 0.05
    resight: ResightParams = ResightParams()
    d_thr: float = 0.10
    approach_boost: float = 5.0
    lambda_pose: float = 10.0
    lambda_vel: float = 2.0
    surpass_standoff: float = 0.20
    arrive_tol: float = 0.03
    still_speed: float = 0.3       # rad/s, max joint speed to count as halted
    approach_timeout: float = 5.0
    lift_height: float = 0.03      # lift with the bin before carrying the object away
    drop_position: tuple = (0.20, 0.45, 0.30)  # picked objects are released here
    lookahead: float = 0.24        # horizon part of the prediction time (H*dt/2)
    hover_height: float = 0.08     # Track holds the tool this far out along the face normal
    approach_overshoot: float = 0.02  # the descent target ends this far inside the face
    align_tol: float = 0.01        # descent pauses while the tool is further off the face normal
    reframe_height: float = 0.40   # camera height over the bin when re-acquiring it
    reframe_lead: float = 1.0      # s of bin motion to lead the re-acquire viewpoint by
    # ablation switches
    force_resight_pass: bool = False
    skip_tam_gate: bool = False
    open_loop_approach: bool = False


@dataclass
class TaskInputs:
    t: float
    ee_pose: Pose
    qdot: np.ndarray
    bin: BinState
    observation: Observation | None = None
    bin_entered: bool = False
    contact: bool = False


@dataclass
class TaskOutput:
    action: Action
    s_tar: Pose | None
    move: bool
    planner_weights: dict = field(default_factory=dict)
    v_ref: np.ndarray = field(default_factory=lambda: np.zeros(3))  # velocity the tool should match


@dataclass
class Transition:
    stamp: float
    source: Action
    target: Action
    reason: str


class TaskMachine:
    """Single-threaded tick function holding the active action and targets."""

    def __init__(self, config: TaskConfig, tam):
        self.cfg = config
        self.tam = tam
        self.action = Action.WAIT
        self.s_opt: SuctionCandidate | None = None
        self.anchor: np.ndarray | None = None  # bin position estimate when s_opt was imaged
        # reference for the shift gate: a previous pick pose and the bin position it was seen at
        self.s_ref: Pose | None = None
        self.ref_anchor: np.ndarray | None = None
        self.fixed_target: Pose | None = None
        self.grip: Pose | None = None              # tool pose at contact
        self.grip_anchor: np.ndarray | None = None  # bin position at contact
        self.carrying = False
        self.frozen_disp: np.ndarray | None = None  # open-loop approach only
        self.h = 0.0         # current height of the descent target above the face
        self.h_stamp = 0.0   # time ``h`` was last advanced
        self.entered = 0.0
        self.log: list[Transition] = []
        self.decisions: list[ResightResult] = []

    # -- helpers
    def _go(self, t: float, target: Action, reason: str) -> None:
        if target is not self.action:
            self.log.append(Transition(t, self.action, target, reason))
            self.action = target
            self.entered = t

    @staticmethod
    def _bin_now(inp: TaskInputs) -> np.ndarray:
        return inp.bin.position + inp.bin.velocity * (inp.t - inp.bin.stamp)

    def _displacement_from(self, anchor: np.ndarray, inp: TaskInputs) -> np.ndarray:
        return self._bin_now(inp) - anchor + inp.bin.velocity * self.cfg.lookahead

    def displacement(self, inp: TaskInputs) -> np.ndarray:
        """Predicted bin displacement from the capture of ``s_opt`` to the command horizon."""
        return self._displacement_from(self.anchor, inp)

    def previous_target(self, bin_position) -> Pose | None:
        """The reference pick pose carried along with the bin to ``bin_position``."""
        if self.s_ref is None:
            return None
        return self.s_ref.translated(np.asarray(bin_position, dtype=float) - self.ref_anchor)

    def _weights(self, action: Action) -> dict:
        cfg = self.cfg
        if action is Action.APPROACH:
            if cfg.open_loop_approach:
                return {"lambda_pose": cfg.lambda_pose, "lambda_vel": 0.0}
            return {"lambda_pose": cfg.lambda_pose,
                    "lambda_vel": cfg.lambda_vel * cfg.approach_boost}
        if action in (Action.SURPASS, Action.PICKPLACE):
            # fixed targets: damp the tool toward rest instead of matching the bin
            return {"lambda_pose": cfg.lambda_pose, "lambda_vel": cfg.lambda_vel, "alpha_v": 0.0}
        return {"lambda_pose": cfg.lambda_pose, "lambda_vel": cfg.lambda_vel}

    def _decide(self, inp: TaskInputs) -> ResightResult | None:
        obs = inp.observation
        cfg = self.cfg
        anchor = np.asarray(obs.bin_position, dtype=float)
        s_prev = self.previous_target(anchor)
        ctx = SelectionContext(inp.ee_pose, s_prev=s_prev, v_bin=inp.bin.velocity,
                               weights=cfg.weights, alpha_v=cfg.alpha_v)
        try:
            s_opt = select_optimal(obs.candidates, ctx, self.tam)
        except NoCandidates:
            return None
        r = self._displacement_from(anchor, inp)
        res = resight_decide(obs, s_opt, s_prev, r, inp.ee_pose, self.tam, cfg.resight,
                             weights=cfg.weights, alpha_v=cfg.alpha_v, v_bin=inp.bin.velocity,
                             force_pass=cfg.force_resight_pass, skip_tam_gate=cfg.skip_tam_gate,
                             standoff=cfg.surpass_standoff)
        self.decisions.append(res)
        if res.action is Action.TRACK:
            self.s_opt = s_opt
            self.anchor = anchor
        if res.action is Action.TRACK or s_prev is None or not res.gates[1]:
            # a candidate that jumped becomes the reference the next look must confirm
            self.s_ref, self.ref_anchor = s_opt.pose, anchor
        return res

    def target(self, inp: TaskInputs) -> Pose | None:
        """Track hovers above the face; Approach lowers that hover point at ``alpha_v``."""
        cfg = self.cfg
        if self.action is Action.TRACK:
            out = -self.s_opt.pose.R[:, 2]
            return self.s_opt.pose.translated(self.displacement(inp) + cfg.hover_height * out)
        if self.action is Action.APPROACH:
            out = -self.s_opt.pose.R[:, 2]
            return self.s_opt.pose.translated(self._approach_disp(inp) + self.h * out)
        if self.action is Action.PICKPLACE and not self.carrying:
            moved = self._bin_now(inp) - self.grip_anchor
            return self.grip.translated(moved + np.array([0.0, 0.0, self.cfg.lift_height]))
        if self.action in (Action.SURPASS, Action.PICKPLACE):
            return self.fixed_target
        return None

    def _approach_disp(self, inp: TaskInputs) -> np.ndarray:
        return self.displacement(inp) if self.frozen_disp is None else self.frozen_disp

    def _descend(self, inp: TaskInputs) -> None:
        """Lower the descent target at ``alpha_v`` while the tool is over the face point."""
        cfg = self.cfg
        out = -self.s_opt.pose.R[:, 2]
        off = inp.ee_pose.d - (self.s_opt.pose.d + self._approach_disp(inp))
        lateral = np.linalg.norm(off - (off @ out) * out)
        if lateral < cfg.align_tol:
            self.h = max(self.h - cfg.alpha_v * (inp.t - self.h_stamp), -cfg.approach_overshoot)
        self.h_stamp = inp.t

    def _still(self, inp: TaskInputs) -> bool:
        return float(np.max(np.abs(inp.qdot))) < self.cfg.still_speed

    # -- main entry
    def tick(self, inp: TaskInputs) -> TaskOutput:
        cfg = self.cfg
        a = self.action
        if a is Action.WAIT:
            if inp.bin_entered:
                self._go(inp.t, Action.OBSERVE, "bin-entered")
        elif a is Action.OBSERVE:
            obs = inp.observation
            if obs is not None and obs.capture >= self.entered:
                res = self._decide(inp)
                if res is not None:
                    self._enter_decision(inp, res, "resight")
                else:
                    self._enter_reframe(inp)
        elif a is Action.TRACK:
            if inp.observation is not None:
                res = self._decide(inp)
                if res is None:
                    self._enter_surpass(inp, "target-lost")
                elif res.action is Action.SURPASS:
                    self._enter_decision(inp, res, "resight")
            if self.action is Action.TRACK:
                face = self.s_opt.pose.d + self.displacement(inp)
                if np.linalg.norm(inp.ee_pose.d - face) < cfg.d_thr:
                    self._enter_approach(inp)
        elif a is Action.SURPASS:
            tgt = self.fixed_target
            if np.linalg.norm(inp.ee_pose.d - tgt.d) < cfg.arrive_tol and self._still(inp):
                self._go(inp.t, Action.OBSERVE, "arrived")
        elif a is Action.APPROACH:
            if inp.contact:
                self.grip, self.grip_anchor = inp.ee_pose, self._bin_now(inp)
                self.carrying = False
                drop = np.asarray(cfg.drop_position, dtype=float)
                self.fixed_target = Pose(inp.ee_pose.R, drop)
                self._go(inp.t, Action.PICKPLACE, "contact")
            elif inp.t - self.entered > cfg.approach_timeout:
                self._enter_surpass(inp, "approach-timeout")
            else:
                self._descend(inp)
        elif a is Action.PICKPLACE:
            if not self.carrying:
                self.carrying = inp.ee_pose.d[2] >= self.grip.d[2] + cfg.lift_height - 0.01
            elif np.linalg.norm(inp.ee_pose.d - self.fixed_target.d) < cfg.arrive_tol:
                self._go(inp.t, Action.WAIT, "dropped")
        move = self.action in MOTION_ACTIONS
        halt = self.action is Action.SURPASS or (self.action is Action.PICKPLACE and self.carrying)
        v_ref = np.zeros(3) if halt else np.asarray(inp.bin.velocity, dtype=float)
        return TaskOutput(self.action, self.target(inp) if move else None, move,
                          self._weights(self.action), v_ref)

    def _enter_decision(self, inp: TaskInputs, res: ResightResult, reason: str) -> None:
        if res.action is Action.SURPASS:
            self.fixed_target = res.s_tar
            gates = "".join("1" if g else "0" for g in res.gates)
            self._go(inp.t, Action.SURPASS, f"{reason}:gates={gates}")
        else:
            self.fixed_target = None
            self._go(inp.t, Action.TRACK, reason)

    def _enter_surpass(self, inp: TaskInputs, reason: str) -> None:
        base = self.previous_target(self._bin_now(inp))
        base = inp.ee_pose if base is None else base
        r = inp.bin.velocity * self.cfg.lookahead
        self.fixed_target = surpass_target(base, r, self.cfg.resight.sigma,
                                           self.cfg.surpass_standoff)
        self._go(inp.t, Action.SURPASS, reason)

    def _enter_reframe(self, inp: TaskInputs) -> None:
        """Nothing pickable in view: move the camera over the predicted bin centre."""
        cfg = self.cfg
        lead = inp.bin.velocity * (inp.t - inp.bin.stamp + cfg.reframe_lead)
        centre = inp.bin.position + lead + np.array([0.0, 0.0, cfg.reframe_height])
        self.fixed_target = Pose(np.diag([1.0, -1.0, -1.0]), centre)
        self._go(inp.t, Action.SURPASS, "no-candidates")

    def _enter_approach(self, inp: TaskInputs) -> None:
        cfg = self.cfg
        self.fixed_target = None
        self.frozen_disp = None
        disp = self.displacement(inp)
        face = self.s_opt.pose.d + disp
        out = -self.s_opt.pose.R[:, 2]
        self.h = float(np.clip((inp.ee_pose.d - face) @ out, 0.0, cfg.hover_height))
        self.h_stamp = inp.t
        if cfg.open_loop_approach:
            # freeze the target where the object is predicted to be on arrival
            eta = self.h / max(cfg.alpha_v, 1e-3)
            self.frozen_disp = disp + inp.bin.velocity * eta
        self._go(inp.t, Action.APPROACH, "near-target")


def approach_command(config: TaskConfig) -> dict:
    """Planner weight overrides used while approaching."""
    return TaskMachine(config, None)._weights(Action.APPROACH)
