"""Deterministic multi-rate trial loop, stack variants and the sense-plan-act baseline.

The control loop ticks at the control rate.  Environment frames (bin position)
and object frames (suction candidates, delivered ``latency`` late) are
processed as their timestamps are reached.  The planner only ever sees the
Kalman estimate of the bin and the delayed candidates; ground truth is used
for collision, contact and success checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from binpick.kinematics import (HOME_Q, JointState, KinematicChain, Pose, default_chain,
                                ee_velocity, fk, ik)
from binpick.mlp import MlpModel, default_model
from binpick.planner import MppiPlanner, PlannerConfig
from binpick.prediction import BinTrack, kf_update
from binpick.selection import (NetworkTam, NoCandidates, SelectionContext, select_optimal)
from binpick.sim.checks import (SuccessThresholds, check_collision, check_success,
                                detect_contact)
from binpick.sim.perception import camera_pose, measure_bin, view_candidates
from binpick.sim.scenario import Scenario
from binpick.sim.scene import SceneState
from binpick.task import (Action, Observation, TaskConfig, TaskInputs, TaskMachine)
from binpick.textfmt import fmt
from binpick.world import BinModel, SdfWorld

VARIANTS = ("full", "spa", "no-vm", "no-rs", "no-do", "no-tam")

# Lighter than the planner defaults so that a trial costs a few seconds of CPU.
SIM_PLANNER = PlannerConfig(horizon=24, samples=64, noise_std=0.25, alpha_rot=2.0,
                            wide_fraction=0.25, wide_scale=8.0, guide_gain=3.0)

OBSERVE_TIP = np.array([0.5, -0.25, 0.45])


def observe_pose() -> Pose:
    return Pose(np.diag([1.0, -1.0, -1.0]), OBSERVE_TIP)


def observe_q(chain: KinematicChain) -> np.ndarray:
    """Joint configuration holding the tool above the conveyor, looking down."""
    seed = HOME_Q.copy() if chain.n == len(HOME_Q) else np.zeros(chain.n)
    q = ik(chain, observe_pose(), chain.clip(seed))
    if q is None:
        raise RuntimeError("observation pose is unreachable for this chain")
    return q


@dataclass
class StackConfig:
    variant: str = "full"
    planner: PlannerConfig = SIM_PLANNER
    task: TaskConfig = field(default_factory=TaskConfig)
    success: SuccessThresholds = field(default_factory=SuccessThresholds)
    dynamic_obstacles: bool = True
    spa_plan_ticks: int = 400
    spa_overshoot: float = 0.01

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")

    @classmethod
    def for_variant(cls, variant: str, base: StackConfig | None = None) -> StackConfig:
        base = cls() if base is None else base
        task = base.task
        kw: dict = {"variant": variant}
        if variant == "no-vm":
            kw["task"] = replace(task, lambda_vel=0.0, open_loop_approach=True)
        elif variant == "no-rs":
            kw["task"] = replace(task, force_resight_pass=True)
        elif variant == "no-do":
            kw["dynamic_obstacles"] = False
        elif variant == "no-tam":
            w = task.weights
            kw["task"] = replace(task, weights=(0.0, 0.0, *w[2:]), skip_tam_gate=True)
        return replace(base, **kw)


@dataclass
class TrialResult:
    success: bool
    total_time: float
    collision: bool
    reason: str
    trace: list[str]
    scenario: str = ""
    variant: str = "full"
    seed: int = 0
    trial_index: int = 0

    def trace_text(self) -> str:
        return "\n".join(self.trace) + "\n"


class Tracer:
    def __init__(self):
        self.lines: list[str] = []

    def emit(self, stamp: float, kind: str, **kv) -> None:
        parts = [fmt(stamp), kind]
        for k, v in kv.items():
            if isinstance(v, (np.ndarray, list, tuple)):
                v = ",".join(fmt(x) for x in np.ravel(v))
            elif isinstance(v, (float, np.floating)):
                v = fmt(v)
            elif isinstance(v, (bool, np.bool_)):
                v = int(v)
            parts.append(f"{k}={v}")
        self.lines.append(" ".join(parts))


def trial_rngs(seed: int, trial_index: int) -> list[np.random.Generator]:
    """Independent streams for scene, perception, bin sensing and planning."""
    children = np.random.SeedSequence([int(seed), int(trial_index)]).spawn(4)
    return [np.random.default_rng(c) for c in children]


class _Sensors:
    """Cameras and the bin tracker shared by the closed-loop and open-loop runners."""

    def __init__(self, scenario: Scenario, chain: KinematicChain, scene: SceneState,
                 perc_rng, env_rng):
        self.sc = scenario
        self.cfg = scenario.perception
        self.chain = chain
        self.scene = scene
        self.perc_rng = perc_rng
        self.env_rng = env_rng
        self.track = BinTrack(sigma_q=self.cfg.track_sigma_q,
                              sigma_r=max(self.cfg.bin_noise, 1e-4),
                              max_speed=2.0 * max(scenario.motion.max_speed, 0.05))
        self.env_next = 0
        self.obj_next = 0
        self.q_hist: list[np.ndarray] = []

    def tick(self, k: int, t: float, q: np.ndarray) -> Observation | None:
        self.q_hist.append(q)
        cfg = self.cfg
        while self.env_next / cfg.env_rate <= t + 1e-12:
            tj = self.env_next / cfg.env_rate
            kf_update(self.track, measure_bin(self.scene, tj, cfg, self.env_rng), tj)
            self.env_next += 1
        obs = None
        dt = 1.0 / cfg.control_rate
        while self.obj_next / cfg.object_rate + cfg.latency <= t + 1e-12:
            tc = self.obj_next / cfg.object_rate
            self.obj_next += 1
            kc = min(int(math.floor(tc / dt + 1e-9)), len(self.q_hist) - 1)
            cam = camera_pose(fk(self.chain, self.q_hist[kc]), cfg.camera_offset)
            cands, n_pcl = view_candidates(self.scene.copy_at(tc), cam, cfg, self.perc_rng)
            obs = Observation(cands, n_pcl, self.track.position_at(tc), t, tc)
        return obs

    def bin_entered(self) -> bool:
        return (self.track.initialized
                and self.sc.axis_coordinate(self.track.state[:3]) >= self.sc.region[0])


def _worlds(scenario: Scenario, with_dynamic: bool):
    gt = SdfWorld(scenario.static_obstacles, BinModel(scenario.bin_size, scenario.wall))
    est = SdfWorld(scenario.static_obstacles,
                   BinModel(scenario.bin_size, scenario.wall) if with_dynamic else None)
    return gt, est


def _finish(tr: Tracer, t: float, success: bool, reason: str, collision: bool,
            t_start: float | None, **meta) -> TrialResult:
    total = (t - t_start) if (success and t_start is not None) else float("nan")
    tr.emit(t, "result", success=success, reason=reason, collision=collision, tt=total)
    return TrialResult(success, total, collision, reason, tr.lines, **meta)


def run_trial(scenario: Scenario, stack: StackConfig | None = None, seed: int = 0,
              trial_index: int = 0, *, chain: KinematicChain | None = None,
              model: MlpModel | None = None) -> TrialResult:
    """One picking trial; deterministic in ``(scenario, stack, seed, trial_index)``."""
    stack = StackConfig() if stack is None else stack
    if stack.variant == "spa":
        return run_spa(scenario, stack, seed, trial_index, chain=chain, model=model)
    chain = default_chain() if chain is None else chain
    model = default_model() if model is None else model
    scene_rng, perc_rng, env_rng, plan_rng = trial_rngs(seed, trial_index)
    scene = scenario.build_scene(scene_rng)
    sensors = _Sensors(scenario, chain, scene, perc_rng, env_rng)
    gt_world, est_world = _worlds(scenario, stack.dynamic_obstacles)
    planner = MppiPlanner(chain, stack.planner, plan_rng)
    machine = TaskMachine(stack.task, NetworkTam(model))
    meta = dict(scenario=scenario.name, variant=stack.variant, seed=seed,
                trial_index=trial_index)
    tr = Tracer()
    dt = 1.0 / scenario.perception.control_rate
    state = JointState.at_rest(observe_q(chain))
    n_ticks = int(math.ceil(scenario.timeout / dt))
    t_start: float | None = None
    logged = 0
    for k in range(n_ticks + 1):
        t = k * dt
        scene.set_clock(t)
        gt_world.update_dynamic(scene.bin_pose)
        if check_collision(chain, state.q, gt_world):
            tr.emit(t, "collision", action=machine.action.value, q=state.q)
            return _finish(tr, t, False, "collision", True, t_start, **meta)
        if scenario.axis_coordinate(scene.bin_pose.d) > scenario.region[1]:
            return _finish(tr, t, False, "bin-left", False, t_start, **meta)
        obs = sensors.tick(k, t, state.q)
        bin_state = sensors.track.snapshot()
        if est_world.bin is not None and sensors.track.initialized:
            est_world.update_dynamic(Pose(np.eye(3), sensors.track.position_at(t)))
        ee = fk(chain, state.q)
        contact = False
        if machine.action in (Action.TRACK, Action.APPROACH, Action.SURPASS):
            hit = detect_contact(scene, ee.d)
            if hit is not None:
                obj = scene.object(hit.object_id)
                v_ee = ee_velocity(chain, state.q, state.qdot).linear
                tr.emit(t, "contact", object=hit.object_id, action=machine.action.value,
                        v=v_ee, uv=hit.local_uv)
                if machine.action is not Action.APPROACH:
                    return _finish(tr, t, False, f"unplanned-contact-{machine.action.value}",
                                   False, t_start, **meta)
                ok, why = check_success(ee, v_ee, obj, hit, scene.bin_velocity,
                                        scene.object_pose(obj), stack.success)
                if not ok:
                    return _finish(tr, t, False, why, False, t_start, **meta)
                scene.picked.add(obj.object_id)
                scene.held = obj.object_id
                contact = True
        out = machine.tick(TaskInputs(t, ee, state.qdot, bin_state, obs,
                                      sensors.bin_entered(), contact))
        for rec in machine.log[logged:]:
            tr.emit(rec.stamp, "action", src=rec.source.value, dst=rec.target.value,
                    reason=rec.reason)
        logged = len(machine.log)
        if t_start is None and machine.action is not Action.WAIT:
            t_start = t
        if machine.log and machine.log[-1].reason == "dropped":
            return _finish(tr, t, True, "picked", False, t_start, **meta)
        if out.move:
            traj = planner.solve(state, out.s_tar, out.v_ref, est_world,
                                 **out.planner_weights)
            cmd = planner.step(traj)
            tr.emit(t, "plan", cost=traj.total, stuck=traj.stuck)
        else:
            planner.reset()
            cmd = JointState(state.q.copy(), np.zeros(chain.n), -state.qdot / dt, t + dt)
        tr.emit(t, "state", action=machine.action.value, q=cmd.q)
        state = cmd
    return _finish(tr, n_ticks * dt, False, "timeout", False, t_start, **meta)


# ---------------------------------------------------------------------------
# sense-plan-act


def run_spa(scenario: Scenario, stack: StackConfig | None = None, seed: int = 0,
            trial_index: int = 0, *, chain: KinematicChain | None = None,
            model: MlpModel | None = None) -> TrialResult:
    """Observe once, plan against the frozen scene, then execute open loop.

    The plan is produced by running the same MPPI planner to convergence on a
    virtual copy of the arm, first to the chosen suction pose and then slightly
    past it to guarantee contact in the static world.
    """
    stack = StackConfig(variant="spa") if stack is None else stack
    chain = default_chain() if chain is None else chain
    model = default_model() if model is None else model
    scene_rng, perc_rng, env_rng, plan_rng = trial_rngs(seed, trial_index)
    scene = scenario.build_scene(scene_rng)
    sensors = _Sensors(scenario, chain, scene, perc_rng, env_rng)
    gt_world, frozen = _worlds(scenario, True)
    meta = dict(scenario=scenario.name, variant="spa", seed=seed, trial_index=trial_index)
    tr = Tracer()
    dt = 1.0 / scenario.perception.control_rate
    state = JointState.at_rest(observe_q(chain))
    n_ticks = int(math.ceil(scenario.timeout / dt))
    plan: list[JointState] | None = None
    t_start: float | None = None
    step_i = 0
    tam = NetworkTam(model)
    for k in range(n_ticks + 1):
        t = k * dt
        scene.set_clock(t)
        gt_world.update_dynamic(scene.bin_pose)
        if check_collision(chain, state.q, gt_world):
            tr.emit(t, "collision", action="Execute", q=state.q)
            return _finish(tr, t, False, "collision", True, t_start, **meta)
        if scenario.axis_coordinate(scene.bin_pose.d) > scenario.region[1]:
            return _finish(tr, t, False, "missed" if plan else "bin-left", False, t_start,
                           **meta)
        obs = sensors.tick(k, t, state.q)
        if plan is None:
            if t_start is None and sensors.bin_entered():
                t_start = t
                tr.emit(t, "action", src="Wait", dst="Observe", reason="bin-entered")
            if t_start is not None and obs is not None and obs.capture >= t_start:
                ee = fk(chain, state.q)
                ctx = SelectionContext(ee, weights=stack.task.weights,
                                       alpha_v=stack.task.alpha_v)
                try:
                    s_opt = select_optimal(obs.candidates, ctx, tam)
                except NoCandidates:
                    s_opt = None
                if s_opt is not None:
                    frozen.update_dynamic(Pose(np.eye(3), obs.bin_position))
                    plan = _spa_plan(chain, state, s_opt.pose, frozen, stack, plan_rng)
                    tr.emit(t, "action", src="Observe", dst="Execute", reason="planned")
                    tr.emit(t, "plan", steps=len(plan), target=s_opt.pose.d)
        else:
            ee = fk(chain, state.q)
            hit = detect_contact(scene, ee.d)
            if hit is not None:
                obj = scene.object(hit.object_id)
                v_ee = ee_velocity(chain, state.q, state.qdot).linear
                tr.emit(t, "contact", object=hit.object_id, action="Execute", v=v_ee,
                        uv=hit.local_uv)
                ok, why = check_success(ee, v_ee, obj, hit, scene.bin_velocity,
                                        scene.object_pose(obj), stack.success)
                # a sealed cup is lifted off in one more planned motion; count it as picked
                return _finish(tr, t, ok, "picked" if ok else why, False, t_start, **meta)
        if plan is not None and step_i < len(plan):
            cmd = plan[step_i]
            step_i += 1
        else:
            # before planning, and after the plan ran out, the arm holds still
            cmd = JointState(state.q.copy(), np.zeros(chain.n), -state.qdot / dt, t + dt)
        tr.emit(t, "state", action="Execute" if plan is not None else "Observe", q=cmd.q)
        state = JointState(cmd.q, cmd.qdot, cmd.qddot, t + dt)
    return _finish(tr, n_ticks * dt, False, "timeout", False, t_start, **meta)


def _spa_plan(chain, state: JointState, target: Pose, world: SdfWorld, stack: StackConfig,
              rng) -> list[JointState]:
    """Virtual closed-loop run on a frozen world; returns the command sequence."""
    planner = MppiPlanner(chain, stack.planner, rng)
    cfg = stack.task
    # the scene is static, so both legs converge on pose alone
    above = target.translated([0.0, 0.0, cfg.d_thr])
    below = target.translated([0.0, 0.0, -stack.spa_overshoot])
    cmds: list[JointState] = []
    s = state
    phase_target, weights = above, {"lambda_vel": 0.0}
    zero = np.zeros(3)
    for _ in range(stack.spa_plan_ticks):
        traj = planner.solve(s, phase_target, zero, world, **weights)
        s = planner.step(traj)
        cmds.append(s)
        tip = fk(chain, s.q).d
        if phase_target is above and np.linalg.norm(tip - above.d) < 0.01:
            phase_target = below
        elif phase_target is below and tip[2] <= below.d[2] + 0.002:
            break
    return cmds


def run_baseline(kind: str, scenario: Scenario, seed: int = 0, trial_index: int = 0,
                 base: StackConfig | None = None, **kw) -> TrialResult:
    """Run a variant of the stack by name (``spa``, ``no-vm``, ``no-rs``, ``no-do``, ``no-tam``)."""
    if kind not in VARIANTS or kind == "full":
        raise ValueError(f"unknown baseline {kind!r}")
    return run_trial(scenario, StackConfig.for_variant(kind, base), seed, trial_index, **kw)
