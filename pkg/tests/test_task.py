from __future__ import annotations

import numpy as np
import pytest

from binpick.kinematics import Pose
from binpick.prediction import BinState
from binpick.selection import SuctionCandidate, candidate_rotation
from binpick.task import (Action, Events, Observation, ResightParams, TaskConfig, TaskInputs,
                          TaskMachine, approach_command, resight_decide, surpass_target,
                          transition)

DOWN = np.diag([1.0, -1.0, -1.0])


class ConstTam:
    """Every query returns the same raw score."""

    def __init__(self, value):
        self.value = value

    def __call__(self, poses, dirs):
        return np.full(len(poses), self.value)


def cand(x, y, z, U=0.8, idx=0):
    return SuctionCandidate(Pose(candidate_rotation(0.0), [x, y, z]), U, 0, idx)


def obs(cands, n=4096, bin_pos=(0.5, 0.0, 0.0), stamp=0.0, capture=0.0):
    return Observation(cands, n, np.array(bin_pos, dtype=float), stamp, capture)


def bin_state(pos=(0.5, 0.0, 0.0), vel=(0.0, 0.0, 0.0), stamp=0.0):
    return BinState(np.array(pos, float), np.array(vel, float), np.eye(6) * 1e-4, stamp)


EE = Pose(DOWN, [0.5, 0.0, 0.4])
R0 = np.array([0.0, 0.06, 0.0])


# resight gates


def test_all_gates_pass_tracks_displaced_pose():
    s = cand(0.5, 0.0, 0.1)
    res = resight_decide(obs([s]), s, s.pose, R0, EE, ConstTam(1.0))
    assert res.action is Action.TRACK and res.gates == (True, True, True)
    np.testing.assert_allclose(res.s_tar.d, s.pose.d + R0)


def test_point_count_gate_is_strict():
    s = cand(0.5, 0.0, 0.1)
    p = ResightParams()
    assert resight_decide(obs([s], n=p.n_min), s, s.pose, R0, EE, ConstTam(1.0)).gates[0] is False
    assert resight_decide(obs([s], n=p.n_min + 1), s, s.pose, R0, EE, ConstTam(1.0)).gates[0]


def test_shift_gate_threshold():
    s = cand(0.5, 0.0, 0.1)
    p = ResightParams()
    limit = np.linalg.norm(R0) + p.eps_shift
    near = s.pose.translated([limit - 1e-3, 0, 0])
    far = s.pose.translated([limit + 1e-3, 0, 0])
    assert resight_decide(obs([s]), s, near, R0, EE, ConstTam(1.0)).gates[1]
    assert not resight_decide(obs([s]), s, far, R0, EE, ConstTam(1.0)).gates[1]


def test_first_observation_passes_shift_gate():
    s = cand(0.5, 0.0, 0.1)
    assert resight_decide(obs([s]), s, None, R0, EE, ConstTam(1.0)).gates[1]


def test_low_manipulability_surpasses():
    s = cand(0.5, 0.0, 0.1)
    # the score is normalised by the reference, so a raw value of 0 maps to 0
    res = resight_decide(obs([s]), s, s.pose, R0, EE, ConstTam(0.0))
    assert res.gates == (True, True, False) and res.action is Action.SURPASS
    sig = ResightParams().sigma
    np.testing.assert_allclose(res.s_tar.d, s.pose.d + (sig + 1) * R0)


def test_failed_gate_surpasses_from_previous_target():
    s = cand(0.5, 0.0, 0.1)
    prev = s.pose.translated([0.3, 0.0, 0.0])
    res = resight_decide(obs([s]), s, prev, R0, EE, ConstTam(1.0), standoff=0.2)
    assert res.action is Action.SURPASS
    np.testing.assert_allclose(res.s_tar.d, prev.d + 2.3 * R0 + [0, 0, 0.2])


def test_forced_pass_and_skipped_tam_gate():
    s = cand(0.5, 0.0, 0.1)
    res = resight_decide(obs([s], n=10), s, s.pose, R0, EE, ConstTam(0.0), force_pass=True)
    assert res.action is Action.TRACK
    res = resight_decide(obs([s]), s, s.pose, R0, EE, ConstTam(0.0), skip_tam_gate=True)
    assert res.action is Action.TRACK and np.isnan(res.m)


def test_surpass_target_formula():
    p = Pose(DOWN, [1.0, 2.0, 3.0])
    np.testing.assert_allclose(surpass_target(p, [0.1, 0, 0], 1.3).d, [1.23, 2.0, 3.0])


def test_resight_params_validation():
    with pytest.raises(ValueError):
        ResightParams(n_min=0)


# transitions


@pytest.mark.parametrize("action,events,expected", [
    (Action.WAIT, Events(), Action.WAIT),
    (Action.WAIT, Events(bin_entered=True), Action.OBSERVE),
    (Action.OBSERVE, Events(observed=Action.TRACK), Action.TRACK),
    (Action.OBSERVE, Events(observed=Action.SURPASS), Action.SURPASS),
    (Action.TRACK, Events(near_target=True), Action.APPROACH),
    (Action.TRACK, Events(observed=Action.SURPASS), Action.SURPASS),
    (Action.TRACK, Events(target_lost=True), Action.SURPASS),
    (Action.SURPASS, Events(arrived=True), Action.OBSERVE),
    (Action.SURPASS, Events(observed=Action.TRACK), Action.SURPASS),
    (Action.APPROACH, Events(contact=True), Action.PICKPLACE),
    (Action.APPROACH, Events(contact=True, target_lost=True), Action.PICKPLACE),
    (Action.TRACK, Events(near_target=True, observed=Action.SURPASS), Action.APPROACH),
    (Action.PICKPLACE, Events(contact=True), Action.PICKPLACE),
    (Action.PICKPLACE, Events(dropped=True), Action.WAIT),
])
def test_transition_table(action, events, expected):
    assert transition(action, events) is expected


# the machine


def inputs(t, ee=EE, observation=None, bin_entered=False, contact=False, qdot=None,
           bstate=None):
    return TaskInputs(t, ee, np.zeros(7) if qdot is None else qdot,
                      bstate or bin_state(), observation, bin_entered, contact)


def test_machine_runs_a_pick_cycle():
    cfg = TaskConfig(lookahead=0.0)
    m = TaskMachine(cfg, ConstTam(1.0))
    out = m.tick(inputs(0.0))
    assert out.action is Action.WAIT and not out.move
    assert m.tick(inputs(0.1, bin_entered=True)).action is Action.OBSERVE
    s = cand(0.5, 0.0, 0.1)
    out = m.tick(inputs(0.2, observation=obs([s], capture=0.15)))
    assert out.action is Action.TRACK and out.move
    np.testing.assert_allclose(out.s_tar.d, s.pose.d + [0, 0, cfg.hover_height])
    near = Pose(DOWN, s.pose.d + [0, 0, 0.05])
    out = m.tick(inputs(0.3, ee=near))
    assert out.action is Action.APPROACH
    assert out.planner_weights["lambda_vel"] == cfg.lambda_vel * cfg.approach_boost
    out = m.tick(inputs(0.4, ee=Pose(DOWN, s.pose.d), contact=True))
    assert out.action is Action.PICKPLACE
    np.testing.assert_allclose(out.s_tar.d, s.pose.d + [0, 0, cfg.lift_height])
    out = m.tick(inputs(0.5, ee=Pose(DOWN, s.pose.d + [0, 0, cfg.lift_height])))
    np.testing.assert_allclose(out.s_tar.d, cfg.drop_position)
    out = m.tick(inputs(0.6, ee=Pose(DOWN, cfg.drop_position)))
    assert out.action is Action.WAIT
    assert [tr.target for tr in m.log] == [Action.OBSERVE, Action.TRACK, Action.APPROACH,
                                          Action.PICKPLACE, Action.WAIT]


def test_observation_before_entry_is_ignored():
    m = TaskMachine(TaskConfig(), ConstTam(1.0))
    m.tick(inputs(1.0, bin_entered=True))
    out = m.tick(inputs(1.1, observation=obs([cand(0.5, 0, 0.1)], capture=0.9)))
    assert out.action is Action.OBSERVE


def test_empty_observation_reframes_over_bin():
    cfg = TaskConfig()
    m = TaskMachine(cfg, ConstTam(1.0))
    m.tick(inputs(0.0, bin_entered=True))
    b = bin_state(vel=(0, 0.06, 0))
    out = m.tick(inputs(0.5, observation=obs([], capture=0.1), bstate=b))
    assert out.action is Action.SURPASS
    np.testing.assert_allclose(out.s_tar.d, [0.5, 0.06 * (0.5 + cfg.reframe_lead),
                                             cfg.reframe_height])


def test_surpass_arrives_only_when_halted():
    m = TaskMachine(TaskConfig(), ConstTam(0.0))
    m.tick(inputs(0.0, bin_entered=True))
    out = m.tick(inputs(0.1, observation=obs([cand(0.5, 0, 0.1)], capture=0.05)))
    assert out.action is Action.SURPASS
    tgt = Pose(DOWN, out.s_tar.d)
    assert m.tick(inputs(0.2, ee=tgt, qdot=np.full(7, 1.0))).action is Action.SURPASS
    assert m.tick(inputs(0.3, ee=tgt)).action is Action.OBSERVE


def test_approach_timeout_surpasses():
    cfg = TaskConfig(approach_timeout=1.0, lookahead=0.0)
    m = TaskMachine(cfg, ConstTam(1.0))
    m.tick(inputs(0.0, bin_entered=True))
    s = cand(0.5, 0, 0.1)
    m.tick(inputs(0.1, observation=obs([s], capture=0.05)))
    m.tick(inputs(0.2, ee=Pose(DOWN, s.pose.d + [0, 0, 0.05])))
    assert m.action is Action.APPROACH
    assert m.tick(inputs(1.0)).action is Action.APPROACH
    out = m.tick(inputs(1.3))
    assert out.action is Action.SURPASS and m.log[-1].reason == "approach-timeout"


def test_track_follows_predicted_displacement():
    cfg = TaskConfig()
    m = TaskMachine(cfg, ConstTam(1.0))
    m.tick(inputs(0.0, bin_entered=True))
    s = cand(0.5, 0, 0.1)
    v = np.array([0.0, 0.06, 0.0])
    m.tick(inputs(0.1, observation=obs([s], capture=0.05), bstate=bin_state(vel=v)))
    out = m.tick(inputs(1.1, bstate=bin_state(vel=v)))
    expect = s.pose.d + v * (1.1 + cfg.lookahead) + [0, 0, cfg.hover_height]
    np.testing.assert_allclose(out.s_tar.d, expect)
    np.testing.assert_allclose(out.v_ref, v)


def test_jumped_candidate_surpasses_then_confirms():
    m = TaskMachine(TaskConfig(lookahead=0.0), ConstTam(1.0))
    m.tick(inputs(0.0, bin_entered=True))
    a = cand(0.5, 0.0, 0.1)
    m.tick(inputs(0.1, observation=obs([a], capture=0.05)))
    assert m.action is Action.TRACK
    b = cand(0.5, 0.2, 0.1)  # a different object: jumps by 20 cm
    out = m.tick(inputs(0.2, observation=obs([b], capture=0.15)))
    assert out.action is Action.SURPASS and m.decisions[-1].gates[1] is False
    m.tick(inputs(0.3, ee=Pose(DOWN, out.s_tar.d)))
    assert m.action is Action.OBSERVE
    # the same candidate seen again is now consistent with the reference
    m.tick(inputs(0.4, observation=obs([b], capture=0.35)))
    assert m.action is Action.TRACK


def test_open_loop_approach_drops_velocity_term():
    assert approach_command(TaskConfig(open_loop_approach=True))["lambda_vel"] == 0.0
    assert approach_command(TaskConfig())["lambda_vel"] > 0.0
