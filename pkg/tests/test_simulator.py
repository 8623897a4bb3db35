from __future__ import annotations

import math
from importlib import resources

import numpy as np
import pytest

from binpick.kinematics import HOME_Q, Pose, default_chain, fk, link_spheres_world
from binpick.sim.checks import Contact, SuccessThresholds, check_collision, check_success
from binpick.sim.metrics import result_from_trace, run_batch, summarize, write_traces
from binpick.sim.perception import PerceptionConfig, camera_pose, point_count, view_candidates
from binpick.sim.scenario import Scenario, load_scenario, parse_scenario
from binpick.sim.scene import MotionProfile, ObjectSpec, SceneState, step_scene
from binpick.sim.trial import (StackConfig, TrialResult, _Sensors, run_trial, trial_rngs)
from binpick.selection import simulate_candidates
from binpick.textfmt import FormatError
from binpick.world import BinModel, Cuboid, SdfWorld

from oracles import recount

DOWN = np.diag([1.0, -1.0, -1.0])
SCENARIOS = resources.files("binpick") / "data" / "scenarios"


def fully_dynamic() -> Scenario:
    return load_scenario(SCENARIOS / "fully_dynamic.scn")


# scene motion


def test_constant_conveyor_moves_six_centimetres_per_second():
    scene = SceneState(BinModel([0.41, 0.3, 0.15]), Pose(np.eye(3), [0.5, -0.5, 0.0]),
                       MotionProfile(speed=0.06), [])
    for _ in range(50):
        step_scene(scene, 0.02)
    np.testing.assert_allclose(scene.bin_pose.d, [0.5, -0.44, 0.0], atol=1e-12)
    with pytest.raises(ValueError):
        step_scene(scene, -0.01)


def test_objects_ride_with_the_bin():
    obj = ObjectSpec(0, "box", np.array([0.04, 0.03, 0.03]), Pose(np.eye(3), [0.0, 0.0, 0.04]))
    scene = SceneState(BinModel([0.41, 0.3, 0.15]), Pose(np.eye(3), [0.5, 0.0, 0.0]),
                       MotionProfile(speed=0.1), [obj])
    before = scene.object_pose(obj).d
    scene.set_clock(2.0)
    np.testing.assert_allclose(scene.object_pose(obj).d - before, [0.0, 0.2, 0.0])


def test_varying_profile_velocity_is_derivative_of_displacement():
    m = MotionProfile(kind="varying", speed_lo=0.06, speed_hi=0.10, period=4.0)
    for t in np.linspace(0, 8, 17):
        h = 1e-5
        fd = (m.displacement(t + h) - m.displacement(t - h)) / (2 * h)
        np.testing.assert_allclose(m.velocity(t), fd, atol=1e-8)
    assert np.linalg.norm(m.velocity(0.0)) == pytest.approx(0.06)
    assert np.linalg.norm(m.velocity(2.0)) == pytest.approx(0.10)


def test_disturbance_jump_executes_at_rate():
    m = MotionProfile(kind="disturbed", jumps=[(1.0, 0.03, 0.04)], jump_rate=0.1)
    np.testing.assert_allclose(m.displacement(0.9), 0.0)
    np.testing.assert_allclose(m.displacement(1.25), [0.015, 0.02, 0.0])
    np.testing.assert_allclose(m.displacement(5.0), [0.03, 0.04, 0.0])
    assert np.linalg.norm(m.velocity(1.2)) == pytest.approx(0.1)
    assert not m.velocity(2.0).any()


# perception


def test_point_count_curve():
    cfg = PerceptionConfig()
    assert point_count(1.0, cfg) == cfg.n_full
    assert point_count(0.10, cfg) < cfg.n_full // 4
    assert point_count(0.05, cfg) == 0
    counts = [point_count(d, cfg) for d in np.linspace(0, 0.5, 51)]
    assert counts == sorted(counts)


def test_camera_sits_behind_tip():
    ee = Pose(DOWN, [0.5, 0.0, 0.3])
    np.testing.assert_allclose(camera_pose(ee, 0.06).d, [0.5, 0.0, 0.36])


def test_far_overhead_view_sees_everything_untilted():
    sc = fully_dynamic()
    scene = sc.build_scene(np.random.default_rng(0))
    scene.set_clock(10.0)
    centre = scene.bin_pose.d
    cam = Pose(DOWN, centre + [0, 0, 0.6])
    cfg = PerceptionConfig(position_noise=0.0)
    seen, n = view_candidates(scene, cam, cfg, np.random.default_rng(1))
    truth = simulate_candidates(scene, seed=cfg.candidate_seed)
    assert n == cfg.n_full and len(seen) == len(truth)
    tilts = [np.degrees(np.arccos(-s.pose.R[2, 2])) for s in seen]
    assert max(tilts) < 1.0


def test_observation_images_the_scene_at_capture_time():
    sc = fully_dynamic()
    chain = default_chain()
    rngs = trial_rngs(0, 0)
    scene = sc.build_scene(rngs[0])
    sensors = _Sensors(sc, chain, scene, rngs[1], rngs[2])
    cfg = sc.perception
    dt = 1.0 / cfg.control_rate
    q = HOME_Q
    seen_obs = []
    for k in range(int(6.0 / dt)):
        t = k * dt
        scene.set_clock(t)
        obs = sensors.tick(k, t, q)
        if obs is not None:
            seen_obs.append(obs)
    assert seen_obs
    for obs in seen_obs:
        assert obs.stamp - obs.capture == pytest.approx(cfg.latency, abs=dt + 1e-9)
        assert obs.stamp >= obs.capture + cfg.latency - 1e-9
    # candidates match the ground truth at capture time, not at delivery time
    late = [o for o in seen_obs if o.candidates][-1]
    truth = np.array([c.pose.d for c in simulate_candidates(scene.copy_at(late.capture))])
    now = np.array([c.pose.d for c in simulate_candidates(scene.copy_at(late.stamp))])
    for c in late.candidates:
        assert np.linalg.norm(truth - c.pose.d, axis=1).min() < 0.005
        assert np.linalg.norm(now - c.pose.d, axis=1).min() > 0.003


def test_bin_track_velocity_stays_bounded():
    sc = fully_dynamic()
    rngs = trial_rngs(0, 3)
    scene = sc.build_scene(rngs[0])
    sensors = _Sensors(sc, default_chain(), scene, rngs[1], rngs[2])
    dt = 1.0 / sc.perception.control_rate
    worst = 0.0
    for k in range(int(12.0 / dt)):
        t = k * dt
        scene.set_clock(t)
        sensors.tick(k, t, HOME_Q)
        if sensors.track.initialized:
            worst = max(worst, np.linalg.norm(sensors.track.snapshot().velocity))
    assert worst <= 2.0 * sc.motion.max_speed


# ground-truth checks


def test_collision_check_against_a_block_at_the_tool(chain):
    q = HOME_Q
    tool = fk(chain, q).d
    free = SdfWorld([Cuboid(Pose(np.eye(3), tool + [0, 0, 1.0]), [0.05, 0.05, 0.05])])
    hit = SdfWorld([Cuboid(Pose(np.eye(3), tool), [0.05, 0.05, 0.05])])
    assert not check_collision(chain, q, free)
    assert check_collision(chain, q, hit)


def test_collision_check_matches_sphere_distances(chain, rng):
    world = SdfWorld([Cuboid(Pose(np.eye(3), [0.4, 0.0, 0.2]), [0.1, 0.1, 0.1])])
    for _ in range(30):
        q = HOME_Q + rng.normal(scale=0.6, size=7)
        centers, radii = link_spheres_world(chain, q)
        local = np.abs(centers - [0.4, 0.0, 0.2]) - 0.1
        outside = np.linalg.norm(np.maximum(local, 0), axis=1)
        inside = np.minimum(local.max(axis=1), 0)
        clearance = (outside + inside - radii).min()
        assert check_collision(chain, q, world) == (clearance < 0)


def make_contact():
    obj = ObjectSpec(0, "box", np.array([0.04, 0.03, 0.03]), Pose(np.eye(3), [0, 0, 0.04]))
    pose = Pose(np.eye(3), [0.5, 0.0, 0.04])
    return obj, pose, Contact(0, np.array([0.0, 0.0]), 0.0)


def test_success_when_matching_velocity():
    obj, pose, c = make_contact()
    v = np.array([0.0, 0.06, 0.0])
    ok, why = check_success(Pose(DOWN, pose.d), v + [0, 0, -0.05], obj, c, v, pose)
    assert ok and why == "ok"


def test_sliding_contact_fails():
    obj, pose, c = make_contact()
    ok, why = check_success(Pose(DOWN, pose.d), np.zeros(3), obj, c, [0, 0.06, 0], pose)
    assert not ok and why == "relative-speed"


def test_tilted_tool_fails():
    from oracles import rodrigues
    obj, pose, c = make_contact()
    R = rodrigues([1, 0, 0], np.deg2rad(25)) @ DOWN
    ok, why = check_success(Pose(R, pose.d), np.zeros(3), obj, c, np.zeros(3), pose)
    assert not ok and why == "tilt"


def test_edge_contact_fails():
    obj, pose, _ = make_contact()
    edge = Contact(0, np.array([0.039, 0.029]), 0.0)
    ok, why = check_success(Pose(DOWN, pose.d), np.zeros(3), obj, edge, np.zeros(3), pose,
                            SuccessThresholds())
    assert not ok and why == "low-quality"


# trials and metrics


def short(sc: Scenario, timeout: float) -> Scenario:
    return sc.with_(timeout=timeout, name=sc.name)


def test_trial_is_deterministic():
    sc = short(fully_dynamic(), 4.0)
    a = run_trial(sc, StackConfig(), seed=3, trial_index=1)
    b = run_trial(sc, StackConfig(), seed=3, trial_index=1)
    assert a.trace_text() == b.trace_text()
    c = run_trial(sc, StackConfig(), seed=3, trial_index=2)
    assert a.trace_text() != c.trace_text()


def test_timeout_reports_failure_without_time():
    r = run_trial(short(fully_dynamic(), 1.0), StackConfig())
    assert (r.success, r.collision, r.reason) == (False, False, "timeout")
    assert math.isnan(r.total_time)
    assert result_from_trace(r.trace_text())[:2] == (False, False)


def test_full_stack_picks_on_fully_dynamic_scenario():
    r = run_trial(fully_dynamic(), StackConfig())
    assert r.success and not r.collision
    ok, coll, tt = result_from_trace(r.trace_text())
    assert ok and not coll and tt == pytest.approx(r.total_time, abs=1e-6)
    # timing starts when the robot first leaves Wait
    first = next(l for l in r.trace if " action " in l)
    assert "src=Wait" in first


def test_disturbed_static_trial_runs():
    sc = load_scenario(SCENARIOS / "disturbed_static.scn")
    r = run_trial(sc, StackConfig())
    assert r.reason in {"picked", "timeout", "relative-speed", "tilt", "low-quality", "off-face"}
    assert not r.collision


def test_summary_matches_recount():
    rs = [TrialResult(True, 5.0, False, "picked", []), TrialResult(False, math.nan, True,
          "collision", []), TrialResult(True, 7.0, False, "picked", []),
          TrialResult(False, math.nan, False, "timeout", [])]
    s = summarize(rs)
    ref = recount(rs)
    assert s.sr == ref["sr"] == 50.0 and s.cr == ref["cr"] == 25.0
    assert s.tt_mean == pytest.approx(ref["tt_mean"]) and s.tt_std == pytest.approx(ref["tt_std"])
    empty = summarize([TrialResult(False, math.nan, False, "timeout", [])])
    assert math.isnan(empty.tt_mean) and empty.sr == 0.0


def test_batch_traces_round_trip(tmp_path):
    sc = short(fully_dynamic(), 1.0)
    results = run_batch(sc, StackConfig(), 2, seed=5)
    paths = write_traces(results, tmp_path)
    assert [p.name for p in paths] == ["fully_dynamic_full_s5_t000.trace",
                                       "fully_dynamic_full_s5_t001.trace"]
    for p, r in zip(paths, results):
        assert result_from_trace(p.read_text())[:2] == (r.success, r.collision)
    with pytest.raises(ValueError):
        run_batch(sc, StackConfig(), 0)


# scenario files


def test_grid_files_cover_every_combination():
    grid = sorted((SCENARIOS / "grid").iterdir(), key=lambda p: p.name)
    names = {p.name for p in grid}
    assert len(names) == 24
    for arr in ("neat", "clutter"):
        for size in ("small", "middle", "large"):
            for speed in ("slow", "middle", "fast", "varying"):
                assert f"{arr}_{size}_{speed}.scn" in names
    sc = load_scenario(SCENARIOS / "grid" / "clutter_large_varying.scn")
    assert sc.arrangement == "clutter" and sc.motion.kind == "varying"
    assert (sc.motion.speed_lo, sc.motion.speed_hi) == (0.06, 0.10)
    np.testing.assert_allclose(sc.bin_size, [0.48, 0.35, 0.22])


def test_disturbed_scenario_fields():
    sc = load_scenario(SCENARIOS / "disturbed_static.scn")
    assert sc.family == "disturbed-static" and sc.motion.kind == "disturbed"
    assert sc.motion.jumps == [(2.0, 0.04, 0.03), (5.0, -0.03, 0.05)]
    scene = sc.build_scene(np.random.default_rng(0))
    assert len(scene.motion.jumps) == 4


def test_inline_scenario_and_errors():
    sc = parse_scenario("[bin]\nsize = small\n[conveyor]\nspeed = fast\n[trials]\ncount = 3\n")
    assert sc.motion.speed == 0.10 and sc.trials == 3
    with pytest.raises(FormatError):
        parse_scenario("[bin]\nsize = small\n[lighting]\nlux 3\n")
    with pytest.raises(FormatError):
        parse_scenario("[conveyor]\nprofile = zigzag\n")
    with pytest.raises(ValueError):
        parse_scenario("[trials]\ncount = 0\n")
    with pytest.raises(FormatError):
        parse_scenario("[obstacles]\ncuboid 1 2 3\n")
