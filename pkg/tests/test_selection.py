from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binpick.kinematics import Pose, default_chain
from binpick.mlp import default_model
from binpick.selection import (EPS_PD, AnalyticTam, NetworkTam, NoCandidates, SelectionContext,
                               SuctionCandidate, candidate_rotation, dump_candidates,
                               select_optimal, selection_metric, selection_metrics,
                               simulate_candidates, suction_quality)
from binpick.sim.scene import MotionProfile, ObjectSpec, SceneState
from binpick.tam import tam_score
from binpick.world import BinModel

DOWN = np.diag([1.0, -1.0, -1.0])
EE = Pose(DOWN, [0.5, 0.0, 0.4])


def cand(x, y, z, U=0.5, oid=0, idx=0, R=None):
    return SuctionCandidate(Pose(candidate_rotation(0.0) if R is None else R, [x, y, z]),
                            U, oid, idx)


def flat_scene(objects) -> SceneState:
    return SceneState(BinModel([0.41, 0.30, 0.15]), Pose(np.eye(3), [0.5, 0.0, 0.0]),
                      MotionProfile(speed=0.0), objects)


def box(oid, x, y, z, half=(0.04, 0.03, 0.03)):
    return ObjectSpec(oid, "box", np.array(half), Pose(np.eye(3), [x, y, z]))


class ZeroTam:
    def __call__(self, poses, dirs):
        return np.zeros(len(poses))


# candidate generation

def test_empty_bin_has_no_candidates():
    assert simulate_candidates(flat_scene([])) == []


def test_centroid_sample_scores_one():
    scene = flat_scene([box(0, 0.0, 0.0, 0.04)])
    cands = simulate_candidates(scene, min_score=0.0)
    assert cands[0].score == pytest.approx(1.0)
    np.testing.assert_allclose(cands[0].pose.d, [0.5, 0.0, 0.07], atol=1e-12)


def test_candidates_lie_on_top_faces_and_point_down():
    scene = flat_scene([box(0, -0.08, 0.0, 0.04), box(1, 0.08, 0.02, 0.035, (0.03, 0.03, 0.025))])
    for c in simulate_candidates(scene, min_score=0.0):
        obj = scene.object(c.object_id)
        local = scene.object_pose(obj).inverse().transform(c.pose.d)
        assert local[2] == pytest.approx(obj.half[2], abs=1e-12)
        assert obj.face_distance(local[0], local[1]) <= 0
        np.testing.assert_allclose(c.pose.R[:, 2], [0, 0, -1], atol=1e-12)
        assert 0.0 <= c.score <= 1.0


def test_stacked_pair_occlusion_matches_footprint_check():
    lower = box(0, 0.0, 0.0, 0.04, (0.06, 0.05, 0.03))
    upper = box(1, 0.02, 0.0, 0.04 + 0.03 + 0.02, (0.03, 0.03, 0.02))
    scene = flat_scene([lower, upper])
    cands = simulate_candidates(scene, per_object=40, min_score=0.0, wall_clearance=0.0)
    lowers = [c for c in cands if c.object_id == 0]
    assert lowers
    for c in lowers:
        x, y = c.pose.d[0] - 0.5, c.pose.d[1]
        covered = abs(x - 0.02) <= 0.03 and abs(y) <= 0.03
        assert not covered


def test_candidates_are_deterministic():
    scene = flat_scene([box(0, 0.0, 0.0, 0.04)])
    a = simulate_candidates(scene, seed=3)
    b = simulate_candidates(scene, seed=3)
    assert [c.pose.d.tolist() for c in a] == [c.pose.d.tolist() for c in b]


def test_suction_quality_off_face_is_zero():
    obj = box(0, 0, 0, 0.04)
    assert suction_quality(obj, 0.0, 0.0) == 1.0
    assert suction_quality(obj, 0.05, 0.0) == 0.0


def test_candidate_score_validation():
    with pytest.raises(ValueError):
        cand(0, 0, 0, U=1.5)


# selection metric

def test_suction_only_weights_pick_highest_score():
    S = [cand(0.5, 0, 0.1, 0.3), cand(0.5, 0.1, 0.1, 0.9, idx=1), cand(0.5, -0.1, 0.1, 0.6, idx=2)]
    ctx = SelectionContext(EE, weights=(0, 0, 0, 0, 1))
    np.testing.assert_allclose(selection_metrics(S, ctx, ZeroTam()), [0.3, 0.9, 0.6])
    assert select_optimal(S, ctx, ZeroTam()) is S[1]


def test_height_term_arithmetic():
    S = [cand(0.5, 0, 0.1), cand(0.5, 0.1, 0.3)]
    ctx = SelectionContext(EE, weights=(0, 0, 0, 1, 0))
    np.testing.assert_allclose(selection_metrics(S, ctx, ZeroTam()), [0.5, 1.5])


def test_metric_of_one_member():
    S = [cand(0.5, 0, 0.1), cand(0.5, 0.1, 0.3)]
    ctx = SelectionContext(EE, weights=(0, 0, 0, 1, 0))
    assert selection_metric(S[1], S, ctx, ZeroTam()) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        selection_metric(cand(0, 0, 0), S, ctx, ZeroTam())


def hand_metric(s, S, ee, s_prev, v_bin, w, alpha_v, chain, ref):
    """Each term spelled out with the analytic TAM."""
    def unit(v):
        n = np.linalg.norm(v)
        return v / n if n > 1e-12 else np.array([0.0, 0.0, -1.0])
    t1 = tam_score(chain, ee, unit(s.pose.d - ee.d)) / ref
    t2 = tam_score(chain, s.pose, unit(v_bin + alpha_v * s.pose.R[:, 2])) / ref
    if s_prev is None:
        t3 = 0.0
    else:
        rot = np.linalg.norm(np.eye(3) - s_prev.R.T @ s.pose.R)
        pd = rot + np.linalg.norm(s.pose.d - s_prev.d)
        t3 = 1.0 / max(pd, EPS_PD)
    zbar = np.mean([c.pose.d[2] for c in S])
    t4 = s.pose.d[2] / zbar
    return w[0] * t1 + w[1] * t2 + w[2] * t3 + w[3] * t4 + w[4] * s.score


def test_full_metric_matches_hand_evaluation():
    chain = default_chain()
    rng = np.random.default_rng(0)
    S = [cand(rng.uniform(0.4, 0.6), rng.uniform(-0.15, 0.15), rng.uniform(0.05, 0.12),
              rng.uniform(0.3, 1.0), idx=i, R=candidate_rotation(rng.uniform(-1, 1)))
         for i in range(5)]
    s_prev = S[2].pose.translated([0.01, 0.0, 0.0])
    v_bin = np.array([0.0, 0.06, 0.0])
    w = (0.2, 0.3, 0.1, 0.15, 0.25)
    ctx = SelectionContext(EE, s_prev=s_prev, v_bin=v_bin, weights=w)
    ref = 0.05
    got = selection_metrics(S, ctx, AnalyticTam(chain, ref))
    want = [hand_metric(s, S, EE, s_prev, v_bin, w, 0.05, chain, ref) for s in S]
    np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-12)
    assert select_optimal(S, ctx, AnalyticTam(chain, ref)) is S[int(np.argmax(want))]


def test_first_observation_has_no_consistency_term():
    S = [cand(0.5, 0, 0.1)]
    ctx = SelectionContext(EE, weights=(0, 0, 1, 0, 0))
    assert selection_metrics(S, ctx, ZeroTam())[0] == 0.0


def test_same_pose_is_clamped():
    S = [cand(0.5, 0, 0.1)]
    ctx = SelectionContext(EE, s_prev=S[0].pose, weights=(0, 0, 1, 0, 0))
    assert selection_metrics(S, ctx, ZeroTam())[0] == pytest.approx(1.0 / EPS_PD)


def test_consistency_prefers_closer_candidate():
    prev = Pose(candidate_rotation(0.0), [0.5, 0.0, 0.1])
    S = [cand(0.5, 0.08, 0.1), cand(0.5, 0.02, 0.1, idx=1)]
    ctx = SelectionContext(EE, s_prev=prev, weights=(0, 0, 1, 0, 0))
    assert select_optimal(S, ctx, ZeroTam()) is S[1]


def test_singleton_and_empty_sets():
    S = [cand(0.5, 0, 0.1)]
    ctx = SelectionContext(EE)
    assert select_optimal(S, ctx, NetworkTam(default_model())) is S[0]
    with pytest.raises(NoCandidates):
        select_optimal([], ctx, ZeroTam())


def test_tie_breaks_on_score_then_index():
    S = [cand(0.5, 0, 0.1, 0.5), cand(0.5, 0.1, 0.1, 0.9, idx=1), cand(0.5, 0.2, 0.1, 0.9, idx=2)]
    ctx = SelectionContext(EE, weights=(0, 0, 0, 1, 0))  # equal heights: all metrics equal
    assert select_optimal(S, ctx, ZeroTam()) is S[1]


def test_random_scene_matches_brute_force_argmax():
    rng = np.random.default_rng(5)
    S = [cand(rng.uniform(0.4, 0.6), rng.uniform(-0.2, 0.2), rng.uniform(0.05, 0.15),
              rng.uniform(0, 1), idx=i) for i in range(20)]
    ctx = SelectionContext(EE, s_prev=S[4].pose, v_bin=np.array([0, 0.06, 0]))
    tam = NetworkTam(default_model())
    m = selection_metrics(S, ctx, tam)
    brute = max(range(20), key=lambda i: (m[i], S[i].score, -i))
    assert select_optimal(S, ctx, tam) is S[brute]


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 1000))
def test_weight_scaling_keeps_choice(k, seed):
    rng = np.random.default_rng(seed)
    S = [cand(rng.uniform(0.4, 0.6), rng.uniform(-0.2, 0.2), rng.uniform(0.05, 0.15),
              rng.uniform(0, 1), idx=i) for i in range(8)]
    w = rng.uniform(0, 1, 5)
    tam = NetworkTam(default_model())
    a = select_optimal(S, SelectionContext(EE, s_prev=S[0].pose, weights=tuple(w)), tam)
    b = select_optimal(S, SelectionContext(EE, s_prev=S[0].pose, weights=tuple(k * w)), tam)
    assert a is b


def test_context_weight_validation():
    with pytest.raises(ValueError):
        SelectionContext(EE, weights=(0, 0, 0, 0, 0))
    with pytest.raises(ValueError):
        SelectionContext(EE, weights=(1, -1, 0, 0, 0))


def test_candidate_dump(tmp_path):
    S = [cand(0.5, 0, 0.1, 0.7, oid=3)]
    path = tmp_path / "c.txt"
    dump_candidates(path, S, np.array([1.25]))
    fields = path.read_text().split()
    assert fields[0] == "3" and len(fields) == 1 + 3 + 9 + 2
    assert float(fields[-2]) == 0.7 and float(fields[-1]) == 1.25
