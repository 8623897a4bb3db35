from __future__ import annotations

import numpy as np
import pytest

from binpick.kinematics import HOME_Q, Pose, fk, ik, inv_cond, inv_cond_at, jacobian, planar_chain
from binpick.tam import (UNREACHABLE, Workspace, default_seed, fibonacci_directions,
                         generate_dataset, load_dataset, quality_index, sample_poses,
                         save_dataset, tam_score, tam_scores_at)


def test_directions_are_unit_and_spread():
    dirs = fibonacci_directions(128)
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)
    cos = dirs @ dirs.T
    np.fill_diagonal(cos, -1.0)
    assert np.degrees(np.arccos(cos.max())) > 10.0


def test_quality_index_null_direction(planar):
    # a planar arm cannot move out of its plane
    assert quality_index(planar, np.array([0.3, 0.8]), np.array([0.0, 0.0, 1.0])) == 0.0


def test_quality_index_one_joint_lever():
    c = planar_chain((0.7, 1e-9))
    q = np.array([0.4, 0.0])
    # with the second joint fixed at its axis, only joint 1 moves the tool
    tangential = np.array([-np.sin(0.4), np.cos(0.4), 0.0])
    J = jacobian(c, q)[:3, 0]
    assert abs(J @ tangential) == pytest.approx(0.7, abs=1e-9)
    assert quality_index(c, q, tangential) == pytest.approx(0.7, abs=1e-8)


def test_quality_index_is_symmetric(chain, rng):
    q = rng.uniform(chain.lower, chain.upper)
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    assert quality_index(chain, q, n) == quality_index(chain, q, -n)


def test_quality_index_needs_unit_direction(chain):
    with pytest.raises(ValueError):
        quality_index(chain, default_seed(chain), np.array([1.0, 1.0, 0.0]))


def test_tam_unreachable_sentinel(chain):
    assert tam_score(chain, Pose(np.eye(3), [4.0, 0.0, 0.0]), np.array([1.0, 0, 0])) == UNREACHABLE


def test_tam_is_product_of_components(chain, rng):
    seed = default_seed(chain)
    checked = 0
    for p in sample_poses(Workspace([0.35, -0.3, 0.05], [0.65, 0.3, 0.25]), 10, rng):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        q = ik(chain, p, seed)
        T = tam_score(chain, p, n, seed)
        if q is None:
            assert T == UNREACHABLE
            continue
        checked += 1
        expected = quality_index(chain, q, n) * inv_cond(chain, p, seed)
        assert T == pytest.approx(expected, abs=1e-9)
    assert checked >= 5


def test_tam_collapses_near_singularity(chain):
    # nearly stretched elbow and wrist versus the home configuration
    q_sing = np.zeros(7)
    q_sing[3], q_sing[5] = -0.07, 0.05
    n = np.array([0.0, 0.0, -1.0])
    t_sing = tam_score(chain, fk(chain, q_sing), n, q_sing)
    t_home = tam_score(chain, fk(chain, HOME_Q), n, HOME_Q)
    assert 0 <= t_sing < t_home / 10


def test_tam_bounded_by_largest_singular_value(chain, rng):
    dirs = fibonacci_directions(32)
    for _ in range(5):
        q = rng.uniform(chain.lower, chain.upper)
        s_max = np.linalg.svd(jacobian(chain, q)[:3], compute_uv=False)[0]
        scores = tam_scores_at(chain, q, dirs)
        assert np.all(scores >= 0) and np.all(scores <= s_max + 1e-12)


def test_dataset_is_deterministic(chain, tmp_path):
    a = generate_dataset(chain, n_poses=10, n_dirs=128, seed=3)
    b = generate_dataset(chain, n_poses=10, n_dirs=128, seed=3)
    save_dataset(a, tmp_path / "a.txt")
    save_dataset(b, tmp_path / "b.txt")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
    assert a.n_samples == 10 * 128


def test_dataset_sentinels_match_ik_failures(chain):
    ds = generate_dataset(chain, n_poses=100, n_dirs=4, seed=11)
    failures = 0
    for row in ds.poses:
        p = Pose(row[3:].reshape(3, 3), row[:3])
        failures += ik(chain, p, default_seed(chain)) is None
    assert np.mean(ds.scores[:, 0] == UNREACHABLE) == failures / 100
    assert np.all((ds.scores == UNREACHABLE).all(axis=1) | (ds.scores >= 0).all(axis=1))


def test_dataset_file_roundtrip(chain, tmp_path):
    ds = generate_dataset(chain, n_poses=6, n_dirs=5, seed=2)
    path = tmp_path / "ds.txt"
    save_dataset(ds, path, {"chain": "panda_like"})
    header = [ln for ln in path.read_text().splitlines() if ln.startswith("#")]
    assert any("n_poses = 6" in h for h in header) and any("chain" in h for h in header)
    back = load_dataset(path)
    np.testing.assert_array_equal(back.scores, ds.scores)
    np.testing.assert_array_equal(back.poses, ds.poses)
    X, y = back.features()
    assert X.shape == (30, 12) and y.shape == (30,)


def test_sampled_orientations_point_down(rng):
    for p in sample_poses(Workspace([0, 0, 0], [1, 1, 1]), 200, rng):
        assert p.is_valid()
        assert np.degrees(np.arccos(-p.R[2, 2])) <= 60.0 + 1e-9


def test_dataset_argument_checks(chain):
    with pytest.raises(ValueError):
        generate_dataset(chain, n_poses=0)
    with pytest.raises(ValueError):
        Workspace([0, 0, 0], [1, 0, 1])


def test_linear_rows_inv_cond_drops_flat_axis(planar):
    assert 0 < inv_cond_at(planar, np.array([0.0, 1.0]), rows="linear") <= 1
