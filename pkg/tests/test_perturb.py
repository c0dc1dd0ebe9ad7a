import math
import warnings

import numpy as np
import pytest

from doreg import lie, perturb, shapes
from doreg.perturb import PerturbationError, PerturbationSpec, generate_pair

MODEL = shapes.blob(96)


def _zero_spec(**kw):
    base = dict(noise_std=0.0, scene_count=200, outliers=0, incomplete_ratio=0.0,
                rotation_deg=0.0, translation=0.0, seed=3)
    base.update(kw)
    return PerturbationSpec(**base)


def test_defaults_match_default_condition():
    s = PerturbationSpec()
    assert (s.noise_std, s.scene_count, s.outliers, s.incomplete_ratio,
            s.rotation_deg, s.translation) == (0.05, 400, 300, 0.3, 60.0, 0.3)


def test_zero_spec_is_resampling_at_identity():
    pair = generate_pair(MODEL, _zero_spec())
    assert np.abs(pair.x_star).max() == 0.0
    d = np.linalg.norm(pair.scene.points[:, None] - MODEL.points[None], axis=2).min(axis=1)
    assert d.max() == 0.0


def test_ground_truth_consistency():
    for seed in range(10):
        pair = generate_pair(MODEL, _zero_spec(rotation_deg=37.0 * seed % 180, translation=0.7,
                                               seed=seed))
        back = lie.apply(lie.exp_se3(pair.x_star), pair.scene.points)
        d = np.linalg.norm(back[:, None] - MODEL.points[None], axis=2).min(axis=1)
        assert d.max() < 1e-9


def test_half_turn_has_angle_pi():
    pair = generate_pair(MODEL, _zero_spec(rotation_deg=180.0, seed=11))
    assert abs(np.linalg.norm(pair.x_star[3:]) - math.pi) < 1e-9


def test_determinism_bitwise():
    spec = PerturbationSpec(seed=42)
    a, b = generate_pair(MODEL, spec), generate_pair(MODEL, spec)
    assert a.scene.points.tobytes() == b.scene.points.tobytes()
    assert a.x_star.tobytes() == b.x_star.tobytes()
    ts1 = perturb.generate_training_set(MODEL, 1, seed=42)
    ts2 = perturb.generate_training_set(MODEL, 1, seed=42)
    assert ts1.scenes[0].tobytes() == ts2.scenes[0].tobytes()


def test_crop_removes_a_ball():
    spec = _zero_spec(scene_count=300, incomplete_ratio=0.3, seed=5)
    rng = perturb._rng(spec.seed)
    full = MODEL.points[rng.integers(0, len(MODEL), size=300)]
    center = full[rng.integers(0, 300)]
    pair = generate_pair(MODEL, spec)
    kept = pair.scene.points
    assert len(kept) == 300 - math.ceil(0.3 * 300)
    # every dropped point is at least as close to the crop center as every kept point
    kept_set = {tuple(p) for p in kept}
    dropped = np.array([p for p in full if tuple(p) not in kept_set])
    r_drop = np.linalg.norm(dropped - center, axis=1).max()
    r_keep = np.linalg.norm(kept - center, axis=1).min()
    assert r_drop <= r_keep


def test_outliers_follow_inliers_and_counts():
    pair = generate_pair(MODEL, PerturbationSpec(seed=9))
    assert len(pair.scene) == 400 - 120 + 300
    assert pair.n_inliers == 280
    assert pair.inlier_mask.sum() == 280 and pair.inlier_mask[:280].all()


def test_structured_outliers():
    pair = generate_pair(MODEL, PerturbationSpec(seed=9, outlier_kind="structured", outliers=100))
    assert len(pair.scene) - pair.n_inliers == 100


@pytest.mark.parametrize("field,value", [("noise_std", 0.2), ("scene_count", 50),
                                         ("outliers", 601), ("incomplete_ratio", 0.8),
                                         ("rotation_deg", 181.0), ("translation", -0.1)])
def test_out_of_range_rejected(field, value):
    with pytest.raises(PerturbationError):
        generate_pair(MODEL, PerturbationSpec(**{field: value}))


def test_sweep_counts_and_levels():
    pairs = perturb.generate_sweep(MODEL, "rotation", [0, 90, 180], 2, seed=1)
    assert len(pairs) == 6
    assert [p.spec.rotation_deg for p in pairs] == [0.0, 0.0, 90.0, 90.0, 180.0, 180.0]
    assert all(p.spec.noise_std == 0.05 for p in pairs)
    assert perturb.generate_sweep(MODEL, "noise", [0.0, 0.1], 0, seed=1) == []
    assert len(perturb.generate_sweep(MODEL, "rotation", list(range(0, 181, 20)), 1, seed=1)) == 10


def test_unknown_sweep_name():
    with pytest.raises(PerturbationError):
        perturb.generate_sweep(MODEL, "shear", [0.0], 1, seed=0)


def test_training_ranges_respected_and_widening_warns():
    ts = perturb.generate_training_set(MODEL, 20, seed=4)
    assert np.all(np.linalg.norm(ts.x_star[:, 3:], axis=1) <= np.radians(90) + 1e-12)
    assert np.all(np.abs(ts.x0) == 0)
    with pytest.warns(UserWarning):
        perturb.generate_training_set(MODEL, 1, ranges={"rotation_deg": (0, 180)}, seed=4)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        perturb.generate_training_set(MODEL, 1, ranges={"rotation_deg": (0, 45)}, seed=4)


def test_random_unit_vector_is_uniform():
    rng = perturb._rng(0)
    v = np.array([perturb.random_unit_vector(rng) for _ in range(4000)])
    assert np.allclose(np.linalg.norm(v, axis=1), 1.0)
    assert np.abs(v.mean(axis=0)).max() < 0.05
    assert np.allclose(v.T @ v / len(v), np.eye(3) / 3, atol=0.03)


def test_derive_seed_distinct():
    seeds = {perturb.derive_seed(7, a, b) for a in range(5) for b in range(5)}
    assert len(seeds) == 25


def test_pair_roundtrip(tmp_path):
    pair = generate_pair(MODEL, PerturbationSpec(seed=77))
    perturb.save_pair(pair, tmp_path / "p")
    back = perturb.load_pair(tmp_path / "p")
    assert np.array_equal(back.scene.points, pair.scene.points)
    assert np.array_equal(back.x_star, pair.x_star)
    assert np.array_equal(back.T_gt.R, pair.T_gt.R)
    assert back.spec == pair.spec and back.n_inliers == pair.n_inliers


def test_unreadable_pair(tmp_path):
    (tmp_path / "bad").mkdir()
    with pytest.raises(PerturbationError):
        perturb.load_pair(tmp_path / "bad")
