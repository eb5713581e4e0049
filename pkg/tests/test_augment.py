from collections import Counter

import numpy as np
import pytest

from radiovit.augment import (
    AugmentKind,
    AugmentPolicy,
    affine_slices,
    apply_policy,
    expand_training_set,
    horizontal_flip,
    random_affine,
    rotate90,
    sample_affine,
)
from radiovit.errors import NonSquarePlane
from radiovit.volume import Volume

SQUARE = Volume(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1))


def test_rotate_examples():
    assert rotate90(SQUARE, 1).voxels[:, :, 0].tolist() == [[3, 1], [4, 2]]
    assert rotate90(SQUARE, 2).voxels[:, :, 0].tolist() == [[4, 3], [2, 1]]
    assert rotate90(SQUARE, 3).voxels[:, :, 0].tolist() == [[2, 4], [1, 3]]


def test_rotation_laws(rng):
    v = Volume(rng.random((6, 6, 3)))
    np.testing.assert_array_equal(rotate90(rotate90(v, 2), 2).voxels, v.voxels)
    np.testing.assert_array_equal(rotate90(rotate90(v, 1), 3).voxels, v.voxels)
    assert Counter(rotate90(v, 1).voxels.ravel().tolist()) == Counter(v.voxels.ravel().tolist())
    # depth untouched
    np.testing.assert_array_equal(rotate90(v, 1).voxels[:, :, 2], np.rot90(v.voxels[:, :, 2], -1))


def test_rotate_non_square():
    v = Volume(np.zeros((4, 6, 2)))
    with pytest.raises(NonSquarePlane):
        rotate90(v, 1)
    assert rotate90(v, 2).shape == (4, 6, 2)


def test_flip_examples(rng):
    assert horizontal_flip(SQUARE).voxels[:, :, 0].tolist() == [[2, 1], [4, 3]]
    v = Volume(rng.random((3, 5, 2)))
    np.testing.assert_array_equal(horizontal_flip(horizontal_flip(v)).voxels, v.voxels)
    const = Volume(np.full((3, 3, 3), 0.25))
    np.testing.assert_array_equal(horizontal_flip(const).voxels, const.voxels)


def test_affine_identity(rng):
    v = Volume(rng.random((9, 7, 3)))
    policy = AugmentPolicy(max_rotation_deg=0.0, max_translate_frac=0.0)
    np.testing.assert_allclose(random_affine(v, policy, np.random.default_rng(0)).voxels, v.voxels, atol=1e-6)


def test_affine_deterministic(rng):
    v = Volume(rng.random((16, 16, 2)))
    policy = AugmentPolicy(seed=42)
    a = random_affine(v, policy, np.random.default_rng(42)).voxels
    b = random_affine(v, policy, np.random.default_rng(42)).voxels
    assert a.tobytes() == b.tobytes()


def test_angle_sampler_statistics():
    policy = AugmentPolicy(max_rotation_deg=36.0)
    rng = np.random.default_rng(7)
    angles = np.array([sample_affine(policy, rng, 32, 32)[0] for _ in range(10_000)])
    assert angles.min() >= -36 and angles.max() <= 36
    assert abs(angles.mean()) <= 1.0


def test_translation_bounds():
    policy = AugmentPolicy(max_translate_frac=0.1)
    rng = np.random.default_rng(3)
    shifts = np.array([sample_affine(policy, rng, 40, 20)[1:] for _ in range(2000)])
    assert np.abs(shifts[:, 0]).max() <= 4.0 and np.abs(shifts[:, 1]).max() <= 2.0


def test_quarter_turn_matches_lossless_rotation(rng):
    v = rng.random((5, 5, 2))
    # positive angles turn the same way as rotate90
    np.testing.assert_allclose(affine_slices(v, 90.0, 0.0, 0.0), np.rot90(v, -1, axes=(0, 1)), atol=1e-12)


def test_integer_shift_fills_zero(rng):
    v = rng.random((4, 5, 1)) + 1.0
    out = affine_slices(v, 0.0, 1.0, 2.0)
    np.testing.assert_allclose(out[1:, 2:], v[:-1, :-2])
    assert not out[0].any() and not out[:, :2].any()


def test_affine_stays_within_convex_bounds(rng):
    v = rng.random((12, 12, 2))
    out = affine_slices(v, 17.0, 1.3, -2.2)
    assert out.min() >= 0.0 and out.max() <= v.max() + 1e-12


def test_apply_policy_kinds():
    assert apply_policy(SQUARE, AugmentPolicy(AugmentKind.Rot90CW)).voxels[:, :, 0].tolist() == [[3, 1], [4, 2]]
    assert apply_policy(SQUARE, AugmentPolicy(AugmentKind.Rot90CCW)).voxels[:, :, 0].tolist() == [[2, 4], [1, 3]]
    assert apply_policy(SQUARE, AugmentPolicy(AugmentKind.HFlip)).voxels[:, :, 0].tolist() == [[2, 1], [4, 3]]


def test_expand_training_set(rng):
    vols = [Volume(rng.random((4, 4, 2)), subject_id=s) for s in ("a", "b")]
    out = expand_training_set(vols)
    assert len(out) == 8
    assert [v.subject_id for v in out] == ["a", "b"] * 4
    np.testing.assert_array_equal(out[3].voxels, rotate90(vols[1], 1).voxels)
    np.testing.assert_array_equal(out[5].voxels, rotate90(vols[1], 3).voxels)
    np.testing.assert_array_equal(out[6].voxels, rotate90(vols[0], 2).voxels)
    assert expand_training_set([]) == []


def test_policy_validation():
    with pytest.raises(ValueError):
        AugmentPolicy(max_rotation_deg=-1)
    with pytest.raises(ValueError):
        AugmentPolicy(max_translate_frac=1.5)
