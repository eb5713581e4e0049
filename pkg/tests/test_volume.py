import numpy as np
import pytest

from radiovit.dicom import DicomSlice
from radiovit.errors import BadVolumeFile, InconsistentGeometry, InvalidWindow, NoOrderingKey
from radiovit.modality import Modality
from radiovit.volume import (
    Volume,
    apply_voi_lut,
    build_volume,
    decode_volume,
    encode_volume,
    normalize_volume,
    order_slices,
    read_volume,
    resize_volume,
    stack_slices,
    write_volume,
)


def _slice(pixels, **kw):
    pixels = np.asarray(pixels)
    return DicomSlice(rows=pixels.shape[0], cols=pixels.shape[1], pixels=pixels, **kw)


def test_order_by_z():
    slices = [_slice(np.zeros((2, 2)), z_position=z) for z in (5.0, 1.0, 3.0)]
    assert order_slices(slices) == [1, 2, 0]


def test_order_falls_back_to_instance_number():
    slices = [_slice(np.zeros((2, 2)), instance_number=n) for n in (2, 1)]
    assert order_slices(slices) == [1, 0]


def test_order_needs_a_shared_key():
    slices = [_slice(np.zeros((2, 2)), z_position=1.0), _slice(np.zeros((2, 2)))]
    with pytest.raises(NoOrderingKey):
        order_slices(slices)


def test_voi_vectors():
    assert apply_voi_lut(0, 2048, 4096) == 0.0
    assert apply_voi_lut(4095, 2048, 4096) == 1.0
    assert apply_voi_lut(99.5, 100, 10, -3.0, 5.0) == pytest.approx(1.0)


def test_voi_invalid_width():
    with pytest.raises(InvalidWindow):
        apply_voi_lut(0, 0, 1)


def test_voi_is_vectorised_and_bounded(rng):
    x = rng.normal(0, 3000, 1000)
    y = apply_voi_lut(x, 40, 400)
    assert y.shape == x.shape and y.min() >= 0 and y.max() <= 1


def test_resize_constant(rng):
    v = Volume(np.full((3, 5, 4), 0.7))
    out = resize_volume(v, (7, 2, 9))
    assert out.shape == (7, 2, 9)
    np.testing.assert_allclose(out.voxels, 0.7, atol=1e-15)


def test_resize_identity(rng):
    voxels = rng.random((4, 5, 6))
    np.testing.assert_array_equal(resize_volume(Volume(voxels), (4, 5, 6)).voxels, voxels)


def test_resize_depth_ramp():
    v = Volume(np.array([0.0, 1.0, 2.0]).reshape(1, 1, 3))
    np.testing.assert_allclose(resize_volume(v, (1, 1, 5)).voxels.ravel(), [0, 0.5, 1, 1.5, 2])


def test_resize_in_plane_is_bilinear():
    v = Volume(np.array([[0.0, 2.0], [4.0, 6.0]]).reshape(2, 2, 1))
    out = resize_volume(v, (3, 3, 1)).voxels[:, :, 0]
    np.testing.assert_allclose(out, [[0, 1, 2], [2, 3, 4], [4, 5, 6]])


def test_resize_stays_within_source_range(rng):
    voxels = rng.normal(size=(5, 6, 3))
    out = resize_volume(Volume(voxels), (11, 4, 8)).voxels
    assert out.min() >= voxels.min() - 1e-12 and out.max() <= voxels.max() + 1e-12


def test_normalize_examples():
    out = normalize_volume(Volume(np.array([2.0, 4.0, 6.0]).reshape(1, 1, 3)))
    np.testing.assert_allclose(out.voxels.ravel(), [0, 0.5, 1])
    assert not normalize_volume(Volume(np.full((2, 2, 2), 3.0))).voxels.any()
    unit = np.linspace(0, 1, 8).reshape(2, 2, 2)
    np.testing.assert_array_equal(normalize_volume(Volume(unit)).voxels, unit)


def test_build_three_slices():
    slices = [_slice(np.arange(64, dtype=np.uint16).reshape(8, 8) + 10 * k, instance_number=k) for k in range(3)]
    v = build_volume(slices)
    assert v.shape == (256, 256, 64)
    assert v.voxels.min() == 0.0 and v.voxels.max() == 1.0
    # values increase along rows, columns and depth in this layout
    assert np.all(np.diff(v.voxels, axis=0) >= -1e-12)
    assert np.all(np.diff(v.voxels, axis=1) >= -1e-12)
    assert np.all(np.diff(v.voxels, axis=2) >= -1e-12)


def test_build_single_slice_repeats():
    s = _slice(np.arange(16, dtype=np.uint16).reshape(4, 4), instance_number=1)
    v = build_volume([s], (8, 8, 64))
    for k in range(1, 64):
        np.testing.assert_array_equal(v.voxels[:, :, k], v.voxels[:, :, 0])


def test_build_mixed_geometry():
    slices = [_slice(np.zeros((8, 8)), instance_number=1), _slice(np.zeros((16, 8)), instance_number=2)]
    with pytest.raises(InconsistentGeometry):
        build_volume(slices)


def test_stack_applies_rescale_and_window():
    s = _slice(np.array([[0, 10]], dtype=np.uint16), rescale_slope=2.0, rescale_intercept=-5.0, instance_number=1)
    np.testing.assert_allclose(stack_slices([s])[:, :, 0], [[-5, 15]])
    s.window_center, s.window_width = 5.0, 2.0
    np.testing.assert_allclose(stack_slices([s])[:, :, 0], [[0.0, 1.0]])


def test_volume_file_round_trip(tmp_path, rng):
    v = Volume(rng.random((3, 4, 5)).astype(np.float32), "00007", Modality.T2w)
    path = write_volume(v, tmp_path / "v.vol")
    back = read_volume(path, "00007")
    np.testing.assert_array_equal(back.voxels, v.voxels)
    assert back.modality is Modality.T2w and back.shape == (3, 4, 5)
    # depth-major on disk: the first H*W floats are slice 0
    first = np.frombuffer(encode_volume(v)[17 : 17 + 48], dtype="<f4")
    np.testing.assert_array_equal(first, v.voxels[:, :, 0].ravel())


@pytest.mark.parametrize("mangle", [lambda b: b"VOLX" + b[4:], lambda b: b[:-1], lambda b: b[:10]])
def test_volume_file_rejects_damage(mangle):
    data = encode_volume(Volume(np.zeros((2, 2, 2), dtype=np.float32)))
    with pytest.raises(BadVolumeFile):
        decode_volume(mangle(data))
