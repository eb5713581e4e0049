"""Seeded augmentation: lossless 90-degree family, flips, and random in-plane affines."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import NonSquarePlane
from .volume import Volume


class AugmentKind(str, Enum):
    Rot90CW = "Rot90CW"
    Rot90CCW = "Rot90CCW"
    Rot180 = "Rot180"
    HFlip = "HFlip"
    RandomAffine = "RandomAffine"


@dataclass(frozen=True)
class AugmentPolicy:
    kind: AugmentKind = AugmentKind.RandomAffine
    max_rotation_deg: float = 36.0
    max_translate_frac: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.max_rotation_deg < 0:
            raise ValueError("max_rotation_deg must be non-negative")
        if not 0 <= self.max_translate_frac < 1:
            raise ValueError("max_translate_frac must lie in [0, 1)")


def sample_rng(seed: int, *index: int) -> np.random.Generator:
    """Independent generator for one (seed, sample index, ...) coordinate."""
    return np.random.default_rng([seed, *index])


def rotate90(v: Volume, k: int) -> Volume:
    """Rotate every slice by ``k`` quarter turns clockwise."""
    k = int(k) % 4
    if k % 2 and v.height != v.width:
        raise NonSquarePlane(f"{v.height}x{v.width} plane cannot turn by 90 degrees in place")
    return v.with_voxels(np.ascontiguousarray(np.rot90(v.voxels, -k, axes=(0, 1))))


def horizontal_flip(v: Volume) -> Volume:
    return v.with_voxels(np.ascontiguousarray(v.voxels[:, ::-1, :]))


def sample_affine(policy: AugmentPolicy, rng: np.random.Generator, height: int, width: int) -> tuple[float, float, float]:
    """Draw (angle in degrees, row offset, column offset) for one volume."""
    angle = rng.uniform(-policy.max_rotation_deg, policy.max_rotation_deg)
    f = policy.max_translate_frac
    dx = rng.uniform(-f * width, f * width)
    dy = rng.uniform(-f * height, f * height)
    return float(angle), float(dy), float(dx)


def affine_slices(voxels: np.ndarray, angle_deg: float, dy: float, dx: float) -> np.ndarray:
    """Rotate each slice about its center by ``angle_deg`` (clockwise as
    displayed, rows pointing down) then shift by (dy, dx) pixels. Bilinear
    sampling; samples falling outside the slice read as 0."""
    h, w = voxels.shape[:2]
    theta = np.deg2rad(angle_deg)
    cos, sin = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    # inverse map: undo the shift, then rotate back
    y = rows - dy - cy
    x = cols - dx - cx
    src_y = cos * y - sin * x + cy
    src_x = sin * y + cos * x + cx

    padded = np.pad(voxels, ((1, 1), (1, 1), (0, 0)))
    src_y = np.clip(src_y + 1.0, 0.0, h + 1.0)
    src_x = np.clip(src_x + 1.0, 0.0, w + 1.0)
    y0 = np.minimum(np.floor(src_y).astype(np.intp), h)
    x0 = np.minimum(np.floor(src_x).astype(np.intp), w)
    fy = (src_y - y0)[..., None]
    fx = (src_x - x0)[..., None]
    top = padded[y0, x0] * (1 - fx) + padded[y0, x0 + 1] * fx
    bottom = padded[y0 + 1, x0] * (1 - fx) + padded[y0 + 1, x0 + 1] * fx
    return (top * (1 - fy) + bottom * fy).astype(voxels.dtype, copy=False)


def random_affine(v: Volume, policy: AugmentPolicy, rng: np.random.Generator) -> Volume:
    angle, dy, dx = sample_affine(policy, rng, v.height, v.width)
    return v.with_voxels(affine_slices(v.voxels, angle, dy, dx))


def apply_policy(v: Volume, policy: AugmentPolicy, rng: np.random.Generator | None = None) -> Volume:
    if policy.kind is AugmentKind.Rot90CW:
        return rotate90(v, 1)
    if policy.kind is AugmentKind.Rot90CCW:
        return rotate90(v, 3)
    if policy.kind is AugmentKind.Rot180:
        return rotate90(v, 2)
    if policy.kind is AugmentKind.HFlip:
        return horizontal_flip(v)
    return random_affine(v, policy, rng if rng is not None else np.random.default_rng(policy.seed))


EXPANSION_TURNS = (1, 3, 2)


def expand_training_set(volumes: list[Volume]) -> list[Volume]:
    """Originals followed by their clockwise, counterclockwise and 180-degree turns.

    Output ``i`` derives from input ``i % len(volumes)``.
    """
    out = list(volumes)
    for k in EXPANSION_TURNS:
        out.extend(rotate90(v, k) for v in volumes)
    return out
