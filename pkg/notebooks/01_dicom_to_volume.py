"""
From DICOM slices to a normalized volume
========================================

Writes a small synthetic dataset, reads one series back and walks it through
windowing, resampling and normalization.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from radiovit.dicom import read_dicom
from radiovit.synth import SynthSpec, generate_dataset
from radiovit.volume import apply_voi_lut, build_volume, read_volume, stack_slices, write_volume

root = Path(tempfile.mkdtemp())
index = generate_dataset(SynthSpec(num_subjects=4, dims=(32, 32, 16), seed=3), root)
print(index.subject_ids(), index.labels)

# %%
# every slice carries a 2048/4096 window, so the stack already lies in [0, 1]
entry = index.subjects[0]
slices = [read_dicom(p) for p in entry.series["T1wCE"]]
print(slices[0].rows, slices[0].cols, slices[0].bits_stored, slices[0].window_center, slices[0].window_width)
raw = stack_slices(slices)
print("stacked", raw.shape, raw.min(), raw.max())

# %%
# the linear window maps c - 0.5 to the middle of the output range
print(apply_voi_lut([0, 2047.5, 4095], 2048, 4096))

# %%
# resample to the model grid and min-max scale
vol = build_volume(slices, (64, 64, 32), entry.subject_id, "T1wCE")
print(vol.shape, float(vol.voxels.min()), float(vol.voxels.max()))

# %%
# cached as a VOL1 file: float32, slice by slice
path = write_volume(vol, root / "cached.vol")
back = read_volume(path)
print(path.stat().st_size, np.abs(back.voxels - vol.voxels).max())
