"""
A 3D vision transformer in numpy
================================

Patches, one forward pass, and a spot check of the hand-written backward pass
against central differences.
"""

# %%
import numpy as np

from radiovit.vit3d import Vit3d, Vit3dConfig, init_params, patchify, vit_backward, vit_forward

# a full-size 256x256x64 volume cut into 32-voxel cubes gives 128 tokens
print(patchify(np.zeros((256, 256, 64), dtype=np.float32), 32).shape)
print(patchify(np.zeros((256, 256, 64), dtype=np.float32), 16).shape)

# %%
config = Vit3dConfig(image_size=(16, 16, 16), patch_size=8, embed_dim=16, num_blocks=2, num_heads=4)
model = Vit3d.initialize(config, seed=0, dtype=np.float64)
rng = np.random.default_rng(0)
volume = rng.random((16, 16, 16))
print("p(positive) =", model.predict_proba(volume))

# %%
# backward of the raw logit, compared with a finite difference on one weight
for name in model.params:
    model.params[name] += 0.2 * rng.standard_normal(model.params[name].shape)
logits, cache = vit_forward(model.params, config, volume, train=False)
grads = vit_backward(model.params, config, cache, np.ones(1))

w = model.params["blocks.1.w1"]
h = 1e-5
w[3, 7] += h
up = vit_forward(model.params, config, volume)[0][0]
w[3, 7] -= 2 * h
down = vit_forward(model.params, config, volume)[0][0]
w[3, 7] += h
print("analytic", grads["blocks.1.w1"][3, 7], "numeric", (up - down) / (2 * h))

# %%
# parameter count of the default configuration
full = init_params(Vit3dConfig(), 0)
print(sum(p.size for p in full.values()), "parameters")
