"""
Low-rank adapters and the audio-visual model
============================================

A fresh model matches its frozen backbone exactly, because every adapter
starts with B = 0. Only the adapter factors, the conditioner, the fusion
block and the class head are trainable.
"""

import numpy as np

from atlas_avs.config import preset
from atlas_avs.model import AtlasModel, anchored_parameters, lora_disabled, trainable_parameters
from atlas_avs.nn import LoRALinear
from atlas_avs.tensor import Tensor

rng = np.random.default_rng(1)

layer = LoRALinear(8, 4, 2, 4.0, rng, rng)
x = Tensor(rng.normal(size=(3, 8)))
base = x.data @ layer.W0.data.T + layer.bias.data
print("adapter is a no-op at init:", np.array_equal(layer(x).data, base))

cfg = preset("ss-desk").model
model = AtlasModel(cfg, seed=0)
model.head.expand(3)
n_train = sum(p.size for _, p in trainable_parameters(model))
n_anchor = sum(p.size for _, p in anchored_parameters(model))
print(f"trainable scalars: {n_train}, anchored scalars: {n_anchor}")

frames = rng.uniform(size=(2, 3, cfg.height, cfg.width, 3))
audio = rng.normal(size=(2, 3, cfg.d_raw))
logits, class_logits = model(frames, audio)
with lora_disabled(model):
    frozen, _ = model(frames, audio)
print("mask logits", logits.shape, "class logits", class_logits.shape)
print("identical to frozen path:", np.array_equal(logits.data, frozen.data))
