"""
Procedural audio-visual scenes
==============================

Each class has a shape, a color and an audio prototype. Schedules split the
classes into tasks for the four continual protocols.
"""

import numpy as np

from atlas_avs.config import preset
from atlas_avs.data import schedule_from_config

for protocol in ("til", "cil", "dil", "tfcl"):
    cfg = preset("ms-desk" if protocol == "tfcl" else "ss-desk", protocol)
    sched = schedule_from_config(cfg, seed=0)
    print(protocol, "tasks:", len(sched.tasks), "classes of task 0:", sched.tasks[0].classes)

sched = schedule_from_config(preset("ss-desk"), seed=0)
s = sched.samples(0)[0]
print("frames", s.frames.shape, "audio", s.audio.shape, "masks", s.masks.shape)
print("supervised frames", s.supervised, "label", s.class_label)

# a coarse text rendering of the first mask
for row in s.masks[0]:
    print("".join("#" if v else "." for v in row))

# the same key always yields the same scene
again = sched.samples(0)[0]
print("deterministic:", np.array_equal(s.frames, again.frames))
