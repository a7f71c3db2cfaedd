"""
Segmentation and continual-learning metrics
===========================================
"""

import numpy as np

from atlas_avs.metrics import average_precision, aupr, cl_metrics, max_f, miou_dice_aupr

conf = np.array([0.9, 0.8, 0.8, 0.3, 0.1])
mask = np.array([1, 0, 1, 0, 1])
print("AP", average_precision(conf, mask), "AUPR", aupr(conf, mask))
print("max-F", max_f(conf, mask))
print("IoU / Dice / AUPR at 0.5", miou_dice_aupr(conf, mask))

# rows: after training task t; columns: evaluated task k
acc = [[0.8, 0.1],
       [0.6, 0.9]]
print(cl_metrics(acc).as_dict())
