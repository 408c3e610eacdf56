"""
Scoring maps and gestures
=========================

Localization maps are compared with ground-truth heatmaps through KLD,
SIM and NSS. Gesture predictions are scored per task-tool cell as
precision, then averaged per task, per tool and overall.
"""
import math

import numpy as np

from graspkit import synthetic as sy
from graspkit.dataset import PolygonAnnotation, polygons_to_heatmap
from graspkit.metrics import gesture_precision, kld, nss, sim

# Ground truth: three annotators outline roughly the same trigger region.
boxes = [[(10, 8), (20, 8), (20, 14), (10, 14)],
         [(11, 7), (21, 7), (21, 15), (11, 15)],
         [(9, 9), (19, 9), (19, 13), (9, 13)]]
gt = polygons_to_heatmap([PolygonAnnotation([b], 24, 32) for b in boxes], sigma=2.0)

yy, xx = np.mgrid[0:24, 0:32]
good = np.exp(-((yy - 11) ** 2 + (xx - 15) ** 2) / 30.0)
off = np.exp(-((yy - 4) ** 2 + (xx - 27) ** 2) / 30.0)
for name, pred in (("on target", good), ("off target", off), ("uniform", np.ones_like(good))):
    print(f"{name:10s}  KLD {kld(pred, gt):6.3f}  SIM {sim(pred, gt):5.3f}  NSS {nss(pred, gt):6.3f}")

# A lone spike predicting a lone fixation on a 3x3 grid: NSS = 2 * sqrt(2).
spike = np.zeros((3, 3))
spike[1, 1] = 1
print("3x3 spike NSS:", nss(spike, spike), "=", 2 * math.sqrt(2))

# Gesture precision from per-cell outcomes matching the published Hold row.
table = gesture_precision(sy.hold_row_predictions())
for (task, tool), cell in sorted(table.cells.items()):
    print(f"  {task}-{tool:11s} {cell['tp']}/{cell['tp'] + cell['fp']}")
print(f"Hold AP {100 * table.task_ap['Hold']:.2f}")
