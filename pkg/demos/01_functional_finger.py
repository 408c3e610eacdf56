"""
Which finger does the work?
===========================

A hand in an exocentric image tells us where on a tool the action happens.
The functional finger is the one that touches the working part: the thumb
when the other four fingers lie flat together, otherwise the straightest of
the four. Its tip, scaled onto a 448 x 448 grid, centres the region whose
features supervise the localization head.
"""
import numpy as np

from graspkit import synthetic as sy
from graspkit import tensor_core as tc
from graspkit.hand_geometry import (
    FingerId, adjacent_parallelism, finger_bending, functional_finger, functional_fingertip, roi_center,
)

# Three hand shapes built from a simple kinematic skeleton.
hands = {"open palm": sy.open_palm(), "pointing": sy.pointing_index((0.62, 0.35)), "fist": sy.fist()}

for name, lm in hands.items():
    bends = [finger_bending(lm, f) for f in FingerId]
    print(f"{name:10s} parallel={adjacent_parallelism(lm)!s:5s} "
          f"bending={np.round(bends, 3)} -> {functional_finger(lm).name}")

# The choice only depends on angles, so it survives scaling, rotation and
# translation of the whole skeleton.
rng = np.random.default_rng(0)
lm = hands["pointing"]
moved = type(lm)(3.7 * lm.points @ sy.random_rotation(rng).T + rng.normal(size=3))
print("after a random similarity transform:", functional_finger(moved).name)

# The fingertip picks the ROI: a radius-20 disc on the 448 grid.
tip = functional_fingertip(lm, functional_finger(lm))
center = roi_center(tip)
mask = tc.circular_mask(448, 448, center, 20)
print(f"fingertip {np.round(tip[:2], 4)} -> ROI centre {center}, {int(mask.mask.sum())} pixels")
