"""
From a map to a grasp
=====================

The peak of an affordance map, lifted to 3D with the depth map and camera
intrinsics, is where the functional fingertip should land. The hand model
then says where the wrist has to be, and force-feedback closure flexes the
fingers until the contact force stops curving.
"""
import numpy as np

from graspkit import synthetic as sy
from graspkit.dataset import default_gesture_table, lookup_gesture
from graspkit.hand_geometry import FingerId
from graspkit.kinematics import HandModel, force_feedback_closure, solve_grasp_pose

# A flat wall 0.6 m away with a light switch at pixel (row 20, column 41).
scene = sy.button_scene()
gesture = lookup_gesture(default_gesture_table(), "Click", "lightswitch")
print(f"gesture {gesture.id}: flexion {gesture.flexion}")

pose = solve_grasp_pose(scene.amap, scene.depth_map, scene.cam, HandModel.default(), gesture, FingerId.INDEX)
print("peak pixel", pose.pixel, "depth", pose.depth)
print("fingertip target", np.round(pose.p_wf, 6), "planted", np.round(scene.target, 6))
print("wrist position  ", np.round(pose.p_we, 6))

# Softer objects need more flexion before the force trace turns linear.
for k in (1.0, 5.0, 20.0):
    res = force_feedback_closure(gesture, sy.contact_world(gesture, k))
    print(f"stiffness {k:4.1f}: {res.status} after {res.iterations} steps, "
          f"final force {res.force_trace[-1]:.3f}")
