"""Functional-finger affordance grounding, gesture prediction and grasp simulation.

Modules:

* ``hand_geometry``: functional finger from 21 hand landmarks
* ``tensor_core``: upsampling, ROI masks, pooling, k-means prototypes
* ``heads``, ``losses``, ``training``: localization heads and their training
* ``kinematics``: finger kinematics, wrist pose, force-feedback closure
* ``metrics``: KLD / SIM / NSS and gesture precision tables
* ``dataset``, ``fileio``: manifests, gesture tables, heatmaps, GAFT tensors
* ``synthetic``: seeded data with known answers
* ``cli``: the ``graspkit`` command
"""
__version__ = "0.1.0"
