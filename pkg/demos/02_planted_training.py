"""
Recovering a planted affordance region
======================================

Real exocentric/egocentric image pairs need a pretrained backbone, so this
walk-through trains on synthetic feature maps instead. Each class brightens
its own channel over a 5 x 5 square inside an object block, and each exo
sample carries a pointing hand whose fingertip sits on that square. After
training, the fine head's map for the class should light up the square.
"""
import sys

import numpy as np

from graspkit import synthetic as sy
from graspkit import tensor_core as tc
from graspkit.losses import LossConfig
from graspkit.training import AffordanceModel, TrainConfig, train_heads

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 50

data = sy.planted_dataset(seed=7)
print(f"{len(data.egos)} ego and {len(data.exos)} exo feature maps of shape {data.egos[0].features.shape}")

# Normalization statistics are frozen from the first batch before training.
model = AffordanceModel.init(data.depth, seed=7)
model.calibrate([e.features for e in data.egos[:3]])
result = train_heads(data.egos, data.exos, model, LossConfig(), TrainConfig(lr=1e-3, epochs=epochs, seed=7))

means = result.epoch_means()
for e in sorted({0, len(means) // 2, len(means) - 1}):
    print(f"epoch {e:3d}  mean total loss {means[e]:.3f}")

# Binarize each class-0 map at half its maximum and compare with the square.
ious = []
for ego, planted in zip(data.egos, data.masks):
    if ego.task == 0:
        maps, _ = model.fine.forward(ego.features)
        ious.append(tc.iou(tc.binarize(maps[0]), planted))
print(f"class-0 IoU against the planted square: mean {np.mean(ious):.3f}, worst {min(ious):.3f}")

# A small ASCII picture of one recovered map next to the planted square.
ego, planted = data.egos[0], data.masks[0]
m = tc.min_max_normalize(model.fine.forward(ego.features)[0][ego.task])
for row_m, row_p in zip(m, planted):
    print("".join(" .:*#"[int(v * 4.999)] for v in row_m), "  ", "".join("#" if p else "." for p in row_p))
