"""Synthetic data with known answers: skeletons, planted feature maps, scenes.

Everything here is seeded and cheap, so it doubles as test fixtures and as
input for the demo scripts.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import TASKS, ManifestRecord, default_gesture_table, save_manifest, task_index
from .fileio import atomic_write_text, save_heatmap, save_tensor
from .hand_geometry import FINGER_JOINTS, FingerId, HandLandmarks
from .kinematics import CameraIntrinsics, ContactModel, back_project
from .training import EgoSample, ExoSample

# ---------------------------------------------------------------- skeletons

_BASE_X = {FingerId.THUMB: -0.9, FingerId.INDEX: -0.45, FingerId.MIDDLE: -0.15,
           FingerId.RING: 0.15, FingerId.PINKY: 0.45}
_SEGMENT = 0.3


def skeleton(bends, spread=0.0, thumb_angle=0.9) -> np.ndarray:
    """Hand-frame landmarks (21, 3): fingers point along +y, curling towards -z.

    ``bends`` gives the angle (rad) between proximal and middle phalanx of each
    finger, thumb first; the distal phalanx continues the middle one.
    """
    pts = np.zeros((21, 3))
    for f, joints in FINGER_JOINTS.items():
        if f is FingerId.THUMB:
            d = np.array([-math.sin(thumb_angle), math.cos(thumb_angle), 0.0])
            base = np.array([_BASE_X[f] * 0.5, 0.3, 0.0])
        else:
            a = spread * (f - 2.5)
            d = np.array([math.sin(a), math.cos(a), 0.0])
            base = np.array([_BASE_X[f], 1.0, 0.0])
        b = bends[f]
        # bend the middle and distal phalanges about the axis normal to d within the xy-plane
        bent = math.cos(b) * d + math.sin(b) * np.array([0.0, 0.0, -1.0])
        pip = base + _SEGMENT * d
        dip = pip + _SEGMENT * bent
        tip = dip + _SEGMENT * 0.8 * bent
        for i, p in zip(joints, (base, pip, dip, tip)):
            pts[i] = p
    return pts


def place(points, tip_index=None, target=(0.5, 0.5), scale=0.15, rotation=None) -> np.ndarray:
    """Map hand-frame points into normalized image coordinates (y down).

    With ``tip_index`` the chosen landmark lands exactly on ``target``.
    """
    P = np.asarray(points, dtype=float)
    if rotation is not None:
        P = P @ np.asarray(rotation).T
    img = np.stack([P[:, 0], -P[:, 1], P[:, 2]], axis=1) * scale
    anchor = img[tip_index] if tip_index is not None else img[0]
    return img - anchor + np.array([target[0], target[1], 0.0])


def open_palm() -> HandLandmarks:
    return HandLandmarks(place(skeleton([0.2, 0.0, 0.0, 0.0, 0.0]), target=(0.5, 0.8)))


def pointing_index(target=(0.5, 0.3)) -> HandLandmarks:
    """Index straight, other fingers curled; the index tip sits on ``target``."""
    pts = skeleton([0.8, 0.0, 1.6, 1.6, 1.6])
    return HandLandmarks(place(pts, FINGER_JOINTS[FingerId.INDEX][3], target))


def fist() -> HandLandmarks:
    return HandLandmarks(place(skeleton([1.2, 1.0, 1.9, 1.4, 2.2]), target=(0.5, 0.8)))


def random_rotation(rng) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_skeleton(rng, open_prob: float = 0.2) -> np.ndarray:
    """Random hand-frame skeleton; roughly ``open_prob`` of them are open palms."""
    if rng.random() < open_prob:
        bends = np.concatenate([[rng.uniform(0, 1.5)], rng.uniform(0, 0.3, 4)])
        spread = rng.uniform(-0.03, 0.03)
    else:
        bends = rng.uniform(0, 2.0, 5)
        spread = rng.uniform(-0.2, 0.2)
    return skeleton(bends, spread, rng.uniform(0.3, 1.2))


# ---------------------------------------------------------------- planted features

DEFAULT_CLASSES = (("Press", "drill"), ("Hold", "hammer"))


@dataclass
class PlantedDataset:
    egos: list
    exos: list
    masks: list  # planted region per ego sample, aligned with ``egos``
    exo_landmarks: list
    depth: int
    size: int


def planted_dataset(seed: int = 7, n_per_class: int = 12, depth: int = 8, size: int = 14, region: int = 5,
                    strength: float = 3.0, noise: float = 0.3, classes=DEFAULT_CLASSES, tasks=TASKS) -> PlantedDataset:
    """Feature maps where each class lights up its own channel over a square region.

    Every map has an 8x8 object block (channel ``depth-2`` on, ``depth-1`` off)
    at a random place; the class channel (the task index) gets ``+strength``
    over a ``region`` x ``region`` square inside the object. Exo samples carry
    a pointing-index hand whose tip sits on the region centre.
    """
    if depth < max(task_index(t, tasks) for t, _ in classes) + 3:
        raise ValueError("depth too small for the planted channels")
    if region > 8 or size < 10:
        raise ValueError("need region <= 8 and size >= 10")
    rng = np.random.default_rng(seed)
    table = default_gesture_table()
    egos, exos, masks, lms = [], [], [], []
    for task, tool in classes:
        t = task_index(task, tasks)
        g = table.gesture_id(task, tool) - 1
        for view in ("ego", "exo"):
            for i in range(n_per_class):
                F = rng.normal(0.0, noise, (depth, size, size))
                r0, c0 = rng.integers(1, size - 8, 2)
                obj = np.zeros((size, size))
                obj[r0 : r0 + 8, c0 : c0 + 8] = 1.0
                pr, pc = r0 + rng.integers(0, 9 - region), c0 + rng.integers(0, 9 - region)
                m = np.zeros((size, size))
                m[pr : pr + region, pc : pc + region] = 1.0
                F[depth - 1] += 1.0 - obj
                F[depth - 2] += obj
                F[t] += strength * m
                sid = f"{view}_{task}_{tool}_{i:03d}".lower()
                if view == "ego":
                    egos.append(EgoSample(F, t, int(g), (task, tool), None, sid))
                    masks.append(m.astype(bool))
                else:
                    tip = ((pc + region // 2) / (size - 1), (pr + region // 2) / (size - 1))
                    lm = pointing_index(tip)
                    lms.append(lm)
                    exos.append(ExoSample(F, (task, tool), lm.points[FINGER_JOINTS[FingerId.INDEX][3]].copy(), sid))
    return PlantedDataset(egos, exos, masks, lms, depth, size)


def write_planted_dataset(out_dir, data: PlantedDataset) -> Path:
    """Write features, landmarks, planted-region heatmaps and a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    recs = []
    for s, m in zip(data.egos, data.masks):
        save_tensor(out_dir / "features" / f"{s.id}.gaft", s.features)
        save_heatmap(out_dir / "heatmaps" / f"{s.id}.gaft", m.astype(float))
        recs.append(ManifestRecord(s.id, "ego", s.key[0], s.key[1], "train",
                                   f"features/{s.id}.gaft", f"heatmaps/{s.id}.gaft", ""))
    for s, lm in zip(data.exos, data.exo_landmarks):
        save_tensor(out_dir / "features" / f"{s.id}.gaft", s.features)
        atomic_write_text(out_dir / "landmarks" / f"{s.id}.json", json.dumps(lm.to_json()) + "\n")
        recs.append(ManifestRecord(s.id, "exo", s.key[0], s.key[1], "train",
                                   f"features/{s.id}.gaft", "", f"landmarks/{s.id}.json"))
    path = out_dir / "manifest.csv"
    save_manifest(path, recs)
    return path


# ---------------------------------------------------------------- gesture embeddings

def separable_embeddings(seed: int = 0, n_per_class: int = 20, dim: int = 16, n_classes: int = 14,
                         margin: float = 3.0, noise: float = 0.3):
    """Gaussian blobs around ``margin`` times one-hot centres; labels are 0-based."""
    if dim < n_classes:
        raise ValueError("dim must be at least n_classes")
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(n_classes), n_per_class)
    X = margin * np.eye(dim)[y] + rng.normal(0.0, noise, (len(y), dim))
    order = rng.permutation(len(y))
    return X[order], y[order]


# ---------------------------------------------------------------- precision table outcomes

# (task, tool) -> (correct, total) reproducing each published cell
PUBLISHED_CELL_OUTCOMES = {
    ("Hold", "flashlight"): (1, 2), ("Hold", "hammer"): (1, 1), ("Hold", "kettle"): (1, 2),
    ("Hold", "spatula"): (1, 2), ("Hold", "scissors"): (1, 4), ("Hold", "cup"): (1, 1),
    ("Hold", "doorhandle"): (1, 3), ("Hold", "bottle"): (1, 1), ("Hold", "knife"): (1, 1),
    ("Hold", "screwdriver"): (1, 1), ("Hold", "drill"): (1, 1),
    ("Press", "drill"): (1, 1), ("Press", "stapler"): (1, 2), ("Press", "spraybottle"): (1, 1),
    ("Click", "flashlight"): (1, 2), ("Click", "kettle"): (1, 2), ("Click", "lightswitch"): (1, 2),
    ("Click", "mouse"): (1, 1),
    ("Clamp", "knife"): (1, 1), ("Clamp", "plug"): (1, 3),
    ("Grip", "scissors"): (1, 1), ("Grip", "pliers"): (1, 2),
    ("Open", "bottle"): (1, 1), ("Open", "valve"): (1, 1),
}


def outcome_predictions(cells, table=None, all_correct: bool = False):
    """``(tool, task, predicted, true)`` rows realising the given (correct, total) per cell."""
    table = table or default_gesture_table()
    rows = []
    for (task, tool), (ok, n) in cells.items():
        true = table.gesture_id(task, tool)
        wrong = true % 14 + 1
        for i in range(n):
            rows.append((tool, task, true if all_correct or i < ok else wrong, true))
    return rows


def hold_row_predictions(all_correct: bool = False):
    return outcome_predictions({k: v for k, v in PUBLISHED_CELL_OUTCOMES.items() if k[0] == "Hold"},
                               all_correct=all_correct)


# ---------------------------------------------------------------- grasp scene

@dataclass
class ButtonScene:
    amap: np.ndarray
    depth_map: np.ndarray
    cam: CameraIntrinsics
    pixel: tuple  # (row, col)
    depth: float
    target: np.ndarray  # planted 3D point, world frame


def button_scene(h: int = 48, w: int = 64, pixel=(20, 41), depth: float = 0.6, sigma: float = 3.0,
                 cam: CameraIntrinsics | None = None) -> ButtonScene:
    """Flat wall at ``depth`` with a Gaussian affordance bump on ``pixel``."""
    cam = cam or CameraIntrinsics(500.0, 500.0, w / 2, h / 2)
    r, c = pixel
    yy, xx = np.mgrid[0:h, 0:w]
    amap = np.exp(-((yy - r) ** 2 + (xx - c) ** 2) / (2 * sigma**2))
    depth_map = np.full((h, w), float(depth))
    return ButtonScene(amap, depth_map, cam, (r, c), float(depth), back_project((c, r), depth, cam))


def contact_world(gesture, stiffness: float, gap: float = 0.2, fingers=None, noise: float = 0.0) -> ContactModel:
    """Each listed finger meets the object ``gap`` rad past its gesture flexion."""
    fingers = range(5) if fingers is None else fingers
    theta = [math.inf] * 5
    k = [0.0] * 5
    for f in fingers:
        theta[f] = gesture.flexion[f] + gap
        k[f] = float(stiffness)
    return ContactModel(tuple(theta), tuple(k), noise)
