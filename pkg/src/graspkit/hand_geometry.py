"""Functional-finger selection from 21 hand landmarks.

Landmark layout: index 0 is the wrist, then four points per finger ordered
base to tip (thumb 1-4, index 5-8, middle 9-12, ring 13-16, pinky 17-20).
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DegenerateFinger, DegeneratePhalanx

N_LANDMARKS = 21


class FingerId(enum.IntEnum):
    THUMB = 0
    INDEX = 1
    MIDDLE = 2
    RING = 3
    PINKY = 4


# (base/MCP, PIP, DIP, tip) landmark indices per finger
FINGER_JOINTS = {
    FingerId.THUMB: (1, 2, 3, 4),
    FingerId.INDEX: (5, 6, 7, 8),
    FingerId.MIDDLE: (9, 10, 11, 12),
    FingerId.RING: (13, 14, 15, 16),
    FingerId.PINKY: (17, 18, 19, 20),
}

NON_THUMB = (FingerId.INDEX, FingerId.MIDDLE, FingerId.RING, FingerId.PINKY)


@dataclass(frozen=True)
class HandLandmarks:
    points: np.ndarray
    handedness: str = "right"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.shape != (N_LANDMARKS, 3):
            raise DataError(f"expected 21x3 landmarks, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DataError("landmark coordinates must be finite")
        if self.handedness not in ("left", "right"):
            raise DataError(f"handedness must be 'left' or 'right', got {self.handedness!r}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_json(cls, doc: dict) -> "HandLandmarks":
        try:
            return cls(np.asarray(doc["points"], dtype=float), doc.get("handedness", "right"))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"bad landmarks document: {exc}") from exc

    def to_json(self) -> dict:
        return {"handedness": self.handedness, "points": self.points.tolist()}


def load_landmarks(path) -> HandLandmarks:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: {exc}") from exc
    return HandLandmarks.from_json(doc)


@dataclass(frozen=True)
class ParallelismConfig:
    angle_threshold: float = 0.26  # radians, about 15 degrees

    def __post_init__(self):
        if not 0.0 < self.angle_threshold < math.pi / 2:
            raise ValueError("angle_threshold must lie in (0, pi/2)")


def finger_direction_vectors(lm: HandLandmarks) -> np.ndarray:
    """Return a (5, 3) array of tip-minus-base vectors, thumb first."""
    out = np.empty((5, 3))
    for f, (base, _, _, tip) in FINGER_JOINTS.items():
        v = lm.points[tip] - lm.points[base]
        if not np.any(v):
            raise DegenerateFinger(f)
        out[f] = v
    return out


def _cos(a, b):
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def adjacent_parallelism(lm: HandLandmarks, cfg: ParallelismConfig = ParallelismConfig()) -> bool:
    """True when index/middle, middle/ring and ring/pinky are all within the angle threshold."""
    v = finger_direction_vectors(lm)
    cos_min = math.cos(cfg.angle_threshold)
    return all(_cos(v[a], v[b]) > cos_min for a, b in zip(NON_THUMB[:-1], NON_THUMB[1:]))


def finger_bending(lm: HandLandmarks, f: FingerId) -> float:
    # 1 - cos of the angle between proximal (MCP->PIP) and middle (PIP->DIP) phalanges
    f = FingerId(f)
    p1, p2, p3, _ = (lm.points[i] for i in FINGER_JOINTS[f])
    u1 = p2 - p1
    u2 = p3 - p2
    n1 = np.linalg.norm(u1)
    n2 = np.linalg.norm(u2)
    if n1 == 0.0 or n2 == 0.0:
        raise DegeneratePhalanx(f)
    c = float(np.dot(u1, u2) / (n1 * n2))
    return 1.0 - min(1.0, max(-1.0, c))


def functional_finger(lm: HandLandmarks, cfg: ParallelismConfig = ParallelismConfig()) -> FingerId:
    """Pick the finger that performs the task.

    An open palm (all four non-thumb fingers parallel) selects the thumb;
    otherwise the straightest non-thumb finger wins, lowest id on ties.
    """
    if adjacent_parallelism(lm, cfg):
        return FingerId.THUMB
    scores = [finger_bending(lm, f) for f in NON_THUMB]
    return NON_THUMB[int(np.argmin(scores))]


def functional_fingertip(lm: HandLandmarks, f: FingerId) -> np.ndarray:
    return lm.points[FINGER_JOINTS[FingerId(f)][3]].copy()


def roi_center(tip: np.ndarray, size: int = 448) -> tuple[int, int]:
    """Map a normalized fingertip (x, y) onto pixel coordinates of a size x size grid."""
    return int(round(float(tip[0]) * (size - 1))), int(round(float(tip[1]) * (size - 1)))
