"""Model-based post-processing: from an affordance pixel to a wrist-end pose,
followed by a simulated force-feedback closure of the coarse gesture."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import GestureConfig
from .errors import DataError, InvalidRotation, JointLimit, NoContact, NonPositiveDepth
from .hand_geometry import FingerId
from .tensor_core import argmax_pixel

FLEXION_LIMITS = (0.0, math.pi / 2)
ABDUCTION_LIMITS = (0.0, math.pi / 2)


@dataclass(frozen=True)
class FingerModel:
    l1: float  # proximal link, m
    l2: float  # distal link, m
    delta: float = 0.0  # mounting angle, rad
    # joint angle = a * command + b, for each of the two flexion joints
    a1: float = 1.0
    b1: float = 0.0
    a2: float = 1.0
    b2: float = 0.0

    def __post_init__(self):
        if not (self.l1 > 0 and self.l2 > 0):
            raise DataError("link lengths must be positive")
        if self.a1 == 0 or self.a2 == 0:
            raise DataError("joint map slopes must be non-zero")


@dataclass(frozen=True)
class HandModel:
    fingers: tuple  # five FingerModels, thumb first
    p_he: np.ndarray = field(default_factory=lambda: np.zeros(3))
    flexion_limits: tuple = FLEXION_LIMITS
    abduction_limits: tuple = ABDUCTION_LIMITS

    def __post_init__(self):
        if len(self.fingers) != 5:
            raise DataError("hand model needs five fingers")
        p = np.asarray(self.p_he, dtype=float)
        if p.shape != (3,) or not np.all(np.isfinite(p)):
            raise DataError("p_he must be a finite 3-vector")
        object.__setattr__(self, "p_he", p)
        object.__setattr__(self, "fingers", tuple(self.fingers))

    @classmethod
    def default(cls) -> "HandModel":
        """Inspire-like placeholder: 32 mm / 38 mm links, 10 degree mounting angle."""
        f = FingerModel(0.032, 0.038, math.radians(10.0))
        return cls((f,) * 5, np.array([-0.12, 0.0, 0.0]))

    @classmethod
    def from_json(cls, doc: dict) -> "HandModel":
        try:
            fingers = tuple(FingerModel(**{k: float(v) for k, v in f.items()}) for f in doc["fingers"])
            return cls(
                fingers,
                np.asarray(doc.get("p_he", [0, 0, 0]), dtype=float),
                tuple(doc.get("flexion_limits", FLEXION_LIMITS)),
                tuple(doc.get("abduction_limits", ABDUCTION_LIMITS)),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"bad hand model: {exc!r}") from exc

    def to_json(self) -> dict:
        return {
            "fingers": [vars(f).copy() for f in self.fingers],
            "p_he": self.p_he.tolist(),
            "flexion_limits": list(self.flexion_limits),
            "abduction_limits": list(self.abduction_limits),
        }


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))  # camera -> world
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DataError("focal lengths must be positive")
        R = np.asarray(self.rotation, dtype=float)
        check_rotation(R)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))

    @classmethod
    def from_json(cls, doc: dict) -> "CameraIntrinsics":
        try:
            return cls(
                float(doc["fx"]), float(doc["fy"]), float(doc["cx"]), float(doc["cy"]),
                np.asarray(doc.get("rotation", np.eye(3)), dtype=float),
                np.asarray(doc.get("translation", [0, 0, 0]), dtype=float),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad camera: {exc!r}") from exc

    def project(self, p_world) -> tuple[float, float, float]:
        """World point -> (u, v, depth)."""
        pc = self.rotation.T @ (np.asarray(p_world, dtype=float) - self.translation)
        return self.fx * pc[0] / pc[2] + self.cx, self.fy * pc[1] / pc[2] + self.cy, pc[2]


@dataclass(frozen=True)
class ContactModel:
    theta_contact: tuple  # per finger, rad; inf for a finger that never touches
    stiffness: tuple  # per finger, N/rad
    noise: float = 0.0

    def __post_init__(self):
        if len(self.theta_contact) != 5 or len(self.stiffness) != 5:
            raise DataError("contact model needs five fingers")
        if any(k < 0 for k in self.stiffness):
            raise DataError("stiffness must be non-negative")

    @classmethod
    def from_json(cls, doc: dict) -> "ContactModel":
        try:
            fingers = doc["fingers"]
            return cls(
                tuple(float(f.get("theta_contact", math.inf)) for f in fingers),
                tuple(float(f.get("stiffness", 0.0)) for f in fingers),
                float(doc.get("noise", 0.0)),
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise DataError(f"bad contact model: {exc!r}") from exc


@dataclass
class GraspPose:
    p_wf: np.ndarray
    r_wf: np.ndarray
    p_we: np.ndarray
    p_hf: np.ndarray
    pixel: tuple
    depth: float

    def to_json(self) -> dict:
        return {
            "p_wf": self.p_wf.tolist(),
            "p_we": self.p_we.tolist(),
            "r_wf": self.r_wf.reshape(-1).tolist(),
            "p_hf": self.p_hf.tolist(),
            "pixel": list(self.pixel),
            "depth": self.depth,
        }


def rot_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(gamma: float) -> np.ndarray:
    c, s = math.cos(gamma), math.sin(gamma)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def check_rotation(R, tol: float = 1e-9) -> None:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.allclose(R.T @ R, np.eye(3), atol=tol) or abs(np.linalg.det(R) - 1) > tol:
        raise InvalidRotation("matrix is not a proper rotation")


def _check_limits(name, value, limits):
    lo, hi = limits
    if not lo <= value <= hi:
        raise JointLimit(f"{name}={value:.6g} outside [{lo:.6g}, {hi:.6g}]")


def fingertip_in_hand(fm: FingerModel, theta1: float, theta2: float, limits=FLEXION_LIMITS) -> np.ndarray:
    """Fingertip in the hand frame for a two-link planar finger."""
    _check_limits("theta1", theta1, limits)
    _check_limits("theta2", theta2, limits)
    return rot_z(theta2) @ np.array([fm.l2, 0.0, 0.0]) + rot_z(theta1 + theta2 + fm.delta) @ np.array([fm.l1, 0.0, 0.0])


def thumb_abduction(p_flexion, gamma: float) -> np.ndarray:
    return rot_y(gamma) @ np.asarray(p_flexion, dtype=float)


def back_project(pixel, depth: float, cam: CameraIntrinsics) -> np.ndarray:
    """Pixel ``(u, v)`` = (column, row) at metric depth -> world point."""
    if not depth > 0:
        raise NonPositiveDepth(f"depth {depth} at pixel {pixel}")
    u, v = pixel
    pc = np.array([(u - cam.cx) * depth / cam.fx, (v - cam.cy) * depth / cam.fy, depth])
    return cam.rotation @ pc + cam.translation


def joint_angles_from_command(hm: HandModel, finger, theta_cmd: float) -> tuple[float, float]:
    fm = hm.fingers[int(finger)]
    t1 = fm.a1 * theta_cmd + fm.b1
    t2 = fm.a2 * theta_cmd + fm.b2
    _check_limits("theta1", t1, hm.flexion_limits)
    _check_limits("theta2", t2, hm.flexion_limits)
    return t1, t2


def command_from_joint_angle(fm: FingerModel, theta1: float) -> float:
    return (theta1 - fm.b1) / fm.a1


def wrist_from_fingertip(p_wf, r_wf, p_hf, p_he) -> np.ndarray:
    check_rotation(r_wf)
    return np.asarray(r_wf) @ (np.asarray(p_he, dtype=float) - np.asarray(p_hf, dtype=float)) + np.asarray(p_wf, dtype=float)


def fingertip_from_wrist(p_we, r_wf, p_hf, p_he) -> np.ndarray:
    check_rotation(r_wf)
    return np.asarray(p_we, dtype=float) - np.asarray(r_wf) @ (np.asarray(p_he, dtype=float) - np.asarray(p_hf, dtype=float))


def hand_fingertip(hm: HandModel, g: GestureConfig, func) -> np.ndarray:
    """Functional fingertip in the hand frame for gesture ``g``."""
    func = FingerId(func)
    t1, t2 = joint_angles_from_command(hm, func, g.flexion[func])
    p = fingertip_in_hand(hm.fingers[func], t1, t2, hm.flexion_limits)
    if func is FingerId.THUMB:
        _check_limits("abduction", g.abduction, hm.abduction_limits)
        p = thumb_abduction(p, g.abduction)
    return p


def read_depth(depth_map: np.ndarray, pixel) -> float:
    """Median of positive depths in the 3x3 window around ``(row, col)``."""
    r, c = pixel
    win = depth_map[max(r - 1, 0) : r + 2, max(c - 1, 0) : c + 2]
    valid = win[win > 0]
    if depth_map[r, c] <= 0 or valid.size == 0:
        raise NonPositiveDepth(f"no positive depth at pixel {pixel}")
    return float(np.median(valid))


def solve_grasp_pose(amap, depth_map, cam: CameraIntrinsics, hm: HandModel, g: GestureConfig, func, r_wf=None) -> GraspPose:
    amap = np.asarray(amap)
    depth_map = np.asarray(depth_map, dtype=float)
    if amap.shape != depth_map.shape:
        raise DataError(f"affordance map {amap.shape} vs depth map {depth_map.shape}")
    r_wf = np.eye(3) if r_wf is None else np.asarray(r_wf, dtype=float)
    check_rotation(r_wf)
    row, col = argmax_pixel(amap)
    z = read_depth(depth_map, (row, col))
    p_wf = back_project((col, row), z, cam)
    p_hf = hand_fingertip(hm, g, func)
    p_we = wrist_from_fingertip(p_wf, r_wf, p_hf, hm.p_he)
    return GraspPose(p_wf, r_wf, p_we, p_hf, (row, col), z)


@dataclass
class ClosureResult:
    final_angles: np.ndarray
    force_trace: np.ndarray  # total force per iteration
    finger_forces: np.ndarray  # (iterations + 1, 5)
    status: str  # "converged" or "best_effort"
    iterations: int

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def contact_forces(theta, contacts: ContactModel) -> np.ndarray:
    k = np.asarray(contacts.stiffness, dtype=float)
    tc = np.asarray(contacts.theta_contact, dtype=float)
    with np.errstate(invalid="ignore"):
        f = k * (theta - tc)
    return np.where(k > 0, np.maximum(f, 0.0), 0.0)


def force_feedback_closure(g: GestureConfig, contacts: ContactModel, step: float = 0.05, eps: float = 1e-3,
                           max_iter: int = 200, limits=FLEXION_LIMITS, seed: int = 0) -> ClosureResult:
    """Flex every finger by ``step`` per iteration until the contact force stops curving.

    Stops once every finger in contact has ``|second difference of force| / step**2 < eps``
    and the total force is positive. Raises :class:`NoContact` if the iteration cap is
    reached with zero force; otherwise a capped run returns status ``"best_effort"``.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    theta0 = np.asarray(g.flexion, dtype=float)
    for i, t in enumerate(theta0):
        _check_limits(f"flexion[{i}]", t, limits)
    rng = np.random.default_rng(seed)

    def read(theta):
        f = contact_forces(theta, contacts)
        if contacts.noise > 0:
            f = np.maximum(0.0, f + contacts.noise * rng.uniform(-1.0, 1.0, 5) * (f > 0))
        return f

    theta = theta0.copy()
    history = [read(theta)]
    status = "best_effort"
    n = 0
    for n in range(1, max_iter + 1):
        theta = np.minimum(theta0 + n * step, limits[1])
        history.append(read(theta))
        if n < 2:
            continue
        f2, f1, f0 = history[-1], history[-2], history[-3]
        touching = f2 > 0
        if touching.any():
            d2 = np.abs(f2 - 2 * f1 + f0) / step**2
            if np.all(d2[touching] < eps):
                status = "converged"
                break
    forces = np.array(history)
    total = forces.sum(1)
    if status != "converged" and total[-1] <= 0:
        raise NoContact(f"no contact force after {n} iterations")
    return ClosureResult(theta, total, forces, status, n)


def load_json(path) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: {exc}") from exc
