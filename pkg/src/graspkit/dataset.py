"""Dataset plumbing: label vocabularies, manifests, the gesture table and
ground-truth heatmaps rasterized from annotator polygons."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .errors import DataError, DegeneratePolygon, ParseError, UnknownPair, VocabularyError
from .fileio import atomic_write_text
from .tensor_core import min_max_normalize

TASKS = ("Press", "Hold", "Click", "Clamp", "Grip", "Open")
TOOLS = (
    "flashlight", "hammer", "kettle", "spatula", "scissors", "cup",
    "doorhandle", "bottle", "knife", "screwdriver", "drill", "stapler",
    "spraybottle", "lightswitch", "mouse", "plug", "pliers", "valve",
)
VIEWS = ("exo", "ego")
SPLITS = ("train", "test")
N_GESTURES = 14

MANIFEST_COLUMNS = ("id", "view", "task", "tool", "split", "feature_path", "heatmap_path", "landmarks_path")


def _key(s: str) -> str:
    return "".join(str(s).split()).replace("_", "").replace("-", "").lower()


def canonical(label: str, vocab) -> str:
    """Case- and whitespace-insensitive vocabulary lookup ("Spray Bottle" -> "spraybottle")."""
    k = _key(label)
    for v in vocab:
        if _key(v) == k:
            return v
    raise VocabularyError(f"unknown label {label!r}")


def task_index(task: str, tasks=TASKS) -> int:
    return tasks.index(canonical(task, tasks))


@dataclass
class ManifestRecord:
    id: str
    view: str
    task: str
    tool: str
    split: str
    feature_path: str = ""
    heatmap_path: str = ""
    landmarks_path: str = ""


def _validate(rec: dict, where: str, tasks, tools) -> ManifestRecord:
    try:
        rec = {c: ("" if rec.get(c) is None else str(rec.get(c, ""))).strip() for c in MANIFEST_COLUMNS}
        if not rec["id"]:
            raise ParseError("empty id")
        rec["view"] = canonical(rec["view"], VIEWS)
        rec["task"] = canonical(rec["task"], tasks)
        rec["tool"] = canonical(rec["tool"], tools)
        rec["split"] = canonical(rec["split"], SPLITS)
    except (VocabularyError, ParseError) as exc:
        raise type(exc)(f"{where}: {exc}") from None
    if rec["view"] == "exo" and not rec["landmarks_path"]:
        raise DataError(f"{where}: exo record {rec['id']!r} needs landmarks_path")
    if rec["view"] == "ego" and rec["split"] == "test" and not rec["heatmap_path"]:
        raise DataError(f"{where}: ego test record {rec['id']!r} needs heatmap_path")
    return ManifestRecord(**rec)


def parse_manifest(text: str, fmt: str = "csv", tasks=TASKS, tools=TOOLS) -> list[ManifestRecord]:
    if fmt == "json":
        try:
            rows = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {exc.lineno}: {exc.msg}") from exc
        if isinstance(rows, dict):
            rows = rows.get("records")
        if not isinstance(rows, list):
            raise ParseError("expected a list of records")
        return [_validate(r, f"record {i}", tasks, tools) for i, r in enumerate(rows)]
    reader = csv.DictReader(io.StringIO(text))
    missing = set(MANIFEST_COLUMNS[:5]) - set(reader.fieldnames or ())
    if missing:
        raise ParseError(f"line 1: missing columns {sorted(missing)}")
    # header is line 1
    return [_validate(row, f"line {i}", tasks, tools) for i, row in enumerate(reader, start=2)]


def load_manifest(path, tasks=TASKS, tools=TOOLS) -> list[ManifestRecord]:
    path = Path(path)
    fmt = "json" if path.suffix.lower() == ".json" else "csv"
    return parse_manifest(path.read_text(), fmt, tasks, tools)


def save_manifest(path, records) -> None:
    path = Path(path)
    if path.suffix.lower() == ".json":
        atomic_write_text(path, json.dumps([asdict(r) for r in records], indent=2) + "\n")
        return
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=MANIFEST_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow(asdict(r))
    atomic_write_text(path, buf.getvalue())


@dataclass(frozen=True)
class GestureConfig:
    id: int
    flexion: tuple  # radians, thumb..pinky
    abduction: float  # thumb abduction, radians

    def __post_init__(self):
        if not 1 <= self.id <= N_GESTURES:
            raise DataError(f"gesture id {self.id} outside 1..{N_GESTURES}")
        if len(self.flexion) != 5:
            raise DataError("gesture needs five flexion angles")
        object.__setattr__(self, "flexion", tuple(float(a) for a in self.flexion))


@dataclass
class GestureTable:
    pairs: dict  # (task, tool) -> gesture id
    gestures: dict  # id -> GestureConfig
    tasks: tuple = TASKS
    tools: tuple = TOOLS

    def __post_init__(self):
        for pair, gid in self.pairs.items():
            if gid not in self.gestures:
                raise DataError(f"pair {pair} references gesture {gid} with no angle record")

    def gesture_id(self, task: str, tool: str) -> int:
        try:
            key = (canonical(task, self.tasks), canonical(tool, self.tools))
        except VocabularyError as exc:
            raise UnknownPair(str(exc)) from None
        if key not in self.pairs:
            raise UnknownPair(f"{key[0]}-{key[1]} is not a valid task-tool pair")
        return self.pairs[key]

    @classmethod
    def from_json(cls, doc: dict, tasks=TASKS, tools=TOOLS) -> "GestureTable":
        try:
            gestures = {
                int(g["id"]): GestureConfig(int(g["id"]), tuple(g["flexion"]), float(g["abduction"]))
                for g in doc["gestures"]
            }
            pairs = {}
            for p in doc["pairs"]:
                key = (canonical(p["task"], tasks), canonical(p["tool"], tools))
                pairs[key] = int(p["gesture_id"])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DataError):
                raise
            raise ParseError(f"bad gesture table: {exc!r}") from exc
        return cls(pairs, gestures, tuple(tasks), tuple(tools))

    def to_json(self) -> dict:
        return {
            "pairs": [{"task": t, "tool": o, "gesture_id": g} for (t, o), g in self.pairs.items()],
            "gestures": [
                {"id": g.id, "flexion": list(g.flexion), "abduction": g.abduction}
                for g in sorted(self.gestures.values(), key=lambda g: g.id)
            ],
        }


def lookup_gesture(table: GestureTable, task: str, tool: str) -> GestureConfig:
    return table.gestures[table.gesture_id(task, tool)]


def load_gesture_table(path) -> GestureTable:
    with open(path) as fh:
        try:
            return GestureTable.from_json(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc


# Valid task-tool cells of the published precision table, each with a coarse
# gesture id. The id assignment is a placeholder grouping by grasp style.
DEFAULT_PAIRS = {
    ("Hold", "flashlight"): 1, ("Hold", "hammer"): 1, ("Hold", "kettle"): 4,
    ("Hold", "spatula"): 1, ("Hold", "scissors"): 5, ("Hold", "cup"): 6,
    ("Hold", "doorhandle"): 7, ("Hold", "bottle"): 6, ("Hold", "knife"): 1,
    ("Hold", "screwdriver"): 1, ("Hold", "drill"): 1,
    ("Press", "drill"): 2, ("Press", "stapler"): 3, ("Press", "spraybottle"): 2,
    ("Click", "flashlight"): 8, ("Click", "kettle"): 8, ("Click", "lightswitch"): 9,
    ("Click", "mouse"): 10,
    ("Clamp", "knife"): 11, ("Clamp", "plug"): 11,
    ("Grip", "scissors"): 12, ("Grip", "pliers"): 13,
    ("Open", "bottle"): 14, ("Open", "valve"): 14,
}

# Placeholder joint angles in radians: (thumb, index, middle, ring, pinky), abduction.
_DEFAULT_ANGLES = {
    1: ((0.60, 0.90, 0.95, 1.00, 1.05), 0.90),   # power wrap
    2: ((0.60, 0.35, 0.95, 1.00, 1.05), 0.90),   # trigger: index free
    3: ((0.30, 0.50, 0.60, 0.70, 0.80), 0.20),   # palm press
    4: ((0.50, 1.10, 1.15, 1.20, 1.25), 0.60),   # hook
    5: ((0.70, 0.80, 0.80, 1.00, 1.10), 1.00),   # closed-blade hold
    6: ((0.45, 0.70, 0.75, 0.80, 0.85), 1.20),   # cylindrical
    7: ((0.40, 0.85, 0.90, 0.95, 1.00), 0.50),   # lever handle
    8: ((0.20, 0.95, 1.00, 1.05, 1.10), 0.70),   # thumb press
    9: ((0.70, 0.10, 1.20, 1.25, 1.30), 0.60),   # index poke
    10: ((0.30, 0.25, 0.30, 0.35, 0.40), 0.40),  # palm over, index on button
    11: ((0.50, 0.55, 1.10, 1.15, 1.20), 1.10),  # pinch
    12: ((0.35, 0.40, 0.80, 0.90, 1.00), 0.80),  # finger loops
    13: ((0.55, 0.80, 0.85, 0.90, 0.95), 0.95),  # two-handle squeeze
    14: ((0.50, 0.60, 0.65, 0.70, 0.75), 1.30),  # cap twist
}


def default_gesture_table() -> GestureTable:
    gestures = {i: GestureConfig(i, f, a) for i, (f, a) in _DEFAULT_ANGLES.items()}
    return GestureTable(dict(DEFAULT_PAIRS), gestures)


@dataclass
class PolygonAnnotation:
    polygons: list
    height: int
    width: int

    def __post_init__(self):
        self.polygons = [np.asarray(p, dtype=float) for p in self.polygons]
        for p in self.polygons:
            if p.ndim != 2 or p.shape[1] != 2 or len(p) < 3:
                raise DegeneratePolygon("a polygon needs at least three (x, y) vertices")
            if np.any(p[:, 0] < 0) or np.any(p[:, 0] > self.width) or np.any(p[:, 1] < 0) or np.any(p[:, 1] > self.height):
                raise DataError("polygon vertex outside the image")
            x, y = p[:, 0], p[:, 1]
            if abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) == 0:
                raise DegeneratePolygon("polygon has zero area")


def rasterize_polygon(poly, h: int, w: int) -> np.ndarray:
    """Even-odd fill sampled at pixel centres (col + 0.5, row + 0.5)."""
    poly = np.asarray(poly, dtype=float)
    ys, xs = np.mgrid[0:h, 0:w] + 0.5
    inside = np.zeros((h, w), dtype=bool)
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    for ax, ay, bx, by in zip(x0, y0, x1, y1):
        if ay == by:
            continue
        crosses = (ay > ys) != (by > ys)
        x_int = ax + (ys - ay) * (bx - ax) / (by - ay)
        inside ^= crosses & (xs < x_int)
    return inside


def rasterize_annotation(ann: PolygonAnnotation) -> np.ndarray:
    out = np.zeros((ann.height, ann.width), dtype=bool)
    for p in ann.polygons:
        out |= rasterize_polygon(p, ann.height, ann.width)
    return out.astype(float)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(m: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with half-sample reflection at the borders."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    k = gaussian_kernel(sigma)
    out = correlate1d(np.asarray(m, dtype=float), k, axis=0, mode="reflect")
    return correlate1d(out, k, axis=1, mode="reflect")


def average_annotations(anns) -> np.ndarray:
    """Per-pixel fraction of annotators whose polygons cover the pixel."""
    anns = list(anns)
    if not anns:
        raise DataError("no annotations")
    h, w = anns[0].height, anns[0].width
    if any((a.height, a.width) != (h, w) for a in anns):
        raise DataError("annotations disagree on image size")
    return np.mean([rasterize_annotation(a) for a in anns], axis=0)


def polygons_to_heatmap(anns, sigma: float) -> np.ndarray:
    return min_max_normalize(gaussian_blur(average_annotations(anns), sigma))
