"""Affordance grounding metrics (KLD, SIM, NSS) and gesture precision tables.

Conventions: KLD is KL(gt || pred) on sum-normalized maps with ``EPS`` only in
the log denominator; NSS standardizes the prediction with the population
standard deviation and takes fixations where ``gt >= fix_thresh * max(gt)``.
"""
from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import N_GESTURES
from .errors import DataError, DimensionMismatch, EmptyFixations, MissingPair, ZeroMass
from .fileio import atomic_write_text, load_heatmap

EPS = 1e-12
MAP_SUFFIXES = (".gaft", ".pgm")


def _as_distribution(m, name):
    m = np.asarray(m, dtype=float)
    if np.any(m < 0):
        raise DataError(f"{name} map has negative values")
    s = m.sum()
    if not s > 0:
        raise ZeroMass(f"{name} map has no mass")
    return m / s


def _check_shapes(pred, gt):
    if np.shape(pred) != np.shape(gt):
        raise DimensionMismatch(f"pred {np.shape(pred)} vs gt {np.shape(gt)}")


def kld(pred, gt, eps: float = EPS) -> float:
    _check_shapes(pred, gt)
    p = _as_distribution(pred, "pred")
    q = _as_distribution(gt, "gt")
    nz = q > 0
    return float(np.sum(q[nz] * np.log(q[nz] / (p[nz] + eps))))


def sim(pred, gt) -> float:
    _check_shapes(pred, gt)
    return float(np.minimum(_as_distribution(pred, "pred"), _as_distribution(gt, "gt")).sum())


def nss(pred, gt, fix_thresh: float = 0.5) -> float:
    _check_shapes(pred, gt)
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    gmax = gt.max()
    if not gmax > 0:
        raise EmptyFixations("ground truth has no positive values")
    fix = gt >= fix_thresh * gmax
    sd = pred.std()
    if sd == 0:
        return 0.0
    z = (pred - pred.mean()) / sd
    return float(z[fix].mean())


@dataclass
class MetricReport:
    names: list
    kld: np.ndarray
    sim: np.ndarray
    nss: np.ndarray
    settings: dict = field(default_factory=dict)

    @property
    def count(self):
        return len(self.names)

    def means(self) -> dict:
        return {k: float(np.mean(getattr(self, k))) for k in ("kld", "sim", "nss")}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["image", "kld", "sim", "nss"])
        for row in zip(self.names, self.kld, self.sim, self.nss):
            w.writerow([row[0], *(repr(float(v)) for v in row[1:])])
        m = self.means()
        w.writerow(["AGGREGATE", repr(m["kld"]), repr(m["sim"]), repr(m["nss"])])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "count": self.count,
            "mean": self.means(),
            "per_image": [
                {"image": n, "kld": float(a), "sim": float(b), "nss": float(c)}
                for n, a, b, c in zip(self.names, self.kld, self.sim, self.nss)
            ],
            "settings": self.settings,
        }

    def write(self, out_dir, stem="metrics"):
        out_dir = Path(out_dir)
        atomic_write_text(out_dir / f"{stem}.csv", self.to_csv())
        atomic_write_text(out_dir / f"{stem}.json", json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")


def _map_files(d):
    out = {}
    for p in sorted(Path(d).iterdir()):
        if p.suffix.lower() in MAP_SUFFIXES:
            out.setdefault(p.stem, p)
    return out


def evaluate_pairs(pairs, fix_thresh: float = 0.5, workers: int = 1) -> MetricReport:
    """``pairs`` is a sequence of ``(name, pred, gt)`` map triples."""
    pairs = list(pairs)

    def one(item):
        _, p, g = item
        return kld(p, g), sim(p, g), nss(p, g, fix_thresh)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            rows = list(ex.map(one, pairs))
    else:
        rows = [one(x) for x in pairs]
    arr = np.array(rows, dtype=float).reshape(-1, 3)
    settings = {"kld_eps": EPS, "nss_fix_thresh": fix_thresh, "nss_std": "population", "aggregate": "mean"}
    return MetricReport([n for n, _, _ in pairs], arr[:, 0], arr[:, 1], arr[:, 2], settings)


def evaluate_grounding(pred_dir, gt_dir, fix_thresh: float = 0.5, workers: int = 1) -> MetricReport:
    """Score every prediction in ``pred_dir`` against the same-stem map in ``gt_dir``."""
    preds = _map_files(pred_dir)
    gts = _map_files(gt_dir)
    for name in sorted(set(preds) ^ set(gts)):
        raise MissingPair((preds.get(name) or gts[name]).name)
    names = sorted(preds)
    return evaluate_pairs(((n, load_heatmap(preds[n]), load_heatmap(gts[n])) for n in names), fix_thresh, workers)


@dataclass
class PrecisionTable:
    cells: dict  # (task, tool) -> {"tp", "fp", "precision"}
    task_ap: dict
    tool_ap: dict
    overall_ap: float

    def precision(self, task, tool):
        c = self.cells.get((task, tool))
        return None if c is None else c["precision"]

    def to_json(self) -> dict:
        return {
            "cells": [{"task": t, "tool": o, **v} for (t, o), v in sorted(self.cells.items())],
            "task_ap": self.task_ap,
            "tool_ap": self.tool_ap,
            "overall_ap": self.overall_ap,
        }


def gesture_precision(predictions) -> PrecisionTable:
    """Per (task, tool) precision TP / (TP + FP) with unweighted marginal averages.

    ``predictions`` holds ``(tool, task, predicted_gesture, true_gesture)`` tuples.
    Cells without predictions are absent rather than zero. Gesture ids must lie in 1..14.
    """
    counts = defaultdict(lambda: [0, 0])
    for tool, task, pred, true in predictions:
        for gid in (pred, true):
            if not 1 <= int(gid) <= N_GESTURES:
                raise DataError(f"gesture id {gid} outside 1..{N_GESTURES} for ({task}, {tool})")
        counts[(task, tool)][0 if int(pred) == int(true) else 1] += 1
    cells = {k: {"tp": tp, "fp": fp, "precision": tp / (tp + fp)} for k, (tp, fp) in counts.items()}
    by_task, by_tool = defaultdict(list), defaultdict(list)
    for (task, tool), c in cells.items():
        by_task[task].append(c["precision"])
        by_tool[tool].append(c["precision"])
    overall = float(np.mean([c["precision"] for c in cells.values()])) if cells else float("nan")
    return PrecisionTable(
        cells,
        {t: float(np.mean(v)) for t, v in sorted(by_task.items())},
        {t: float(np.mean(v)) for t, v in sorted(by_tool.items())},
        overall,
    )


def read_predictions_csv(path):
    """Rows of ``tool,task,predicted,true`` (header required)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"tool", "task", "predicted", "true"}
        if not need <= set(reader.fieldnames or ()):
            raise DataError(f"{path}: need columns {sorted(need)}")
        try:
            return [(r["tool"], r["task"], int(r["predicted"]), int(r["true"])) for r in reader]
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from exc
