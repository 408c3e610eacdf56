"""Joint training of the fine/coarse localization heads and the gesture classifier.

Each step takes ``batch_size`` egocentric samples; every one is paired with
``exo_per_batch`` exocentric samples sharing its (task, tool) label. Exo
samples supply two supervision targets:

* fine: the mean backbone feature inside a disc of radius ``roi_radius``
  around the functional fingertip on the 448x448 upsampled grid;
* coarse: the k-means prototype of the exo patches whose similarity map
  overlaps the ego saliency map best.

The losses read the class activations before the output ReLU, so a class
map pushed below zero everywhere can still recover; inference uses the
rectified maps. Gradients are averaged over the batch and applied with plain
SGD plus weight decay. During warm-up epochs the cosine term is left out of
the total.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor_core as tc
from .dataset import TASKS
from .errors import AllEmpty, DataError, DataInconsistency, ZeroMass, ZeroPrototype
from .fileio import atomic_write_text, load_tensor, save_tensor
from .hand_geometry import roi_center
from .heads import GestureClassifier, LocalizationHead, gap_backward, gap_scores
from .losses import (
    LossConfig,
    cosine_margin_loss_grad,
    cross_entropy_grad,
    normalized_concentration_grad,
    normalized_pool_grad,
)

ROI_GRID = 448
TRACE_COLUMNS = ("step", "epoch", "L_cos", "L_c", "L_class", "L_f", "total")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 5e-4
    batch_size: int = 3
    exo_per_batch: int = 3
    epochs: int = 1
    seed: int = 0
    roi_radius: float = 20.0
    n_prototypes: int = 3
    iou_thresh: float = 0.5

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")
        if self.batch_size < 1 or self.exo_per_batch < 1 or self.epochs < 0:
            raise ValueError("batch_size and exo_per_batch must be >= 1, epochs >= 0")
        if not self.roi_radius > 0:
            raise ValueError("roi_radius must be positive")


@dataclass
class EgoSample:
    features: np.ndarray
    task: int
    gesture: int  # 0-based class index
    key: tuple  # (task name, tool name) used to pair exo samples
    saliency: np.ndarray | None = None
    id: str = ""


@dataclass
class ExoSample:
    features: np.ndarray
    key: tuple
    fingertip: np.ndarray  # normalized (x, y[, z])
    id: str = ""


class AffordanceModel:
    """Fine head, coarse head and gesture classifier trained together."""

    PARTS = ("fine", "coarse", "classifier")

    def __init__(self, fine: LocalizationHead, coarse: LocalizationHead, classifier: GestureClassifier, tasks=TASKS):
        self.fine = fine
        self.coarse = coarse
        self.classifier = classifier
        self.tasks = tuple(tasks)

    @classmethod
    def init(cls, depth: int, seed: int, tasks=TASKS, hidden=None) -> "AffordanceModel":
        rng = np.random.default_rng(seed)
        fine = LocalizationHead.init(depth, len(tasks), rng)
        coarse = LocalizationHead.init(depth, len(tasks), rng)
        return cls(fine, coarse, GestureClassifier.init(depth, rng, hidden), tasks)

    @property
    def depth(self):
        return self.fine.depth

    def named_params(self) -> dict:
        out = {}
        for part in self.PARTS:
            for k, v in getattr(self, part).params.items():
                out[f"{part}.{k}"] = v
        return out

    def named_buffers(self) -> dict:
        return {f"{part}.{k}": v for part in ("fine", "coarse") for k, v in getattr(self, part).buffers.items()}

    def calibrate(self, features) -> None:
        self.fine.calibrate(features)
        self.coarse.calibrate(features)

    def copy(self) -> "AffordanceModel":
        fine = LocalizationHead({k: v.copy() for k, v in self.fine.params.items()},
                                {k: v.copy() for k, v in self.fine.buffers.items()}, self.fine.eps)
        coarse = LocalizationHead({k: v.copy() for k, v in self.coarse.params.items()},
                                  {k: v.copy() for k, v in self.coarse.buffers.items()}, self.coarse.eps)
        clf = GestureClassifier({k: v.copy() for k, v in self.classifier.params.items()})
        return AffordanceModel(fine, coarse, clf, self.tasks)

    def save(self, out_dir) -> None:
        """Write one GAFT file per tensor plus ``manifest.json``."""
        out_dir = Path(out_dir)
        entries = []
        for role, group in (("param", self.named_params()), ("buffer", self.named_buffers())):
            for name, arr in group.items():
                fname = f"{name}.gaft"
                save_tensor(out_dir / fname, np.atleast_1d(arr))
                entries.append({"name": name, "role": role, "shape": list(np.shape(arr)), "file": fname})
        manifest = {
            "format": "graspkit-checkpoint",
            "version": 1,
            "tasks": list(self.tasks),
            "norm_eps": self.fine.eps,
            "classifier_layers": self.classifier.n_layers,
            "tensors": entries,
        }
        atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, ckpt_dir) -> "AffordanceModel":
        ckpt_dir = Path(ckpt_dir)
        try:
            manifest = json.loads((ckpt_dir / "manifest.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"{ckpt_dir}: unreadable checkpoint manifest ({exc})") from exc
        groups = {p: ({}, {}) for p in cls.PARTS}
        for t in manifest["tensors"]:
            part, key = t["name"].split(".", 1)
            arr = load_tensor(ckpt_dir / t["file"]).astype(float).reshape(t["shape"])
            groups[part][0 if t["role"] == "param" else 1][key] = arr
        eps = float(manifest.get("norm_eps", 1e-5))
        return cls(
            LocalizationHead(*groups["fine"], eps),
            LocalizationHead(*groups["coarse"], eps),
            GestureClassifier(groups["classifier"][0]),
            manifest["tasks"],
        )


def exo_target(features, fingertip, radius: float = 20.0, size: int = ROI_GRID) -> np.ndarray:
    """Fine-grained supervision embedding: ROI-pooled upsampled exo features."""
    up = tc.bilinear_upsample(features, size, size)
    mask = tc.circular_mask(size, size, roi_center(fingertip, size), radius)
    try:
        return tc.masked_average_pool(tc.apply_mask(up, mask), mask.mask)
    except ZeroMass as exc:
        raise DataInconsistency(f"ROI around fingertip {tuple(fingertip)} is empty") from exc


def default_saliency(features) -> np.ndarray:
    return np.linalg.norm(features, axis=0)


def coarse_prototype(ego_features, exo_features, saliency=None, k: int = 3, seed: int = 0, iou_thresh: float = 0.5):
    """Pick the exo patch prototype whose similarity map best matches the ego saliency.

    Returns ``None`` when no candidate map survives binarization.
    """
    X = np.concatenate([tc.patches(f) for f in exo_features])
    protos = tc.cluster_prototypes(X, k=min(k, len(X)), seed=seed)
    sal = default_saliency(ego_features) if saliency is None else saliency
    sims = []
    for c in protos.centroids:
        try:
            sims.append(tc.similarity_map(ego_features, c))
        except ZeroPrototype:
            sims.append(np.zeros(ego_features.shape[1:]))
    try:
        return protos.centroids[tc.select_prototype_by_iou(sims, sal, iou_thresh)]
    except AllEmpty:
        return None


def _add(acc, grads, prefix, scale=1.0):
    for k, v in grads.items():
        acc[f"{prefix}.{k}"] += scale * v


def sample_loss(model: AffordanceModel, ego: EgoSample, f_ops, proto, loss_cfg: LossConfig, warmup: bool):
    """Loss parts and parameter gradients for one ego sample."""
    F = np.asarray(ego.features, dtype=float)
    t = ego.task
    grads = {k: np.zeros_like(v) for k, v in model.named_params().items()}
    w_cos = 0.0 if warmup else 1.0
    parts = {"L_cos": 0.0, "L_c": 0.0, "L_class": 0.0, "L_f": 0.0}
    g_maps = {}
    caches = {}
    pooled = {}
    for branch in ("fine", "coarse"):
        _, cache = getattr(model, branch).forward(F)
        maps = cache["s"]
        caches[branch] = (maps, cache)
        g = np.zeros_like(maps)
        lf, g_scores = cross_entropy_grad(gap_scores(maps), t)
        parts["L_f"] += lf
        g += gap_backward(maps.shape, g_scores)
        lc, g_c = normalized_concentration_grad(maps)
        parts["L_c"] += lc
        g += loss_cfg.lambda_c * g_c
        try:
            pooled[branch] = normalized_pool_grad(F, maps[t])
        except ZeroMass:
            pooled[branch] = None
        g_maps[branch] = g

    def pool_back(branch, g_emb):
        g_maps[branch][t] += pooled[branch][1](g_emb)

    if pooled["fine"] is not None:
        e_f = pooled["fine"][0]
        g_e = np.zeros_like(e_f)
        for f_op in f_ops:
            l, _, ge = cosine_margin_loss_grad(f_op, e_f, loss_cfg.alpha)
            parts["L_cos"] += l / len(f_ops)
            g_e += ge / len(f_ops)
        if w_cos:
            pool_back("fine", g_e)

    if pooled["coarse"] is not None:
        e_c = pooled["coarse"][0]
        if proto is not None:
            l, _, ge = cosine_margin_loss_grad(proto, e_c, loss_cfg.alpha)
            parts["L_cos"] += l
            if w_cos:
                pool_back("coarse", ge)
    else:
        e_c = F.mean((1, 2))

    scores, ccache = model.classifier.forward(e_c)
    lcls, g_s = cross_entropy_grad(scores, ego.gesture)
    parts["L_class"] = lcls
    cgrads, g_e = model.classifier.backward(ccache, g_s)
    _add(grads, cgrads, "classifier")
    if pooled["coarse"] is not None:
        pool_back("coarse", g_e)

    for branch in ("fine", "coarse"):
        hgrads, _ = getattr(model, branch).backward(caches[branch][1], g_maps[branch], wrt="scores")
        _add(grads, hgrads, branch)
    parts["total"] = w_cos * parts["L_cos"] + loss_cfg.lambda_c * parts["L_c"] + parts["L_class"] + parts["L_f"]
    return parts, grads


@dataclass
class TrainResult:
    model: AffordanceModel
    trace: list = field(default_factory=list)

    def epoch_means(self, column="total"):
        epochs = sorted({r["epoch"] for r in self.trace})
        return [float(np.mean([r[column] for r in self.trace if r["epoch"] == e])) for e in epochs]

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.trace:
            w.writerow([r["step"], r["epoch"], *(repr(float(r[c])) for c in TRACE_COLUMNS[2:])])
        return buf.getvalue()


def _group_exo(exo_samples):
    pools = {}
    for i, s in enumerate(exo_samples):
        pools.setdefault(tuple(s.key), []).append(i)
    return pools


def train_heads(ego_samples, exo_samples, model: AffordanceModel, loss_cfg: LossConfig = LossConfig(),
                train_cfg: TrainConfig = TrainConfig(), log=None) -> TrainResult:
    """Train ``model`` in place; returns it with the per-step loss trace."""
    ego_samples = list(ego_samples)
    exo_samples = list(exo_samples)
    D = model.depth
    for s in ego_samples + exo_samples:
        if s.features.ndim != 3 or s.features.shape[0] != D:
            raise DataInconsistency(f"sample {s.id!r}: features {s.features.shape} do not match depth {D}")
    for s in ego_samples:
        if not 0 <= s.task < model.fine.n_classes:
            raise DataInconsistency(f"sample {s.id!r}: task index {s.task} out of range")
        if not 0 <= s.gesture < model.classifier.out_dim:
            raise DataInconsistency(f"sample {s.id!r}: gesture index {s.gesture} out of range")
    pools = _group_exo(exo_samples)
    for s in ego_samples:
        if tuple(s.key) not in pools:
            raise DataInconsistency(f"ego sample {s.id!r}: no exo sample shares label {s.key}")

    f_ops = [exo_target(s.features, s.fingertip, train_cfg.roi_radius) for s in exo_samples]
    rng = np.random.default_rng(train_cfg.seed)
    params = model.named_params()
    proto_cache = {}
    result = TrainResult(model)
    step = 0
    for epoch in range(train_cfg.epochs):
        warmup = epoch < loss_cfg.warmup_epochs_without_cos
        order = rng.permutation(len(ego_samples))
        for start in range(0, len(order), train_cfg.batch_size):
            batch = order[start : start + train_cfg.batch_size]
            acc = {k: np.zeros_like(v) for k, v in params.items()}
            sums = dict.fromkeys(TRACE_COLUMNS[2:], 0.0)
            for i in batch:
                ego = ego_samples[i]
                pool = pools[tuple(ego.key)]
                picks = rng.choice(pool, train_cfg.exo_per_batch, replace=len(pool) < train_cfg.exo_per_batch)
                picks = tuple(sorted(int(p) for p in picks))
                key = (int(i), picks)
                if key not in proto_cache:
                    proto_cache[key] = coarse_prototype(
                        ego.features, [exo_samples[p].features for p in picks], ego.saliency,
                        train_cfg.n_prototypes, train_cfg.seed, train_cfg.iou_thresh,
                    )
                parts, grads = sample_loss(model, ego, [f_ops[p] for p in picks], proto_cache[key], loss_cfg, warmup)
                for k in acc:
                    acc[k] += grads[k]
                for k in sums:
                    sums[k] += parts[k]
            n = len(batch)
            for k, p in params.items():
                p -= train_cfg.lr * (acc[k] / n + train_cfg.weight_decay * p)
            row = {"step": step, "epoch": epoch, **{k: v / n for k, v in sums.items()}}
            result.trace.append(row)
            if log is not None:
                log(row)
            step += 1
    return result


def train_classifier(clf: GestureClassifier, X, y, train_cfg: TrainConfig = TrainConfig()) -> list:
    """Minibatch SGD on cross-entropy for the gesture classifier alone. Returns epoch mean losses."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if len(X) != len(y):
        raise DataInconsistency("embeddings and labels differ in length")
    rng = np.random.default_rng(train_cfg.seed)
    losses = []
    for _ in range(train_cfg.epochs):
        order = rng.permutation(len(X))
        epoch_loss = []
        for start in range(0, len(order), train_cfg.batch_size):
            batch = order[start : start + train_cfg.batch_size]
            acc = {k: np.zeros_like(v) for k, v in clf.params.items()}
            for i in batch:
                scores, cache = clf.forward(X[i])
                l, g = cross_entropy_grad(scores, int(y[i]))
                grads, _ = clf.backward(cache, g)
                for k in acc:
                    acc[k] += grads[k]
                epoch_loss.append(l)
            for k, p in clf.params.items():
                p -= train_cfg.lr * (acc[k] / len(batch) + train_cfg.weight_decay * p)
        losses.append(float(np.mean(epoch_loss)))
    return losses


def predict_gesture(clf: GestureClassifier, e) -> int:
    """1-based gesture id with the highest score (lowest id on ties)."""
    return int(np.argmax(clf.forward(e)[0])) + 1
