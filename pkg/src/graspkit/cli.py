"""``graspkit`` command line: funcfinger, train-heads, infer, eval, grasp-sim, render.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric or convergence
error. Every command is deterministic given its inputs and seed.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import tensor_core as tc
from .dataset import default_gesture_table, load_gesture_table, load_manifest, lookup_gesture, task_index
from .errors import DataError, DataInconsistency, DimensionMismatch, NoContact, NumericError, UnknownTask, VocabularyError
from .fileio import atomic_write_text, load_heatmap, load_tensor, read_pnm, save_tensor, write_pgm, write_ppm
from .hand_geometry import FingerId, functional_finger, functional_fingertip, load_landmarks, roi_center
from .kinematics import CameraIntrinsics, ContactModel, HandModel, force_feedback_closure, load_json, solve_grasp_pose
from .losses import LossConfig
from .metrics import evaluate_grounding, gesture_precision, read_predictions_csv
from .training import ROI_GRID, AffordanceModel, EgoSample, ExoSample, TrainConfig, predict_gesture, train_heads

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


@dataclass
class PipelineConfig:
    manifest: str | None = None
    gesture_table: str | None = None
    hand_model: str | None = None
    camera: str | None = None
    contacts: str | None = None
    checkpoint: str | None = None
    out_dir: str = "out"
    roi_radius: float = 20.0
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not self.roi_radius > 0:
            raise DataError("roi_radius must be positive")

    @classmethod
    def from_json(cls, doc: dict, base_dir=".") -> "PipelineConfig":
        """Relative paths in ``doc`` resolve against ``base_dir`` (the config file's folder)."""
        doc = dict(doc)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        try:
            loss = LossConfig(**doc.pop("loss", {}))
            train = TrainConfig(**doc.pop("train", {}))
        except (TypeError, ValueError) as exc:
            raise DataError(f"bad config: {exc}") from exc
        for k in ("manifest", "gesture_table", "hand_model", "camera", "contacts", "checkpoint", "out_dir"):
            if doc.get(k) is not None:
                doc[k] = str(Path(base_dir) / doc[k])
        return cls(loss=loss, train=train, **doc)

    def to_json(self) -> dict:
        return asdict(self)


def load_config(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    return PipelineConfig.from_json(load_json(path), Path(path).parent)


def _write_json(path, doc):
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _need(value, what):
    if value is None:
        raise DataError(f"no {what} given (flag or config)")
    return value


# ---------------------------------------------------------------- funcfinger

def cmd_funcfinger(landmarks_file, roi_out, radius: float = 20.0) -> dict:
    lm = load_landmarks(landmarks_file)
    f = functional_finger(lm)
    tip = functional_fingertip(lm, f)
    center = roi_center(tip, ROI_GRID)
    mask = tc.circular_mask(ROI_GRID, ROI_GRID, center, radius)
    write_pgm(roi_out, mask.mask)
    return {"finger": f, "fingertip": tip, "roi_center": center, "roi_pixels": int(mask.mask.sum())}


# ---------------------------------------------------------------- train-heads

def load_training_samples(manifest_path, table=None, split="train"):
    """Build ego and exo samples from a manifest; file paths resolve against its folder."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    table = table or default_gesture_table()
    egos, exos = [], []
    for rec in load_manifest(manifest_path):
        if rec.split != split:
            continue
        if not rec.feature_path:
            raise DataInconsistency(f"record {rec.id!r} has no feature_path")
        F = load_tensor(root / rec.feature_path).astype(float)
        key = (rec.task, rec.tool)
        if rec.view == "ego":
            g = table.gesture_id(rec.task, rec.tool) - 1
            egos.append(EgoSample(F, task_index(rec.task), g, key, None, rec.id))
        else:
            lm = load_landmarks(root / rec.landmarks_path)
            exos.append(ExoSample(F, key, functional_fingertip(lm, functional_finger(lm)), rec.id))
    if not egos:
        raise DataInconsistency(f"no ego records in split {split!r}")
    return egos, exos


def cmd_train_heads(cfg: PipelineConfig, out_dir, log=None):
    table = load_gesture_table(cfg.gesture_table) if cfg.gesture_table else default_gesture_table()
    egos, exos = load_training_samples(_need(cfg.manifest, "manifest"), table)
    model = AffordanceModel.init(egos[0].features.shape[0], cfg.seed)
    # normalization statistics come from the first batch in manifest order
    model.calibrate([e.features for e in egos[: cfg.train.batch_size]])
    train_cfg = replace(cfg.train, seed=cfg.seed, roi_radius=cfg.roi_radius)
    result = train_heads(egos, exos, model, cfg.loss, train_cfg, log)
    out_dir = Path(out_dir)
    model.save(out_dir / "checkpoint")
    atomic_write_text(out_dir / "loss_trace.csv", result.trace_csv())
    return result


# ---------------------------------------------------------------- infer

def coarse_embedding(model: AffordanceModel, F, t: int):
    maps, _ = model.coarse.forward(F)
    m = maps[t]
    if m.max() > m.min():
        return tc.masked_average_pool(F, tc.min_max_normalize(m))
    return F.mean((1, 2))


def cmd_infer(features, task: str, model: AffordanceModel, size: int = ROI_GRID):
    """Return ``(map, gesture_id)``: the class-t fine map, upsampled and min-max normalized, as float32."""
    try:
        t = task_index(task, model.tasks)
    except VocabularyError as exc:
        raise UnknownTask(str(exc)) from exc
    F = np.asarray(features, dtype=float)
    maps, _ = model.fine.forward(F)
    up = tc.min_max_normalize(tc.bilinear_upsample(maps[t], size, size)).astype(np.float32)
    return up, predict_gesture(model.classifier, coarse_embedding(model, F, t))


# ---------------------------------------------------------------- render

_RAMP = np.array([[0.0, 0.0, 0.5], [0.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0], [1.0, 0.0, 0.0]])


def color_ramp(m):
    """Piecewise-linear dark-blue -> blue -> cyan -> yellow -> red ramp on [0, 1]."""
    m = np.clip(np.asarray(m, dtype=float), 0.0, 1.0)
    x = np.linspace(0.0, 1.0, len(_RAMP))
    return np.stack([np.interp(m, x, _RAMP[:, c]) for c in range(3)], axis=-1)


def load_base_image(path):
    px, maxval = read_pnm(path)
    img = px.astype(float) / maxval
    return np.repeat(img[..., None], 3, axis=-1) if img.ndim == 2 else img


def render_overlay(m, base=None, alpha_max: float = 0.6):
    """Blend the ramp colour of ``m`` (clipped to [0, 1]) over ``base`` with alpha ``alpha_max * m``.

    Without a base image the ramp itself is returned. Output is uint8 RGB.
    """
    m = np.clip(np.asarray(m, dtype=float), 0.0, 1.0)
    color = color_ramp(m)
    if base is None:
        out = color
    else:
        base = np.asarray(base, dtype=float)
        if base.shape[:2] != m.shape:
            raise DimensionMismatch(f"map {m.shape} vs base image {base.shape[:2]}")
        a = (alpha_max * m)[..., None]
        out = (1.0 - a) * base + a * color
    return np.round(out * 255).astype(np.uint8)


# ---------------------------------------------------------------- grasp-sim

def cmd_grasp_sim(amap, depth_map, cam, hm, gesture, func, contacts, target=None, tol: float = 1e-3, seed: int = 0):
    """Solve the approach pose and run force-feedback closure; returns a JSON-ready dict and the trace."""
    pose = solve_grasp_pose(amap, depth_map, cam, hm, gesture, func)
    doc = {"pose": pose.to_json(), "functional_finger": int(func), "gesture_id": gesture.id}
    trace = None
    try:
        closure = force_feedback_closure(gesture, contacts, seed=seed)
    except NoContact as exc:
        doc.update(success=False, reason="NoContact", detail=str(exc))
        return doc, trace
    trace = closure
    doc["closure"] = {"status": closure.status, "iterations": closure.iterations,
                      "final_angles": closure.final_angles.tolist()}
    ok = closure.converged
    reason = "" if ok else "NotConverged"
    if target is not None:
        err = float(np.linalg.norm(pose.p_wf - np.asarray(target, dtype=float)))
        doc["target_error"] = err
        if err > tol:
            ok, reason = False, reason or "TargetMiss"
    doc.update(success=ok, reason=reason)
    return doc, trace


def trace_csv(closure) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "total", *(f"f{i}" for i in range(5))])
    if closure is not None:
        for i, (tot, row) in enumerate(zip(closure.force_trace, closure.finger_forces)):
            w.writerow([i, repr(float(tot)), *(repr(float(v)) for v in row)])
    return buf.getvalue()


# ---------------------------------------------------------------- argument parsing

class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="PipelineConfig JSON")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out-dir", default=argparse.SUPPRESS)

    p = _Parser(prog="graspkit", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("funcfinger", parents=[common], help="functional finger and ROI mask from landmarks")
    s.add_argument("landmarks")
    s.add_argument("--roi-out", help="ROI mask PGM (default OUT_DIR/roi.pgm)")
    s.add_argument("--radius", type=float, help="ROI radius in pixels (default from config, 20)")

    s = sub.add_parser("train-heads", parents=[common], help="train localization heads and gesture classifier")
    s.add_argument("--manifest")
    s.add_argument("--gesture-table")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--quiet", action="store_true")

    s = sub.add_parser("infer", parents=[common], help="localization map and gesture id for one feature map")
    s.add_argument("features", help="GAFT (D, H, W) feature tensor")
    s.add_argument("--task", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--name", default="map", help="output file stem")

    s = sub.add_parser("eval", parents=[common], help="KLD/SIM/NSS over a prediction folder")
    s.add_argument("pred_dir")
    s.add_argument("gt_dir")
    s.add_argument("--predictions", help="CSV of tool,task,predicted,true gesture ids")
    s.add_argument("--fix-thresh", type=float, default=0.5)
    s.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("grasp-sim", parents=[common], help="approach pose and force-feedback closure")
    s.add_argument("map", help="affordance map (GAFT or PGM)")
    s.add_argument("depth", help="depth map in meters (GAFT rank-2)")
    s.add_argument("--camera")
    s.add_argument("--hand-model")
    s.add_argument("--contacts")
    s.add_argument("--gesture-table")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--gesture-id", type=int)
    g.add_argument("--pair", nargs=2, metavar=("TASK", "TOOL"))
    s.add_argument("--finger", type=int, choices=range(5), default=int(FingerId.INDEX))
    s.add_argument("--target", type=float, nargs=3)
    s.add_argument("--tol", type=float, default=1e-3)

    s = sub.add_parser("render", parents=[common], help="colour-ramp overlay PPM")
    s.add_argument("map")
    s.add_argument("--base", help="PGM/PPM base image")
    s.add_argument("--alpha-max", type=float, default=0.6)
    s.add_argument("--out", help="output PPM (default OUT_DIR/overlay.ppm)")
    return p


def _resolve(args):
    cfg = load_config(getattr(args, "config", None))
    if hasattr(args, "seed"):
        cfg.seed = args.seed
    if hasattr(args, "out_dir"):
        cfg.out_dir = args.out_dir
    return cfg, Path(cfg.out_dir)


def _run(args, out) -> int:
    cfg, out_dir = _resolve(args)
    cmd = args.command
    if cmd == "funcfinger":
        radius = args.radius if args.radius is not None else cfg.roi_radius
        if not radius > 0:
            raise DataError("radius must be positive")
        rep = cmd_funcfinger(args.landmarks, args.roi_out or out_dir / "roi.pgm", radius)
        f = rep["finger"]
        print(f"functional_finger: {int(f)} ({f.name.lower()})", file=out)
        print("fingertip: " + " ".join(f"{v:.6f}" for v in rep["fingertip"]), file=out)
        print(f"roi_center: {rep['roi_center'][0]} {rep['roi_center'][1]}", file=out)
        print(f"roi_pixels: {rep['roi_pixels']}", file=out)
    elif cmd == "train-heads":
        if args.manifest:
            cfg.manifest = args.manifest
        if args.gesture_table:
            cfg.gesture_table = args.gesture_table
        if args.epochs is not None:
            cfg.train = replace(cfg.train, epochs=args.epochs)
        if args.lr is not None:
            cfg.train = replace(cfg.train, lr=args.lr)
        res = cmd_train_heads(cfg, out_dir)
        means = res.epoch_means()
        if not args.quiet:
            for e, m in enumerate(means):
                print(f"epoch {e}: total {m:.6f}", file=out)
        print(f"checkpoint: {out_dir / 'checkpoint'}", file=out)
    elif cmd == "infer":
        model = AffordanceModel.load(_need(args.checkpoint or cfg.checkpoint, "checkpoint"))
        F = load_tensor(args.features).astype(float)
        m, gid = cmd_infer(F, args.task, model)
        save_tensor(out_dir / f"{args.name}.gaft", m)
        write_pgm(out_dir / f"{args.name}.pgm", m)
        _write_json(out_dir / f"{args.name}.json", {"task": args.task, "gesture_id": gid, "map": f"{args.name}.gaft"})
        print(f"gesture_id: {gid}", file=out)
    elif cmd == "eval":
        rep = evaluate_grounding(args.pred_dir, args.gt_dir, args.fix_thresh, args.workers)
        rep.write(out_dir)
        m = rep.means()
        print(f"images: {rep.count}  KLD {m['kld']:.4f}  SIM {m['sim']:.4f}  NSS {m['nss']:.4f}", file=out)
        if args.predictions:
            table = gesture_precision(read_predictions_csv(args.predictions))
            _write_json(out_dir / "gesture_precision.json", table.to_json())
            for task, ap in table.task_ap.items():
                print(f"AP {task}: {100 * ap:.2f}", file=out)
            print(f"AP overall: {100 * table.overall_ap:.2f}", file=out)
    elif cmd == "grasp-sim":
        amap = load_heatmap(args.map)
        depth = load_heatmap(args.depth) if args.depth.lower().endswith(".pgm") else load_tensor(args.depth).astype(float)
        cam = CameraIntrinsics.from_json(load_json(_need(args.camera or cfg.camera, "camera")))
        hm_path = args.hand_model or cfg.hand_model
        hm = HandModel.from_json(load_json(hm_path)) if hm_path else HandModel.default()
        gt_path = args.gesture_table or cfg.gesture_table
        table = load_gesture_table(gt_path) if gt_path else default_gesture_table()
        if args.pair:
            gesture = lookup_gesture(table, *args.pair)
        else:
            if args.gesture_id not in table.gestures:
                raise DataError(f"unknown gesture id {args.gesture_id}")
            gesture = table.gestures[args.gesture_id]
        contacts = ContactModel.from_json(load_json(_need(args.contacts or cfg.contacts, "contact model")))
        doc, closure = cmd_grasp_sim(amap, depth, cam, hm, gesture, args.finger, contacts, args.target, args.tol, cfg.seed)
        _write_json(out_dir / "grasp.json", doc)
        atomic_write_text(out_dir / "force_trace.csv", trace_csv(closure))
        print(f"success: {str(doc['success']).lower()}" + (f" ({doc['reason']})" if doc["reason"] else ""), file=out)
        if doc.get("reason") == "NoContact":
            return EXIT_NUMERIC
    elif cmd == "render":
        m = load_heatmap(args.map)
        base = load_base_image(args.base) if args.base else None
        if not 0 <= args.alpha_max <= 1:
            raise DataError("alpha-max must lie in [0, 1]")
        path = args.out or out_dir / "overlay.ppm"
        write_ppm(path, render_overlay(m, base, args.alpha_max))
        print(f"overlay: {path}", file=out)
    return EXIT_OK


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(parser.format_usage().rstrip(), file=err)
        print(exc, file=err)
        return EXIT_USAGE
    try:
        return _run(args, out)
    except DataError as exc:
        print(f"graspkit: data error: {type(exc).__name__}: {exc}", file=err)
        return EXIT_DATA
    except (OSError, json.JSONDecodeError) as exc:
        print(f"graspkit: data error: {exc}", file=err)
        return EXIT_DATA
    except NumericError as exc:
        print(f"graspkit: numeric error: {type(exc).__name__}: {exc}", file=err)
        return EXIT_NUMERIC


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
