"""Acceptance criteria 2 to 10, one check each.

Every check returns ``(ok, detail)``; the pytest wrapper prints a PASS/FAIL
line per criterion and a summary section at the end of the run. Running this
file directly prints the same lines without pytest.
"""
import io
import json
import math
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from graspkit import synthetic as sy
from graspkit import tensor_core as tc
from graspkit.cli import PipelineConfig, build_parser, main
from graspkit.dataset import default_gesture_table
from graspkit.fileio import save_tensor
from graspkit.gradcheck import finite_diff_gradient, relative_error
from graspkit.hand_geometry import FingerId, HandLandmarks, functional_finger
from graspkit.heads import GestureClassifier, LocalizationHead, gap_backward, gap_scores
from graspkit.kinematics import (
    FingerModel, HandModel, fingertip_from_wrist, fingertip_in_hand, force_feedback_closure,
    solve_grasp_pose, wrist_from_fingertip,
)
from graspkit.losses import (
    LossConfig, concentration_loss_grad, cosine_margin_loss, cosine_margin_loss_grad, cross_entropy,
    cross_entropy_grad, normalized_concentration_grad,
)
from graspkit.metrics import gesture_precision, kld, nss, sim
from graspkit.training import AffordanceModel, TrainConfig, predict_gesture, train_classifier, train_heads

GRAD_POINTS = 100
GRAD_TOL = 1e-4
REJECTED = {}


# ---------------------------------------------------------------- 2: gradients

def _worst(errors):
    return max(errors)


def grad_cosine(rng):
    errs = []
    for _ in range(GRAD_POINTS):
        a, b = rng.normal(size=16), rng.normal(size=16)
        _, ga, gb = cosine_margin_loss_grad(a, b, 0.5)
        errs.append(relative_error(ga, finite_diff_gradient(lambda x: cosine_margin_loss(x, b, 0.5), a)))
        errs.append(relative_error(gb, finite_diff_gradient(lambda x: cosine_margin_loss(a, x, 0.5), b)))
    return _worst(errs)


def grad_concentration(rng):
    errs = []
    for _ in range(GRAD_POINTS):
        m = rng.random((2, 6, 7)) + 0.05
        _, g = concentration_loss_grad(m)
        errs.append(relative_error(g, finite_diff_gradient(lambda x: concentration_loss_grad(x)[0], m)))
        _, g = normalized_concentration_grad(m)
        errs.append(relative_error(g, finite_diff_gradient(lambda x: normalized_concentration_grad(x)[0], m)))
    return _worst(errs)


def grad_class(rng):
    errs = []
    for _ in range(GRAD_POINTS):
        s, y = rng.normal(0, 3, 14), int(rng.integers(14))
        _, g = cross_entropy_grad(s, y)
        errs.append(relative_error(g, finite_diff_gradient(lambda x: cross_entropy(x, y), s)))
    return _worst(errs)


def grad_gap_class(rng):
    errs = []
    for _ in range(GRAD_POINTS):
        maps, t = rng.normal(size=(6, 5, 5)), int(rng.integers(6))
        _, gs = cross_entropy_grad(gap_scores(maps), t)
        num = finite_diff_gradient(lambda x: cross_entropy(gap_scores(x), t), maps)
        errs.append(relative_error(gap_backward(maps.shape, gs), num))
    return _worst(errs)


KINK_MARGIN = 1e-3


def _near_kink(*pre):
    # a finite-difference stencil straddling a ReLU kink measures a one-sided slope
    return any(np.abs(np.asarray(a)).min() < KINK_MARGIN for a in pre)


def grad_head(rng):
    errs, rejected = [], 0
    while len(errs) < 2 * GRAD_POINTS:
        head = LocalizationHead.init(3, 2, rng)
        head.calibrate([rng.normal(size=(3, 4, 4)) for _ in range(2)])
        x = rng.normal(size=(3, 4, 4))
        w = rng.normal(size=(2, 4, 4))
        maps, cache = head.forward(x)
        if _near_kink(cache["h"], cache["y1"], cache["y2"], cache["s"]):
            rejected += 1
            continue
        grads, gx = head.backward(cache, w)
        num = finite_diff_gradient(lambda p: float((head.forward(x)[0] * w).sum()), head.params)
        errs.append(relative_error(grads, num))
        errs.append(relative_error(gx, finite_diff_gradient(lambda z: float((head.forward(z)[0] * w).sum()), x)))
    REJECTED["head"] = rejected
    return _worst(errs)


def grad_classifier(rng):
    errs, rejected = [], 0
    while len(errs) < 2 * GRAD_POINTS:
        clf = GestureClassifier.init(8, rng)
        e, y = rng.normal(size=8), int(rng.integers(14))
        scores, cache = clf.forward(e)
        if _near_kink(*cache["pre"][:-1]):
            rejected += 1
            continue
        _, gs = cross_entropy_grad(scores, y)
        grads, ge = clf.backward(cache, gs)
        errs.append(relative_error(grads, finite_diff_gradient(lambda p: cross_entropy(clf.forward(e)[0], y), clf.params)))
        errs.append(relative_error(ge, finite_diff_gradient(lambda z: cross_entropy(clf.forward(z)[0], y), e)))
    REJECTED["classifier"] = rejected
    return _worst(errs)


def criterion_2():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    checks = {
        "cosine": grad_cosine, "concentration": grad_concentration, "class": grad_class,
        "gap-class": grad_gap_class, "head": grad_head, "classifier": grad_classifier,
    }
    worst = {k: fn(rng) for k, fn in checks.items()}
    elapsed = time.perf_counter() - t0
    ok = all(v < GRAD_TOL for v in worst.values()) and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    skipped = ", ".join(f"{k} {v}" for k, v in REJECTED.items())
    return ok, f"max rel err {detail} at {GRAD_POINTS} points each (near-kink draws redrawn: {skipped}); {elapsed:.1f}s"


# ---------------------------------------------------------------- 3: kinematics

def criterion_3():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(10_000):
        t1, t2 = rng.uniform(0, math.pi / 2, 2)
        d = rng.uniform(-0.5, 0.5)
        l1, l2 = rng.uniform(0.005, 0.1, 2)
        p = fingertip_in_hand(FingerModel(l1, l2, d), t1, t2)
        x = l2 * math.cos(t2) + l1 * math.cos(t1 + t2 + d)
        y = l2 * math.sin(t2) + l1 * math.sin(t1 + t2 + d)
        worst = max(worst, abs(p[0] - x), abs(p[1] - y), abs(p[2]))
    round_trip = 0.0
    for _ in range(1_000):
        R = sy.random_rotation(rng)
        p_wf, p_hf, p_he = rng.normal(size=3), rng.normal(0, 0.05, 3), rng.normal(0, 0.1, 3)
        p_we = wrist_from_fingertip(p_wf, R, p_hf, p_he)
        round_trip = max(round_trip, float(np.abs(fingertip_from_wrist(p_we, R, p_hf, p_he) - p_wf).max()))
    ok = worst <= 1e-12 and round_trip < 1e-10
    return ok, f"trig oracle max err {worst:.1e} over 10000 samples; wrist round-trip {round_trip:.1e}"


# ---------------------------------------------------------------- 4: functional finger

_CHAINS = {0: (1, 2, 3, 4), 1: (5, 6, 7, 8), 2: (9, 10, 11, 12), 3: (13, 14, 15, 16), 4: (17, 18, 19, 20)}


def _angle(u, v):
    c = float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))
    return math.acos(max(-1.0, min(1.0, c)))


def brute_force_finger(pts, threshold=0.26):
    dirs = [pts[_CHAINS[f][3]] - pts[_CHAINS[f][0]] for f in range(5)]
    if all(_angle(dirs[f], dirs[f + 1]) < threshold for f in (1, 2, 3)):
        return 0
    best, best_f = None, None
    for f in (1, 2, 3, 4):
        mcp, pip, dip, _ = (pts[i] for i in _CHAINS[f])
        bend = 1.0 - math.cos(_angle(pip - mcp, dip - pip))
        if best is None or bend < best:
            best, best_f = bend, f
    return best_f


def criterion_4():
    rng = np.random.default_rng(4)
    agree = invariant = thumbs = 0
    n = 1_000
    for _ in range(n):
        pts = sy.random_skeleton(rng)
        got = functional_finger(HandLandmarks(pts))
        agree += int(got) == brute_force_finger(pts)
        thumbs += got is FingerId.THUMB
        moved = rng.uniform(0.01, 100) * pts @ sy.random_rotation(rng).T + rng.normal(size=3)
        invariant += functional_finger(HandLandmarks(moved)) == got
    ok = agree == n and invariant == n
    return ok, f"agreement {agree}/{n} ({thumbs} open palms), scale/rotation invariant {invariant}/{n}"


# ---------------------------------------------------------------- 5: metric identities

def criterion_5():
    rng = np.random.default_rng(5)
    k = s = a = 0.0
    for _ in range(200):
        p, g = rng.random((6, 6)), rng.random((6, 6))
        k = max(k, abs(kld(p, p)))
        s = max(s, abs(sim(p, p) - 1.0))
        scale, shift = rng.uniform(0.01, 100), rng.uniform(-100, 100)
        a = max(a, abs(nss(scale * p + shift, g) - nss(p, g)))
    spike = np.zeros((3, 3))
    spike[1, 1] = 1.0
    e = abs(nss(spike, spike) - 2 * math.sqrt(2))
    ok = k <= 1e-9 and s <= 1e-12 and a <= 1e-10 and e <= 1e-9
    return ok, f"|kld(p,p)| {k:.1e}, |sim(p,p)-1| {s:.1e}, nss affine {a:.1e}, spike {e:.1e}"


# ---------------------------------------------------------------- 6: precision arithmetic

def criterion_6():
    hold = 100 * gesture_precision(sy.hold_row_predictions()).task_ap["Hold"]
    full = gesture_precision(sy.outcome_predictions(sy.PUBLISHED_CELL_OUTCOMES, all_correct=True))
    aps = [*full.task_ap.values(), *full.tool_ap.values(), full.overall_ap]
    ok = abs(hold - 73.48) <= 0.01 and all(v == 1.0 for v in aps)
    return ok, f"Hold AP {hold:.4f}; all-correct min AP {100 * min(aps):.1f} over {len(aps)} averages"


# ---------------------------------------------------------------- 7: planted signal

def criterion_7():
    t0 = time.perf_counter()
    data = sy.planted_dataset(seed=7)
    model = AffordanceModel.init(data.depth, 7)
    model.calibrate([e.features for e in data.egos[:3]])
    res = train_heads(data.egos, data.exos, model, LossConfig(alpha=0.5, lambda_c=0.07, warmup_epochs_without_cos=1),
                      TrainConfig(lr=1e-3, epochs=50, seed=7))
    elapsed = time.perf_counter() - t0
    ious = [tc.iou(tc.binarize(model.fine.forward(e.features)[0][0], 0.5), m)
            for e, m in zip(data.egos, data.masks) if e.task == 0]
    means = res.epoch_means()
    ok = float(np.mean(ious)) >= 0.5 and elapsed < 300
    return ok, (f"class-0 IoU mean {np.mean(ious):.3f} (min {min(ious):.3f}, {len(ious)} maps); "
                f"loss {means[0]:.2f} -> {means[-1]:.2f}; {elapsed:.1f}s")


# ---------------------------------------------------------------- 8: gesture classifier

def criterion_8():
    X, y = sy.separable_embeddings(seed=1)
    Xt, yt = sy.separable_embeddings(seed=2)
    clf = GestureClassifier.init(X.shape[1], np.random.default_rng(8))
    train_classifier(clf, X, y, TrainConfig(lr=0.05, epochs=30, batch_size=8))
    acc = float(np.mean([predict_gesture(clf, x) - 1 == t for x, t in zip(Xt, yt)]))
    rng = np.random.default_rng(8)
    ids = [predict_gesture(clf, rng.normal(0, 10, X.shape[1])) for _ in range(1000)]
    in_range = all(1 <= i <= 14 for i in ids) and clf.forward(X[0])[0].shape == (14,)
    ok = acc >= 0.95 and in_range
    return ok, f"held-out accuracy {100 * acc:.1f}% on {len(yt)} embeddings; ids in 1..14: {in_range}"


# ---------------------------------------------------------------- 9: grasp simulation

def criterion_9():
    scene = sy.button_scene()
    table = default_gesture_table()
    g = table.gestures[table.gesture_id("Click", "lightswitch")]
    pose = solve_grasp_pose(scene.amap, scene.depth_map, scene.cam, HandModel.default(), g, FingerId.INDEX)
    err = float(np.linalg.norm(pose.p_wf - scene.target))
    closures = {}
    for k in (1.0, 5.0, 20.0):
        res = force_feedback_closure(g, sy.contact_world(g, k), max_iter=200)
        closures[k] = (res.converged and res.iterations <= 200, bool(np.all(np.diff(res.force_trace) >= 0)), res.iterations)
    args = build_parser().parse_args(["funcfinger", "lm.json"])
    r_default = (PipelineConfig().roi_radius, TrainConfig().roi_radius, args.radius)
    ok = err <= 1e-6 and all(c and m for c, m, _ in closures.values()) and r_default == (20.0, 20.0, None)
    its = ", ".join(f"k={k:g}: {n} iters" for k, (_, _, n) in closures.items())
    return ok, f"fingertip error {err:.1e} m; closure {its}, traces non-decreasing; default r {r_default[0]:g}"


# ---------------------------------------------------------------- 10: determinism

def _run_pipeline(root: Path, data_dir: Path, out: Path):
    quiet = io.StringIO()
    codes = [
        main(["train-heads", "--manifest", str(data_dir / "manifest.csv"), "--epochs", "2", "--seed", "3",
              "--out-dir", str(out / "train"), "--quiet"], quiet, quiet),
        main(["eval", str(root / "pred"), str(root / "gt"), "--out-dir", str(out / "eval")], quiet, quiet),
        main(["grasp-sim", str(root / "map.gaft"), str(root / "depth.gaft"), "--camera", str(root / "cam.json"),
              "--contacts", str(root / "contacts.json"), "--pair", "Click", "lightswitch", "--seed", "3",
              "--out-dir", str(out / "grasp")], quiet, quiet),
    ]
    files = {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}
    return codes, files


def criterion_10():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        data_dir = root / "data"
        sy.write_planted_dataset(data_dir, sy.planted_dataset(seed=10, n_per_class=3))
        rng = np.random.default_rng(10)
        for i in range(3):
            save_tensor(root / "gt" / f"im{i}.gaft", rng.random((8, 8)))
            save_tensor(root / "pred" / f"im{i}.gaft", rng.random((8, 8)))
        scene = sy.button_scene()
        save_tensor(root / "map.gaft", scene.amap)
        save_tensor(root / "depth.gaft", scene.depth_map)
        (root / "cam.json").write_text(json.dumps({"fx": scene.cam.fx, "fy": scene.cam.fy,
                                                   "cx": scene.cam.cx, "cy": scene.cam.cy}))
        g = default_gesture_table().gestures[9]
        cm = sy.contact_world(g, 5.0)
        (root / "contacts.json").write_text(json.dumps(
            {"fingers": [{"theta_contact": t, "stiffness": k} for t, k in zip(cm.theta_contact, cm.stiffness)]}))
        codes_a, a = _run_pipeline(root, data_dir, root / "run_a")
        codes_b, b = _run_pipeline(root, data_dir, root / "run_b")
    same = sorted(a) == sorted(b) and all(a[k] == b[k] for k in a)
    kinds = {p.parts[0] for p in a}
    ok = codes_a == codes_b == [0, 0, 0] and same and kinds == {"train", "eval", "grasp"}
    return ok, f"exit codes {codes_a}/{codes_b}; {len(a)} files byte-identical across runs: {same}"


CRITERIA = [
    (2, "gradient fidelity", criterion_2),
    (3, "kinematics oracle", criterion_3),
    (4, "functional finger", criterion_4),
    (5, "metric identities", criterion_5),
    (6, "precision arithmetic", criterion_6),
    (7, "planted-signal recovery", criterion_7),
    (8, "gesture classifier", criterion_8),
    (9, "grasp simulation", criterion_9),
    (10, "determinism", criterion_10),
]


@pytest.mark.parametrize("number,title,check", CRITERIA, ids=[f"{n}-{t.replace(' ', '-')}" for n, t, _ in CRITERIA])
def test_acceptance(number, title, check, acceptance):
    ok, detail = check()
    acceptance(number, title, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    for number, title, check in CRITERIA:
        ok, detail = check()
        print(f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail}")
