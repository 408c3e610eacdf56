import numpy as np
import pytest

from graspkit.errors import DimensionMismatch
from graspkit.gradcheck import finite_diff_gradient, relative_error
from graspkit.heads import (
    GestureClassifier, LocalizationHead, conv3x3, gap_backward, gap_scores, gesture_forward,
    localization_head_forward,
)
from graspkit.losses import cross_entropy, cross_entropy_grad


def naive_conv(x, k, b):
    D, H, W = x.shape
    O = k.shape[0]
    out = np.zeros((O, H, W))
    for o in range(O):
        for i in range(H):
            for j in range(W):
                acc = b[o]
                for d in range(D):
                    for di in range(3):
                        for dj in range(3):
                            y, z = i + di - 1, j + dj - 1
                            if 0 <= y < H and 0 <= z < W:
                                acc += k[o, d, di, dj] * x[d, y, z]
                out[o, i, j] = acc
    return out


def test_conv_matches_sliding_window(rng):
    x = rng.normal(size=(3, 5, 4))
    k = rng.normal(size=(2, 3, 3, 3))
    b = rng.normal(size=2)
    assert np.allclose(conv3x3(x, k, b), naive_conv(x, k, b), atol=1e-12)


def test_zero_class_conv_gives_zero_maps(rng):
    head = LocalizationHead.init(4, 3, rng)
    head.params["cls_w"][:] = 0
    head.params["cls_b"][:] = 0
    maps = localization_head_forward(head, rng.normal(size=(4, 6, 6)))
    assert maps.shape == (3, 6, 6) and not maps.any()


def test_identity_head(rng):
    x = rng.normal(size=(4, 5, 7))
    maps = localization_head_forward(LocalizationHead.identity(4, 2, channel=0), x)
    assert np.allclose(maps, np.maximum(x[0], 0)[None].repeat(2, 0), atol=1e-15)


def test_head_shape_checks(rng):
    head = LocalizationHead.init(4, 3, rng)
    with pytest.raises(DimensionMismatch):
        head.forward(np.zeros((3, 5, 5)))
    with pytest.raises(DimensionMismatch):
        head.forward(np.zeros((4, 5)))


def test_maps_nonnegative(rng):
    head = LocalizationHead.init(3, 2, rng)
    assert (head.forward(rng.normal(size=(3, 6, 6)))[0] >= 0).all()


def test_calibrate_normalizes_first_block(rng):
    head = LocalizationHead.init(3, 2, rng)
    feats = [rng.normal(size=(3, 6, 6)) for _ in range(3)]
    head.calibrate(feats)
    c = np.concatenate([head._trunk(f)[1]["c1"].reshape(3, -1) for f in feats], axis=1)
    y = (c - head.buffers["norm1_mean"][:, None]) / np.sqrt(head.buffers["norm1_var"][:, None] + head.eps)
    assert np.allclose(y.mean(1), 0, atol=1e-12) and np.allclose(y.var(1), 1, atol=1e-3)


def test_calibrate_restores_on_error(rng):
    head = LocalizationHead.init(3, 2, rng)
    before = {k: v.copy() for k, v in head.buffers.items()}
    with pytest.raises(Exception):
        head.calibrate([np.zeros((3, 4, 4)), np.zeros((2, 4, 4))])
    assert all(np.array_equal(before[k], head.buffers[k]) for k in before)


def head_loss_and_grads(head, x, w):
    maps, cache = head.forward(x)
    grads, gx = head.backward(cache, w)
    return float((maps * w).sum()), grads, gx


def test_head_backward_matches_fd(rng):
    for _ in range(3):
        head = LocalizationHead.init(3, 2, rng)
        x = rng.normal(size=(3, 4, 5))
        head.calibrate([x])
        w = rng.normal(size=(2, 4, 5))
        _, grads, gx = head_loss_and_grads(head, x, w)
        num = finite_diff_gradient(lambda p: float((head.forward(x)[0] * w).sum()), head.params)
        assert relative_error(grads, num) < 1e-5
        numx = finite_diff_gradient(lambda z: float((head.forward(z)[0] * w).sum()), x)
        assert relative_error(gx, numx) < 1e-5


def test_head_backward_wrt_scores(rng):
    head = LocalizationHead.init(3, 2, rng)
    x = rng.normal(size=(3, 4, 4))
    w = rng.normal(size=(2, 4, 4))
    _, cache = head.forward(x)
    grads, _ = head.backward(cache, w, wrt="scores")
    num = finite_diff_gradient(lambda p: float((head.forward(x)[1]["s"] * w).sum()), head.params)
    assert relative_error(grads, num) < 1e-5


def test_gap(rng):
    assert np.allclose(gap_scores(np.full((2, 3, 3), 1.5)), 1.5)
    m = np.zeros((1, 4, 5))
    m[0, 2, 2] = 1
    assert gap_scores(m)[0] == pytest.approx(1 / 20)
    r = rng.random((3, 4, 4))
    assert np.allclose(gap_scores(r), [sum(r[c].ravel()) / 16 for c in range(3)])
    g = rng.normal(size=3)
    num = finite_diff_gradient(lambda z: float(gap_scores(z) @ g), r)
    assert relative_error(gap_backward(r.shape, g), num) < 1e-8


def test_classifier_cases(rng):
    clf = GestureClassifier.init(6, rng)
    assert clf.out_dim == 14 and clf.n_layers == 2
    for k in clf.params:
        clf.params[k][:] = 0
    assert not gesture_forward(clf, rng.normal(size=6)).any()
    ident = GestureClassifier({"fc0_w": np.eye(14), "fc0_b": np.zeros(14)})
    e = rng.normal(size=14)
    assert np.array_equal(gesture_forward(ident, e), e)
    with pytest.raises(DimensionMismatch):
        gesture_forward(ident, np.zeros(13))


def test_classifier_matvec_oracle(rng):
    clf = GestureClassifier.init(5, rng, hidden=(7,))
    e = rng.normal(size=5)
    W0, b0, W1, b1 = (clf.params[k] for k in ("fc0_w", "fc0_b", "fc1_w", "fc1_b"))
    h = [max(0.0, sum(W0[i, j] * e[j] for j in range(5)) + b0[i]) for i in range(7)]
    want = [sum(W1[i, j] * h[j] for j in range(7)) + b1[i] for i in range(14)]
    assert np.allclose(gesture_forward(clf, e), want, atol=1e-12)


def test_classifier_backward_matches_fd(rng):
    clf = GestureClassifier.init(5, rng, hidden=(6, 4))
    e = rng.normal(size=5)
    scores, cache = clf.forward(e)
    _, g = cross_entropy_grad(scores, 3)
    grads, ge = clf.backward(cache, g)
    num = finite_diff_gradient(lambda p: cross_entropy(clf.forward(e)[0], 3), clf.params)
    assert relative_error(grads, num) < 1e-6
    assert relative_error(ge, finite_diff_gradient(lambda z: cross_entropy(clf.forward(z)[0], 3), e)) < 1e-6
