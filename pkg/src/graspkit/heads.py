"""Trainable heads with hand-written backward passes.

``LocalizationHead`` turns a (D, H, W) feature map into C class activation
maps: a residual per-pixel MLP, two 3x3 conv -> norm -> ReLU blocks and a
1x1 class-aware projection followed by ReLU. ``GestureClassifier`` maps an
embedding to 14 gesture scores.

Parameters live in plain ordered dicts of float64 arrays so the trainer,
checkpointing and finite-difference checks can walk them uniformly.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionMismatch

N_GESTURE_CLASSES = 14


def relu(x):
    return np.maximum(x, 0.0)


def pixel_linear(x, w, b):
    return np.einsum("od,dhw->ohw", w, x) + b[:, None, None]


def pixel_linear_backward(x, w, g):
    gw = np.einsum("ohw,dhw->od", g, x)
    gb = g.sum((1, 2))
    gx = np.einsum("od,ohw->dhw", w, g)
    return gx, gw, gb


def conv3x3(x, k, b):
    """Same-padded 3x3 cross-correlation, (D, H, W) -> (O, H, W)."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (D, H, W, 3, 3)
    return np.einsum("dhwij,odij->ohw", win, k) + b[:, None, None]


def conv3x3_backward(x, k, g):
    _, H, W = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))
    gk = np.einsum("dhwij,ohw->odij", win, g)
    gb = g.sum((1, 2))
    gxp = np.zeros_like(xp)
    for i in range(3):
        for j in range(3):
            gxp[:, i : i + H, j : j + W] += np.einsum("od,ohw->dhw", k[:, :, i, j], g)
    return gxp[:, 1:-1, 1:-1], gk, gb


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class LocalizationHead:
    def __init__(self, params: dict, buffers: dict, eps: float = 1e-5):
        self.params = params
        self.buffers = buffers
        self.eps = eps

    @property
    def depth(self):
        return self.params["mlp_w1"].shape[1]

    @property
    def n_classes(self):
        return self.params["cls_w"].shape[0]

    @classmethod
    def init(cls, depth: int, n_classes: int, rng) -> "LocalizationHead":
        D, C = depth, n_classes
        p = {
            "mlp_w1": uniform_init(rng, (D, D), D),
            "mlp_b1": uniform_init(rng, (D,), D),
            "mlp_w2": uniform_init(rng, (D, D), D),
            "mlp_b2": uniform_init(rng, (D,), D),
        }
        for n in (1, 2):
            p[f"conv{n}_w"] = uniform_init(rng, (D, D, 3, 3), 9 * D)
            p[f"conv{n}_b"] = uniform_init(rng, (D,), 9 * D)
            p[f"norm{n}_gamma"] = np.ones(D)
            p[f"norm{n}_beta"] = np.zeros(D)
        p["cls_w"] = uniform_init(rng, (C, D), D)
        p["cls_b"] = uniform_init(rng, (C,), D)
        buffers = {f"norm{n}_{s}": np.full(D, v) for n in (1, 2) for s, v in (("mean", 0.0), ("var", 1.0))}
        return cls(p, buffers)

    @classmethod
    def identity(cls, depth: int, n_classes: int, channel: int = 0) -> "LocalizationHead":
        """Head whose class maps all equal ``relu(x[channel])``."""
        D, C = depth, n_classes
        eye = np.zeros((D, D, 3, 3))
        eye[np.arange(D), np.arange(D), 1, 1] = 1.0
        p = {
            "mlp_w1": np.zeros((D, D)), "mlp_b1": np.zeros(D),
            "mlp_w2": np.zeros((D, D)), "mlp_b2": np.zeros(D),
        }
        for n in (1, 2):
            p[f"conv{n}_w"] = eye.copy()
            p[f"conv{n}_b"] = np.zeros(D)
            p[f"norm{n}_gamma"] = np.ones(D)
            p[f"norm{n}_beta"] = np.zeros(D)
        p["cls_w"] = np.zeros((C, D))
        p["cls_w"][:, channel] = 1.0
        p["cls_b"] = np.zeros(C)
        buffers = {f"norm{n}_{s}": np.full(D, v) for n in (1, 2) for s, v in (("mean", 0.0), ("var", 1.0))}
        return cls(p, buffers, eps=0.0)

    def _norm_scale(self, n):
        return self.params[f"norm{n}_gamma"] / np.sqrt(self.buffers[f"norm{n}_var"] + self.eps)

    def _trunk(self, x):
        p = self.params
        h = pixel_linear(x, p["mlp_w1"], p["mlp_b1"])
        a = relu(h)
        r = x + pixel_linear(a, p["mlp_w2"], p["mlp_b2"])
        cache = {"x": x, "h": h, "a": a, "r": r}
        inp = r
        for n in (1, 2):
            c = conv3x3(inp, p[f"conv{n}_w"], p[f"conv{n}_b"])
            xhat = c - self.buffers[f"norm{n}_mean"][:, None, None]
            y = xhat * self._norm_scale(n)[:, None, None] + p[f"norm{n}_beta"][:, None, None]
            cache[f"in{n}"], cache[f"c{n}"], cache[f"y{n}"] = inp, c, y
            inp = relu(y)
        cache["a2"] = inp
        return inp, cache

    def calibrate(self, features) -> None:
        """Freeze the normalization statistics to those of a calibration batch."""
        saved = {k: v.copy() for k, v in self.buffers.items()}
        try:
            for n in (1, 2):
                outs = [self._trunk(np.asarray(f, dtype=float))[1][f"c{n}"] for f in features]
                stacked = np.concatenate([o.reshape(o.shape[0], -1) for o in outs], axis=1)
                self.buffers[f"norm{n}_mean"] = stacked.mean(1)
                self.buffers[f"norm{n}_var"] = stacked.var(1)
        except Exception:
            self.buffers = saved
            raise

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 3 or x.shape[0] != self.depth:
            raise DimensionMismatch(f"head expects {self.depth} channels, got shape {x.shape}")
        a2, cache = self._trunk(x)
        s = pixel_linear(a2, self.params["cls_w"], self.params["cls_b"])
        cache["s"] = s
        return relu(s), cache

    def backward(self, cache, gmaps, wrt: str = "maps"):
        """Return (parameter gradients, input gradient).

        ``gmaps`` is the upstream gradient w.r.t. the output maps, or w.r.t. the
        pre-ReLU class activations ``cache["s"]`` when ``wrt="scores"``.
        """
        p = self.params
        grads = {}
        gs = gmaps * (cache["s"] > 0) if wrt == "maps" else gmaps
        g, grads["cls_w"], grads["cls_b"] = pixel_linear_backward(cache["a2"], p["cls_w"], gs)
        for n in (2, 1):
            gy = g * (cache[f"y{n}"] > 0)
            xhat = cache[f"c{n}"] - self.buffers[f"norm{n}_mean"][:, None, None]
            inv = 1.0 / np.sqrt(self.buffers[f"norm{n}_var"] + self.eps)
            grads[f"norm{n}_beta"] = gy.sum((1, 2))
            grads[f"norm{n}_gamma"] = (gy * xhat).sum((1, 2)) * inv
            gc = gy * self._norm_scale(n)[:, None, None]
            g, grads[f"conv{n}_w"], grads[f"conv{n}_b"] = conv3x3_backward(cache[f"in{n}"], p[f"conv{n}_w"], gc)
        gr = g
        ga, grads["mlp_w2"], grads["mlp_b2"] = pixel_linear_backward(cache["a"], p["mlp_w2"], gr)
        gh = ga * (cache["h"] > 0)
        gx, grads["mlp_w1"], grads["mlp_b1"] = pixel_linear_backward(cache["x"], p["mlp_w1"], gh)
        return {k: grads[k] for k in p}, gx + gr


class GestureClassifier:
    """Fully connected classifier: affine layers with ReLU between, linear output."""

    def __init__(self, params: dict):
        self.params = params

    @property
    def n_layers(self):
        return len(self.params) // 2

    @property
    def in_dim(self):
        return self.params["fc0_w"].shape[1]

    @property
    def out_dim(self):
        return self.params[f"fc{self.n_layers - 1}_w"].shape[0]

    @classmethod
    def init(cls, in_dim: int, rng, hidden=None, out_dim: int = N_GESTURE_CLASSES) -> "GestureClassifier":
        hidden = (in_dim,) if hidden is None else tuple(hidden)
        sizes = (in_dim, *hidden, out_dim)
        p = {}
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            p[f"fc{i}_w"] = uniform_init(rng, (b, a), a)
            p[f"fc{i}_b"] = uniform_init(rng, (b,), a)
        return cls(p)

    def forward(self, e):
        e = np.asarray(e, dtype=float)
        if e.shape != (self.in_dim,):
            raise DimensionMismatch(f"classifier expects a {self.in_dim}-vector, got shape {e.shape}")
        acts, pre = [e], []
        h = e
        for i in range(self.n_layers):
            z = self.params[f"fc{i}_w"] @ h + self.params[f"fc{i}_b"]
            pre.append(z)
            h = relu(z) if i < self.n_layers - 1 else z
            acts.append(h)
        return h, {"acts": acts, "pre": pre}

    def backward(self, cache, gout):
        grads = {}
        g = gout
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                g = g * (cache["pre"][i] > 0)
            grads[f"fc{i}_w"] = np.outer(g, cache["acts"][i])
            grads[f"fc{i}_b"] = g.copy()
            g = self.params[f"fc{i}_w"].T @ g
        return {k: grads[k] for k in self.params}, g


def gap_scores(maps):
    """Per-class spatial mean of a (C, H, W) stack."""
    return np.asarray(maps, dtype=float).mean((1, 2))


def gap_backward(shape, g):
    C, H, W = shape
    return np.broadcast_to(np.asarray(g)[:, None, None] / (H * W), shape).copy()


def localization_head_forward(head: LocalizationHead, f):
    return head.forward(f)[0]


def gesture_forward(clf: GestureClassifier, e):
    return clf.forward(e)[0]
