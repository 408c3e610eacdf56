"""Weak-supervision losses. Each ``*_grad`` variant returns ``(value, gradient...)``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LabelOutOfRange, ZeroEmbedding, ZeroMass


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.5
    lambda_c: float = 0.07
    warmup_epochs_without_cos: int = 1

    def __post_init__(self):
        if not 0 <= self.alpha < 2:
            raise ValueError("alpha must lie in [0, 2)")
        if self.lambda_c < 0:
            raise ValueError("lambda_c must be non-negative")


def cosine_margin_loss_grad(f_op, f_ego, alpha: float = 0.5):
    """``max(1 - cos(f_op, f_ego) - alpha, 0)`` and its gradients w.r.t. both embeddings."""
    a = np.asarray(f_op, dtype=float)
    b = np.asarray(f_ego, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroEmbedding("cosine loss needs non-zero embeddings")
    cos = float(a @ b / (na * nb))
    value = 1.0 - cos - alpha
    if value <= 0:
        return 0.0, np.zeros_like(a), np.zeros_like(b)
    ga = -(b / (na * nb) - cos * a / na**2)
    gb = -(a / (na * nb) - cos * b / nb**2)
    return value, ga, gb


def cosine_margin_loss(f_op, f_ego, alpha: float = 0.5) -> float:
    return cosine_margin_loss_grad(f_op, f_ego, alpha)[0]


def _coords(h, w):
    v, u = np.mgrid[0:h, 0:w].astype(float)  # u: column, v: row
    return u, v


def concentration_loss_grad(maps):
    """Mass-weighted mean distance of each class map to its own centroid, summed over classes."""
    maps = np.asarray(maps, dtype=float)
    if maps.ndim == 2:
        maps = maps[None]
    u, v = _coords(*maps.shape[1:])
    total = 0.0
    grad = np.zeros_like(maps)
    for c, P in enumerate(maps):
        z = P.sum()
        if z <= 0:
            continue
        ub = (u * P).sum() / z
        vb = (v * P).sum() / z
        du, dv = u - ub, v - vb
        d = np.hypot(du, dv)
        L = (d * P).sum() / z
        total += L
        with np.errstate(invalid="ignore", divide="ignore"):
            ru = np.where(d > 0, du / d, 0.0)
            rv = np.where(d > 0, dv / d, 0.0)
        gu = -(P * ru).sum() / z
        gv = -(P * rv).sum() / z
        grad[c] = (d - L) / z + du * gu / z + dv * gv / z
    return total, grad


def concentration_loss(maps) -> float:
    return concentration_loss_grad(maps)[0]


def cross_entropy_grad(scores, label: int):
    s = np.asarray(scores, dtype=float)
    if not 0 <= label < len(s):
        raise LabelOutOfRange(f"label {label} outside 0..{len(s) - 1}")
    shifted = s - s.max()
    lse = np.log(np.exp(shifted).sum())
    p = np.exp(shifted - lse)
    g = p.copy()
    g[label] -= 1.0
    return float(lse - shifted[label]), g


def cross_entropy(scores, label: int) -> float:
    return cross_entropy_grad(scores, label)[0]


def total_loss(l_cos: float, l_c: float, l_class: float, l_f: float, lambda_c: float = 0.07, warmup: bool = False) -> float:
    return (0.0 if warmup else l_cos) + lambda_c * l_c + l_class + l_f


def min_max_normalize_grad(m):
    """``(m - min) / (max - min)`` and a closure mapping output gradients to input gradients."""
    m = np.asarray(m, dtype=float)
    lo_i, hi_i = int(np.argmin(m)), int(np.argmax(m))
    lo, hi = m.flat[lo_i], m.flat[hi_i]
    span = hi - lo
    if span <= 0:
        raise ZeroMass("map is constant")
    w = (m - lo) / span

    def backward(gw):
        gm = gw / span
        gm.flat[lo_i] += (gw * (m - hi)).sum() / span**2
        gm.flat[hi_i] -= (gw * (m - lo)).sum() / span**2
        return gm

    return w, backward


def normalized_pool_grad(features, m):
    """Masked average pooling of ``features`` under the min-max normalized map ``m``.

    Returns ``(embedding, backward)`` where ``backward(g_embedding)`` gives the
    gradient w.r.t. ``m``.
    """
    F = np.asarray(features, dtype=float)
    w, norm_back = min_max_normalize_grad(m)
    S = w.sum()
    e = np.einsum("dhw,hw->d", F, w) / S

    def backward(g):
        return norm_back((np.einsum("d,dhw->hw", g, F) - g @ e) / S)

    return e, backward


def normalized_concentration_grad(maps):
    """Concentration loss over the min-max normalized class maps; constant maps are skipped."""
    maps = np.asarray(maps, dtype=float)
    total = 0.0
    grad = np.zeros_like(maps)
    for c, m in enumerate(maps):
        try:
            w, back = min_max_normalize_grad(m)
        except ZeroMass:
            continue
        l, gw = concentration_loss_grad(w)
        total += l
        grad[c] = back(gw[0])
    return total, grad
