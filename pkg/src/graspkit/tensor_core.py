"""Dense feature-map primitives for fine and coarse affordance features.

Feature maps are ``(D, H, W)`` float arrays and dense maps are ``(H, W)``;
the functions here take and return plain numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AllEmpty, DimensionMismatch, EmptyInput, ZeroMass, ZeroPrototype


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    # align-corners: output sample i sits at i * (n_in - 1) / (n_out - 1) in input coordinates
    A = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        A[:, 0] = 1.0
        return A
    pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.clip(np.floor(pos).astype(int), 0, n_in - 2)
    t = pos - lo
    A[np.arange(n_out), lo] = 1.0 - t
    A[np.arange(n_out), lo + 1] += t
    return A


def bilinear_upsample(f: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Channel-wise bilinear resize with the align-corners convention."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be positive")
    f = np.asarray(f, dtype=float)
    squeeze = f.ndim == 2
    if squeeze:
        f = f[None]
    Ah = _interp_matrix(f.shape[1], out_h)
    Aw = _interp_matrix(f.shape[2], out_w)
    out = np.einsum("ih,dhw,jw->dij", Ah, f, Aw, optimize=True)
    return out[0] if squeeze else out


@dataclass(frozen=True)
class RoiMask:
    mask: np.ndarray
    center: tuple[float, float]
    radius: float


def circular_mask(h: int, w: int, center: tuple[float, float], r: float) -> RoiMask:
    """Binary disc of radius ``r`` around ``center = (x0, y0)``; x is the column index."""
    if h < 1 or w < 1 or r < 0:
        raise ValueError("need h, w >= 1 and r >= 0")
    x0, y0 = center
    ys, xs = np.mgrid[0:h, 0:w]
    m = ((xs - x0) ** 2 + (ys - y0) ** 2 <= r * r).astype(float)
    return RoiMask(m, (x0, y0), r)


def apply_mask(f: np.ndarray, m) -> np.ndarray:
    mask = m.mask if isinstance(m, RoiMask) else np.asarray(m, dtype=float)
    if f.shape[-2:] != mask.shape:
        raise DimensionMismatch(f"feature map {f.shape[-2:]} vs mask {mask.shape}")
    return f * mask


def masked_average_pool(f: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted spatial mean of each channel of ``f`` under a non-negative weight map."""
    weights = np.asarray(weights, dtype=float)
    if f.shape[1:] != weights.shape:
        raise DimensionMismatch(f"feature map {f.shape[1:]} vs weights {weights.shape}")
    if np.any(weights < 0):
        raise ValueError("weights must be non-negative")
    total = weights.sum()
    if not total > 0:
        raise ZeroMass("weight map has no mass")
    return np.einsum("dhw,hw->d", f, weights) / total


def patches(f: np.ndarray) -> np.ndarray:
    """Feature columns of a (D, H, W) map as an (H*W, D) array, row-major."""
    return f.reshape(f.shape[0], -1).T


@dataclass
class PrototypeSet:
    centroids: np.ndarray
    counts: np.ndarray
    seed: int
    labels: np.ndarray
    inertia_trace: list = field(default_factory=list)
    roles: list | None = None

    @property
    def k(self):
        return len(self.centroids)


def _kmeans_pp(X, k, rng):
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(1)
    for _ in range(1, k):
        s = d2.sum()
        idx = rng.choice(n, p=d2 / s) if s > 0 else rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(1))
    return np.array(centers, dtype=float)


def cluster_prototypes(patch_list, k: int = 3, seed: int = 0, max_iter: int = 100) -> PrototypeSet:
    """Seeded k-means++ initialisation followed by Lloyd iterations."""
    X = np.asarray(patch_list, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyInput("no patches to cluster")
    if not 1 <= k <= len(X):
        raise ValueError(f"k={k} must be between 1 and the number of patches ({len(X)})")
    rng = np.random.default_rng(seed)
    C = _kmeans_pp(X, k, rng)
    trace = []
    labels = None
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - C[None]) ** 2).sum(-1)
        new_labels = d2.argmin(1)
        trace.append(float(d2[np.arange(len(X)), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = X[labels == j]
            if len(members):
                C[j] = members.mean(0)
    counts = np.bincount(labels, minlength=k)
    return PrototypeSet(C, counts, seed, labels, trace)


def similarity_map(f: np.ndarray, proto: np.ndarray) -> np.ndarray:
    """Per-pixel cosine similarity to ``proto``; zero-norm columns score 0."""
    proto = np.asarray(proto, dtype=float)
    if f.shape[0] != proto.shape[0]:
        raise DimensionMismatch(f"feature depth {f.shape[0]} vs prototype {proto.shape[0]}")
    pn = np.linalg.norm(proto)
    if pn == 0:
        raise ZeroPrototype("prototype has zero norm")
    dots = np.einsum("dhw,d->hw", f, proto)
    norms = np.linalg.norm(f, axis=0)
    out = np.zeros_like(dots)
    nz = norms > 0
    out[nz] = dots[nz] / (norms[nz] * pn)
    return out


def binarize(m: np.ndarray, frac: float = 0.5) -> np.ndarray:
    mx = m.max()
    if mx <= 0:
        return np.zeros(m.shape, dtype=bool)
    return m >= frac * mx


def iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 0.0


def select_prototype_by_iou(sims, saliency: np.ndarray, bin_thresh: float = 0.5) -> int:
    """Index of the similarity map that best overlaps the saliency map."""
    sal = binarize(np.asarray(saliency, dtype=float), bin_thresh)
    bins = []
    for s in sims:
        if s.shape != sal.shape:
            raise DimensionMismatch(f"similarity map {s.shape} vs saliency {sal.shape}")
        bins.append(binarize(s, bin_thresh))
    if not any(b.any() for b in bins):
        raise AllEmpty("every binarized similarity map is empty")
    scores = [iou(b, sal) for b in bins]
    return int(np.argmax(scores))


def min_max_normalize(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def argmax_pixel(m: np.ndarray) -> tuple[int, int]:
    """(row, col) of the maximum; ties resolve to the first in row-major order."""
    m = np.asarray(m)
    r, c = np.unravel_index(int(np.argmax(m)), m.shape)
    return int(r), int(c)
