"""Tri-modal rotation loss: soft IoU, one-sided Chamfer over a distance field, feature distance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numba
import numpy as np

from .imageproc import CannyParams, canny_edges, distance_transform
from .raster import to_float_image


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda_s: float = 0.5
    lambda_e: float = 0.5
    lambda_a: float = 2.0

    def __post_init__(self):
        w = (self.lambda_s, self.lambda_e, self.lambda_a)
        if any(x < 0 for x in w) or not any(x > 0 for x in w):
            raise ValueError(f"loss weights must be nonnegative with one positive, got {w}")


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    extractor: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise LossError("feature vector has non-finite entries")
        object.__setattr__(self, "values", v)


class FeatureExtractor(Protocol):
    name: str
    length: int

    def extract(self, image: np.ndarray) -> FeatureVector: ...


class PatchPyramidExtractor:
    """L2-normalized RGB patch means over 16x16, 8x8 and 4x4 grids (1008 values)."""

    name = "patch-pyramid-v1"
    grids = (16, 8, 4)
    length = 3 * (16 * 16 + 8 * 8 + 4 * 4)

    def extract(self, image: np.ndarray) -> FeatureVector:
        img = to_float_image(image)
        if img.ndim != 3 or img.shape[2] != 3:
            raise LossError("feature extractor expects an RGB image")
        h, w, _ = img.shape
        if h % 16 or w % 16:
            raise LossError(f"image size {h}x{w} not divisible by 16")
        fine = _grid_means(np.ascontiguousarray(img), 16)
        mid = fine.reshape(8, 2, 8, 2, 3).mean(axis=(1, 3))
        coarse = mid.reshape(4, 2, 4, 2, 3).mean(axis=(1, 3))
        v = np.concatenate([fine.ravel(), mid.ravel(), coarse.ravel()])
        norm = np.linalg.norm(v)
        if norm > 0:
            v = v / norm
        return FeatureVector(v, self.name)


@numba.njit(cache=True)
def _grid_means(img, g):
    h, w, ch = img.shape
    bh = h // g
    bw = w // g
    out = np.zeros((g, g, ch))
    for j in range(h):
        gj = j // bh
        for i in range(w):
            gi = i // bw
            for c in range(ch):
                out[gj, gi, c] += img[j, i, c]
    return out / (bh * bw)


@numba.njit(cache=True)
def _soft_iou_terms(a, b):
    inter = 0.0
    union = 0.0
    for k in range(a.shape[0]):
        p = a[k] * b[k]
        inter += p
        union += a[k] + b[k] - p
    return inter, union


@numba.njit(cache=True)
def _edge_weighted_sum(e, d):
    total = 0.0
    weighted = 0.0
    for k in range(e.shape[0]):
        # only pixels carrying edge mass count, so 0 * inf never occurs
        if e[k] > 0.0:
            total += e[k]
            weighted += e[k] * d[k]
    return total, weighted


def sil_loss(s_hat: np.ndarray, s: np.ndarray) -> float:
    """1 - soft IoU. Two empty images count as no overlap (loss 1)."""
    a = np.asarray(s_hat, dtype=np.float64)
    b = np.asarray(s, dtype=np.float64)
    if a.shape != b.shape:
        raise LossError(f"shape mismatch {a.shape} vs {b.shape}")
    inter, union = _soft_iou_terms(np.ascontiguousarray(a).reshape(-1), np.ascontiguousarray(b).reshape(-1))
    if union <= 0.0:
        return 1.0
    return 1.0 - inter / union


def edge_loss(e_hat: np.ndarray, dist: np.ndarray) -> float:
    """Edge-weighted mean of the target distance field, in pixels."""
    e = np.asarray(e_hat, dtype=np.float64)
    d = np.asarray(dist, dtype=np.float64)
    if e.shape != d.shape:
        raise LossError(f"shape mismatch {e.shape} vs {d.shape}")
    total, weighted = _edge_weighted_sum(np.ascontiguousarray(e).reshape(-1), np.ascontiguousarray(d).reshape(-1))
    if total <= 0.0:
        raise LossError("empty rendered edge map")
    return weighted / total


def app_loss(f_render: FeatureVector, f_target: FeatureVector) -> float:
    if f_render.extractor != f_target.extractor:
        raise LossError(f"extractor mismatch: {f_render.extractor} vs {f_target.extractor}")
    if f_render.values.shape != f_target.values.shape:
        raise LossError("feature length mismatch")
    diff = f_render.values - f_target.values
    return float(diff @ diff)


def rot_loss(sil: float, edge: float, app: float, w: LossWeights = LossWeights()) -> float:
    return w.lambda_s * sil + w.lambda_e * edge + w.lambda_a * app


@dataclass(frozen=True, eq=False)
class TargetViews:
    """Reference crop, mask and the mask's edge distance field, all one resolution."""

    image: np.ndarray
    mask: np.ndarray
    distance: np.ndarray
    features: FeatureVector

    @classmethod
    def from_crop(cls, image, mask, extractor: FeatureExtractor, canny: CannyParams = CannyParams()):
        img = to_float_image(image)
        m = (to_float_image(mask) > 0.5).astype(np.float64)
        if img.shape[:2] != m.shape:
            raise LossError("crop and mask resolutions differ")
        dist = distance_transform(canny_edges(m, canny))
        return cls(img, m, dist, extractor.extract(img))
