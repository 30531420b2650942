"""Binary-image utilities: Sobel gradients, Canny edges, exact Euclidean distance transform."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage
from skimage.morphology import thin

_INF = np.inf


@dataclass(frozen=True)
class CannyParams:
    sigma: float = 1.0
    low: float = 0.1
    high: float = 0.2


def sobel_gradients(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3x3 Sobel (gx, gy) with clamp-replicated borders; gx > 0 for intensity rising to the right."""
    a = np.pad(np.asarray(image, dtype=np.float64), 1, mode="edge")
    tl, tc, tr = a[:-2, :-2], a[:-2, 1:-1], a[:-2, 2:]
    ml, mr = a[1:-1, :-2], a[1:-1, 2:]
    bl, bc, br = a[2:, :-2], a[2:, 1:-1], a[2:, 2:]
    gx = (tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl)
    gy = (bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr)
    return gx, gy


def canny_edges(mask: np.ndarray, params: CannyParams = CannyParams()) -> np.ndarray:
    """Canny edge map of a (binary or gray) mask as a bool array.

    Thresholds are fractions of the maximum gradient magnitude, so a mask and
    its complement give identical edges.
    """
    img = np.asarray(mask, dtype=np.float64)
    if img.size == 0:
        raise ValueError("empty image")
    smooth = ndimage.gaussian_filter(img, params.sigma, mode="nearest")
    gx, gy = sobel_gradients(smooth)
    # rounding removes last-ulp asymmetry between an image and its complement
    mag = np.round(np.hypot(gx, gy), 9)
    peak = mag.max()
    if peak <= 0:
        return np.zeros(img.shape, dtype=bool)
    peaks = _non_max_suppression(mag, gx, gy)
    strong = peaks >= params.high * peak
    weak = peaks >= params.low * peak
    labels, n = ndimage.label(weak, structure=np.ones((3, 3)))
    if n == 0:
        return np.zeros(img.shape, dtype=bool)
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    # NMS leaves 4-connected staircases on diagonals; thin to 1-pixel, 8-connected
    return thin(keep[labels])


def _non_max_suppression(mag, gx, gy):
    h, w = mag.shape
    p = np.pad(mag, 1, mode="constant")
    angle = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    sector = np.zeros(mag.shape, dtype=np.int8)
    sector[(angle >= 22.5) & (angle < 67.5)] = 1
    sector[(angle >= 67.5) & (angle < 112.5)] = 2
    sector[(angle >= 112.5) & (angle < 157.5)] = 3
    # (dy, dx) of the neighbor along the gradient, for each sector
    offsets = [(0, 1), (1, 1), (1, 0), (1, -1)]
    out = np.zeros_like(mag)
    for s, (dy, dx) in enumerate(offsets):
        fwd = p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        back = p[1 - dy:1 - dy + h, 1 - dx:1 - dx + w]
        # strict on one side, non-strict on the other: plateaus of width 2 keep one pixel
        keep = (sector == s) & (mag > back) & (mag >= fwd) & (mag > 0)
        out[keep] = mag[keep]
    return out


# -- exact Euclidean distance transform (lower envelope of parabolas) --------

@numba.njit(cache=True)
def _envelope_1d(f, out, v, z):
    n = f.shape[0]
    k = -1
    for q in range(n):
        fq = f[q]
        if fq == _INF:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -_INF
            z[1] = _INF
            continue
        # z[0] = -inf, so k never drops below 0
        p = v[k]
        s = ((fq + q * q) - (f[p] + p * p)) / (2.0 * q - 2.0 * p)
        while s <= z[k]:
            k -= 1
            p = v[k]
            s = ((fq + q * q) - (f[p] + p * p)) / (2.0 * q - 2.0 * p)
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = _INF
    if k < 0:
        for q in range(n):
            out[q] = _INF
        return
    j = 0
    for q in range(n):
        while z[j + 1] < q:
            j += 1
        p = v[j]
        out[q] = (q - p) * (q - p) + f[p]


@numba.njit(cache=True)
def _edt_rows(f):
    h, w = f.shape
    v = np.empty(w, dtype=np.int64)
    z = np.empty(w + 1, dtype=np.float64)
    out = np.empty((h, w), dtype=np.float64)
    for y in range(h):
        _envelope_1d(f[y], out[y], v, z)
    return out


@numba.njit(cache=True)
def _edt_squared(edges):
    h, w = edges.shape
    f = np.empty((w, h), dtype=np.float64)
    for y in range(h):
        for x in range(w):
            f[x, y] = 0.0 if edges[y, x] else _INF
    cols = _edt_rows(f)
    # second pass on the transpose keeps memory access contiguous
    return _edt_rows(np.ascontiguousarray(cols.T))


def distance_transform(edges: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance (pixels) from each pixel to the nearest nonzero pixel.

    Returns +inf everywhere when there are no edge pixels.
    """
    e = np.ascontiguousarray(np.asarray(edges) != 0)
    if e.ndim != 2:
        raise ValueError("distance_transform expects a 2-D image")
    return np.sqrt(_edt_squared(e))
