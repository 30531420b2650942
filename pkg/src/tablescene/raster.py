"""Software perspective rasterizer producing soft silhouette, edge map and flat color.

The silhouette is a logistic of the signed pixel distance to the boundary of
the union of projected triangles. Outside the union the distance is exact
(nearest projected triangle). Inside it is the larger of the distance to the
nearest open edge and the distance to the nearest uncovered pixel less one
(3x3 chamfer metric). An edge is open unless two triangles facing the same way
share it, so the union's boundary lies on open edges and the inside values do
not depend on how faces are split into triangles. When near-plane clipping
re-splits triangles the open-edge set is unknown and the deepest containing
triangle's boundary distance stands in for it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

from .geometry import TriangleMesh, aabb, normalize_yaw, yaw_matrix

DEFAULT_SOFTNESS = 1.5
DEFAULT_FOV = 40.0
DEFAULT_SIZE = 256


@dataclass(frozen=True)
class Camera:
    """Orbit camera; ``distance`` is in multiples of the subject radius (half AABB diagonal).

    Azimuth 0 looks from +Y toward -Y; positive azimuth orbits counter-clockwise seen from above.
    """

    azimuth: float = 0.0
    elevation: float = 30.0
    distance: float = 2.5
    fov: float = DEFAULT_FOV
    image_size: int = DEFAULT_SIZE

    def __post_init__(self):
        if not 0.0 <= self.elevation <= 90.0:
            raise ValueError(f"elevation must be in [0, 90], got {self.elevation}")
        if not self.distance > 0:
            raise ValueError("camera distance must be positive")
        if self.image_size < 16:
            raise ValueError("image size must be at least 16")
        if not 0.0 < self.fov < 180.0:
            raise ValueError("fov must be in (0, 180)")

    def basis(self):
        """(offset direction from target to eye, right, up, forward) unit vectors."""
        az = math.radians(normalize_yaw(self.azimuth))
        el = math.radians(self.elevation)
        ca, sa, ce, se = math.cos(az), math.sin(az), math.cos(el), math.sin(el)
        back = np.array([-sa * ce, ca * ce, se])
        fwd = -back
        right = np.array([-ca, -sa, 0.0])
        up = np.cross(right, fwd)
        return back, right, up, fwd


@dataclass(frozen=True, eq=False)
class RenderOutputs:
    silhouette: np.ndarray
    edge_map: np.ndarray
    color: np.ndarray
    coverage: np.ndarray


class RenderError(ValueError):
    pass


def sobel_edge_map(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.size == 0:
        raise ValueError("empty image")
    if img.ndim != 2:
        raise ValueError("sobel_edge_map expects a grayscale image")
    return _sobel_magnitude(np.ascontiguousarray(img))


# -- rasterization kernel ----------------------------------------------------

@numba.njit(cache=True)
def _seg_dist(px, py, ax, ay, bx, by):
    dx = bx - ax
    dy = by - ay
    L = dx * dx + dy * dy
    t = 0.0
    if L > 0.0:
        t = ((px - ax) * dx + (py - ay) * dy) / L
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    qx = ax + t * dx - px
    qy = ay + t * dy - py
    return math.sqrt(qx * qx + qy * qy)


@numba.njit(cache=True)
def _edge_coeffs(x0, y0, x1, y1, x2, y2, sgn):
    # e_k = a_k*px + b_k*py + c_k, positive inside, for the edge opposite vertex k
    a = np.empty(3)
    b = np.empty(3)
    c = np.empty(3)
    a[0] = -sgn * (y2 - y1)
    b[0] = sgn * (x2 - x1)
    c[0] = -a[0] * x1 - b[0] * y1
    a[1] = -sgn * (y0 - y2)
    b[1] = sgn * (x0 - x2)
    c[1] = -a[1] * x2 - b[1] * y2
    a[2] = -sgn * (y1 - y0)
    b[2] = sgn * (x1 - x0)
    c[2] = -a[2] * x0 - b[2] * y0
    return a, b, c


@numba.njit(cache=True)
def _row_span(a, b, c, py, floor_k, i0, i1):
    """Pixel-index range on row ``py`` where every e_k >= floor_k (widened by one pixel)."""
    lo = float(i0)
    hi = float(i1)
    for k in range(3):
        rest = b[k] * py + c[k] - floor_k[k]
        if a[k] > 0.0:
            lo = max(lo, math.floor(-rest / a[k] - 0.5) - 1.0)
        elif a[k] < 0.0:
            hi = min(hi, math.ceil(-rest / a[k] - 0.5) + 1.0)
        elif rest < 0.0:
            return 1, 0
    return int(lo), int(hi)


@numba.njit(cache=True)
def _cover_pass(xy, invz, cols, n, color, zbuf, signed):
    zero = np.zeros(3)
    for t in range(xy.shape[0]):
        x0 = xy[t, 0, 0]
        y0 = xy[t, 0, 1]
        x1 = xy[t, 1, 0]
        y1 = xy[t, 1, 1]
        x2 = xy[t, 2, 0]
        y2 = xy[t, 2, 1]
        area2 = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area2) < 1e-12:
            continue
        sgn = 1.0 if area2 > 0.0 else -1.0
        il0 = 1.0 / math.hypot(x2 - x1, y2 - y1)
        il1 = 1.0 / math.hypot(x0 - x2, y0 - y2)
        il2 = 1.0 / math.hypot(x1 - x0, y1 - y0)
        i0 = max(0, int(math.ceil(min(x0, min(x1, x2)) - 0.5)))
        i1 = min(n - 1, int(math.floor(max(x0, max(x1, x2)) - 0.5)))
        j0 = max(0, int(math.ceil(min(y0, min(y1, y2)) - 0.5)))
        j1 = min(n - 1, int(math.floor(max(y0, max(y1, y2)) - 0.5)))
        if i0 > i1 or j0 > j1:
            continue
        inv_area = 1.0 / abs(area2)
        a, b, c = _edge_coeffs(x0, y0, x1, y1, x2, y2, sgn)
        z0 = invz[t, 0] * inv_area
        z1 = invz[t, 1] * inv_area
        z2 = invz[t, 2] * inv_area
        for j in range(j0, j1 + 1):
            py = j + 0.5
            lo, hi = _row_span(a, b, c, py, zero, i0, i1)
            r0 = b[0] * py + c[0]
            r1 = b[1] * py + c[1]
            r2 = b[2] * py + c[2]
            for i in range(lo, hi + 1):
                px = i + 0.5
                e0 = a[0] * px + r0
                e1 = a[1] * px + r1
                e2 = a[2] * px + r2
                if e0 < 0.0 or e1 < 0.0 or e2 < 0.0:
                    continue
                bd = min(e0 * il0, min(e1 * il1, e2 * il2))
                if bd > signed[j, i]:
                    signed[j, i] = bd
                w0 = e0 * z0
                w1 = e1 * z1
                w2 = e2 * z2
                iz = w0 + w1 + w2
                if iz > zbuf[j, i]:
                    zbuf[j, i] = iz
                    r = 1.0 / iz
                    for ch in range(3):
                        color[j, i, ch] = (w0 * cols[t, 0, ch] + w1 * cols[t, 1, ch] + w2 * cols[t, 2, ch]) * r


@numba.njit(cache=True)
def _uncovered_integral(signed):
    h, w = signed.shape
    sat = np.zeros((h + 1, w + 1), dtype=np.int64)
    for j in range(h):
        run = 0
        for i in range(w):
            if signed[j, i] < 0.0:
                run += 1
            sat[j + 1, i + 1] = sat[j, i + 1] + run
    return sat


@numba.njit(cache=True)
def _outside_pass(xy, n, reach, signed):
    floor_k = np.empty(3)
    zero = np.zeros(3)
    sat = _uncovered_integral(signed)
    for t in range(xy.shape[0]):
        x0 = xy[t, 0, 0]
        y0 = xy[t, 0, 1]
        x1 = xy[t, 1, 0]
        y1 = xy[t, 1, 1]
        x2 = xy[t, 2, 0]
        y2 = xy[t, 2, 1]
        area2 = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area2) < 1e-12:
            continue
        # a triangle whose pixel neighborhood is fully covered lies inside the union
        # and is never the nearest one to an uncovered pixel
        ci0 = max(0, int(math.floor(min(x0, min(x1, x2)))) - 1)
        ci1 = min(n, int(math.ceil(max(x0, max(x1, x2)))) + 1)
        cj0 = max(0, int(math.floor(min(y0, min(y1, y2)))) - 1)
        cj1 = min(n, int(math.ceil(max(y0, max(y1, y2)))) + 1)
        if ci0 < ci1 and cj0 < cj1:
            if sat[cj1, ci1] - sat[cj0, ci1] - sat[cj1, ci0] + sat[cj0, ci0] == 0:
                continue
        sgn = 1.0 if area2 > 0.0 else -1.0
        il = np.empty(3)
        il[0] = 1.0 / math.hypot(x2 - x1, y2 - y1)
        il[1] = 1.0 / math.hypot(x0 - x2, y0 - y2)
        il[2] = 1.0 / math.hypot(x1 - x0, y1 - y0)
        for k in range(3):
            floor_k[k] = -reach / il[k]
        i0 = max(0, int(math.ceil(min(x0, min(x1, x2)) - reach - 0.5)))
        i1 = min(n - 1, int(math.floor(max(x0, max(x1, x2)) + reach - 0.5)))
        j0 = max(0, int(math.ceil(min(y0, min(y1, y2)) - reach - 0.5)))
        j1 = min(n - 1, int(math.floor(max(y0, max(y1, y2)) + reach - 0.5)))
        a, b, c = _edge_coeffs(x0, y0, x1, y1, x2, y2, sgn)
        for j in range(j0, j1 + 1):
            py = j + 0.5
            # pixels with every outward edge-line distance <= reach
            lo, hi = _row_span(a, b, c, py, floor_k, i0, i1)
            # this triangle's own interior is covered; the inner span is widened, so shrink it
            skip_lo, skip_hi = _row_span(a, b, c, py, zero, i0, i1)
            skip_lo += 2
            skip_hi -= 2
            for i in range(lo, hi + 1):
                if skip_lo <= i <= skip_hi:
                    continue
                if signed[j, i] >= 0.0:
                    continue
                px = i + 0.5
                lower = 0.0
                for k in range(3):
                    lower = max(lower, -(a[k] * px + b[k] * py + c[k]) * il[k])
                if lower >= -signed[j, i] or lower > reach:
                    continue
                d = _seg_dist(px, py, x1, y1, x2, y2)
                d = min(d, _seg_dist(px, py, x2, y2, x0, y0))
                d = min(d, _seg_dist(px, py, x0, y0, x1, y1))
                if -d > signed[j, i]:
                    signed[j, i] = -d


@numba.njit(cache=True)
def _chamfer_to_uncovered(signed, cap):
    """Two-pass 3x3 chamfer distance from covered pixels to the nearest uncovered one, capped."""
    h, w = signed.shape
    d = np.empty((h, w))
    r2 = math.sqrt(2.0)
    for j in range(h):
        for i in range(w):
            if signed[j, i] < 0.0:
                d[j, i] = 0.0
            else:
                v = cap
                if j > 0:
                    v = min(v, d[j - 1, i] + 1.0)
                    if i > 0:
                        v = min(v, d[j - 1, i - 1] + r2)
                    if i < w - 1:
                        v = min(v, d[j - 1, i + 1] + r2)
                if i > 0:
                    v = min(v, d[j, i - 1] + 1.0)
                d[j, i] = v
    for j in range(h - 1, -1, -1):
        for i in range(w - 1, -1, -1):
            v = d[j, i]
            if v == 0.0:
                continue
            if j < h - 1:
                v = min(v, d[j + 1, i] + 1.0)
                if i > 0:
                    v = min(v, d[j + 1, i - 1] + r2)
                if i < w - 1:
                    v = min(v, d[j + 1, i + 1] + r2)
            if i < w - 1:
                v = min(v, d[j, i + 1] + 1.0)
            d[j, i] = v
    return d


@numba.njit(cache=True)
def _open_edge_distance(segs, n, reach, signed, to_uncovered):
    """Distance from covered pixels near the boundary to the nearest open edge (+inf beyond reach)."""
    inner = np.full((n, n), np.inf)
    for e in range(segs.shape[0]):
        ax = segs[e, 0, 0]
        ay = segs[e, 0, 1]
        bx = segs[e, 1, 0]
        by = segs[e, 1, 1]
        j0 = max(0, int(math.ceil(min(ay, by) - reach - 0.5)))
        j1 = min(n - 1, int(math.floor(max(ay, by) + reach - 0.5)))
        dy = by - ay
        for j in range(j0, j1 + 1):
            # x-extent of the part of the segment within reach of this row, widened by reach
            py = j + 0.5
            if abs(dy) > 1e-12:
                t0 = (py - reach - ay) / dy
                t1 = (py + reach - ay) / dy
                if t0 > t1:
                    t0, t1 = t1, t0
                t0 = max(t0, 0.0)
                t1 = min(t1, 1.0)
            else:
                t0 = 0.0
                t1 = 1.0
            xa = ax + t0 * (bx - ax)
            xb = ax + t1 * (bx - ax)
            i0 = max(0, int(math.ceil(min(xa, xb) - reach - 0.5)))
            i1 = min(n - 1, int(math.floor(max(xa, xb) + reach - 0.5)))
            for i in range(i0, i1 + 1):
                # deep pixels saturate through the chamfer term anyway
                if signed[j, i] < 0.0 or to_uncovered[j, i] - 1.0 > reach:
                    continue
                d = _seg_dist(i + 0.5, j + 0.5, ax, ay, bx, by)
                if d < inner[j, i]:
                    inner[j, i] = d
    return inner


@numba.njit(cache=True)
def _soft_silhouette(signed, softness, reach, segs, use_open):
    h, w = signed.shape
    to_uncovered = _chamfer_to_uncovered(signed, reach + 2.0)
    if use_open:
        inner = _open_edge_distance(segs, h, reach, signed, to_uncovered)
    sil = np.empty((h, w))
    for j in range(h):
        for i in range(w):
            d = signed[j, i]
            if d >= 0.0:
                if use_open:
                    d = min(inner[j, i], reach + 1.0)
                d = max(d, to_uncovered[j, i] - 1.0)
            if d > reach:
                sil[j, i] = 1.0
            elif d < -reach:
                sil[j, i] = 0.0
            else:
                sil[j, i] = 1.0 / (1.0 + math.exp(-d / softness))
    return sil


@numba.njit(cache=True)
def _sobel_magnitude(img):
    h, w = img.shape
    out = np.empty((h, w))
    for j in range(h):
        jm = max(j - 1, 0)
        jp = min(j + 1, h - 1)
        for i in range(w):
            im = max(i - 1, 0)
            ip = min(i + 1, w - 1)
            gx = (img[jm, ip] + 2.0 * img[j, ip] + img[jp, ip]) - (img[jm, im] + 2.0 * img[j, im] + img[jp, im])
            gy = (img[jp, im] + 2.0 * img[jp, i] + img[jp, ip]) - (img[jm, im] + 2.0 * img[jm, i] + img[jm, ip])
            out[j, i] = math.sqrt(gx * gx + gy * gy)
    return out


# -- projection ----------------------------------------------------------------

def _clip_near(tri_c, tri_col, z_near):
    """Clip camera-space triangles against z = z_near (Sutherland-Hodgman)."""
    front = tri_c[:, :, 2] > z_near
    full = front.all(axis=1)
    partial = front.any(axis=1) & ~full
    out_c = [tri_c[full]]
    out_col = [tri_col[full]]
    for k in np.flatnonzero(partial):
        poly, pcol = [], []
        for a in range(3):
            b = (a + 1) % 3
            pa, pb = tri_c[k, a], tri_c[k, b]
            ca, cb = tri_col[k, a], tri_col[k, b]
            ina, inb = pa[2] > z_near, pb[2] > z_near
            if ina:
                poly.append(pa)
                pcol.append(ca)
            if ina != inb:
                s = (z_near - pa[2]) / (pb[2] - pa[2])
                poly.append(pa + s * (pb - pa))
                pcol.append(ca + s * (cb - ca))
        for m in range(1, len(poly) - 1):
            out_c.append(np.array([[poly[0], poly[m], poly[m + 1]]]))
            out_col.append(np.array([[pcol[0], pcol[m], pcol[m + 1]]]))
    return np.concatenate(out_c), np.concatenate(out_col)


def project(mesh: TriangleMesh, camera: Camera, yaw: float = 0.0, framing: str = "camera",
            margin: float = 0.0, cull_backfaces: bool = False):
    """Project the yawed mesh into pixel space.

    Returns (xy (T,3,2), inverse depth (T,3), colors (T,3,3)). With
    ``framing="tight"`` the projected bounding box, padded to a square plus
    ``margin`` (fraction of its side, per side), fills the image.
    ``cull_backfaces`` is exact only for closed, outward-wound meshes
    (see ``geometry.is_closed_outward``).
    """
    xy, invz, cols, _ = _project(mesh, camera, yaw, framing, margin, cull_backfaces)
    return xy, invz, cols


@numba.njit(cache=True)
def _open_edge_segments(xy, order, starts):
    t_count = xy.shape[0]
    facing = np.zeros(t_count, dtype=np.int64)
    for t in range(t_count):
        area2 = ((xy[t, 1, 0] - xy[t, 0, 0]) * (xy[t, 2, 1] - xy[t, 0, 1])
                 - (xy[t, 2, 0] - xy[t, 0, 0]) * (xy[t, 1, 1] - xy[t, 0, 1]))
        if abs(area2) < 1e-12:
            facing[t] = 0
        elif area2 > 0.0:
            facing[t] = 1
        else:
            facing[t] = -1
    segs = np.empty((len(order), 2, 2))
    m = 0
    for g in range(len(starts) - 1):
        pos = 0
        neg = 0
        first = -1
        for q in range(starts[g], starts[g + 1]):
            f = facing[order[q] // 3]
            if f == 0:
                continue
            if first < 0:
                first = order[q]
            if f > 0:
                pos += 1
            else:
                neg += 1
        # a contour edge is seen once per facing; emit one copy
        if first < 0 or pos >= 2 or neg >= 2:
            continue
        t = first // 3
        k = first % 3
        segs[m, 0, 0] = xy[t, k, 0]
        segs[m, 0, 1] = xy[t, k, 1]
        segs[m, 1, 0] = xy[t, (k + 1) % 3, 0]
        segs[m, 1, 1] = xy[t, (k + 1) % 3, 1]
        m += 1
    return segs[:m].copy()


def open_edges(mesh: TriangleMesh, xy: np.ndarray) -> np.ndarray:
    """Projected segments (E,2,2) of edges not shared by two triangles facing the same way.

    ``xy`` holds the projection of every mesh triangle in order; triangles with
    (near) zero projected area are ignored.
    """
    order, starts = mesh.edge_groups
    return _open_edge_segments(np.ascontiguousarray(xy, dtype=np.float64), order, starts)


def _project(mesh: TriangleMesh, camera: Camera, yaw: float = 0.0, framing: str = "camera",
            margin: float = 0.0, cull_backfaces: bool = False):
    """``project`` plus the open-edge segments, or None when clipping re-split triangles."""
    n = camera.image_size
    box = aabb(mesh)
    radius = box.radius
    if radius <= 0:
        raise RenderError("mesh has zero extent")
    rot = yaw_matrix(yaw)
    verts = mesh.vertices @ rot.T
    target = rot @ box.center
    back, right, up, fwd = camera.basis()
    eye = target + camera.distance * radius * back
    rel = verts - eye
    cam = np.stack([rel @ right, rel @ up, rel @ fwd], axis=1)
    tri_c = cam[mesh.triangles]
    tri_col = mesh.colors[mesh.triangles]
    clipped = bool((tri_c[:, :, 2] <= 1e-4 * radius).any())
    tri_c, tri_col = _clip_near(tri_c, tri_col, 1e-4 * radius)
    if len(tri_c) == 0:
        return np.zeros((0, 3, 2)), np.zeros((0, 3)), np.zeros((0, 3, 3)), None
    focal = 0.5 * n / math.tan(math.radians(camera.fov) / 2.0)
    invz = 1.0 / tri_c[:, :, 2]
    u = focal * tri_c[:, :, 0] * invz
    v = -focal * tri_c[:, :, 1] * invz
    if framing == "tight":
        u0, u1, v0, v1 = u.min(), u.max(), v.min(), v.max()
        side = max(u1 - u0, v1 - v0) * (1.0 + 2.0 * margin)
        if side <= 0:
            raise RenderError("projection has zero extent")
        s = n / side
        u = (u - 0.5 * (u0 + u1)) * s + 0.5 * n
        v = (v - 0.5 * (v0 + v1)) * s + 0.5 * n
    elif framing == "camera":
        u = u + 0.5 * n
        v = v + 0.5 * n
    else:
        raise ValueError(f"unknown framing {framing!r}")
    xy = np.ascontiguousarray(np.stack([u, v], axis=2))
    segs = None if clipped else open_edges(mesh, xy)
    if cull_backfaces:
        # image v points down, so outward faces seen from outside wind negatively
        d1 = xy[:, 1] - xy[:, 0]
        d2 = xy[:, 2] - xy[:, 0]
        front = d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1] < 0.0
        xy, invz, tri_col = xy[front], invz[front], tri_col[front]
    return xy, np.ascontiguousarray(invz), np.ascontiguousarray(tri_col), segs


def render(mesh: TriangleMesh, camera: Camera, yaw: float = 0.0, softness: float = DEFAULT_SOFTNESS,
           background=(0.0, 0.0, 0.0), framing: str = "camera", margin: float = 0.0,
           cull_backfaces: bool = False) -> RenderOutputs:
    """Render the mesh rotated by ``yaw`` degrees about +Z."""
    if not softness > 0:
        raise RenderError("softness must be positive")
    n = camera.image_size
    xy, invz, cols, segs = _project(mesh, camera, yaw, framing, margin, cull_backfaces)
    # logistic tail below ~3e-4 beyond 8 softness widths
    reach = float(math.ceil(8.0 * softness) + 1)
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    use_open = segs is not None
    if segs is None:
        segs = np.zeros((0, 2, 2))
    sil, edges, color, covered = _rasterize(xy, invz, cols, n, bg, softness, reach, segs, use_open)
    return RenderOutputs(sil, edges, color, covered)


@numba.njit(cache=True)
def _rasterize(xy, invz, cols, n, bg, softness, reach, segs, use_open):
    color = np.empty((n, n, 3))
    for j in range(n):
        for i in range(n):
            for ch in range(3):
                color[j, i, ch] = bg[ch]
    zbuf = np.zeros((n, n))
    # >= 0: covered, deepest boundary distance; < 0: minus the distance to the nearest triangle
    signed = np.full((n, n), -np.inf)
    if xy.shape[0] > 0:
        _cover_pass(xy, invz, cols, n, color, zbuf, signed)
        _outside_pass(xy, n, reach, signed)
    covered = signed >= 0.0
    sil = _soft_silhouette(signed, softness, reach, segs, use_open)
    return sil, _sobel_magnitude(sil), color, covered


# -- crop contract -------------------------------------------------------------

def crop_bounds(mask: np.ndarray, margin: float = 0.0) -> tuple[float, float, float]:
    """Square crop (x0, y0, side) in pixel-edge coordinates around the mask's foreground box."""
    ys, xs = np.nonzero(np.asarray(mask) > 0.5)
    if len(xs) == 0:
        raise ValueError("empty mask: nothing to crop")
    x0, x1 = xs.min(), xs.max() + 1
    y0, y1 = ys.min(), ys.max() + 1
    side = max(x1 - x0, y1 - y0) * (1.0 + 2.0 * margin)
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    return float(cx - 0.5 * side), float(cy - 0.5 * side), float(side)


def crop_with_bounds(image: np.ndarray, bounds, out_size: int = DEFAULT_SIZE) -> np.ndarray:
    """Bilinear resample of the square ``bounds`` to out_size x out_size; outside is zero."""
    img = np.asarray(image, dtype=np.float64)
    x0, y0, side = bounds
    step = side / out_size
    centers = (np.arange(out_size) + 0.5) * step
    rows = y0 + centers - 0.5
    cols = x0 + centers - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    if img.ndim == 2:
        return ndimage.map_coordinates(img, [rr, cc], order=1, mode="constant", cval=0.0)
    return np.stack(
        [ndimage.map_coordinates(img[..., k], [rr, cc], order=1, mode="constant", cval=0.0)
         for k in range(img.shape[2])],
        axis=-1,
    )


def tight_crop_resize(image: np.ndarray, mask: np.ndarray, out_size: int = DEFAULT_SIZE,
                      margin: float = 0.0) -> np.ndarray:
    return crop_with_bounds(image, crop_bounds(mask, margin), out_size)


def to_float_image(arr: np.ndarray) -> np.ndarray:
    a = np.asarray(arr)
    if a.dtype == np.uint8:
        return a.astype(np.float64) / 255.0
    return np.asarray(a, dtype=np.float64)


def to_uint8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(arr) * 255.0), 0, 255).astype(np.uint8)
