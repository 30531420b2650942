"""Triangle meshes, pose transforms and bounding volumes.

Canonical frame: +Z up, +Y front. All lengths are meters.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

DEFAULT_ALBEDO = (0.5, 0.5, 0.5)


class DegenerateMeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) == 0:
            raise DegenerateMeshError("mesh has no triangles")
        if not np.all(np.isfinite(v)):
            raise DegenerateMeshError("mesh has non-finite vertex coordinates")
        if t.min() < 0 or t.max() >= len(v):
            raise DegenerateMeshError("triangle index out of range")
        if self.colors is None:
            c = np.tile(np.asarray(DEFAULT_ALBEDO), (len(v), 1))
        else:
            c = np.clip(np.asarray(self.colors, dtype=np.float64).reshape(-1, 3), 0.0, 1.0)
            if len(c) != len(v):
                raise DegenerateMeshError("one albedo color per vertex required")
        v.setflags(write=False)
        t.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "colors", c)

    @cached_property
    def edge_groups(self):
        """Triangle edges grouped by welded endpoints.

        Edge ``3 * t + k`` runs from corner k to corner k+1 of triangle t.
        Returns (order, starts): ``order[starts[g]:starts[g + 1]]`` are the
        edges of group g. Vertices closer than 1e-9 are welded.
        """
        ids = np.unique(np.round(self.vertices, 9), axis=0, return_inverse=True)[1].reshape(-1)[self.triangles]
        a = ids.reshape(-1)
        b = ids[:, [1, 2, 0]].reshape(-1)
        key = np.minimum(a, b) * (int(ids.max()) + 1) + np.maximum(a, b)
        order = np.argsort(key, kind="stable")
        k = key[order]
        starts = np.concatenate([[0], np.flatnonzero(k[1:] != k[:-1]) + 1, [len(k)]])
        return order.astype(np.int64), starts.astype(np.int64)

    def with_vertices(self, vertices: np.ndarray) -> "TriangleMesh":
        return TriangleMesh(vertices, self.triangles, self.colors)

    def with_colors(self, colors) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.triangles, colors)

    def __eq__(self, other):
        if not isinstance(other, TriangleMesh):
            return NotImplemented
        return (
            np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.triangles, other.triangles)
            and np.array_equal(self.colors, other.colors)
        )

    __hash__ = None


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64)
        hi = np.asarray(self.max, dtype=np.float64)
        if np.any(lo > hi):
            raise ValueError("Aabb min must be <= max componentwise")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def extents(self) -> np.ndarray:
        return self.max - self.min

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    @property
    def radius(self) -> float:
        """Half the box diagonal."""
        return 0.5 * float(np.linalg.norm(self.extents))

    def contains(self, other: "Aabb") -> bool:
        return bool(np.all(self.min <= other.min) and np.all(self.max >= other.max))

    def union(self, other: "Aabb") -> "Aabb":
        return Aabb(np.minimum(self.min, other.min), np.maximum(self.max, other.max))

    def overlap(self, other: "Aabb") -> np.ndarray:
        """Per-axis overlap length; negative means a gap."""
        return np.minimum(self.max, other.max) - np.maximum(self.min, other.min)


@dataclass(frozen=True)
class RigidScaleTransform:
    """Yaw about +Z (degrees), translation and target extents (meters)."""

    yaw: float = 0.0
    translation: tuple = (0.0, 0.0, 0.0)
    scale: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        s = tuple(float(x) for x in self.scale)
        t = tuple(float(x) for x in self.translation)
        if len(s) != 3 or len(t) != 3:
            raise ValueError("translation and scale must be 3-vectors")
        if not all(x > 0 and math.isfinite(x) for x in s):
            raise ValueError(f"scale components must be positive, got {s}")
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "scale", s)


def normalize_yaw(yaw: float) -> float:
    """Map to [0, 360), quantized to 1e-9 deg so yaw and yaw+360 agree bitwise."""
    y = round(float(yaw) % 360.0, 9)
    return 0.0 if y >= 360.0 else y + 0.0


def yaw_matrix(yaw_deg: float) -> np.ndarray:
    a = math.radians(normalize_yaw(yaw_deg))
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# -- up-axis hints ----------------------------------------------------------

_AXES = {
    "+X": (1, 0, 0), "-X": (-1, 0, 0),
    "+Y": (0, 1, 0), "-Y": (0, -1, 0),
    "+Z": (0, 0, 1), "-Z": (0, 0, -1),
}


def _axis_name(vec) -> str:
    for name, v in _AXES.items():
        if tuple(int(round(x)) for x in vec) == v:
            return name
    raise ValueError(vec)


def _default_front(up: str) -> str:
    # front axis carried onto +Y by the smallest rotation taking `up` onto +Z
    u = np.array(_AXES[up], dtype=float)
    z = np.array([0.0, 0.0, 1.0])
    if np.allclose(u, z):
        return "+Y"
    if np.allclose(u, -z):
        return "-Y"  # 180 deg about X
    axis = np.cross(u, z)
    axis /= np.linalg.norm(axis)
    # 90 deg rotation about `axis`; Rodrigues with cos=0, sin=1
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    rot = np.eye(3) + k + k @ k
    return _axis_name(rot.T @ np.array([0.0, 1.0, 0.0]))


@dataclass(frozen=True)
class UpAxisHint:
    """Which local axis is up and which is front, e.g. ``"+Y up, -Z front"``."""

    up: str = "+Z"
    front: str = "+Y"

    def __post_init__(self):
        if self.up not in _AXES or self.front not in _AXES:
            raise ValueError(f"unknown axis in hint {self.up!r}/{self.front!r}")
        if np.dot(_AXES[self.up], _AXES[self.front]) != 0:
            raise ValueError(f"up {self.up} and front {self.front} must be perpendicular")

    @classmethod
    def parse(cls, label: str) -> "UpAxisHint":
        up = front = None
        for part in label.replace(";", ",").split(","):
            words = part.strip().upper().split()
            if len(words) != 2:
                if not words:
                    continue
                raise ValueError(f"cannot parse up-axis hint {label!r}")
            axis, role = words
            if not axis.startswith(("+", "-")):
                axis = "+" + axis
            if role == "UP":
                up = axis
            elif role == "FRONT":
                front = axis
            else:
                raise ValueError(f"cannot parse up-axis hint {label!r}")
        if up is None:
            raise ValueError(f"up-axis hint {label!r} names no up axis")
        return cls(up, front or _default_front(up))

    @property
    def label(self) -> str:
        return f"{self.up} up, {self.front} front"

    def rotation(self) -> np.ndarray:
        """Proper rotation taking local up to +Z and local front to +Y."""
        u = np.array(_AXES[self.up], dtype=float)
        f = np.array(_AXES[self.front], dtype=float)
        r = np.cross(f, u)
        return np.stack([r, f, u])

    @staticmethod
    def all_hints() -> list["UpAxisHint"]:
        return [
            UpAxisHint(u, f)
            for u, f in itertools.product(_AXES, _AXES)
            if np.dot(_AXES[u], _AXES[f]) == 0
        ]


# -- operations -------------------------------------------------------------

def aabb(mesh: TriangleMesh) -> Aabb:
    v = mesh.vertices
    return Aabb(v.min(axis=0), v.max(axis=0))


def canonicalize_up_axis(mesh: TriangleMesh, hint: UpAxisHint) -> TriangleMesh:
    rot = hint.rotation()
    if np.array_equal(rot, np.eye(3)):
        return mesh
    return mesh.with_vertices(mesh.vertices @ rot.T)


def recenter_bottom(mesh: TriangleMesh) -> TriangleMesh:
    """Translate so the AABB bottom-center sits at the origin (placement anchor)."""
    box = aabb(mesh)
    anchor = np.array([box.center[0], box.center[1], box.min[2]])
    return mesh.with_vertices(mesh.vertices - anchor)


def apply_transform(mesh: TriangleMesh, xf: RigidScaleTransform) -> TriangleMesh:
    """Scale to the target extents, then yaw, then translate (all about the origin)."""
    ext = aabb(mesh).extents
    if np.any(ext <= 0):
        raise DegenerateMeshError(f"canonical AABB has a zero-extent axis: {ext.tolist()}")
    factors = np.asarray(xf.scale) / ext
    v = mesh.vertices * factors
    if xf.yaw != 0.0:
        v = v @ yaw_matrix(xf.yaw).T
    if any(xf.translation):
        v = v + np.asarray(xf.translation)
    return mesh.with_vertices(v)


def footprint_dims(size_prior, yaw: float) -> tuple[float, float]:
    """Axis-aligned extents of a w x d rectangle rotated by ``yaw`` degrees."""
    w, d = float(size_prior[0]), float(size_prior[1])
    if w <= 0 or d <= 0:
        raise ValueError("footprint dimensions must be positive")
    a = math.radians(normalize_yaw(yaw))
    c, s = abs(math.cos(a)), abs(math.sin(a))
    return w * c + d * s, w * s + d * c


def is_closed_outward(mesh: TriangleMesh, decimals: int = 9) -> bool:
    """True when the mesh is watertight, consistently wound and encloses positive volume.

    Vertices are welded by position first, so per-face vertex copies do not
    break closure. For such meshes the front-facing triangles alone cover the
    projected silhouette.
    """
    _, weld = np.unique(np.round(mesh.vertices, decimals), axis=0, return_inverse=True)
    tris = weld.reshape(-1)[mesh.triangles]
    tris = tris[(tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])]
    if len(tris) == 0:
        return False
    directed = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    d_unique, d_count = np.unique(directed, axis=0, return_counts=True)
    if np.any(d_count != 1):
        return False
    fwd = {tuple(e) for e in d_unique.tolist()}
    if any((b, a) not in fwd for a, b in fwd):
        return False
    v = mesh.vertices
    p0, p1, p2 = v[mesh.triangles[:, 0]], v[mesh.triangles[:, 1]], v[mesh.triangles[:, 2]]
    volume = float(np.einsum("ij,ij->i", p0, np.cross(p1, p2)).sum()) / 6.0
    return volume > 0.0


def merge_meshes(meshes) -> TriangleMesh:
    verts, tris, cols = [], [], []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        cols.append(m.colors)
        offset += len(m.vertices)
    return TriangleMesh(np.concatenate(verts), np.concatenate(tris), np.concatenate(cols))


# -- primitive builders (tests, demo scenes) ---------------------------------

def box_mesh(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0), face_colors=None) -> TriangleMesh:
    """Axis-aligned box with 24 vertices so each face can carry its own color.

    ``face_colors`` order: -X, +X, -Y, +Y, -Z, +Z.
    """
    hx, hy, hz = (0.5 * float(s) for s in size)
    cx, cy, cz = center
    faces = [
        [(-1, -1, -1), (-1, -1, 1), (-1, 1, 1), (-1, 1, -1)],
        [(1, -1, -1), (1, 1, -1), (1, 1, 1), (1, -1, 1)],
        [(-1, -1, -1), (1, -1, -1), (1, -1, 1), (-1, -1, 1)],
        [(-1, 1, -1), (-1, 1, 1), (1, 1, 1), (1, 1, -1)],
        [(-1, -1, -1), (-1, 1, -1), (1, 1, -1), (1, -1, -1)],
        [(-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1)],
    ]
    verts, tris, cols = [], [], []
    for i, quad in enumerate(faces):
        base = len(verts)
        for sx, sy, sz in quad:
            verts.append((cx + sx * hx, cy + sy * hy, cz + sz * hz))
        tris += [(base, base + 1, base + 2), (base, base + 2, base + 3)]
        color = DEFAULT_ALBEDO if face_colors is None else face_colors[i]
        cols += [color] * 4
    return TriangleMesh(np.array(verts), np.array(tris), np.array(cols))


def cylinder_mesh(radius=0.5, height=1.0, segments=24, center=(0.0, 0.0, 0.0), color=DEFAULT_ALBEDO,
                  top_color=None) -> TriangleMesh:
    cx, cy, cz = center
    ang = 2 * np.pi * (np.arange(segments) + 0.5) / segments
    ring = np.stack([cx + radius * np.cos(ang), cy + radius * np.sin(ang)], axis=1)
    z0, z1 = cz - 0.5 * height, cz + 0.5 * height
    verts = [(x, y, z0) for x, y in ring] + [(x, y, z1) for x, y in ring] + [(cx, cy, z0), (cx, cy, z1)]
    bottom_c, top_c = 2 * segments, 2 * segments + 1
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        tris += [(i, j, segments + j), (i, segments + j, segments + i)]
        tris += [(bottom_c, j, i), (top_c, segments + i, segments + j)]
    cols = [color] * (2 * segments + 2)
    if top_color is not None:
        for k in range(segments, 2 * segments):
            cols[k] = top_color
        cols[top_c] = top_color
    return TriangleMesh(np.array(verts), np.array(tris), np.array(cols))
