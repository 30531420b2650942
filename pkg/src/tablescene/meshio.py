"""Mesh file I/O: Wavefront OBJ (with optional ``v x y z r g b`` colors) and glTF binary.

Only the subset needed here is supported: positions, triangle indices and
per-vertex colors. Polygon faces are fan-triangulated on load.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .geometry import TriangleMesh, merge_meshes


class MeshFormatError(ValueError):
    pass


def load_mesh(path) -> TriangleMesh:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return read_obj(path.read_text(encoding="utf-8"))
    if suffix == ".glb":
        meshes = read_glb(path.read_bytes())
        return merge_meshes([m for _, m in meshes])
    raise MeshFormatError(f"unsupported mesh format: {path.suffix}")


def save_mesh(mesh: TriangleMesh, path) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        path.write_text(write_obj(mesh), encoding="utf-8")
    elif suffix == ".glb":
        path.write_bytes(write_glb([("mesh", mesh)]))
    else:
        raise MeshFormatError(f"unsupported mesh format: {path.suffix}")


def read_obj(text: str) -> TriangleMesh:
    verts, cols, tris = [], [], []
    has_color = False
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            nums = [float(x) for x in parts[1:]]
            if len(nums) not in (3, 4, 6, 7):
                raise MeshFormatError(f"line {lineno}: bad vertex")
            verts.append(nums[:3])
            if len(nums) >= 6:
                has_color = True
                cols.append(nums[3:6] if len(nums) == 6 else nums[4:7])
            else:
                cols.append(None)
        elif parts[0] == "f":
            idx = []
            for tok in parts[1:]:
                i = int(tok.split("/")[0])
                idx.append(i - 1 if i > 0 else len(verts) + i)
            if len(idx) < 3:
                raise MeshFormatError(f"line {lineno}: face with fewer than 3 vertices")
            for k in range(1, len(idx) - 1):
                tris.append((idx[0], idx[k], idx[k + 1]))
    if not verts:
        raise MeshFormatError("no vertices")
    colors = None
    if has_color:
        colors = np.array([c if c is not None else (0.5, 0.5, 0.5) for c in cols])
    return TriangleMesh(np.array(verts), np.array(tris, dtype=np.int64), colors)


def write_obj(mesh: TriangleMesh) -> str:
    lines = []
    for (x, y, z), (r, g, b) in zip(mesh.vertices, mesh.colors):
        lines.append(f"v {x:.9g} {y:.9g} {z:.9g} {r:.6g} {g:.6g} {b:.6g}")
    for a, b, c in mesh.triangles + 1:
        lines.append(f"f {a} {b} {c}")
    return "\n".join(lines) + "\n"


# -- glTF 2.0 binary ----------------------------------------------------------

_GLB_MAGIC = 0x46546C67
_JSON_CHUNK = 0x4E4F534A
_BIN_CHUNK = 0x004E4942
_FLOAT, _UINT32 = 5126, 5125


def _pad(data: bytes, fill: bytes) -> bytes:
    return data + fill * (-len(data) % 4)


def write_glb(named_meshes) -> bytes:
    """One node + mesh per entry; positions float32, colors float32 RGB, uint32 indices."""
    blob = bytearray()
    views, accessors, meshes, nodes = [], [], [], []

    def add(arr: np.ndarray, target, comp, type_, minmax=False):
        raw = arr.tobytes()
        views.append({"buffer": 0, "byteOffset": len(blob), "byteLength": len(raw), "target": target})
        blob.extend(_pad(raw, b"\x00"))
        acc = {"bufferView": len(views) - 1, "componentType": comp, "count": len(arr), "type": type_}
        if minmax:
            acc["min"] = [float(x) for x in arr.min(axis=0)]
            acc["max"] = [float(x) for x in arr.max(axis=0)]
        accessors.append(acc)
        return len(accessors) - 1

    for name, mesh in named_meshes:
        pos = add(mesh.vertices.astype("<f4"), 34962, _FLOAT, "VEC3", minmax=True)
        col = add(mesh.colors.astype("<f4"), 34962, _FLOAT, "VEC3")
        idx = add(mesh.triangles.astype("<u4").reshape(-1), 34963, _UINT32, "SCALAR")
        meshes.append({"name": name, "primitives": [{"attributes": {"POSITION": pos, "COLOR_0": col},
                                                     "indices": idx, "mode": 4}]})
        nodes.append({"name": name, "mesh": len(meshes) - 1})

    doc = {
        "asset": {"version": "2.0", "generator": "tablescene"},
        "scene": 0,
        "scenes": [{"nodes": list(range(len(nodes)))}],
        "nodes": nodes,
        "meshes": meshes,
        "accessors": accessors,
        "bufferViews": views,
        "buffers": [{"byteLength": len(blob)}],
    }
    json_bytes = _pad(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode(), b" ")
    bin_bytes = bytes(blob)
    total = 12 + 8 + len(json_bytes) + 8 + len(bin_bytes)
    out = struct.pack("<III", _GLB_MAGIC, 2, total)
    out += struct.pack("<II", len(json_bytes), _JSON_CHUNK) + json_bytes
    out += struct.pack("<II", len(bin_bytes), _BIN_CHUNK) + bin_bytes
    return out


def read_glb(data: bytes) -> list[tuple[str, TriangleMesh]]:
    """Read meshes written by :func:`write_glb` (node transforms are not supported)."""
    if len(data) < 20:
        raise MeshFormatError("truncated glb")
    magic, version, _ = struct.unpack_from("<III", data, 0)
    if magic != _GLB_MAGIC or version != 2:
        raise MeshFormatError("not a glTF 2.0 binary")
    jlen, jtype = struct.unpack_from("<II", data, 12)
    if jtype != _JSON_CHUNK:
        raise MeshFormatError("first chunk must be JSON")
    doc = json.loads(data[20:20 + jlen])
    off = 20 + jlen
    blen, _ = struct.unpack_from("<II", data, off)
    blob = data[off + 8: off + 8 + blen]

    ncomp = {"SCALAR": 1, "VEC3": 3, "VEC4": 4}
    dtypes = {_FLOAT: "<f4", _UINT32: "<u4", 5123: "<u2", 5121: "u1"}

    def accessor(i):
        acc = doc["accessors"][i]
        view = doc["bufferViews"][acc["bufferView"]]
        dt = np.dtype(dtypes[acc["componentType"]])
        n = acc["count"] * ncomp[acc["type"]]
        start = view.get("byteOffset", 0) + acc.get("byteOffset", 0)
        arr = np.frombuffer(blob, dtype=dt, count=n, offset=start)
        return arr.reshape(acc["count"], -1) if ncomp[acc["type"]] > 1 else arr

    out = []
    for node in doc.get("nodes", []):
        if "mesh" not in node:
            continue
        if any(k in node for k in ("matrix", "rotation", "translation", "scale")):
            raise MeshFormatError("node transforms are not supported")
        parts = []
        for prim in doc["meshes"][node["mesh"]]["primitives"]:
            if prim.get("mode", 4) != 4:
                raise MeshFormatError("only triangle primitives are supported")
            pos = accessor(prim["attributes"]["POSITION"]).astype(np.float64)
            col = None
            if "COLOR_0" in prim["attributes"]:
                col = accessor(prim["attributes"]["COLOR_0"])[:, :3].astype(np.float64)
            idx = accessor(prim["indices"]).astype(np.int64).reshape(-1, 3)
            parts.append(TriangleMesh(pos, idx, col))
        out.append((node.get("name", ""), merge_meshes(parts)))
    return out
