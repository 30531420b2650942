"""Instance bundle: the on-disk inputs of the engine.

Layout (paths in ``bundle.json`` are relative to the bundle directory)::

    bundle.json           scene id, table id, instance list
    reference.png         the scene image
    topview.png           synthesized top view
    topview_boxes.json    {"image_size": [w, h], "boxes": [{"id": ..., "box": [x, y, w, h]}]}
    instances/<id>/crop.png, instances/<id>/mask.png
    meshes/<id>.obj|.glb  generated meshes in their native axes
    fixtures/             recorded or hand-authored service responses
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .tsa import TABLE_ID, TopViewBox

BUNDLE_VERSION = 1


class BundleError(ValueError):
    pass


@dataclass(frozen=True)
class InstanceEntry:
    instance_id: str
    label: str
    mesh: str
    crop: str = ""
    mask: str = ""


@dataclass(frozen=True)
class Bundle:
    root: Path
    scene_id: str
    table: InstanceEntry
    instances: tuple
    reference: str = "reference.png"
    topview: str = "topview.png"
    topview_boxes: str = "topview_boxes.json"
    fixtures: str = "fixtures"

    @classmethod
    def load(cls, root) -> "Bundle":
        root = Path(root)
        try:
            doc = json.loads((root / "bundle.json").read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise BundleError(f"cannot read {root / 'bundle.json'}: {exc}") from exc
        if doc.get("version") != BUNDLE_VERSION:
            raise BundleError(f"unsupported bundle version {doc.get('version')}")
        try:
            table = InstanceEntry(doc["table"]["id"], doc["table"].get("label", "table"), doc["table"]["mesh"])
            insts = tuple(InstanceEntry(e["id"], e["label"], e["mesh"], e["crop"], e["mask"])
                          for e in doc["instances"])
        except (KeyError, TypeError) as exc:
            raise BundleError(f"malformed bundle.json: missing {exc}") from exc
        if table.instance_id != TABLE_ID:
            raise BundleError(f"the table instance must use the reserved id {TABLE_ID!r}")
        ids = [table.instance_id] + [i.instance_id for i in insts]
        if len(set(ids)) != len(ids):
            raise BundleError("duplicate instance ids in bundle")
        b = cls(root, doc.get("scene_id", root.name), table, insts,
                doc.get("reference", "reference.png"), doc.get("topview", "topview.png"),
                doc.get("topview_boxes", "topview_boxes.json"), doc.get("fixtures", "fixtures"))
        b.check_files()
        return b

    def to_dict(self) -> dict:
        return {
            "version": BUNDLE_VERSION,
            "scene_id": self.scene_id,
            "reference": self.reference,
            "topview": self.topview,
            "topview_boxes": self.topview_boxes,
            "fixtures": self.fixtures,
            "table": {"id": self.table.instance_id, "label": self.table.label, "mesh": self.table.mesh},
            "instances": [{"id": i.instance_id, "label": i.label, "mesh": i.mesh, "crop": i.crop, "mask": i.mask}
                          for i in self.instances],
        }

    def check_files(self) -> None:
        paths = [self.reference, self.topview_boxes, self.table.mesh]
        for i in self.instances:
            paths += [i.mesh, i.crop, i.mask]
        missing = [p for p in paths if not (self.root / p).is_file()]
        if missing:
            raise BundleError(f"bundle files missing: {missing}")

    @property
    def all_entries(self) -> tuple:
        return (self.table,) + self.instances

    def entry(self, instance_id: str) -> InstanceEntry:
        for e in self.all_entries:
            if e.instance_id == instance_id:
                return e
        raise BundleError(f"unknown instance {instance_id!r}")

    def path(self, rel: str) -> Path:
        return self.root / rel

    def read_bytes(self, rel: str) -> bytes:
        return (self.root / rel).read_bytes()

    def image(self, rel: str) -> np.ndarray:
        img = Image.open(self.root / rel)
        if img.mode not in ("RGB", "L"):
            img = img.convert("RGB")
        return np.asarray(img)

    def boxes(self) -> dict:
        doc = json.loads((self.root / self.topview_boxes).read_text(encoding="utf-8"))
        size = tuple(doc["image_size"])
        out = {}
        for e in doc["boxes"]:
            box = TopViewBox.from_dict({**e, "image_size": size})
            out[box.instance_id] = box
        known = {e.instance_id for e in self.all_entries}
        if set(out) != known:
            raise BundleError(f"top-view boxes do not match instances: {sorted(set(out) ^ known)}")
        return out
