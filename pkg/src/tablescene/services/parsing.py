"""Validation of service answers into engine types."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from ..geometry import UpAxisHint
from ..losses import FeatureVector
from ..raster import to_uint8
from ..tsa import SizePrior, StackingGraph, TsaError
from .client import Kind, ServiceClient, json_request, sha256_hex

MIN_DIM_M = 0.001
MAX_DIM_M = 10.0


class ValidationError(ValueError):
    pass


def parse_size_prior(doc: dict, instance_id: str | None = None) -> SizePrior:
    """Accepts ``size_m`` or ``size_cm`` as [width, depth, height], or per-axis ``*_cm`` / ``*_m`` fields."""
    iid = doc.get("instance_id", instance_id) if isinstance(doc, dict) else instance_id
    if instance_id is not None and iid != instance_id:
        raise ValidationError(f"{instance_id}: size prior answers for {iid!r}")
    if not isinstance(doc, dict):
        raise ValidationError(f"{iid}: size prior must be a JSON object")
    dims = None
    if "size_m" in doc:
        dims = doc["size_m"]
    elif "size_cm" in doc:
        dims = [_number(iid, v) / 100.0 for v in doc["size_cm"]]
    else:
        axes = ("width", "depth", "height")
        if all(f"{a}_m" in doc for a in axes):
            dims = [doc[f"{a}_m"] for a in axes]
        elif all(f"{a}_cm" in doc for a in axes):
            dims = [_number(iid, doc[f"{a}_cm"]) / 100.0 for a in axes]
    if dims is None or len(dims) != 3:
        raise ValidationError(f"{iid}: size prior needs width, depth and height")
    dims = [_number(iid, v) for v in dims]
    for name, v in zip(("width", "depth", "height"), dims):
        if not MIN_DIM_M <= v <= MAX_DIM_M:
            raise ValidationError(f"{iid}: {name} {v} m outside [{MIN_DIM_M}, {MAX_DIM_M}] m")
    return SizePrior(iid, dims[0], dims[1], dims[2], str(doc.get("confidence", "unspecified")))


def _number(iid, v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(f"{iid}: size value {v!r} is not a number")
    return float(v)


def size_prior_to_json(prior: SizePrior) -> dict:
    return {"instance_id": prior.instance_id, "size_m": [prior.width, prior.depth, prior.height],
            "confidence": prior.confidence}


def parse_stacking(doc, instance_ids) -> StackingGraph:
    """``{"stacking": [{"above": a, "below": b}, ...]}`` or a bare list of such entries or pairs."""
    entries = doc.get("stacking", []) if isinstance(doc, dict) else doc
    if entries is None:
        entries = []
    edges = []
    for e in entries:
        if isinstance(e, dict):
            pair = (e.get("above"), e.get("below"))
        elif isinstance(e, (list, tuple)) and len(e) == 2:
            pair = tuple(e)
        else:
            raise ValidationError(f"bad stacking entry {e!r}")
        if not all(isinstance(x, str) for x in pair):
            raise ValidationError(f"bad stacking entry {e!r}")
        edges.append(pair)
    try:
        return StackingGraph(tuple(instance_ids), tuple(edges))
    except TsaError as exc:
        raise ValidationError(str(exc)) from exc


def parse_camera_init(doc: dict) -> tuple[float, float]:
    try:
        az = float(doc["azimuth_deg"])
        el = float(doc["elevation_deg"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"camera_init answer malformed: {doc!r}") from exc
    if not 0.0 <= el <= 90.0:
        raise ValidationError(f"camera elevation {el} outside [0, 90]")
    return az, el


def parse_up_axis(doc: dict) -> UpAxisHint:
    try:
        return UpAxisHint.parse(doc["hint"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"up_axis_hint answer malformed: {doc!r}") from exc


def parse_categories(doc: dict) -> list[tuple[str, str]]:
    out = []
    for e in doc.get("instances", []):
        if not isinstance(e, dict) or not isinstance(e.get("id"), str) or not isinstance(e.get("label"), str):
            raise ValidationError(f"bad instance entry {e!r}")
        out.append((e["id"], e["label"]))
    ids = [i for i, _ in out]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate instance ids in category answer")
    return out


# -- request builders used by the pipeline ------------------------------------------

def size_prior_request(instance_id: str, label: str, crop_png: bytes):
    return json_request(Kind.SIZE_PRIOR, (crop_png,), instance_id=instance_id, label=label,
                        image_sha256=sha256_hex(crop_png))


def stacking_request(instance_ids, reference_png: bytes):
    return json_request(Kind.STACKING_ORDER, (reference_png,), instances=sorted(instance_ids),
                        image_sha256=sha256_hex(reference_png))


def camera_init_request(reference_png: bytes):
    return json_request(Kind.CAMERA_INIT, (reference_png,), image_sha256=sha256_hex(reference_png))


def up_axis_request(instance_id: str, label: str, mesh_bytes: bytes):
    return json_request(Kind.UP_AXIS_HINT, instance_id=instance_id, label=label,
                        mesh_sha256=sha256_hex(mesh_bytes))


def png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(image)).save(buf, format="PNG")
    return buf.getvalue()


class RemoteFeatureExtractor:
    """FeatureExtractor backed by the feature_extract endpoint (PNG in, JSON float array out)."""

    def __init__(self, client: ServiceClient, model: str, length: int):
        self.client = client
        self.model = model
        self.name = f"remote:{model}"
        self.length = length

    def request(self, image: np.ndarray):
        png = png_bytes(image)
        return json_request(Kind.FEATURE_EXTRACT, (png,), model=self.model, image_sha256=sha256_hex(png))

    def extract(self, image: np.ndarray) -> FeatureVector:
        values = self.client.call_json(self.request(image))
        if not isinstance(values, list) or len(values) != self.length:
            raise ValidationError(f"{self.name}: expected {self.length} floats")
        return FeatureVector(np.asarray(values, dtype=np.float64), self.name)
