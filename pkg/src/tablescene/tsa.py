"""Top-view spatial alignment: anchor selection, meters-per-pixel scale, placement and stacking.

Tabletop frame: origin at the table center, +x to the viewer's left, +y toward
the viewer (front), +z up. In the top-view image (row-down pixel coordinates,
viewer at the bottom edge) pixel +u maps to -x and pixel +v maps to +y.
"""

from __future__ import annotations

import graphlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import aabb, footprint_dims, normalize_yaw

log = logging.getLogger(__name__)

TABLE_ID = "table"


class TsaError(ValueError):
    pass


@dataclass(frozen=True)
class TopViewBox:
    instance_id: str
    x_min: float
    y_min: float
    width: float
    height: float
    image_size: tuple = (1024, 1024)

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise TsaError(f"{self.instance_id}: box width and height must be positive")
        iw, ih = self.image_size
        eps = 1e-9
        if self.x_min < -eps or self.y_min < -eps or self.x_min + self.width > iw + eps \
                or self.y_min + self.height > ih + eps:
            raise TsaError(f"{self.instance_id}: box lies outside the {iw}x{ih} image")

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def aspect(self) -> float:
        return self.width / self.height

    @property
    def center(self) -> tuple[float, float]:
        return self.x_min + 0.5 * self.width, self.y_min + 0.5 * self.height

    def to_dict(self) -> dict:
        return {"id": self.instance_id, "box": [self.x_min, self.y_min, self.width, self.height],
                "image_size": list(self.image_size)}

    @classmethod
    def from_dict(cls, d: dict) -> "TopViewBox":
        x, y, w, h = d["box"]
        return cls(d["id"], float(x), float(y), float(w), float(h), tuple(d.get("image_size", (1024, 1024))))


@dataclass(frozen=True)
class SizePrior:
    """Physical width (x), depth (y) and height (z) in meters."""

    instance_id: str
    width: float
    depth: float
    height: float
    confidence: str = "unspecified"

    def __post_init__(self):
        if not all(v > 0 for v in (self.width, self.depth, self.height)):
            raise TsaError(f"{self.instance_id}: size prior dimensions must be positive")

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.width, self.depth, self.height])


@dataclass(frozen=True)
class RmaScore:
    instance_id: str
    area_px: float
    epsilon: float
    score: float
    tau: float


@dataclass(frozen=True)
class StackingGraph:
    """Edges (above, below). Instances without an edge rest on the table."""

    instance_ids: tuple
    edges: tuple = ()

    def __post_init__(self):
        ids = set(self.instance_ids)
        if len(ids) != len(self.instance_ids):
            raise TsaError("duplicate instance ids in stacking graph")
        below_of = {}
        for above, below in self.edges:
            for x in (above, below):
                if x not in ids and x != TABLE_ID:
                    raise TsaError(f"stacking references unknown instance {x!r}")
            if above == TABLE_ID:
                raise TsaError("the table cannot rest on another instance")
            if above in below_of and below_of[above] != below:
                raise TsaError(f"{above!r} rests on more than one support")
            below_of[above] = below
        self.order()

    def support_of(self, instance_id: str) -> str:
        for above, below in self.edges:
            if above == instance_id:
                return below
        return TABLE_ID

    def order(self) -> list[str]:
        """Instances bottom-up (supports before what they carry), ties by id."""
        sorter = graphlib.TopologicalSorter()
        for i in sorted(self.instance_ids):
            if i != TABLE_ID:
                sorter.add(i, self.support_of(i))
        try:
            sorter.prepare()
        except graphlib.CycleError as exc:
            cycle = exc.args[1]
            raise TsaError("stacking cycle: " + " -> ".join(cycle)) from None
        out = []
        while sorter.is_active():
            ready = sorted(sorter.get_ready())
            out.extend(r for r in ready if r != TABLE_ID)
            sorter.done(*ready)
        return out


@dataclass(frozen=True)
class Placement:
    instance_id: str
    translation: np.ndarray
    scale: np.ndarray
    yaw: float
    rescaled: bool = False
    aspect_fallback: bool = False


@dataclass(frozen=True)
class TsaResult:
    anchor_id: str
    alpha: float
    placements: dict = field(default_factory=dict)
    anchor_score: RmaScore | None = None

    def to_dict(self) -> dict:
        """Human-facing report: translations and scales in centimeters, yaw in degrees."""
        inst = {}
        for pid, p in sorted(self.placements.items()):
            inst[pid] = {
                "translation_cm": (np.asarray(p.translation) * 100.0).tolist(),
                "scale_cm": (np.asarray(p.scale) * 100.0).tolist(),
                "yaw_deg": p.yaw,
                "rescaled": p.rescaled,
                "aspect_fallback": p.aspect_fallback,
            }
        return {"anchor": self.anchor_id, "alpha_m_per_px": self.alpha, "instances": inst}


@dataclass(frozen=True)
class TsaConfig:
    tau: float = 0.25
    rescale_threshold: float = 1.5
    # below this |cos 2yaw| the footprint inversion is ill-conditioned
    min_unfit_conditioning: float = 0.2

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.rescale_threshold < 1:
            raise ValueError("rescale threshold must be >= 1")


def ratio_error(size: SizePrior, yaw: float, box: TopViewBox) -> float:
    wp, dp = footprint_dims((size.width, size.depth), yaw)
    return abs(math.log(wp / dp) - math.log(box.aspect))


def rma_score(area_px: float, epsilon: float, tau: float) -> float:
    if area_px <= 0 or tau <= 0:
        raise ValueError("area and tau must be positive")
    return area_px / (1.0 + (epsilon / tau) ** 2)


def select_anchor(candidates, tau: float = 0.25, table_id: str = TABLE_ID) -> RmaScore:
    """Highest RMA score among non-table candidates; ties go to larger area, then smaller id."""
    scores = []
    for box, prior, yaw in candidates:
        if box.instance_id == table_id:
            continue
        eps = ratio_error(prior, yaw, box)
        scores.append(RmaScore(box.instance_id, box.area, eps, rma_score(box.area, eps, tau), tau))
    if not scores:
        raise TsaError("no non-table candidate for the anchor")
    return min(scores, key=lambda s: (-s.score, -s.area_px, s.instance_id))


def solve_alpha(anchor_box: TopViewBox, anchor_size: SizePrior, anchor_yaw: float) -> float:
    wp, dp = footprint_dims((anchor_size.width, anchor_size.depth), anchor_yaw)
    return 0.5 * (wp / anchor_box.width + dp / anchor_box.height)


def unfit_footprint(observed, yaw: float, prior_wd, min_conditioning: float = 0.2):
    """Invert footprint_dims: the un-yawed (w, d) whose yawed AABB matches ``observed``.

    Returns (w, d, fallback). Near 45 degrees the inversion is ill-conditioned;
    then the prior's aspect is kept and only its size is least-squares fit.
    """
    ow, od = observed
    a = math.radians(normalize_yaw(yaw))
    c, s = abs(math.cos(a)), abs(math.sin(a))
    det = c * c - s * s
    if abs(det) >= min_conditioning:
        w = (c * ow - s * od) / det
        d = (c * od - s * ow) / det
        if w > 0 and d > 0:
            return w, d, False
    fw, fd = footprint_dims(prior_wd, yaw)
    k = (ow * fw + od * fd) / (fw * fw + fd * fd)
    return k * prior_wd[0], k * prior_wd[1], True


def place_and_scale(boxes: dict, priors: dict, yaws: dict, alpha: float, table_box: TopViewBox,
                    cfg: TsaConfig = TsaConfig(), table_id: str = TABLE_ID) -> dict:
    """Per-instance (x, y) translation and metric scale; z is left at 0 for stack_heights."""
    if alpha <= 0:
        raise TsaError("alpha must be positive")
    tcx, tcy = table_box.center
    out = {}
    for iid in sorted(boxes):
        box, prior = boxes[iid], priors[iid]
        yaw = normalize_yaw(yaws.get(iid, 0.0))
        cx, cy = box.center
        if iid == table_id:
            x = y = 0.0
        else:
            x = -(cx - tcx) * alpha
            y = (cy - tcy) * alpha
        w, d, fallback = unfit_footprint((box.width * alpha, box.height * alpha), yaw,
                                         (prior.width, prior.depth), cfg.min_unfit_conditioning)
        factor = math.sqrt((w * d) / (prior.width * prior.depth))
        rescaled = max(factor, 1.0 / factor) > cfg.rescale_threshold
        height = prior.height * factor if rescaled else prior.height
        if rescaled and iid != table_id:
            log.warning("%s: size prior deviates from the top view by %.2fx; rescaled", iid, factor)
        if fallback:
            log.warning("%s: footprint fit ill-conditioned at yaw %.1f; kept prior aspect", iid, yaw)
        out[iid] = Placement(iid, np.array([x, y, 0.0]), np.array([w, d, height]), yaw, rescaled, fallback)
    return out


def stack_heights(graph: StackingGraph, meshes: dict, table_top: float) -> dict:
    """z offset per instance so each scaled mesh's AABB bottom rests on its support's top.

    ``meshes`` are scaled and yawed but not yet lifted; the table top is at ``table_top``.
    """
    tops = {}
    z = {}
    for iid in graph.order():
        if iid not in meshes:
            raise TsaError(f"no mesh for stacked instance {iid!r}")
        box = aabb(meshes[iid])
        support = graph.support_of(iid)
        base = table_top if support == TABLE_ID else tops[support]
        z[iid] = base - box.min[2]
        tops[iid] = z[iid] + box.max[2]
    return z


def run_tsa(boxes: dict, priors: dict, yaws: dict, cfg: TsaConfig = TsaConfig(),
            table_id: str = TABLE_ID) -> TsaResult:
    """Anchor, alpha and (x, y, scale) for every instance in ``boxes`` (table included)."""
    if table_id not in boxes:
        raise TsaError("top view has no table box")
    missing = sorted(set(boxes) - set(priors))
    if missing:
        raise TsaError(f"missing size priors for {missing}")
    cands = [(boxes[i], priors[i], yaws.get(i, 0.0)) for i in sorted(boxes)]
    anchor = select_anchor(cands, cfg.tau, table_id)
    alpha = solve_alpha(boxes[anchor.instance_id], priors[anchor.instance_id],
                        yaws.get(anchor.instance_id, 0.0))
    placements = place_and_scale(boxes, priors, yaws, alpha, boxes[table_id], cfg, table_id)
    return TsaResult(anchor.instance_id, alpha, placements, anchor)
