"""Camera-sweep evaluation: render a scene from a grid of elevations and distances, pick the best view."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from PIL import Image

from .losses import PatchPyramidExtractor, app_loss
from .raster import Camera, render, to_float_image, to_uint8


class SweepError(RuntimeError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    """Elevations run from ``elevation_start`` down to ``elevation_stop`` inclusive: 10 x 16 = 160 views."""

    elevation_start: float = 90.0
    elevation_stop: float = 0.0
    elevation_step: float = 10.0
    distance_min: float = 1.0
    distance_max: float = 2.5
    distance_count: int = 16
    azimuth: float = 0.0
    image_size: int = 256
    fov: float = 40.0
    # match the reference image's backdrop, or the empty border dominates pixel metrics
    background: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "background", tuple(float(c) for c in self.background))
        if len(self.background) != 3:
            raise ValueError("background must be an RGB triple")
        if self.elevation_step <= 0:
            raise ValueError("elevation step must be positive")
        if self.distance_count < 1 or self.distance_min <= 0 or self.distance_max < self.distance_min:
            raise ValueError("invalid distance range")
        if not self.elevations():
            raise ValueError("sweep has no elevations")

    def elevations(self) -> list[float]:
        out = []
        k = 0
        while True:
            e = self.elevation_start - k * self.elevation_step
            if e < self.elevation_stop - 1e-9:
                break
            out.append(round(e, 9))
            k += 1
        return out

    def distances(self) -> list[float]:
        if self.distance_count == 1:
            return [self.distance_min]
        return [round(float(d), 9) for d in np.linspace(self.distance_min, self.distance_max, self.distance_count)]


@dataclass(frozen=True, eq=False)
class SweepView:
    elevation: float
    distance: float
    image: np.ndarray


@dataclass(frozen=True)
class ViewScore:
    elevation: float
    distance: float
    metric: str
    score: float


class ImageMetric(Protocol):
    name: str

    def __call__(self, render: np.ndarray, reference: np.ndarray) -> float: ...


class MeanSquaredMetric:
    name = "mse"

    def __call__(self, render, reference) -> float:
        a, b = to_float_image(render), to_float_image(reference)
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
        return float(np.mean((a - b) ** 2))


class FeatureDistanceMetric:
    """Squared distance between feature vectors from any FeatureExtractor."""

    def __init__(self, extractor=None):
        self.extractor = extractor or PatchPyramidExtractor()
        self.name = f"features:{self.extractor.name}"

    def __call__(self, render, reference) -> float:
        return app_loss(self.extractor.extract(render), self.extractor.extract(reference))


def builtin_metric(name: str) -> ImageMetric:
    if name == "mse":
        return MeanSquaredMetric()
    if name in ("features", "patch-pyramid-v1", "features:patch-pyramid-v1"):
        return FeatureDistanceMetric()
    raise ValueError(f"unknown metric {name!r}")


def camera_sweep(scene, cfg: SweepConfig = SweepConfig()) -> list[SweepView]:
    """Elevation-major renders of the whole scene; camera aims at the scene box center."""
    if not scene.objects:
        raise SweepError("scene has no objects to evaluate")
    mesh = scene.merged_mesh()
    views = []
    for el in cfg.elevations():
        for dist in cfg.distances():
            cam = Camera(cfg.azimuth, el, dist, cfg.fov, cfg.image_size)
            views.append(SweepView(el, dist, render(mesh, cam, background=cfg.background).color))
    return views


def fit_reference(reference, size: int) -> np.ndarray:
    """Reference image as float RGB at ``size`` x ``size`` (center-cropped to square, bilinear)."""
    ref = to_float_image(reference)
    if ref.ndim == 2:
        ref = np.repeat(ref[..., None], 3, axis=2)
    ref = ref[..., :3]
    h, w = ref.shape[:2]
    side = min(h, w)
    y0, x0 = (h - side) // 2, (w - side) // 2
    ref = ref[y0:y0 + side, x0:x0 + side]
    if side == size:
        return ref
    img = Image.fromarray(to_uint8(ref)).resize((size, size), Image.BILINEAR)
    return np.asarray(img, dtype=np.float64) / 255.0


def score_views(views, reference, metric: ImageMetric) -> list[ViewScore]:
    out = []
    for v in views:
        try:
            s = float(metric(v.image, reference))
        except Exception as exc:
            raise SweepError(f"metric {metric.name} failed on view (el {v.elevation}, d {v.distance}): {exc}") \
                from exc
        if not math.isfinite(s):
            raise SweepError(f"metric {metric.name} gave {s} on view (el {v.elevation}, d {v.distance})")
        out.append(ViewScore(v.elevation, v.distance, metric.name, s))
    return out


def best_view(views, reference, metric: ImageMetric):
    """Lowest score wins; ties go to the lower elevation, then the smaller distance."""
    if not views:
        raise SweepError("no views to choose from")
    scores = score_views(views, reference, metric)
    k = min(range(len(scores)), key=lambda i: (scores[i].score, scores[i].elevation, scores[i].distance))
    return scores[k], views[k].image


def sweep_report(scores, best: ViewScore) -> dict:
    return {
        "metric": best.metric,
        "view_count": len(scores),
        "best": {"elevation_deg": best.elevation, "distance_multiplier": best.distance, "score": best.score},
        "views": [{"elevation_deg": s.elevation, "distance_multiplier": s.distance, "score": s.score}
                  for s in scores],
    }


def contact_sheet(views, columns: int | None = None) -> np.ndarray:
    """Grid of view thumbnails, one row per elevation when ``columns`` is omitted."""
    if not views:
        raise SweepError("no views")
    if columns is None:
        columns = sum(1 for v in views if v.elevation == views[0].elevation)
    rows = math.ceil(len(views) / columns)
    h, w = views[0].image.shape[:2]
    sheet = np.zeros((rows * h, columns * w, 3))
    for k, v in enumerate(views):
        r, c = divmod(k, columns)
        sheet[r * h:(r + 1) * h, c * w:(c + 1) * w] = v.image
    return to_uint8(sheet)
