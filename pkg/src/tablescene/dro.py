"""Rotation estimation by render-and-compare.

A coarse yaw grid picks the lowest-loss candidates, each candidate is then
refined with Adam on central finite-difference gradients. Renders are framed
tightly around the projected mesh, which matches how reference crops are
prepared, so only shape and appearance (not image scale) drive the loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import TriangleMesh, is_closed_outward, normalize_yaw
from .losses import (
    FeatureExtractor,
    LossError,
    LossWeights,
    PatchPyramidExtractor,
    TargetViews,
    app_loss,
    edge_loss,
    rot_loss,
    sil_loss,
)
from .raster import Camera, RenderOutputs, render


class DroError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


@dataclass(frozen=True)
class DroConfig:
    grid_step: float = 5.0
    candidates: int = 8
    refine_steps: int = 140
    learning_rate: float = 0.03
    refine_camera: bool = False
    weights: LossWeights = field(default_factory=LossWeights)
    softness: float = 1.5
    fd_step: float = 0.5
    crop_margin: float = 0.1
    image_size: int = 256
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # skip back faces when the mesh is closed and outward-wound (same coverage, ~20% faster)
    cull_backfaces: bool = True

    def __post_init__(self):
        if self.grid_step <= 0 or abs(360.0 / self.grid_step - round(360.0 / self.grid_step)) > 1e-9:
            raise ValueError(f"360 must be divisible by grid_step, got {self.grid_step}")
        if self.candidates < 1:
            raise ValueError("need at least one candidate")
        if self.refine_steps < 0:
            raise ValueError("refine_steps must be >= 0")

    @property
    def grid_size(self) -> int:
        return int(round(360.0 / self.grid_step))


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    sil: float
    edge: float
    app: float


@dataclass(frozen=True)
class Candidate:
    yaw: float
    loss: LossBreakdown


@dataclass(frozen=True)
class CandidateTrace:
    initial_yaw: float
    initial_loss: float
    final_yaw: float
    final_loss: float
    evaluations: int
    # (yaw, loss) per Adam step; diagnostics only, not part of the result JSON
    history: tuple = field(default=(), compare=False, repr=False)

    def to_dict(self) -> dict:
        return {"initial_yaw": self.initial_yaw, "initial_loss": self.initial_loss,
                "final_yaw": self.final_yaw, "final_loss": self.final_loss, "evaluations": self.evaluations}


@dataclass(frozen=True)
class RotationResult:
    yaw: float
    loss: float
    components: LossBreakdown
    candidates: tuple
    camera: Camera | None = None

    def to_dict(self) -> dict:
        out = {
            "yaw_deg": self.yaw,
            "loss": self.loss,
            "components": {"sil": self.components.sil, "edge": self.components.edge,
                           "app": self.components.app},
            "candidates": [c.to_dict() for c in self.candidates],
        }
        if self.camera is not None:
            out["camera"] = {"azimuth_deg": self.camera.azimuth, "elevation_deg": self.camera.elevation}
        return out


def _use_culling(mesh: TriangleMesh, cfg: DroConfig) -> bool:
    return cfg.cull_backfaces and is_closed_outward(mesh)


class Evaluator:
    """Renders a mesh and scores it against one cached target; counts evaluations."""

    def __init__(self, mesh: TriangleMesh, target: TargetViews, cfg: DroConfig,
                 extractor: FeatureExtractor | None = None):
        self.mesh = mesh
        self.target = target
        self.cfg = cfg
        self.extractor = extractor or PatchPyramidExtractor()
        if target.mask.shape != (cfg.image_size, cfg.image_size):
            raise ValueError(f"target resolution {target.mask.shape} != {cfg.image_size}")
        if target.features.extractor != self.extractor.name:
            raise LossError("target features come from a different extractor")
        self.calls = 0
        self.cull = _use_culling(mesh, cfg)

    def render(self, yaw: float, camera: Camera) -> RenderOutputs:
        cam = replace(camera, image_size=self.cfg.image_size)
        return render(self.mesh, cam, yaw, self.cfg.softness, framing="tight", margin=self.cfg.crop_margin,
                      cull_backfaces=self.cull)

    def __call__(self, yaw: float, camera: Camera) -> LossBreakdown:
        self.calls += 1
        out = self.render(yaw, camera)
        s = sil_loss(out.silhouette, self.target.mask)
        e = edge_loss(out.edge_map, self.target.distance)
        a = app_loss(self.extractor.extract(out.color), self.target.features)
        return LossBreakdown(rot_loss(s, e, a, self.cfg.weights), s, e, a)


def coarse_search(mesh, target: TargetViews, camera: Camera, cfg: DroConfig = DroConfig(),
                  evaluator: Evaluator | None = None) -> list[Candidate]:
    """Score every grid yaw; return the ``cfg.candidates`` best, ascending by loss."""
    ev = evaluator or Evaluator(mesh, target, cfg)
    scored = [Candidate(k * cfg.grid_step, ev(k * cfg.grid_step, camera)) for k in range(cfg.grid_size)]
    scored.sort(key=lambda c: (c.loss.total, c.yaw))
    return scored[: cfg.candidates]


def _camera_from(params, camera: Camera) -> Camera:
    if len(params) == 1:
        return camera
    return replace(camera, azimuth=float(params[1]), elevation=float(min(max(params[2], 0.0), 90.0)))


def refine(mesh, target: TargetViews, camera: Camera, candidate: Candidate, cfg: DroConfig = DroConfig(),
           evaluator: Evaluator | None = None) -> RotationResult:
    """Adam on yaw (degrees), optionally with camera azimuth/elevation.

    Returns the best state seen: the start, every finite-difference probe, and
    the final iterate. Its loss therefore never exceeds the candidate's.
    """
    ev = evaluator or Evaluator(mesh, target, cfg)
    start_calls = ev.calls
    p = np.array([candidate.yaw] + ([camera.azimuth, camera.elevation] if cfg.refine_camera else []),
                 dtype=np.float64)
    best_p, best_loss = p.copy(), candidate.loss
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    h = cfg.fd_step

    def consider(params, loss):
        nonlocal best_p, best_loss
        if loss.total < best_loss.total:
            best_p, best_loss = params.copy(), loss

    finite = True
    history = []
    for step in range(1, cfg.refine_steps + 1):
        grad = np.zeros_like(p)
        for i in range(len(p)):
            hi, lo = p.copy(), p.copy()
            hi[i] += h
            lo[i] -= h
            l_hi = ev(hi[0], _camera_from(hi, camera))
            l_lo = ev(lo[0], _camera_from(lo, camera))
            if not (math.isfinite(l_hi.total) and math.isfinite(l_lo.total)):
                finite = False
                break
            consider(hi, l_hi)
            consider(lo, l_lo)
            grad[i] = (l_hi.total - l_lo.total) / (2.0 * h)
        if not finite:
            break
        # the probe mean approximates the loss at the current yaw to O(h^2)
        history.append((float(p[0]), 0.5 * (l_hi.total + l_lo.total)))
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
        m_hat = m / (1.0 - cfg.beta1 ** step)
        v_hat = v / (1.0 - cfg.beta2 ** step)
        p = p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        if len(p) == 3:
            p[2] = min(max(p[2], 0.0), 90.0)
    if finite and cfg.refine_steps > 0:
        final = ev(p[0], _camera_from(p, camera))
        if math.isfinite(final.total):
            consider(p, final)

    yaw = normalize_yaw(best_p[0])
    trace = CandidateTrace(candidate.yaw, candidate.loss.total, yaw, best_loss.total, ev.calls - start_calls,
                           tuple(history))
    cam = _camera_from(best_p, camera) if cfg.refine_camera else None
    return RotationResult(yaw, best_loss.total, best_loss, (trace,), cam)


def estimate_rotation(mesh, target: TargetViews, camera: Camera, cfg: DroConfig = DroConfig(),
                      extractor: FeatureExtractor | None = None) -> RotationResult:
    ev = Evaluator(mesh, target, cfg, extractor)
    candidates = coarse_search(mesh, target, camera, cfg, ev)
    results, failures = [], []
    for cand in candidates:
        try:
            results.append(refine(mesh, target, camera, cand, cfg, ev))
        except (LossError, ValueError) as exc:
            failures.append({"yaw": cand.yaw, "error": str(exc)})
    finite = [r for r in results if math.isfinite(r.loss)]
    if not finite:
        raise DroError("every rotation candidate failed", failures)
    best = min(finite, key=lambda r: r.loss)
    traces = tuple(r.candidates[0] for r in results)
    return RotationResult(best.yaw, best.loss, best.components, traces, best.camera)


def self_render_target(mesh, camera: Camera, yaw: float, cfg: DroConfig = DroConfig(),
                       extractor: FeatureExtractor | None = None) -> TargetViews:
    """Target views produced by rendering the mesh itself (the synthetic-recovery oracle)."""
    extractor = extractor or PatchPyramidExtractor()
    cam = replace(camera, image_size=cfg.image_size)
    out = render(mesh, cam, yaw, cfg.softness, framing="tight", margin=cfg.crop_margin,
                 cull_backfaces=_use_culling(mesh, cfg))
    mask = out.coverage.astype(np.float64)
    return TargetViews.from_crop(out.color * mask[..., None], mask, extractor)
