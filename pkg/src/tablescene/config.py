"""Run configuration loaded from a YAML file; every section is optional."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .dro import DroConfig
from .evalharness import SweepConfig
from .imageproc import CannyParams
from .losses import LossWeights
from .services.client import Provider
from .tsa import TsaConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CameraDefaults:
    distance: float = 2.5
    fov: float = 40.0


@dataclass(frozen=True)
class SceneOptions:
    contact_tolerance: float = 1e-3
    resolve_overlaps: bool = False
    resolve_max_iters: int = 50


@dataclass(frozen=True)
class ServiceOptions:
    providers: dict = field(default_factory=dict)
    max_in_flight: int = 4
    feature_model: str = ""
    feature_length: int = 0


@dataclass(frozen=True)
class RunConfig:
    dro: DroConfig = field(default_factory=DroConfig)
    canny: CannyParams = field(default_factory=CannyParams)
    tsa: TsaConfig = field(default_factory=TsaConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    camera: CameraDefaults = field(default_factory=CameraDefaults)
    scene: SceneOptions = field(default_factory=SceneOptions)
    services: ServiceOptions = field(default_factory=ServiceOptions)

    def snapshot(self) -> dict:
        out = asdict(self)
        out["services"]["providers"] = {k: asdict(v) for k, v in sorted(self.services.providers.items())}
        return out


def _build(cls, data, section):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r} section: {exc}") from exc


def _mapping(data, section) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    return dict(data)


def from_dict(doc: dict | None) -> RunConfig:
    doc = _mapping(doc, "top level")
    unknown = sorted(set(doc) - {f.name for f in fields(RunConfig)})
    if unknown:
        raise ConfigError(f"unknown config sections: {unknown}")
    dro_doc = _mapping(doc.get("dro"), "dro")
    if "weights" in dro_doc:
        dro_doc["weights"] = _build(LossWeights, dro_doc["weights"], "dro.weights")
    svc_doc = _mapping(doc.get("services"), "services")
    providers = {}
    for kind, p in _mapping(svc_doc.pop("providers", None), "services.providers").items():
        providers[kind] = _build(Provider, p, f"services.providers.{kind}")
    services = _build(ServiceOptions, {**svc_doc, "providers": providers}, "services")
    return RunConfig(
        dro=_build(DroConfig, dro_doc, "dro"),
        canny=_build(CannyParams, doc.get("canny"), "canny"),
        tsa=_build(TsaConfig, doc.get("tsa"), "tsa"),
        sweep=_build(SweepConfig, doc.get("sweep"), "sweep"),
        camera=_build(CameraDefaults, doc.get("camera"), "camera"),
        scene=_build(SceneOptions, doc.get("scene"), "scene"),
        services=services,
    )


def load(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return from_dict(doc)
