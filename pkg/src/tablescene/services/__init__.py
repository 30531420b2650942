"""Boundary to external generative and reasoning services, with record/replay fixtures."""

from .client import (
    Fixture,
    FixtureStore,
    Kind,
    Mode,
    Provider,
    ReplayMissError,
    ServiceClient,
    ServiceError,
    ServiceRequest,
    TransportError,
    canonical_payload,
    json_request,
    load_template,
    providers_from_env,
    sha256_hex,
)
from .parsing import (
    RemoteFeatureExtractor,
    ValidationError,
    camera_init_request,
    parse_camera_init,
    parse_categories,
    parse_size_prior,
    parse_stacking,
    parse_up_axis,
    png_bytes,
    size_prior_request,
    size_prior_to_json,
    stacking_request,
    up_axis_request,
)

__all__ = [
    "Fixture",
    "FixtureStore",
    "Kind",
    "Mode",
    "Provider",
    "RemoteFeatureExtractor",
    "ReplayMissError",
    "ServiceClient",
    "ServiceError",
    "ServiceRequest",
    "TransportError",
    "ValidationError",
    "camera_init_request",
    "canonical_payload",
    "json_request",
    "load_template",
    "parse_camera_init",
    "parse_categories",
    "parse_size_prior",
    "parse_stacking",
    "parse_up_axis",
    "png_bytes",
    "providers_from_env",
    "sha256_hex",
    "size_prior_request",
    "size_prior_to_json",
    "stacking_request",
    "up_axis_request",
]
