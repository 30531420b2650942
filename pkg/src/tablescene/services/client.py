"""Service requests, the content-addressed fixture store and the live/record/replay client."""

from __future__ import annotations

import base64
import enum
import hashlib
import json
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from string import Template

import httpx


class Kind(str, enum.Enum):
    EXPAND_PROMPT = "expand_prompt"
    DETECT_CATEGORIES = "detect_categories"
    COMPLETE_INSTANCE = "complete_instance"
    SYNTH_TOPVIEW = "synth_topview"
    IMAGE_TO_MESH = "image_to_mesh"
    SIZE_PRIOR = "size_prior"
    STACKING_ORDER = "stacking_order"
    CAMERA_INIT = "camera_init"
    UP_AXIS_HINT = "up_axis_hint"
    FEATURE_EXTRACT = "feature_extract"


class Mode(str, enum.Enum):
    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"


TEMPLATE_VERSION = "v1"


class ServiceError(RuntimeError):
    pass


class ReplayMissError(ServiceError):
    def __init__(self, missing):
        self.missing = list(missing)
        lines = [f"{kind}:{digest}" for kind, digest in self.missing]
        super().__init__(f"{len(lines)} fixture(s) missing in replay mode: " + ", ".join(lines))


class TransportError(ServiceError):
    """Live call failed; ``retriable`` tells callers whether a retry may help."""

    def __init__(self, message, provider: str = "", retriable: bool = True):
        super().__init__(f"{provider}: {message}" if provider else message)
        self.provider = provider
        self.retriable = retriable


def canonical_payload(payload) -> bytes:
    if isinstance(payload, (bytes, bytearray)):
        return bytes(payload)
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def load_template(kind: Kind, version: str = TEMPLATE_VERSION) -> str:
    return resources.files(__package__).joinpath("prompts", f"{kind.value}.{version}.txt").read_text("utf-8")


@dataclass(frozen=True)
class ServiceRequest:
    kind: Kind
    payload: object
    media_type: str = "application/json"
    # images sent along in live mode; the payload should carry their hashes so the digest covers them
    attachments: tuple = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))

    @property
    def body(self) -> bytes:
        return canonical_payload(self.payload)

    @property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.kind.value.encode("ascii"))
        h.update(b"\x00")
        h.update(self.body)
        return h.hexdigest()

    def prompt(self) -> str:
        params = self.payload if isinstance(self.payload, dict) else {}
        text = load_template(self.kind, params.get("template_version", TEMPLATE_VERSION))
        return Template(text).safe_substitute({k: v if isinstance(v, str) else json.dumps(v, sort_keys=True)
                                               for k, v in params.items()})


def json_request(kind: Kind, attachments=(), **params) -> ServiceRequest:
    return ServiceRequest(kind, {"template_version": TEMPLATE_VERSION, **params}, attachments=tuple(attachments))


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class Fixture:
    digest: str
    response: bytes
    media_type: str
    metadata: dict = field(default_factory=dict)


class FixtureStore:
    """Directory of ``<digest>.response`` files with ``<digest>.meta.json`` beside them."""

    def __init__(self, root):
        self.root = Path(root)
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def _paths(self, digest: str):
        return self.root / f"{digest}.response", self.root / f"{digest}.meta.json"

    def has(self, digest: str) -> bool:
        return self._paths(digest)[0].is_file()

    def get(self, digest: str) -> Fixture | None:
        resp, meta = self._paths(digest)
        if not resp.is_file():
            return None
        metadata = json.loads(meta.read_text("utf-8")) if meta.is_file() else {}
        return Fixture(digest, resp.read_bytes(), metadata.get("media_type", "application/octet-stream"), metadata)

    def put(self, request: ServiceRequest, response: bytes, media_type: str, extra: dict | None = None) -> Fixture:
        digest = request.digest
        with self._guard:
            lock = self._locks.setdefault(digest, threading.Lock())
        metadata = {"digest": digest, "kind": request.kind.value, "media_type": media_type,
                    "request_media_type": request.media_type, **(extra or {})}
        resp, meta = self._paths(digest)
        with lock:
            self.root.mkdir(parents=True, exist_ok=True)
            _atomic_write(resp, response)
            _atomic_write(meta, (json.dumps(metadata, sort_keys=True, indent=2) + "\n").encode("utf-8"))
        return Fixture(digest, response, media_type, metadata)

    def put_hand_authored(self, request: ServiceRequest, response: bytes,
                          media_type: str = "application/json") -> Fixture:
        return self.put(request, response, media_type, {"source": "hand-authored"})


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class Provider:
    url: str
    api_key_env: str = ""
    timeout: float = 120.0


def providers_from_env(environ=None) -> dict:
    """``TABLESCENE_<KIND>_URL`` (and optional ``TABLESCENE_<KIND>_KEY_ENV``) per endpoint kind."""
    env = os.environ if environ is None else environ
    out = {}
    for kind in Kind:
        url = env.get(f"TABLESCENE_{kind.value.upper()}_URL")
        if url:
            out[kind] = Provider(url, env.get(f"TABLESCENE_{kind.value.upper()}_KEY_ENV", ""))
    return out


class ServiceClient:
    """Routes requests to providers (live), providers plus fixture store (record) or the store only (replay)."""

    def __init__(self, store: FixtureStore, mode: Mode | str = Mode.REPLAY, providers: dict | None = None,
                 max_in_flight: int = 4, transport=None):
        self.store = store
        self.mode = Mode(mode)
        self.providers = {Kind(k): v for k, v in (providers or {}).items()}
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._transport = transport
        self.network_calls = 0

    def preflight(self, requests) -> None:
        """In replay mode, fail once with every missing digest instead of at the first miss."""
        if self.mode is not Mode.REPLAY:
            return
        missing = sorted({(r.kind.value, r.digest) for r in requests if not self.store.has(r.digest)})
        if missing:
            raise ReplayMissError(missing)

    def call(self, request: ServiceRequest) -> bytes:
        if self.mode is Mode.REPLAY:
            fx = self.store.get(request.digest)
            if fx is None:
                raise ReplayMissError([(request.kind.value, request.digest)])
            return fx.response
        body, media_type = self._live(request)
        if self.mode is Mode.RECORD:
            self.store.put(request, body, media_type,
                           {"recorded_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())})
        return body

    def call_json(self, request: ServiceRequest):
        raw = self.call(request)
        try:
            return json.loads(raw)
        except ValueError as exc:
            raise ServiceError(f"{request.kind.value} response is not JSON ({request.digest})") from exc

    def _live(self, request: ServiceRequest):
        provider = self.providers.get(request.kind)
        if provider is None:
            raise TransportError(f"no provider configured for {request.kind.value}", retriable=False)
        headers = {}
        if provider.api_key_env:
            key = os.environ.get(provider.api_key_env)
            if not key:
                raise TransportError(f"environment variable {provider.api_key_env} is not set",
                                     provider.url, retriable=False)
            headers["Authorization"] = f"Bearer {key}"
        if isinstance(request.payload, (bytes, bytearray)):
            payload = {"data_base64": base64.b64encode(bytes(request.payload)).decode("ascii"),
                       "media_type": request.media_type}
        else:
            payload = request.payload
        doc = {"kind": request.kind.value, "prompt": request.prompt(), "payload": payload,
               "attachments": [base64.b64encode(a).decode("ascii") for a in request.attachments]}
        with self._slots:
            self.network_calls += 1
            try:
                client = self._transport or httpx.Client(timeout=provider.timeout)
                try:
                    resp = client.post(provider.url, json=doc, headers=headers)
                finally:
                    if self._transport is None:
                        client.close()
            except httpx.HTTPError as exc:
                raise TransportError(str(exc), provider.url) from exc
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}", provider.url,
                                 retriable=resp.status_code >= 500 or resp.status_code == 429)
        return resp.content, resp.headers.get("content-type", "application/octet-stream").split(";")[0]
