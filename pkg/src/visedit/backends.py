"""Provider registry: maps operation roles to implementations.

A role is bound either to the in-process deterministic stub (geometry,
inversion, template planner) or to a remote service speaking JSON over a
single POST /invoke path, with images carried as base64 PNG.  Swapping a
stub for a remote that wraps the same computation leaves pipeline outputs
byte-identical, which is what makes module replacement safe.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field, replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from threading import Thread
from urllib.parse import urlparse

import numpy as np
import requests

from . import geometry
from .dsl import Selector, parse_selector
from .errors import (
    InvalidEndpoint,
    ProtocolError,
    RemoteError,
    TransportError,
    VisEditError,
)
from .geometry import ImageBuffer, RoI
from .inversion import TranslateConfig, translate_patch
from .pngio import decode_png, encode_png
from .values import Value

ROLES = ("prompter", "segmenter", "inpainter", "translator", "planner")


@dataclass(frozen=True)
class ProviderBinding:
    role: str
    kind: str  # "stub" | "remote"
    endpoint: str = ""
    timeout: float = 30.0

    def __post_init__(self):
        if self.role not in ROLES:
            raise InvalidEndpoint(f"unknown role {self.role!r}")
        if self.kind == "remote":
            parsed = urlparse(self.endpoint)
            if parsed.scheme not in ("http", "https") or not parsed.netloc:
                raise InvalidEndpoint(f"endpoint must be an absolute URL, got {self.endpoint!r}")
        elif self.kind != "stub":
            raise InvalidEndpoint(f"kind must be stub or remote, got {self.kind!r}")


def _default_bindings() -> dict[str, ProviderBinding]:
    return {role: ProviderBinding(role=role, kind="stub") for role in ROLES}


@dataclass(frozen=True)
class Registry:
    """Immutable snapshot of role bindings plus stub configuration."""

    bindings: dict[str, ProviderBinding] = field(default_factory=_default_bindings)
    translate_cfg: TranslateConfig = TranslateConfig()

    def binding(self, role: str) -> ProviderBinding:
        if role not in self.bindings:
            raise InvalidEndpoint(f"unknown role {role!r}")
        return self.bindings[role]


def register(registry: Registry, binding: ProviderBinding) -> Registry:
    """Return a new registry with ``binding`` replacing the role's previous one."""
    bindings = dict(registry.bindings)
    bindings[binding.role] = binding
    return Registry(bindings=bindings, translate_cfg=registry.translate_cfg)


# --- stubs -----------------------------------------------------------------------

def stub_prompter(image: ImageBuffer) -> str:
    """Describe the scene left to right from the stub segmenter's components."""
    try:
        rois = geometry.segment_components(image)
    except VisEditError:
        return "an image with a uniform background"
    clauses = [f"{r.label} at ({r.centroid[0]:.1f},{r.centroid[1]:.1f})" for r in rois]
    return "an image containing: " + "; ".join(clauses)


def _stub_segment(image: ImageBuffer, selector: Selector) -> RoI:
    return geometry.resolve_selector(geometry.segment_components(image), selector)


def _stub_invoke(registry: Registry, role: str, op_name: str, args: dict) -> Value:
    if role == "prompter":
        return Value.prompt(stub_prompter(args["image"].expect("image")))
    if role == "segmenter":
        if op_name == "segment_all":
            return Value.region_list(geometry.segment_components(args["image"].expect("image")))
        selector = parse_selector(args["selector"])
        return Value.region(_stub_segment(args["image"].expect("image"), selector))
    if role == "inpainter":
        region = args["region"].expect("region")
        return Value.image(geometry.inpaint_fill(args["image"].expect("image"), region.mask))
    if role == "translator":
        cfg = registry.translate_cfg
        if cfg.seed is None and "seed" in args:
            cfg = replace(cfg, seed=int(args["seed"]))
        return Value.region(translate_patch(
            args["region"].expect("region"), args["source"], args["target"], cfg))
    raise ProtocolError(f"role {role!r} has no stub operation {op_name!r}")


# --- wire codec --------------------------------------------------------------------

def _encode_image(buf: ImageBuffer, images: dict[str, str]) -> str:
    key = f"img{len(images)}"
    images[key] = base64.b64encode(encode_png(buf)).decode("ascii")
    return key


def _mask_to_png(mask: np.ndarray) -> ImageBuffer:
    px = np.zeros(mask.shape + (4,), dtype=np.uint8)
    px[mask] = (255, 255, 255, 255)
    return ImageBuffer(px)


def _png_to_mask(buf: ImageBuffer) -> np.ndarray:
    return buf.pixels[:, :, 3] > 127


def encode_value(value: Value, images: dict[str, str]) -> dict:
    """Lower a Value into a JSON node, appending binary parts to ``images``."""
    if value.tag == "image":
        return {"tag": "image", "image": _encode_image(value.payload, images)}
    if value.tag == "region":
        roi: RoI = value.payload
        patch_canvas = np.zeros(roi.mask.shape + (4,), dtype=np.uint8)
        x0, y0, x1, y1 = roi.bbox
        patch_canvas[y0:y1 + 1, x0:x1 + 1] = roi.patch
        return {
            "tag": "region",
            "label": roi.label,
            "bbox": list(roi.bbox),
            "centroid": list(roi.centroid),
            "mask": _encode_image(_mask_to_png(roi.mask), images),
            "patch": _encode_image(ImageBuffer(patch_canvas), images),
        }
    if value.tag == "prompt":
        return {"tag": "prompt", "text": value.payload}
    if value.tag == "number":
        return {"tag": "number", "value": value.payload}
    return {"tag": "region_list",
            "items": [encode_value(Value.region(r), images) for r in value.payload]}


def decode_value(node: dict, images: dict[str, str]) -> Value:
    """Inverse of encode_value; raises ProtocolError on schema violations."""
    if not isinstance(node, dict) or "tag" not in node:
        raise ProtocolError(f"value node must be a tagged object, got {node!r}")
    tag = node["tag"]
    try:
        if tag == "image":
            return Value.image(_decode_image(node["image"], images))
        if tag == "region":
            mask = _png_to_mask(_decode_image(node["mask"], images))
            patch_canvas = _decode_image(node["patch"], images)
            x0, y0, x1, y1 = (int(v) for v in node["bbox"])
            cx, cy = (float(v) for v in node["centroid"])
            patch = patch_canvas.pixels[y0:y1 + 1, x0:x1 + 1].copy()
            return Value.region(RoI(mask=mask, bbox=(x0, y0, x1, y1),
                                    label=str(node["label"]), centroid=(cx, cy),
                                    patch=patch))
        if tag == "prompt":
            return Value.prompt(str(node["text"]))
        if tag == "number":
            return Value.number(float(node["value"]))
        if tag == "region_list":
            rois = [decode_value(item, images).expect("region") for item in node["items"]]
            return Value.region_list(rois)
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed {tag} node: {exc}") from exc
    raise ProtocolError(f"unknown value tag {tag!r}")


def _decode_image(key: str, images: dict[str, str]) -> ImageBuffer:
    if key not in images:
        raise ProtocolError(f"args reference image {key!r} missing from the image map")
    return decode_png(base64.b64decode(images[key]))


def encode_request(role: str, op_name: str, args: dict) -> dict:
    """Build the /invoke request body.  Values become tagged nodes; plain
    strs/numbers pass through untouched."""
    images: dict[str, str] = {}
    wire_args = {}
    for name, arg in args.items():
        wire_args[name] = encode_value(arg, images) if isinstance(arg, Value) else arg
    return {"role": role, "op": op_name, "args": wire_args, "images": images}


def decode_request(body: dict) -> tuple[str, str, dict]:
    """Parse an /invoke request into (role, op, args-with-Values)."""
    for field_name in ("role", "op", "args", "images"):
        if field_name not in body:
            raise ProtocolError(f"request missing {field_name!r}")
    images = body["images"]
    args = {}
    for name, node in body["args"].items():
        if isinstance(node, dict) and "tag" in node:
            args[name] = decode_value(node, images)
        else:
            args[name] = node
    return body["role"], body["op"], args


def encode_response(value: Value) -> dict:
    images: dict[str, str] = {}
    return {"ok": True, "result": encode_value(value, images), "images": images}


def encode_error_response(message: str) -> dict:
    return {"ok": False, "result": None, "images": {}, "error": message}


def decode_response(body: dict) -> Value:
    if not isinstance(body, dict) or "ok" not in body:
        raise ProtocolError("response lacks an \"ok\" field")
    if not body["ok"]:
        message = body.get("error")
        if not message:
            raise ProtocolError("failed response lacks an error message")
        raise RemoteError(str(message))
    if body.get("error"):
        raise ProtocolError("response cannot be ok and carry an error")
    return decode_value(body.get("result"), body.get("images", {}))


# --- dispatch ----------------------------------------------------------------------

def invoke(registry: Registry, role: str, op_name: str, args: dict) -> Value:
    """Run one operation through the role's binding.

    Stub bindings call straight into the in-process implementations; remote
    bindings make one POST /invoke exchange and decode the reply.
    """
    binding = registry.binding(role)
    if binding.kind == "stub":
        return _stub_invoke(registry, role, op_name, args)

    body = encode_request(role, op_name, args)
    try:
        response = requests.post(binding.endpoint, json=body, timeout=binding.timeout)
    except requests.RequestException as exc:
        raise TransportError(f"{role} endpoint unreachable: {exc}") from exc
    if response.status_code != 200:
        raise TransportError(f"{role} endpoint returned HTTP {response.status_code}")
    try:
        payload = response.json()
    except ValueError as exc:
        raise ProtocolError(f"{role} reply is not JSON: {exc}") from exc
    return decode_response(payload)


# --- reference sidecar (wraps the stubs behind the wire protocol) --------------------

class ProviderServer:
    """Minimal /invoke server hosting the in-process stubs.

    Used for loopback testing and as a reference for sidecars hosting real
    models in other processes.
    """

    def __init__(self, registry: Registry | None = None, host: str = "127.0.0.1",
                 port: int = 0):
        self.registry = registry or Registry()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802 (http.server API)
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                try:
                    role, op_name, args = decode_request(json.loads(raw))
                    value = _stub_invoke(outer.registry, role, op_name, args)
                    reply = encode_response(value)
                except Exception as exc:
                    reply = encode_error_response(f"{type(exc).__name__}: {exc}")
                data = json.dumps(reply).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._thread: Thread | None = None

    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/invoke"

    def start(self) -> "ProviderServer":
        self._thread = Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread:
            self._thread.join()
