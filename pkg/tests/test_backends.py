import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from visedit.backends import (
    ProviderBinding,
    ProviderServer,
    Registry,
    decode_request,
    decode_response,
    decode_value,
    encode_request,
    encode_response,
    encode_value,
    invoke,
    register,
    stub_prompter,
)
from visedit.dsl import parse_program
from visedit.errors import (
    InvalidEndpoint,
    ProtocolError,
    RemoteError,
    TransportError,
)
from visedit.executor import render_trace_json, run
from visedit.geometry import ImageBuffer, roi_from_mask, segment_components
from visedit.scenes import two_object_scene
from visedit.values import Value


class TestRegistry:
    def test_defaults_are_all_stubs(self):
        registry = Registry()
        for role in ("prompter", "segmenter", "inpainter", "translator", "planner"):
            assert registry.binding(role).kind == "stub"

    def test_register_replaces_and_does_not_mutate(self):
        registry = Registry()
        binding = ProviderBinding(role="segmenter", kind="remote",
                                  endpoint="http://example.test/invoke")
        updated = register(registry, binding)
        assert updated.binding("segmenter").kind == "remote"
        assert registry.binding("segmenter").kind == "stub"

    def test_register_twice_last_wins(self):
        registry = Registry()
        first = ProviderBinding(role="segmenter", kind="remote",
                                endpoint="http://one.test/invoke")
        second = ProviderBinding(role="segmenter", kind="remote",
                                 endpoint="http://two.test/invoke")
        updated = register(register(registry, first), second)
        assert updated.binding("segmenter").endpoint == "http://two.test/invoke"

    def test_malformed_endpoint_rejected(self):
        with pytest.raises(InvalidEndpoint):
            ProviderBinding(role="segmenter", kind="remote", endpoint="not a url")
        with pytest.raises(InvalidEndpoint):
            ProviderBinding(role="segmenter", kind="remote", endpoint="ftp://x/invoke")

    def test_unknown_role_rejected(self):
        with pytest.raises(InvalidEndpoint):
            ProviderBinding(role="oracle", kind="stub")


class TestStubs:
    def test_stub_segmenter_matches_geometry(self):
        img = two_object_scene()
        value = invoke(Registry(), "segmenter", "segment_all", {"image": Value.image(img)})
        assert value.tag == "region_list"
        assert list(value.payload) == segment_components(img)

    def test_stub_prompter_two_objects(self):
        img = two_object_scene()
        rois = segment_components(img)
        text = stub_prompter(img)
        assert text.startswith("an image containing: ")
        clauses = text[len("an image containing: "):].split("; ")
        assert len(clauses) == 2
        assert clauses[0].startswith(rois[0].label)
        assert clauses[1].startswith(rois[1].label)

    def test_stub_prompter_uniform_image(self):
        img = ImageBuffer.filled(8, 8, (9, 9, 9, 255))
        assert stub_prompter(img) == "an image with a uniform background"

    def test_stub_prompter_deterministic(self):
        img = two_object_scene()
        assert stub_prompter(img) == stub_prompter(img)


# --- wire protocol -----------------------------------------------------------------

def random_value(rng: np.random.Generator, tag: str) -> Value:
    if tag == "image":
        px = rng.integers(0, 256, (int(rng.integers(1, 9)), int(rng.integers(1, 9)), 4))
        return Value.image(ImageBuffer(px.astype(np.uint8)))
    if tag == "region":
        h, w = int(rng.integers(3, 9)), int(rng.integers(3, 9))
        img = ImageBuffer(rng.integers(0, 256, (h, w, 4)).astype(np.uint8))
        mask = np.zeros((h, w), dtype=bool)
        x0, y0 = int(rng.integers(0, w - 1)), int(rng.integers(0, h - 1))
        mask[y0:y0 + 2, x0:x0 + 2] = True
        return Value.region(roi_from_mask(img, mask, "blob"))
    if tag == "prompt":
        return Value.prompt("".join(chr(int(c)) for c in rng.integers(32, 127, 10)))
    if tag == "number":
        return Value.number(float(np.round(rng.normal(), 6)))
    return Value.region_list([random_value(rng, "region").payload
                              for _ in range(int(rng.integers(0, 3)))])


class TestWireCodec:
    @pytest.mark.parametrize("tag", ["image", "region", "prompt", "number",
                                     "region_list"])
    def test_value_round_trip(self, tag):
        rng = np.random.default_rng(hash(tag) % 2 ** 32)
        value = random_value(rng, tag)
        images: dict[str, str] = {}
        node = encode_value(value, images)
        decoded = decode_value(node, images)
        assert decoded.tag == value.tag
        assert decoded.digest() == value.digest()

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000),
           tag=st.sampled_from(["image", "region", "prompt", "number", "region_list"]))
    def test_encode_decode_encode_is_identity_on_wire(self, seed, tag):
        rng = np.random.default_rng(seed)
        value = random_value(rng, tag)
        request = encode_request("segmenter", "op", {"value": value, "plain": 3})
        role, op, args = decode_request(request)
        again = encode_request(role, op, args)
        assert again == request

    def test_request_missing_field(self):
        with pytest.raises(ProtocolError):
            decode_request({"role": "segmenter", "op": "x", "args": {}})

    def test_args_referencing_missing_image(self):
        with pytest.raises(ProtocolError):
            decode_value({"tag": "image", "image": "img9"}, {})

    def test_response_ok_xor_error(self):
        with pytest.raises(ProtocolError):
            decode_response({"ok": True, "result": {"tag": "number", "value": 1},
                             "images": {}, "error": "boom"})
        with pytest.raises(ProtocolError):
            decode_response({"ok": False, "result": None, "images": {}})

    def test_remote_error_surfaced(self):
        with pytest.raises(RemoteError, match="GPU OOM"):
            decode_response({"ok": False, "result": None, "images": {},
                             "error": "GPU OOM"})


class _EchoInpainter:
    """Remote inpainter that returns the input image unchanged."""

    def __enter__(self):
        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length))
                _, _, args = decode_request(body)
                reply = encode_response(args["image"])
                data = json.dumps(reply).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}/invoke"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


class TestRemoteInvocation:
    def test_echo_inpainter_returns_byte_equal_image(self):
        img = two_object_scene()
        (roi, *_rest) = segment_components(img)
        with _EchoInpainter() as echo:
            registry = register(Registry(), ProviderBinding(
                role="inpainter", kind="remote", endpoint=echo.url))
            value = invoke(registry, "inpainter", "inpaint",
                           {"image": Value.image(img), "region": Value.region(roi)})
        assert value.tag == "image"
        assert value.payload == img

    def test_remote_failure_surfaces_message(self):
        server = ProviderServer().start()
        try:
            registry = register(Registry(), ProviderBinding(
                role="segmenter", kind="remote", endpoint=server.endpoint))
            img = ImageBuffer.filled(6, 6, (5, 5, 5, 255))  # uniform: stub raises
            with pytest.raises(RemoteError, match="NoForeground"):
                invoke(registry, "segmenter", "segment",
                       {"image": Value.image(img), "selector": "dog"})
        finally:
            server.stop()

    def test_unreachable_endpoint_is_transport_error(self):
        registry = register(Registry(), ProviderBinding(
            role="segmenter", kind="remote", endpoint="http://127.0.0.1:9/invoke",
            timeout=0.5))
        with pytest.raises(TransportError):
            invoke(registry, "segmenter", "segment",
                   {"image": Value.image(two_object_scene()), "selector": "dog"})


class TestLoopbackEquivalence:
    def test_remote_wrapped_stubs_match_pipeline_bytes(self):
        program = parse_program(
            'SRC0 = PG(IMAGE)\n'
            'OBJ0 = Segment(IMAGE, "dog")\n'
            'BG0 = Inpaint(IMAGE, OBJ0)\n'
            'OBJ1 = Translate(OBJ0, SRC0, "sheep")\n'
            'OUT0 = Paste(BG0, OBJ1)\n')
        img = two_object_scene()
        stub_final, stub_trace = run(program, img, Registry(), seed=9)

        server = ProviderServer().start()
        try:
            registry = Registry()
            for role in ("prompter", "segmenter", "inpainter", "translator"):
                registry = register(registry, ProviderBinding(

                    role=role, kind="remote", endpoint=server.endpoint))
            remote_final, remote_trace = run(program, img, registry, seed=9)
        finally:
            server.stop()

        assert remote_final.payload == stub_final.payload
        assert render_trace_json(remote_trace) == render_trace_json(stub_trace)
