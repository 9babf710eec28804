import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from ragvqa.backends import GenerationResult, MockBackend, VisionQaResult
from ragvqa.exceptions import BackendError, ProtocolError
from ragvqa.imaging import RawImage, partition
from ragvqa import wire


def tiny_image():
    return RawImage(2, 2, bytes(range(12)))


class TestCodec:
    def test_embed_request_golden(self):
        payload = wire.encode_embed_request("hi")
        assert wire.dumps(payload) == '{"protocol":"v1","text":"hi"}'

    def test_generate_request_golden(self):
        payload = wire.encode_generate_request("Q", 4)
        assert wire.dumps(payload) == '{"protocol":"v1","prompt":"Q","max_tokens":4}'
        scored = wire.encode_generate_request("Q", 1, completion="a b")
        assert wire.dumps(scored) == (
            '{"protocol":"v1","prompt":"Q","max_tokens":1,"completion":"a b"}'
        )

    def test_vision_qa_request_golden(self):
        img = tiny_image()
        payload = wire.encode_vision_qa_request(img, partition(img, 1, 1), "q?")
        assert wire.dumps(payload) == (
            '{"protocol":"v1","image":{"b64":"AAECAwQFBgcICQoL","width":2,"height":2},'
            '"question":"q?","grid":{"rows":1,"cols":1}}'
        )

    def test_float_round_trip_is_bit_exact(self):
        values = np.array([1 / 3, 0.1234567891234, -0.5, 1e-17], dtype=np.float64)
        encoded = wire.dumps(wire.encode_embed_response(values))
        decoded = wire.decode_embed_response(wire.loads(encoded))
        assert decoded.tolist() == values.tolist()

    def test_vision_qa_response_round_trip(self):
        result = VisionQaResult(
            "cat", "a cat", np.array([0.6, 0.8]), (("cat", 0.75), ("dog", 0.25))
        )
        back = wire.decode_vision_qa_response(
            wire.loads(wire.dumps(wire.encode_vision_qa_response(result)))
        )
        assert back == result

    def test_generate_response_round_trip(self):
        result = GenerationResult("a b", (-0.1, -2.5))
        encoded = wire.dumps(wire.encode_generate_response(result))
        assert wire.decode_generate_response(wire.loads(encoded)) == result

    def test_missing_protocol_rejected(self):
        with pytest.raises(ProtocolError, match="protocol"):
            wire.decode_embed_response({"embedding": {"dim": 1, "values": [1.0]}})

    def test_wrong_version_rejected(self):
        with pytest.raises(ProtocolError, match="v1"):
            wire.check_envelope({"protocol": "v2"})

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ProtocolError, match="dim"):
            wire.decode_embedding({"dim": 3, "values": [1.0, 2.0]})

    def test_malformed_json_rejected(self):
        with pytest.raises(ProtocolError, match="JSON"):
            wire.loads("{not json")

    def test_unknown_endpoint_rejected(self):
        backend = MockBackend(seed=1, embedding_dim=4)
        with pytest.raises(ProtocolError, match="endpoint"):
            wire.handle_request(backend, "/nope", {"protocol": "v1"})


class TestConformance:
    def test_mock_backend_passes(self):
        backend = MockBackend(seed=21, embedding_dim=16)
        passed = wire.run_backend_conformance(backend)
        assert "vision_qa determinism" in passed
        assert "embed unit norm" in passed

    def test_default_dim_backend_passes(self):
        assert wire.run_backend_conformance(MockBackend(seed=2))


class _Handler(BaseHTTPRequestHandler):
    backend = None

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length).decode("utf-8")
        try:
            response = wire.handle_request(self.backend, self.path, wire.loads(body))
            status = 200
        except ProtocolError as e:
            response = {"protocol": "v1", "error": {"stage": "protocol", "message": str(e)}}
            status = 400
        payload = wire.dumps(response).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def wire_server():
    _Handler.backend = MockBackend(seed=33, embedding_dim=16)
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


class TestRemoteBackend:
    def test_protocol_checks_pass_over_http(self, wire_server):
        remote = wire.RemoteBackend(wire_server, embedding_dim=16)

        def post(path, payload):
            return remote._post(path, payload)

        passed = wire.verify_protocol(post, embedding_dim=16)
        assert len(passed) >= 7

    def test_remote_matches_local_mock(self, wire_server):
        remote = wire.RemoteBackend(wire_server, embedding_dim=16)
        local = MockBackend(seed=33, embedding_dim=16)
        img = tiny_image()
        grid = partition(img, 2, 2)
        assert remote.vision_qa(img, grid, "q?") == local.vision_qa(img, grid, "q?")
        assert remote.generate("p", 3) == local.generate("p", 3)
        assert np.array_equal(remote.embed_text("t"), local.embed_text("t"))
        assert remote.score_completion("p", "a b") == local.score_completion("p", "a b")

    def test_error_response_raises_protocol_error(self, wire_server):
        remote = wire.RemoteBackend(wire_server, embedding_dim=16)
        with pytest.raises(ProtocolError):
            remote._post("/embed", {"protocol": "v1"})  # missing text field

    def test_unreachable_endpoint_is_retryable(self):
        remote = wire.RemoteBackend("http://127.0.0.1:9", timeout=0.2)
        with pytest.raises(BackendError) as e:
            remote.embed_text("x")
        assert e.value.retryable
