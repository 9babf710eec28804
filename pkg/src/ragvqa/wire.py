"""Inference wire protocol v1: codec, remote client, conformance checks.

Messages are JSON over a request/response transport with three endpoints:
/vision_qa, /generate and /embed.  Every message carries protocol "v1".
Floats are serialized with shortest round-trip decimal repr, which keeps
well over nine significant digits of precision (decode is bit-exact).

/generate additionally accepts an optional "completion" field: when
present the server returns teacher-forced token log-probabilities of that
completion instead of generating, which is what marginalization needs.
"""

import base64
import json
import math

import numpy as np

from .backends import Backend, BackendDescriptor, GenerationResult, VisionQaResult
from .exceptions import BackendError, ProtocolError, ValidationError
from .imaging import PatchGrid, RawImage, partition

PROTOCOL_VERSION = "v1"
ENDPOINTS = ("/vision_qa", "/generate", "/embed")


def _require(payload: dict, field: str):
    if field not in payload:
        raise ProtocolError(f"missing field {field!r}")
    return payload[field]


def check_envelope(payload: dict) -> dict:
    if not isinstance(payload, dict):
        raise ProtocolError("message must be a JSON object")
    if payload.get("protocol") != PROTOCOL_VERSION:
        raise ProtocolError(f"protocol field must be {PROTOCOL_VERSION!r}")
    return payload


def encode_embedding(values: np.ndarray) -> dict:
    return {"dim": int(values.shape[0]), "values": [float(v) for v in values]}


def decode_embedding(obj: dict) -> np.ndarray:
    values = np.asarray(_require(obj, "values"), dtype=np.float64)
    if values.ndim != 1 or values.shape[0] != _require(obj, "dim"):
        raise ProtocolError("embedding dim does not match values length")
    return values


def encode_image(image: RawImage) -> dict:
    return {
        "b64": base64.b64encode(image.data).decode("ascii"),
        "width": image.width,
        "height": image.height,
    }


def decode_image(obj: dict) -> RawImage:
    try:
        data = base64.b64decode(_require(obj, "b64"))
        return RawImage(int(_require(obj, "width")), int(_require(obj, "height")), data)
    except (ValidationError, ValueError) as e:
        raise ProtocolError(f"bad image payload: {e}") from e


def encode_vision_qa_request(image: RawImage, grid: PatchGrid, question: str) -> dict:
    return {
        "protocol": PROTOCOL_VERSION,
        "image": encode_image(image),
        "question": question,
        "grid": {"rows": grid.rows, "cols": grid.cols},
    }


def decode_vision_qa_request(payload: dict) -> tuple[RawImage, PatchGrid, str]:
    check_envelope(payload)
    image = decode_image(_require(payload, "image"))
    grid_obj = _require(payload, "grid")
    grid = partition(image, int(_require(grid_obj, "rows")), int(_require(grid_obj, "cols")))
    return image, grid, str(_require(payload, "question"))


def encode_vision_qa_response(result: VisionQaResult) -> dict:
    return {
        "protocol": PROTOCOL_VERSION,
        "draft_answer": result.draft_answer,
        "caption": result.caption,
        "joint_embedding": encode_embedding(result.joint_embedding),
        "answer_distribution": [[a, float(p)] for a, p in result.answer_distribution],
    }


def decode_vision_qa_response(payload: dict) -> VisionQaResult:
    check_envelope(payload)
    dist = tuple(
        (str(a), float(p)) for a, p in _require(payload, "answer_distribution")
    )
    return VisionQaResult(
        draft_answer=str(_require(payload, "draft_answer")),
        caption=str(_require(payload, "caption")),
        joint_embedding=decode_embedding(_require(payload, "joint_embedding")),
        answer_distribution=dist,
    )


def encode_generate_request(prompt: str, max_tokens: int, completion: str | None = None) -> dict:
    payload = {"protocol": PROTOCOL_VERSION, "prompt": prompt, "max_tokens": max_tokens}
    if completion is not None:
        payload["completion"] = completion
    return payload


def encode_generate_response(result: GenerationResult) -> dict:
    return {
        "protocol": PROTOCOL_VERSION,
        "text": result.text,
        "token_logprobs": [float(lp) for lp in result.token_logprobs],
    }


def decode_generate_response(payload: dict) -> GenerationResult:
    check_envelope(payload)
    return GenerationResult(
        text=str(_require(payload, "text")),
        token_logprobs=tuple(float(x) for x in _require(payload, "token_logprobs")),
    )


def encode_embed_request(text: str) -> dict:
    return {"protocol": PROTOCOL_VERSION, "text": text}


def encode_embed_response(values: np.ndarray) -> dict:
    return {"protocol": PROTOCOL_VERSION, "embedding": encode_embedding(values)}


def decode_embed_response(payload: dict) -> np.ndarray:
    check_envelope(payload)
    return decode_embedding(_require(payload, "embedding"))


def dumps(payload: dict) -> str:
    return json.dumps(payload, ensure_ascii=False, separators=(",", ":"))


def loads(text: str) -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"malformed JSON payload: {e}") from e


def handle_request(backend: Backend, path: str, payload: dict) -> dict:
    """Dispatch one decoded request payload against a backend instance."""
    if path == "/vision_qa":
        image, grid, question = decode_vision_qa_request(payload)
        return encode_vision_qa_response(backend.vision_qa(image, grid, question))
    if path == "/generate":
        check_envelope(payload)
        prompt = str(_require(payload, "prompt"))
        if "completion" in payload:
            return encode_generate_response(
                backend.score_completion(prompt, str(payload["completion"]))
            )
        return encode_generate_response(
            backend.generate(prompt, int(_require(payload, "max_tokens")))
        )
    if path == "/embed":
        check_envelope(payload)
        return encode_embed_response(backend.embed_text(str(_require(payload, "text"))))
    raise ProtocolError(f"unknown endpoint {path!r}")


class LocalWireAdapter:
    """In-process transport: runs the codec round trip against a backend.

    Lets the protocol golden tests execute identically against a mock
    (through this adapter) and a live server (through HTTP).
    """

    def __init__(self, backend: Backend):
        self.backend = backend

    def post(self, path: str, payload: dict) -> dict:
        return loads(dumps(handle_request(self.backend, path, loads(dumps(payload)))))


class RemoteBackend(Backend):
    """Client for a server speaking protocol v1 (see the shim package)."""

    def __init__(self, endpoint: str, model_name: str = "remote",
                 embedding_dim: int = 384, timeout: float = 60.0):
        self.descriptor = BackendDescriptor(
            kind="remote", model_name=model_name,
            embedding_dim=embedding_dim, endpoint=endpoint.rstrip("/"),
        )
        self.timeout = timeout

    def _post(self, path: str, payload: dict) -> dict:
        # One connection per call keeps the client safe for concurrent
        # request issuance from the pipeline's worker threads.
        import requests

        url = self.descriptor.endpoint + path
        try:
            resp = requests.post(url, json=payload, timeout=self.timeout)
        except requests.RequestException as e:
            raise BackendError(f"transport failure calling {url}: {e}", retryable=True) from e
        body = loads(resp.text)
        if resp.status_code != 200:
            err = body.get("error", {}) if isinstance(body, dict) else {}
            raise ProtocolError(
                f"{url} returned {resp.status_code}: {err.get('message', resp.text[:200])}"
            )
        return body

    def vision_qa(self, image: RawImage, patches: PatchGrid, question: str) -> VisionQaResult:
        payload = encode_vision_qa_request(image, patches, question)
        return decode_vision_qa_response(self._post("/vision_qa", payload))

    def generate(self, prompt: str, max_tokens: int) -> GenerationResult:
        payload = encode_generate_request(prompt, max_tokens)
        return decode_generate_response(self._post("/generate", payload))

    def score_completion(self, prompt: str, completion: str) -> GenerationResult:
        payload = encode_generate_request(prompt, 1, completion=completion)
        return decode_generate_response(self._post("/generate", payload))

    def embed_text(self, text: str) -> np.ndarray:
        return decode_embed_response(self._post("/embed", encode_embed_request(text)))


def verify_protocol(post, embedding_dim: int = 384) -> list[str]:
    """Golden protocol checks against any post(path, payload) -> payload.

    Returns the list of passed check names; raises AssertionError with the
    failing check otherwise.  Used both for the mock (via LocalWireAdapter)
    and for a live server (via an HTTP poster).
    """
    passed = []
    image = RawImage(4, 4, bytes(range(48)))
    grid = partition(image, 2, 2)

    resp = post("/vision_qa", encode_vision_qa_request(image, grid, "what is shown?"))
    result = decode_vision_qa_response(resp)
    assert resp.get("protocol") == PROTOCOL_VERSION, "vision_qa response missing protocol v1"
    passed.append("vision_qa envelope")
    total = math.fsum(p for _, p in result.answer_distribution)
    assert abs(total - 1.0) <= 1e-6, f"answer_distribution sums to {total}"
    assert all(0.0 <= p <= 1.0 for _, p in result.answer_distribution)
    passed.append("vision_qa distribution normalized")
    assert result.joint_embedding.shape == (embedding_dim,)
    passed.append("vision_qa embedding dim")

    resp2 = post("/vision_qa", encode_vision_qa_request(image, grid, "what is shown?"))
    assert resp2 == resp, "vision_qa is not deterministic on identical input"
    passed.append("vision_qa determinism")

    gen = decode_generate_response(post("/generate", encode_generate_request("Question: hi\nAnswer:", 4)))
    assert gen.token_logprobs, "generate returned no token logprobs"
    assert all(lp <= 0.0 for lp in gen.token_logprobs), "logprob above zero"
    assert len(gen.text.split()) == len(gen.token_logprobs), "token/logprob length mismatch"
    passed.append("generate contract")

    scored = decode_generate_response(
        post("/generate", encode_generate_request("Question: hi\nAnswer:", 1, completion="blue sky"))
    )
    assert scored.text == "blue sky"
    assert len(scored.token_logprobs) == 2
    passed.append("generate scoring mode")

    emb = decode_embed_response(post("/embed", encode_embed_request("a small dog")))
    assert emb.shape == (embedding_dim,)
    assert abs(float(np.linalg.norm(emb)) - 1.0) <= 1e-6, "embedding is not unit norm"
    passed.append("embed unit norm")

    emb2 = decode_embed_response(post("/embed", encode_embed_request("a small dog")))
    assert np.array_equal(emb, emb2), "embed is not deterministic"
    emb3 = decode_embed_response(post("/embed", encode_embed_request("a large cat")))
    assert not np.array_equal(emb, emb3), "distinct texts map to identical embeddings"
    passed.append("embed determinism and separation")

    return passed


def run_backend_conformance(backend: Backend) -> list[str]:
    """Run the protocol checks in-process against a Backend instance."""
    return verify_protocol(LocalWireAdapter(backend).post, backend.embedding_dim)
