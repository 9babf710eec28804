"""FastAPI app speaking the v1 inference wire protocol.

Every message carries protocol "v1".  /generate additionally accepts an
optional "completion" field and then returns teacher-forced token
log-probabilities of that completion instead of generating.  One model
forward runs per device at a time; responses pair with requests through
the HTTP request/response cycle, so clients must tolerate latency but
never reordering.
"""

import argparse
import base64
import logging
import sys
import threading

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .adapters import AdapterError, build_adapters
from .config import PROTOCOL_VERSION, ShimConfig

logger = logging.getLogger("inference_shim")


class ProtocolViolation(Exception):
    def __init__(self, message: str, stage: str = "protocol"):
        super().__init__(message)
        self.stage = stage


def _error_response(message: str, stage: str, status: int) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"protocol": PROTOCOL_VERSION,
                 "error": {"stage": stage, "message": message}},
    )


def _check_envelope(payload) -> dict:
    if not isinstance(payload, dict):
        raise ProtocolViolation("message must be a JSON object")
    if payload.get("protocol") != PROTOCOL_VERSION:
        raise ProtocolViolation(f"protocol field must be {PROTOCOL_VERSION!r}")
    return payload


def _field(payload: dict, name: str):
    if name not in payload:
        raise ProtocolViolation(f"missing field {name!r}")
    return payload[name]


def _decode_image(obj: dict) -> np.ndarray:
    width = int(_field(obj, "width"))
    height = int(_field(obj, "height"))
    data = base64.b64decode(_field(obj, "b64"))
    if width < 1 or height < 1 or len(data) != width * height * 3:
        raise ProtocolViolation("image buffer does not match width*height*3")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3)


def create_app(config: ShimConfig, adapters=None) -> FastAPI:
    if adapters is None:
        adapters = build_adapters(config)
    vision, generator, embedder = adapters
    app = FastAPI(title="vqa-inference-shim")
    forward_lock = threading.Lock()  # one model forward per device

    @app.exception_handler(ProtocolViolation)
    async def protocol_handler(request: Request, exc: ProtocolViolation):
        return _error_response(str(exc), exc.stage, 400)

    @app.exception_handler(Exception)
    async def failure_handler(request: Request, exc: Exception):
        logger.exception("request failed")
        stage = request.url.path.strip("/") or "server"
        return _error_response(str(exc), stage, 500)

    async def _payload(request: Request) -> dict:
        try:
            return _check_envelope(await request.json())
        except ProtocolViolation:
            raise
        except Exception as e:
            raise ProtocolViolation(f"malformed JSON payload: {e}") from e

    @app.get("/health")
    async def health():
        return {
            "protocol": PROTOCOL_VERSION,
            "status": "ok",
            "embedding_dim": embedder.dim,
            "models": {
                "vision_qa": vision.model_name,
                "generate": generator.model_name,
                "embed": embedder.model_name,
            },
        }

    @app.post("/vision_qa")
    async def vision_qa(request: Request):
        payload = await _payload(request)
        image = _decode_image(_field(payload, "image"))
        question = str(_field(payload, "question"))
        grid = _field(payload, "grid")
        rows, cols = int(_field(grid, "rows")), int(_field(grid, "cols"))
        if rows < 1 or cols < 1 or rows > image.shape[0] or cols > image.shape[1]:
            raise ProtocolViolation("grid does not fit the image", stage="vision_qa")
        with forward_lock:
            draft, caption, dist = vision.answer(image, question, rows, cols)
        joint_text = f"{question} {draft} {caption}"
        with forward_lock:
            joint = embedder.embed(joint_text)
        return {
            "protocol": PROTOCOL_VERSION,
            "draft_answer": draft,
            "caption": caption,
            "joint_embedding": {"dim": len(joint), "values": [float(v) for v in joint]},
            "answer_distribution": [[a, float(p)] for a, p in dist],
        }

    @app.post("/generate")
    async def generate(request: Request):
        payload = await _payload(request)
        prompt = str(_field(payload, "prompt"))
        if not prompt:
            raise ProtocolViolation("prompt must be non-empty", stage="generate")
        if "completion" in payload:
            completion = str(payload["completion"])
            if not completion.strip():
                raise ProtocolViolation("completion must be non-empty", stage="generate")
            with forward_lock:
                logprobs = generator.score(prompt, completion)
            return {
                "protocol": PROTOCOL_VERSION,
                "text": completion,
                "token_logprobs": [float(lp) for lp in logprobs],
            }
        max_tokens = int(_field(payload, "max_tokens"))
        if max_tokens < 1:
            raise ProtocolViolation("max_tokens must be >= 1", stage="generate")
        with forward_lock:
            text, logprobs = generator.generate(prompt, max_tokens)
        return {
            "protocol": PROTOCOL_VERSION,
            "text": text,
            "token_logprobs": [float(lp) for lp in logprobs],
        }

    @app.post("/embed")
    async def embed(request: Request):
        payload = await _payload(request)
        text = str(_field(payload, "text"))
        if not text.strip():
            raise ProtocolViolation("text must be non-empty", stage="embed")
        with forward_lock:
            values = embedder.embed(text)
        return {
            "protocol": PROTOCOL_VERSION,
            "embedding": {"dim": len(values), "values": [float(v) for v in values]},
        }

    return app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vqa-shim")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--host")
    parser.add_argument("--port", type=int)
    parser.add_argument("--adapter-mode", choices=["transformers", "stub"])
    args = parser.parse_args(argv)

    config = ShimConfig.load(args.config) if args.config else ShimConfig()
    updates = {
        k: v for k, v in (
            ("host", args.host), ("port", args.port), ("adapter_mode", args.adapter_mode)
        ) if v is not None
    }
    if updates:
        import dataclasses

        config = dataclasses.replace(config, **updates)

    logging.basicConfig(level=logging.INFO, stream=sys.stderr)
    try:
        app = create_app(config)
    except AdapterError as e:
        logger.error("startup failed: %s", e)
        return 1

    import uvicorn

    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
