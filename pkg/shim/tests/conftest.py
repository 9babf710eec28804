"""Spin up a live shim server (stub adapters) for protocol tests."""

import socket
import threading
import time

import pytest
import uvicorn

from inference_shim.adapters import build_adapters
from inference_shim.config import ShimConfig
from inference_shim.server import create_app


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture(scope="session")
def shim_url():
    config = ShimConfig(adapter_mode="stub", port=free_port())
    app = create_app(config, adapters=build_adapters(config))
    server = uvicorn.Server(
        uvicorn.Config(app, host=config.host, port=config.port, log_level="error")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 15
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("shim server did not start")
        time.sleep(0.05)
    yield f"http://{config.host}:{config.port}"
    server.should_exit = True
    thread.join(timeout=5)
