"""Browser-facing bridge: plain JSON in, encrypted control out.

Browsers cannot speak the envelope protocol or raw TCP, so the gateway
runs next to them, holds the shared secret, and translates: a client
performs a token handshake, then posts bare JSON command payloads which
the gateway seals and forwards to the daemon's control endpoint, and
subscribes to a websocket on which every result event is fanned out.
A background probe watches the daemon's liveness endpoint so clients
learn about an unreachable daemon within two seconds.
"""

from __future__ import annotations

import asyncio
import contextlib
import logging
import secrets as _secrets
import threading
import time
from pathlib import Path

import httpx
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .config import NetworkConfig
from .envelope import AuthenticationError, decode_control, encode_control
from .pubsub import Subscriber

logger = logging.getLogger(__name__)

PROBE_INTERVAL = 0.5
DISCONNECT_AFTER = 2.0
_WS_QUEUE_SIZE = 512


class HandshakeRequest(BaseModel):
    client: str = "ui"


class CommandRequest(BaseModel):
    token: str
    payload: dict


class GatewayHub:
    """Shared state: session tokens, daemon liveness, websocket fan-out."""

    def __init__(self, config: NetworkConfig) -> None:
        self.config = config
        self.control_url = f"http://{config.server.host}:{config.server.port}"
        self.tokens: set[str] = set()
        self.last_probe_ok = 0.0
        self.last_state: str | None = None
        self._ws_queues: set[asyncio.Queue] = set()
        self._loop: asyncio.AbstractEventLoop | None = None
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._results_sub: Subscriber | None = None

    # -- lifecycle -------------------------------------------------------------

    def start(self, loop: asyncio.AbstractEventLoop) -> None:
        self._loop = loop
        probe = threading.Thread(target=self._probe_loop, name="gw-probe", daemon=True)
        probe.start()
        self._threads.append(probe)
        self._results_sub = Subscriber(
            self.config.results.host,
            self.config.results.port,
            self._on_result,
            name="gw-results",
        )

    def stop(self) -> None:
        self._stop.set()
        if self._results_sub is not None:
            self._results_sub.close()
            self._results_sub = None
        for t in self._threads:
            t.join(timeout=2.0)
        self._threads.clear()

    # -- daemon side -------------------------------------------------------------

    def forward_command(self, payload: dict) -> dict:
        """Seal a payload, post it to the daemon, open the reply."""
        envelope = encode_control(payload, self.config.secret)
        try:
            response = httpx.post(f"{self.control_url}/control", json=envelope, timeout=30.0)
        except httpx.HTTPError as exc:
            return {"status": "error", "error": f"daemon unreachable: {exc}"}
        if response.status_code != 200:
            detail = response.json().get("error", response.text) if response.content else ""
            return {"status": "error", "error": f"daemon rejected the command: {detail}"}
        try:
            return decode_control(response.json(), self.config.secret)
        except AuthenticationError as exc:
            return {"status": "error", "error": f"reply verification failed: {exc}"}

    def _probe_loop(self) -> None:
        url = f"{self.control_url}/healthz"
        with httpx.Client(timeout=PROBE_INTERVAL * 0.8) as client:
            while not self._stop.is_set():
                try:
                    response = client.get(url)
                    if response.status_code == 200:
                        self.last_probe_ok = time.monotonic()
                        self.last_state = response.json().get("state")
                except httpx.HTTPError:
                    pass
                self._stop.wait(PROBE_INTERVAL)

    @property
    def daemon_connected(self) -> bool:
        return time.monotonic() - self.last_probe_ok < DISCONNECT_AFTER

    # -- browser side ------------------------------------------------------------

    def issue_token(self) -> str:
        token = _secrets.token_urlsafe(16)
        self.tokens.add(token)
        return token

    def register_ws(self) -> asyncio.Queue:
        q: asyncio.Queue = asyncio.Queue(maxsize=_WS_QUEUE_SIZE)
        self._ws_queues.add(q)
        return q

    def unregister_ws(self, q: asyncio.Queue) -> None:
        self._ws_queues.discard(q)

    def _on_result(self, message: dict) -> None:
        # called on the subscriber thread; hop onto the event loop per client
        loop = self._loop
        if loop is None or loop.is_closed():
            return
        loop.call_soon_threadsafe(self._fan_out, message)

    def _fan_out(self, message: dict) -> None:
        for q in list(self._ws_queues):
            if q.full():
                with contextlib.suppress(asyncio.QueueEmpty):
                    q.get_nowait()
            with contextlib.suppress(asyncio.QueueFull):
                q.put_nowait(message)


def create_gateway_app(config: NetworkConfig, *, static_dir: str | Path | None = None) -> FastAPI:
    hub = GatewayHub(config)

    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        hub.start(asyncio.get_running_loop())
        try:
            yield
        finally:
            hub.stop()

    app = FastAPI(title="radpipe gateway", docs_url=None, redoc_url=None, lifespan=lifespan)
    app.state.hub = hub

    @app.post("/api/handshake")
    def handshake(request: HandshakeRequest):
        return {"token": hub.issue_token(), "client": request.client}

    @app.post("/api/command")
    async def command(request: CommandRequest):
        if request.token not in hub.tokens:
            return JSONResponse(status_code=401, content={"error": "unknown session token"})
        reply = await asyncio.to_thread(hub.forward_command, request.payload)
        return reply

    @app.get("/api/status")
    def status():
        return {
            "connected": hub.daemon_connected,
            "state": hub.last_state,
            "clients": len(hub.tokens),
        }

    @app.websocket("/ws/stream")
    async def stream(ws: WebSocket):
        token = ws.query_params.get("token", "")
        if token not in hub.tokens:
            await ws.close(code=4401)
            return
        await ws.accept()
        q = hub.register_ws()
        try:
            while True:
                message = await q.get()
                await ws.send_json(message)
        except WebSocketDisconnect:
            pass
        finally:
            hub.unregister_ws(q)

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app


def run_gateway(config: NetworkConfig, *, static_dir: str | Path | None = None) -> None:
    """Blocking entry point used by the CLI."""
    import uvicorn

    config.require_secret()
    app = create_gateway_app(config, static_dir=static_dir)
    uvicorn.run(app, host=config.gateway.host, port=config.gateway.port, log_level="warning")
