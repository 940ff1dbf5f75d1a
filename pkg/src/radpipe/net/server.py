"""The integration daemon: state machine, control endpoint, results stream.

The daemon idles until a valid calibration arrives, builds the weighting
matrix on the first queue start, then drains acquisition events through
the image queue.  Control commands arrive as encrypted envelopes over
HTTP and are handled strictly one at a time; results are re-published as
plaintext JSON on the results pub/sub channel.

Command payloads are JSON objects {"command": ..., "argument": ...}:

    set_calibration   argument: calibration object (or JSON text)
    new_queue         argument: {"walk": bool} (optional; default false)
    abort             -
    reintegrate       -
    query_status      -
    query_history     argument: {"dataset": str} (optional)
    subscribe_results -

Replies carry {"status": "ok", ...} or {"status": "error", "error": msg}
and always include the current state name.
"""

from __future__ import annotations

import json
import logging
import threading
from enum import Enum
from pathlib import Path

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from ..calib import Calibration, CalibrationError, parse_calibration, serialize_calibration
from ..calib import geometry_digest
from ..pipeline import ImageQueue, QueueError
from .config import NetworkConfig
from .envelope import AuthenticationError, ReplayGuard, decode_control, encode_control
from .pubsub import Publisher, Subscriber

logger = logging.getLogger(__name__)


class ServerState(str, Enum):
    IDLE = "IDLE"
    CONFIGURED = "CONFIGURED"
    RUNNING = "RUNNING"


class ServerCore:
    """State machine and command dispatch, independent of the HTTP layer."""

    def __init__(
        self,
        config: NetworkConfig,
        *,
        base_dir: str | Path | None = None,
        cache_dir: str | Path | None = None,
        include_profile_in_events: bool = True,
    ) -> None:
        self.config = config
        self.base_dir = base_dir
        self.cache_dir = cache_dir
        self.include_profile_in_events = include_profile_in_events
        self.state = ServerState.IDLE
        self.cal: Calibration | None = None
        self.queue: ImageQueue | None = None
        self._last_queue: ImageQueue | None = None
        self.dropped_events = 0
        self.results = Publisher(config.results.host, config.results.port)
        self._feeder_sub: Subscriber | None = None
        self._lock = threading.RLock()

    # -- wiring ---------------------------------------------------------------

    def connect_feeder(self) -> None:
        """Start listening for acquisition events (idempotent)."""
        if self._feeder_sub is None:
            self._feeder_sub = Subscriber(
                self.config.feeder.host,
                self.config.feeder.port,
                self.handle_event,
                name="feeder-sub",
            )

    def handle_event(self, message: dict) -> None:
        """An acquisition event; only "new file" while RUNNING is accepted."""
        with self._lock:
            queue = self.queue
            running = self.state is ServerState.RUNNING
        if not running or queue is None or message.get("command") != "new file":
            self.dropped_events += 1
            return
        try:
            queue.enqueue(str(message.get("argument", "")))
        except QueueError:
            self.dropped_events += 1

    def close(self) -> None:
        if self._feeder_sub is not None:
            self._feeder_sub.close()
            self._feeder_sub = None
        with self._lock:
            queue, self.queue = self.queue, None
            self.state = ServerState.IDLE
        if queue is not None:
            queue.abort()
            queue.join(timeout=10.0)
        self.results.close()

    # -- command dispatch -------------------------------------------------------

    def handle(self, payload: dict) -> dict:
        command = payload.get("command")
        argument = payload.get("argument")
        handlers = {
            "set_calibration": self._cmd_set_calibration,
            "new_queue": self._cmd_new_queue,
            "abort": self._cmd_abort,
            "reintegrate": self._cmd_reintegrate,
            "query_status": self._cmd_query_status,
            "query_history": self._cmd_query_history,
            "subscribe_results": self._cmd_subscribe_results,
        }
        handler = handlers.get(command)  # type: ignore[arg-type]
        with self._lock:
            if handler is None:
                return self._error(f"unknown command: {command!r}")
            try:
                return handler(argument)
            except (CalibrationError, QueueError) as exc:
                return self._error(str(exc))
            except Exception as exc:  # a command must never take the daemon down
                logger.exception("command %s failed", command)
                return self._error(f"internal error: {exc}")

    def _error(self, message: str) -> dict:
        return {"status": "error", "error": message, "state": self.state.value}

    def _ok(self, **fields) -> dict:
        return {"status": "ok", "state": self.state.value, **fields}

    def _cmd_set_calibration(self, argument) -> dict:
        if self.state is ServerState.RUNNING:
            return self._error("queue is running; abort before changing the calibration")
        if isinstance(argument, dict):
            text = json.dumps(argument)
        elif isinstance(argument, str):
            text = argument
        else:
            return self._error("set_calibration needs a calibration object")
        cal = parse_calibration(text)
        cal.validate()
        self.cal = cal
        self.state = ServerState.CONFIGURED
        self._publish_state()
        return self._ok(geometry_digest=geometry_digest(cal))

    def _cmd_new_queue(self, argument) -> dict:
        if self.state is ServerState.IDLE or self.cal is None:
            return self._error("no calibration set")
        if self.state is ServerState.RUNNING:
            return self._error("queue already running; abort it first")
        walk = bool(argument.get("walk", False)) if isinstance(argument, dict) else False
        queue = ImageQueue(
            self.cal,
            base_dir=self.base_dir,
            cache_dir=self.cache_dir,
            include_profile_in_events=self.include_profile_in_events,
        )
        queue.add_result_listener(self.results.publish)
        queue.start()
        enqueued = queue.walk_directory(self.cal.directory) if walk else 0
        self.queue = queue
        self.state = ServerState.RUNNING
        self._publish_state()
        return self._ok(enqueued=enqueued, workers=self.cal.threads)

    def _cmd_abort(self, argument) -> dict:
        if self.state is not ServerState.RUNNING or self.queue is None:
            return self._error("no queue is running")
        queue = self.queue
        discarded = queue.abort()
        self._last_queue, self.queue = queue, None
        self.state = ServerState.CONFIGURED
        self._publish_state()
        return self._ok(discarded=discarded)

    def _cmd_reintegrate(self, argument) -> dict:
        if self.state is not ServerState.RUNNING or self.queue is None:
            return self._error("no queue is running")
        enqueued = self.queue.reintegrate()
        return self._ok(enqueued=enqueued)

    def _cmd_query_status(self, argument) -> dict:
        queue = self.queue or self._last_queue
        return self._ok(
            queue=queue.status().to_dict() if queue is not None else None,
            dropped_events=self.dropped_events,
            calibration=None if self.cal is None else serialize_calibration(self.cal),
        )

    def _cmd_query_history(self, argument) -> dict:
        dataset = None
        if isinstance(argument, dict) and argument.get("dataset") is not None:
            dataset = str(argument["dataset"])
        queue = self.queue or self._last_queue
        if queue is None:
            return self._ok(records=[], datasets=[])
        return self._ok(
            records=[r.to_dict() for r in queue.query_history(dataset)],
            datasets=queue.history.datasets(),
        )

    def _cmd_subscribe_results(self, argument) -> dict:
        return self._ok(host=self.config.results.host, port=self.results.port)

    def _publish_state(self) -> None:
        self.results.publish({"type": "state", "state": self.state.value})


# -- HTTP layer ----------------------------------------------------------------


class Envelope(BaseModel):
    n: str
    c: str
    t: str


def create_server_app(core: ServerCore, secret: str) -> FastAPI:
    """Control-plane app: encrypted POST /control plus a liveness probe."""
    app = FastAPI(title="radpipe server", docs_url=None, redoc_url=None)
    guard = ReplayGuard()

    @app.post("/control")
    def control(envelope: Envelope):
        try:
            payload = decode_control(envelope.model_dump(), secret, guard)
        except AuthenticationError as exc:
            return JSONResponse(status_code=401, content={"error": str(exc)})
        reply = core.handle(payload)
        return encode_control(reply, secret)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "state": core.state.value}

    return app


def run_server(
    config: NetworkConfig,
    *,
    base_dir: str | Path | None = None,
    cache_dir: str | Path | None = None,
) -> None:
    """Blocking entry point used by the CLI."""
    import uvicorn

    config.require_secret()
    core = ServerCore(config, base_dir=base_dir, cache_dir=cache_dir)
    core.connect_feeder()
    app = create_server_app(core, config.secret)
    try:
        uvicorn.run(app, host=config.server.host, port=config.server.port, log_level="warning")
    finally:
        core.close()
