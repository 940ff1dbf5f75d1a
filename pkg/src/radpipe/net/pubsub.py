"""Minimal TCP pub/sub carrying newline-delimited JSON.

One Publisher binds a port and fans every published message out to all
connected Subscribers; messages are UTF-8 JSON objects, one per line.
Delivery is best-effort per subscriber: a slow consumer's bounded send
queue drops the oldest messages rather than stalling the publisher or
the other subscribers.  Subscribers reconnect on their own, so either
side may start first; late joiners simply miss earlier messages.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import threading
import time
from typing import Callable

logger = logging.getLogger(__name__)

_SEND_QUEUE_SIZE = 4096
_STOP = object()


class Publisher:
    """Bind a port and fan published JSON messages out to subscribers."""

    def __init__(self, host: str, port: int, *, queue_size: int = _SEND_QUEUE_SIZE) -> None:
        self._queue_size = queue_size
        self._listener = socket.create_server((host, port))
        self._conns: dict[socket.socket, queue.Queue] = {}
        self._lock = threading.Lock()
        self._closed = threading.Event()
        self._published = 0
        self._dropped = 0
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="pub-accept", daemon=True
        )
        self._accept_thread.start()

    @property
    def port(self) -> int:
        return self._listener.getsockname()[1]

    @property
    def subscriber_count(self) -> int:
        with self._lock:
            return len(self._conns)

    @property
    def dropped(self) -> int:
        return self._dropped

    def publish(self, message: dict) -> None:
        line = (json.dumps(message, separators=(",", ":")) + "\n").encode("utf-8")
        with self._lock:
            queues = list(self._conns.values())
            self._published += 1
        for q in queues:
            try:
                q.put_nowait(line)
            except queue.Full:
                # drop the oldest so a stalled consumer cannot wedge the stream
                self._dropped += 1
                try:
                    q.get_nowait()
                except queue.Empty:
                    pass
                try:
                    q.put_nowait(line)
                except queue.Full:
                    pass

    def wait_subscribers(self, count: int, timeout: float = 5.0) -> bool:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.subscriber_count >= count:
                return True
            time.sleep(0.01)
        return self.subscriber_count >= count

    def close(self) -> None:
        if self._closed.is_set():
            return
        self._closed.set()
        # shutdown, not just close: a thread blocked in accept() keeps
        # the kernel socket listening until its syscall returns
        try:
            self._listener.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._listener.close()
        except OSError:
            pass
        with self._lock:
            conns = list(self._conns.items())
            self._conns.clear()
        for conn, q in conns:
            # non-blocking: the sentinel only wakes a sender idle on an
            # empty queue; one blocked in sendall is freed by the shutdown
            try:
                q.put_nowait(_STOP)
            except queue.Full:
                pass
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()

    def _accept_loop(self) -> None:
        while not self._closed.is_set():
            try:
                conn, addr = self._listener.accept()
            except OSError:
                return
            if self._closed.is_set():
                conn.close()
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            q: queue.Queue = queue.Queue(maxsize=self._queue_size)
            with self._lock:
                self._conns[conn] = q
            threading.Thread(
                target=self._send_loop, args=(conn, q), name=f"pub-send-{addr[1]}", daemon=True
            ).start()

    def _send_loop(self, conn: socket.socket, q: queue.Queue) -> None:
        try:
            while True:
                item = q.get()
                if item is _STOP:
                    return
                conn.sendall(item)
        except OSError:
            pass
        finally:
            with self._lock:
                self._conns.pop(conn, None)
            conn.close()


class Subscriber:
    """Connect to a Publisher and hand each JSON message to a callback.

    The callback runs on the subscriber's own thread; it must not block
    for long or it backs up this one stream.  Reconnects automatically
    until closed.
    """

    def __init__(
        self,
        host: str,
        port: int,
        callback: Callable[[dict], None],
        *,
        reconnect_interval: float = 0.5,
        name: str = "sub",
    ) -> None:
        self._host = host
        self._port = port
        self._callback = callback
        self._reconnect_interval = reconnect_interval
        self._closed = threading.Event()
        self._connected = threading.Event()
        self._sock: socket.socket | None = None
        self._thread = threading.Thread(target=self._run, name=name, daemon=True)
        self._thread.start()

    @property
    def connected(self) -> bool:
        return self._connected.is_set()

    def wait_connected(self, timeout: float = 5.0) -> bool:
        return self._connected.wait(timeout)

    def close(self) -> None:
        self._closed.set()
        sock = self._sock
        if sock is not None:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()
        self._thread.join(timeout=2.0)

    def _run(self) -> None:
        while not self._closed.is_set():
            try:
                sock = socket.create_connection((self._host, self._port), timeout=5.0)
            except OSError:
                if self._closed.wait(self._reconnect_interval):
                    return
                continue
            if sock.getsockname() == sock.getpeername():
                # TCP simultaneous open against our own ephemeral port
                # while the publisher is down; drop it and retry
                sock.close()
                if self._closed.wait(self._reconnect_interval):
                    return
                continue
            sock.settimeout(None)
            self._sock = sock
            self._connected.set()
            try:
                with sock.makefile("rb") as stream:
                    for line in stream:
                        if self._closed.is_set():
                            return
                        self._dispatch(line)
            except OSError:
                pass
            finally:
                self._connected.clear()
                self._sock = None
                sock.close()
            if self._closed.wait(self._reconnect_interval):
                return

    def _dispatch(self, line: bytes) -> None:
        line = line.strip()
        if not line:
            return
        try:
            message = json.loads(line)
        except json.JSONDecodeError:
            logger.warning("discarding undecodable message: %r", line[:200])
            return
        try:
            self._callback(message)
        except Exception:
            logger.exception("subscriber callback failed")
