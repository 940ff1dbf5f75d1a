"""Moves finished acquisition files to storage and announces each one.

The feeder polls a source directory; a file whose size is unchanged
between two polls is copied into the storage directory through a
temporary name and an atomic rename, and only then is the event
{"command": "new file", "argument": "<storage path>"} published.  A
subscriber that opens the path on receipt therefore always sees the
complete file.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from pathlib import Path

from .pubsub import Publisher

logger = logging.getLogger(__name__)

DEFAULT_EXTENSIONS = (".tif", ".tiff", ".png", ".edf", ".cbf")


class FeederError(Exception):
    pass


class Feeder:
    """Watch source_dir, mirror completed files into storage_dir, publish events.

    ``copy_delay`` sleeps that long per chunk during the storage-side
    copy; it exists so tests can stretch the copy window and verify
    events never precede readable files.
    """

    def __init__(
        self,
        source_dir: str | Path,
        storage_dir: str | Path,
        publisher: Publisher,
        *,
        extensions: tuple[str, ...] = DEFAULT_EXTENSIONS,
        poll_interval: float = 0.05,
        copy_delay: float = 0.0,
        chunk_size: int = 1 << 20,
    ) -> None:
        self.source_dir = Path(source_dir)
        self.storage_dir = Path(storage_dir)
        if not self.source_dir.is_dir():
            raise FeederError(f"source directory does not exist: {self.source_dir}")
        self.storage_dir.mkdir(parents=True, exist_ok=True)
        self.publisher = publisher
        self.extensions = {e.lower() for e in extensions}
        self.poll_interval = poll_interval
        self.copy_delay = copy_delay
        self.chunk_size = chunk_size
        self.published = 0
        self._pending: dict[Path, int] = {}
        self._shipped: set[Path] = set()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._serial = 0

    # -- single poll pass (also the test surface) ----------------------------

    def process_pending(self) -> list[Path]:
        """One poll: ship every file whose size held steady since the last pass."""
        shipped: list[Path] = []
        current: dict[Path, int] = {}
        for path in sorted(self.source_dir.rglob("*")):
            if not path.is_file() or path.suffix.lower() not in self.extensions:
                continue
            if path in self._shipped:
                continue
            try:
                size = path.stat().st_size
            except OSError:
                continue
            current[path] = size
            if self._pending.get(path) == size:
                try:
                    dest = self._copy_atomic(path)
                except OSError as exc:
                    logger.error("copy failed for %s: %s", path, exc)
                    continue
                self.publisher.publish({"command": "new file", "argument": str(dest)})
                self.published += 1
                self._shipped.add(path)
                shipped.append(dest)
        self._pending = {p: s for p, s in current.items() if p not in self._shipped}
        return shipped

    def _copy_atomic(self, src: Path) -> Path:
        rel = src.relative_to(self.source_dir)
        dest = self.storage_dir / rel
        dest.parent.mkdir(parents=True, exist_ok=True)
        self._serial += 1
        tmp = dest.with_name(f".{dest.name}.{os.getpid()}.{self._serial}.part")
        try:
            with open(src, "rb") as fin, open(tmp, "wb") as fout:
                while chunk := fin.read(self.chunk_size):
                    fout.write(chunk)
                    if self.copy_delay:
                        time.sleep(self.copy_delay)
                fout.flush()
                os.fsync(fout.fileno())
            os.replace(tmp, dest)
        except OSError:
            tmp.unlink(missing_ok=True)
            raise
        return dest

    # -- background operation ------------------------------------------------

    def start(self) -> None:
        if self._thread is not None:
            raise FeederError("feeder already started")
        self._thread = threading.Thread(target=self._run, name="feeder", daemon=True)
        self._thread.start()

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                self.process_pending()
            except Exception:
                logger.exception("feeder poll failed")
            self._stop.wait(self.poll_interval)

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None

    def run_forever(self) -> None:
        self.start()
        try:
            while not self._stop.is_set():
                time.sleep(0.2)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()
