"""The image queue: a FIFO of image paths drained by a worker pool.

Paths arrive either from "new file" events or from a recursive directory
walk; each worker loads a frame, integrates it, computes classifiers and
line cuts, writes the output files, appends to the in-memory history and
publishes a result event.  Per-frame processing is pure given the shared
weighting matrix, so output files are byte-identical regardless of the
worker count.
"""

from __future__ import annotations

import logging
import queue
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import calib as _calib
from . import reduce as _reduce
from . import weights as _weights
from .calib import Calibration
from .reduce import ClassifierRecord

logger = logging.getLogger(__name__)

_SENTINEL = object()

#: trailing frame counter (plus separators) stripped to get the dataset stem
DATASET_STEM_RE = re.compile(r"[_\-.]*\d+$")


def dataset_stem(path: str | Path) -> str:
    """Dataset name of an image file: stem minus the trailing digit run."""
    name = Path(path).stem
    stripped = DATASET_STEM_RE.sub("", name)
    return stripped or name


class QueueError(Exception):
    pass


@dataclass(frozen=True)
class QueueState:
    """Snapshot of pipeline progress."""

    active: bool
    pending: int
    processed: int
    failed: int
    enqueued: int
    rate_fps: float
    workers: int

    def to_dict(self) -> dict:
        return {
            "active": self.active,
            "pending": self.pending,
            "processed": self.processed,
            "failed": self.failed,
            "enqueued": self.enqueued,
            "rate_fps": self.rate_fps,
            "workers": self.workers,
        }


class HistoryStore:
    """Append-only classifier history with per-dataset filtering.

    Appends come from worker threads; queries copy under a brief lock
    and never block the workers beyond that.
    """

    def __init__(self) -> None:
        self._records: list[ClassifierRecord] = []
        self._lock = threading.Lock()

    def append(self, record: ClassifierRecord) -> None:
        with self._lock:
            self._records.append(record)

    def query(self, dataset: str | None = None) -> list[ClassifierRecord]:
        """Records ordered by acquisition time, optionally one dataset only."""
        with self._lock:
            snapshot = list(self._records)
        if dataset is not None:
            snapshot = [r for r in snapshot if r.dataset == dataset]
        return sorted(snapshot, key=lambda r: (r.acquired_at, r.source_path))

    def datasets(self) -> list[str]:
        with self._lock:
            snapshot = list(self._records)
        return sorted({r.dataset for r in snapshot})

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)


ResultListener = Callable[[dict], None]


class ImageQueue:
    """One integration run: weighting matrix, worker pool, counters.

    The lifecycle is create -> start() -> (work) -> abort()/join(); a new
    run takes a fresh instance.  One control thread drives the lifecycle
    while any number of producers enqueue paths.
    """

    def __init__(
        self,
        cal: Calibration,
        *,
        base_dir: str | Path | None = None,
        cache_dir: str | Path | None = None,
        retry_attempts: int = 3,
        retry_delay: float = 0.05,
        include_profile_in_events: bool = True,
    ) -> None:
        cal.validate()
        self.cal = cal
        self.base_dir = base_dir
        self.retry_attempts = retry_attempts
        self.retry_delay = retry_delay
        self.include_profile_in_events = include_profile_in_events
        self._slice_masks = [_calib.load_mask(src, base_dir) for src in cal.masks]
        shape = tuple(cal.geometry.image_size)
        combined = _calib.combine_masks(self._slice_masks, shape)
        self.matrix = _weights.cached_build(cal, combined, cache_dir)
        self.history = HistoryStore()
        self._queue: queue.Queue = queue.Queue()
        self._workers: list[threading.Thread] = []
        self._listeners: list[ResultListener] = []
        # reentrant: walk_directory enqueues while reintegrate holds the lock
        self._lock = threading.RLock()
        self._idle = threading.Condition(self._lock)
        self._active = False
        self._enqueued = 0
        self._processed = 0
        self._failed = 0
        self._completions: deque[float] = deque(maxlen=100)

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        with self._lock:
            if self._active or self._workers:
                raise QueueError("queue already started")
            self._active = True
        for k in range(self.cal.threads):
            t = threading.Thread(target=self._worker_loop, name=f"integrator-{k}", daemon=True)
            t.start()
            self._workers.append(t)
        logger.info("image queue started with %d workers", self.cal.threads)

    def abort(self) -> int:
        """Discard pending items and stop the workers after their current frame.

        Idempotent; returns the number of discarded items.  Draining and
        deactivation happen under the producer lock, so no concurrently
        enqueued item can slip in behind the drain.
        """
        with self._lock:
            was_active = self._active
            self._active = False
            discarded = self._drain_locked()
            if was_active:
                for _ in self._workers:
                    self._queue.put(_SENTINEL)
            self._enqueued -= discarded
            self._idle.notify_all()
        if discarded:
            logger.info("aborted queue, discarded %d pending items", discarded)
        return discarded

    def _drain_locked(self) -> int:
        discarded = 0
        while True:
            try:
                item = self._queue.get_nowait()
            except queue.Empty:
                return discarded
            if item is not _SENTINEL:
                discarded += 1

    def join(self, timeout: float | None = None) -> None:
        """Wait for the worker threads to exit (after abort)."""
        deadline = None if timeout is None else time.monotonic() + timeout
        for t in self._workers:
            remaining = None if deadline is None else max(0.0, deadline - time.monotonic())
            t.join(remaining)

    # -- producers ---------------------------------------------------------

    def enqueue(self, path: str | Path) -> None:
        """Append one image path; re-sent paths are reprocessed, not deduplicated."""
        with self._lock:
            if not self._active:
                raise QueueError("queue is not active")
            self._enqueued += 1
            self._queue.put(str(path))

    def walk_directory(self, root: str | Path) -> int:
        """Recursively enqueue every image under root, in sorted order."""
        root = Path(root)
        if not root.is_dir():
            raise QueueError(f"not a directory: {root}")
        exts = {e.lower() for e in self.cal.extensions}
        paths = sorted(
            str(p) for p in root.rglob("*") if p.is_file() and p.suffix.lower() in exts
        )
        for p in paths:
            self.enqueue(p)
        logger.info("directory walk enqueued %d images under %s", len(paths), root)
        return len(paths)

    def reintegrate(self) -> int:
        """Drop whatever is pending and re-walk the calibration directory."""
        with self._lock:
            if not self._active:
                raise QueueError("queue is not active")
            self._enqueued -= self._drain_locked()
            self._idle.notify_all()
        return self.walk_directory(self.cal.directory)

    # -- observers ---------------------------------------------------------

    def add_result_listener(self, listener: ResultListener) -> None:
        """Register a callback for result events (called from worker threads)."""
        self._listeners.append(listener)

    def status(self) -> QueueState:
        with self._lock:
            pending = self._enqueued - self._processed - self._failed
            return QueueState(
                active=self._active,
                pending=pending,
                processed=self._processed,
                failed=self._failed,
                enqueued=self._enqueued,
                rate_fps=self._rate_locked(),
                workers=sum(1 for t in self._workers if t.is_alive()),
            )

    def query_history(self, dataset: str | None = None) -> list[ClassifierRecord]:
        return self.history.query(dataset)

    def wait_idle(self, timeout: float | None = None) -> bool:
        """Block until every enqueued item has been processed or failed."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._idle:
            while self._enqueued - self._processed - self._failed > 0:
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    return False
                self._idle.wait(remaining)
            return True

    def _rate_locked(self) -> float:
        if len(self._completions) < 2:
            return 0.0
        span = self._completions[-1] - self._completions[0]
        return (len(self._completions) - 1) / span if span > 0 else 0.0

    # -- output layout -----------------------------------------------------

    def output_path(self, src: str | Path) -> Path:
        """Destination of the .chi file for one image path.

        With an output directory configured, the input tree relative to
        the calibration directory is mirrored below it; otherwise the
        profile is written beside the image.
        """
        src = Path(src)
        if self.cal.output_directory is None:
            return src.with_suffix(".chi")
        out_root = Path(self.cal.output_directory)
        try:
            rel = src.resolve().relative_to(Path(self.cal.directory).resolve())
        except ValueError:
            rel = Path(src.name)
        return (out_root / rel).with_suffix(".chi")

    # -- worker ------------------------------------------------------------

    def _worker_loop(self) -> None:
        while True:
            item = self._queue.get()
            if item is _SENTINEL:
                return
            try:
                event = self._process_one(item)
                ok = True
            except Exception as exc:  # one bad frame never stalls the pipeline
                logger.warning("failed to process %s: %s", item, exc)
                event = {"type": "result", "status": "failed", "path": item, "error": str(exc)}
                ok = False
            with self._lock:
                if ok:
                    self._processed += 1
                else:
                    self._failed += 1
                self._completions.append(time.monotonic())
                self._idle.notify_all()
            self._emit(event)

    def _load_with_retry(self, path: str) -> _reduce.Frame:
        # an event may precede full visibility on networked filesystems
        last: Exception | None = None
        for attempt in range(self.retry_attempts):
            try:
                return _reduce.load_frame(path)
            except _reduce.FrameError as exc:
                last = exc
                if attempt + 1 < self.retry_attempts:
                    time.sleep(self.retry_delay)
        assert last is not None
        raise last

    def _process_one(self, path: str) -> dict:
        frame = self._load_with_retry(path)
        profile = _reduce.integrate_frame(self.matrix, frame)
        record = replace(
            _reduce.classifiers(profile, self.cal.q_start, self.cal.q_stop),
            dataset=dataset_stem(path),
        )
        cuts = _reduce.slice_profiles(frame, self.cal, self._slice_masks)

        dest = self.output_path(path)
        dest.parent.mkdir(parents=True, exist_ok=True)
        comment = self.cal.chi_header_comment
        _reduce.write_chi(profile, dest, comment)
        outputs = [str(dest)]
        for k, cut in enumerate(cuts):
            slice_dest = dest.with_name(f"{dest.stem}_slice{k}.chi")
            _reduce.write_slice_chi(cut, frame.source_path, slice_dest, comment)
            outputs.append(str(slice_dest))

        self.history.append(record)
        event = {
            "type": "result",
            "status": "ok",
            "path": path,
            "outputs": outputs,
            "record": record.to_dict(),
        }
        if self.include_profile_in_events:
            event["profile"] = {
                "q": np.asarray(profile.q).tolist(),
                "I": np.asarray(profile.intensity).tolist(),
                "E": np.asarray(profile.error).tolist(),
            }
        return event

    def _emit(self, event: dict) -> None:
        for listener in self._listeners:
            try:
                listener(event)
            except Exception:
                logger.exception("result listener failed")
