"""Detector output ingestion.

Two input formats are understood:

* the native line format, one JSON object per ``\\n``-terminated line::

    {"frame": 12, "t_ms": 400, "detections": [{"class": "mask", "conf": 0.87, "bbox": [0.5, 0.4, 0.1, 0.1]}]}

* darknet's ``-out result.json`` document: a JSON array of
  ``{"frame_id": ..., "objects": [{"name", "confidence", "relative_coordinates"}]}``.

Batches reach a consumer either from a file (optionally paced by timestamps)
or from a single-client TCP listener.
"""

from __future__ import annotations

import json
import logging
import math
import queue
import socket
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, List, Optional, Protocol, TextIO, Tuple, Union

from .errors import MalformedRecord, NonMonotonicFrame, UnknownClass
from .types import DetectionEvent, EndReason, FrameBatch, parse_class

log = logging.getLogger(__name__)

NATIVE_KEYS = frozenset(("frame", "t_ms", "detections"))
DETECTION_KEYS = frozenset(("class", "conf", "bbox"))
DEFAULT_QUEUE_SIZE = 1024


@dataclass
class ParseStats:
    records: int = 0
    records_dropped: int = 0
    detections: int = 0
    detections_dropped: int = 0


# --- sources ---------------------------------------------------------------


@dataclass(frozen=True)
class NetworkListener:
    bind_address: str = "127.0.0.1"
    port: int = 9000


@dataclass(frozen=True)
class FileReplay:
    path: Union[str, Path]
    speed_factor: float = 1.0
    as_fast_as_possible: bool = False

    def __post_init__(self):
        if not self.speed_factor > 0:
            raise ValueError(
                "speed_factor must be > 0; use as_fast_as_possible to disable pacing"
            )


@dataclass(frozen=True)
class StandardInput:
    pass


StreamSource = Union[NetworkListener, FileReplay, StandardInput]


class BatchConsumer(Protocol):
    def feed(self, batch: FrameBatch) -> None: ...

    def end_stream(self, reason: EndReason = EndReason.END_OF_STREAM): ...


# --- native line format ------------------------------------------------------


def _reject_constant(name: str):
    raise ValueError(f"non-finite number {name}")


def _int_field(obj: dict, key: str, position) -> int:
    v = obj.get(key)
    if not isinstance(v, int) or isinstance(v, bool) or v < 0:
        raise MalformedRecord(f"{key!r} must be a non-negative integer, got {v!r}", position)
    return v


def _real(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _clamp01(x: float) -> float:
    return min(max(float(x), 0.0), 1.0)


def _bbox(raw, strict: bool, position) -> Tuple[float, float, float, float]:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4 or not all(_real(v) for v in raw):
        raise MalformedRecord(f"bbox must be four numbers, got {raw!r}", position)
    cx, cy, w, h = (float(v) for v in raw)
    ok = 0 <= cx <= 1 and 0 <= cy <= 1 and 0 < w <= 1 and 0 < h <= 1
    if not ok:
        if strict or w <= 0 or h <= 0:
            raise MalformedRecord(f"bbox {raw!r} outside the normalized range", position)
        cx, cy, w, h = _clamp01(cx), _clamp01(cy), _clamp01(w), _clamp01(h)
    return (cx, cy, w, h)


def _detection(
    frame: int,
    t_ms: int,
    name,
    conf,
    bbox_raw,
    strict: bool,
    stats: Optional[ParseStats],
    position,
) -> Optional[DetectionEvent]:
    """Validate one detection. Returns None when lenient mode drops it."""
    try:
        cls = parse_class(name)
        if not _real(conf):
            raise MalformedRecord(f"confidence must be a number, got {conf!r}", position)
        conf = float(conf)
        if not 0.0 <= conf <= 1.0:
            if strict:
                raise MalformedRecord(f"confidence {conf!r} outside [0, 1]", position)
            conf = _clamp01(conf)
        bbox = _bbox(bbox_raw, strict, position)
    except (UnknownClass, MalformedRecord):
        if strict:
            raise
        if stats is not None:
            stats.detections_dropped += 1
        return None
    if stats is not None:
        stats.detections += 1
    return DetectionEvent(frame, t_ms, cls, conf, bbox)


def parse_event_line(
    line: str,
    *,
    strict: bool = True,
    stats: Optional[ParseStats] = None,
    position: Optional[int] = None,
) -> FrameBatch:
    """Parse one native-format record into a :class:`FrameBatch`.

    Strict mode rejects unknown classes, out-of-range values and unexpected
    keys. Lenient mode clamps confidences, drops bad detections (counted in
    ``stats``) and ignores extra keys; a record whose frame-level fields are
    unusable is still an error.
    """
    try:
        obj = json.loads(line, parse_constant=_reject_constant)
    except ValueError as exc:
        raise MalformedRecord(f"invalid JSON ({exc})", position) from None
    if not isinstance(obj, dict):
        raise MalformedRecord("record must be a JSON object", position)
    if strict and set(obj) != NATIVE_KEYS:
        extra = sorted(set(obj) - NATIVE_KEYS)
        missing = sorted(NATIVE_KEYS - set(obj))
        raise MalformedRecord(f"unexpected keys {extra} / missing keys {missing}", position)
    frame = _int_field(obj, "frame", position)
    t_ms = _int_field(obj, "t_ms", position)
    raw = obj.get("detections")
    if not isinstance(raw, list):
        raise MalformedRecord("'detections' must be a list", position)
    dets = []
    for d in raw:
        if not isinstance(d, dict):
            if strict:
                raise MalformedRecord("detection must be a JSON object", position)
            if stats is not None:
                stats.detections_dropped += 1
            continue
        if strict and set(d) != DETECTION_KEYS:
            raise MalformedRecord(f"detection keys must be {sorted(DETECTION_KEYS)}", position)
        det = _detection(frame, t_ms, d.get("class"), d.get("conf"), d.get("bbox"), strict, stats, position)
        if det is not None:
            dets.append(det)
    if stats is not None:
        stats.records += 1
    return FrameBatch(frame, t_ms, tuple(dets))


def render_event_line(batch: FrameBatch) -> str:
    """Render a batch in the native format (no trailing newline)."""
    return json.dumps(
        {
            "frame": batch.frame_index,
            "t_ms": batch.timestamp_ms,
            "detections": [
                {"class": d.ppe_class.value, "conf": d.confidence, "bbox": list(d.bbox)}
                for d in batch.detections
            ],
        },
        separators=(",", ":"),
    )


def write_event_lines(batches: Iterable[FrameBatch], dest: Union[str, Path, TextIO]) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="\n") as fh:
            write_event_lines(batches, fh)
        return
    for b in batches:
        dest.write(render_event_line(b))
        dest.write("\n")


def iter_event_lines(
    lines: Iterable[str],
    *,
    strict: bool = True,
    stats: Optional[ParseStats] = None,
) -> Iterator[FrameBatch]:
    """Parse native-format lines lazily, enforcing increasing frame order.

    Blank lines are skipped. In lenient mode bad records are dropped and
    counted instead of raising.
    """
    last = None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            batch = parse_event_line(line, strict=strict, stats=stats, position=lineno)
            if last is not None and batch.frame_index <= last:
                raise NonMonotonicFrame(batch.frame_index, last)
        except (MalformedRecord, UnknownClass, NonMonotonicFrame):
            if strict:
                raise
            if stats is not None:
                stats.records_dropped += 1
            continue
        last = batch.frame_index
        yield batch


# --- darknet ----------------------------------------------------------------


def darknet_filters(num_classes: int) -> int:
    """Filter count for the conv layer in front of each [yolo] layer: (classes + 5) * 3."""
    if not isinstance(num_classes, int) or num_classes < 1:
        raise ValueError(f"num_classes must be a positive integer, got {num_classes!r}")
    return (num_classes + 5) * 3


def parse_darknet_json(
    document: str,
    *,
    fps: float = 30.0,
    strict: bool = True,
    stats: Optional[ParseStats] = None,
) -> List[FrameBatch]:
    if not fps > 0:
        raise ValueError(f"fps must be > 0, got {fps!r}")
    try:
        frames = json.loads(document, parse_constant=_reject_constant)
    except ValueError as exc:
        raise MalformedRecord(f"invalid JSON ({exc})") from None
    if not isinstance(frames, list):
        raise MalformedRecord("darknet output must be a JSON array of frames")
    out: List[FrameBatch] = []
    last = None
    for pos, fr in enumerate(frames):
        if not isinstance(fr, dict):
            raise MalformedRecord("frame entry must be an object", pos)
        frame = _int_field(fr, "frame_id", pos)
        if last is not None and frame <= last:
            raise NonMonotonicFrame(frame, last)
        last = frame
        t_ms = int(round(frame * 1000.0 / fps))
        objects = fr.get("objects", [])
        if not isinstance(objects, list):
            raise MalformedRecord("'objects' must be a list", pos)
        dets = []
        for obj in objects:
            if not isinstance(obj, dict):
                raise MalformedRecord("object entry must be a JSON object", pos)
            rc = obj.get("relative_coordinates")
            if not isinstance(rc, dict):
                raise MalformedRecord("object lacks relative_coordinates", pos)
            bbox = [rc.get(k) for k in ("center_x", "center_y", "width", "height")]
            det = _detection(frame, t_ms, obj.get("name"), obj.get("confidence"), bbox, strict, stats, pos)
            if det is not None:
                dets.append(det)
        if stats is not None:
            stats.records += 1
        out.append(FrameBatch(frame, t_ms, tuple(dets)))
    return out


def detect_format(path: Union[str, Path], text: Optional[str] = None) -> str:
    """Guess ``"darknet"`` or ``"native"`` from the extension, then the first character."""
    suffix = Path(path).suffix.lower()
    if suffix in (".jsonl", ".ndjson"):
        return "native"
    if suffix == ".json":
        return "darknet"
    if text is not None and text.lstrip().startswith("["):
        return "darknet"
    return "native"


def load_batches(
    path: Union[str, Path],
    *,
    fmt: str = "auto",
    fps: float = 30.0,
    strict: bool = True,
    stats: Optional[ParseStats] = None,
) -> List[FrameBatch]:
    """Read and fully validate a recorded file."""
    text = Path(path).read_text(encoding="utf-8")
    if fmt == "auto":
        fmt = detect_format(path, text)
    if fmt == "darknet":
        return parse_darknet_json(text, fps=fps, strict=strict, stats=stats)
    if fmt == "native":
        return list(iter_event_lines(text.splitlines(), strict=strict, stats=stats))
    raise ValueError(f"unknown format {fmt!r}")


# --- replay -----------------------------------------------------------------


@dataclass
class ReplayStats:
    batches: int = 0
    detections: int = 0
    dropped_records: int = 0
    dropped_detections: int = 0
    wall_time_s: float = 0.0


def run_replay(
    source: FileReplay,
    consumer: Union[BatchConsumer, Callable[[FrameBatch], None]],
    *,
    fmt: str = "auto",
    fps: float = 30.0,
    strict: bool = True,
    clock: Callable[[], float] = time.monotonic,
    sleep: Callable[[float], None] = time.sleep,
) -> ReplayStats:
    """Deliver a recorded file to ``consumer``, paced by its timestamps.

    The file is parsed completely before the first batch is delivered.
    Pacing is anchored to the start time so per-batch scheduling jitter does
    not accumulate.
    """
    pstats = ParseStats()
    batches = load_batches(source.path, fmt=fmt, fps=fps, strict=strict, stats=pstats)
    feed = consumer.feed if hasattr(consumer, "feed") else consumer
    stats = ReplayStats(
        dropped_records=pstats.records_dropped, dropped_detections=pstats.detections_dropped
    )
    start = clock()
    t0 = batches[0].timestamp_ms if batches else 0
    for b in batches:
        if not source.as_fast_as_possible:
            due = start + (b.timestamp_ms - t0) / 1000.0 / source.speed_factor
            delay = due - clock()
            if delay > 0:
                sleep(delay)
        feed(b)
        stats.batches += 1
        stats.detections += len(b.detections)
    stats.wall_time_s = clock() - start
    return stats


def read_stdin(
    consumer: BatchConsumer,
    stream: Optional[TextIO] = None,
    *,
    strict: bool = True,
    stats: Optional[ParseStats] = None,
) -> None:
    """Feed native-format lines from a text stream (stdin by default) as they arrive."""
    import sys

    stream = stream or sys.stdin
    for batch in iter_event_lines(stream, strict=strict, stats=stats):
        consumer.feed(batch)


# --- TCP listener -------------------------------------------------------------


@dataclass
class ListenerStats:
    sessions: int = 0
    parse: ParseStats = field(default_factory=ParseStats)


class Listener:
    """Single-client TCP listener for the native line format.

    A reader thread owns the socket; parsed batches cross to the consuming
    thread through a bounded queue, so a slow consumer blocks the reader
    rather than losing records. Each client connection is one session:
    disconnect ends it with ``END_OF_STREAM``, an idle connection longer than
    ``idle_timeout_s`` ends it with ``TIMEOUT``. Further clients wait in the
    accept backlog until the current one is done.
    """

    _POLL_S = 0.1

    def __init__(
        self,
        source: NetworkListener,
        *,
        strict: bool = True,
        queue_size: int = DEFAULT_QUEUE_SIZE,
        idle_timeout_s: Optional[float] = None,
        backlog: int = 8,
    ):
        self.source = source
        self.strict = strict
        self.idle_timeout_s = idle_timeout_s
        self.backlog = backlog
        self.stats = ListenerStats()
        self._queue: "queue.Queue[tuple]" = queue.Queue(maxsize=queue_size)
        self._stop = threading.Event()
        self._sock: Optional[socket.socket] = None
        self._reader: Optional[threading.Thread] = None

    @property
    def address(self) -> Tuple[str, int]:
        if self._sock is None:
            raise RuntimeError("listener not bound")
        return self._sock.getsockname()[:2]

    def bind(self) -> Tuple[str, int]:
        """Bind and listen. Raises ``OSError`` if the address is unavailable."""
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.bind((self.source.bind_address, self.source.port))
            sock.listen(self.backlog)
        except OSError:
            sock.close()
            raise
        sock.settimeout(self._POLL_S)
        self._sock = sock
        return self.address

    def shutdown(self) -> None:
        self._stop.set()

    def serve(self, consumer: BatchConsumer, max_sessions: Optional[int] = None) -> None:
        """Deliver batches to ``consumer`` until :meth:`shutdown` or ``max_sessions`` clients."""
        if self._sock is None:
            self.bind()
        self._reader = threading.Thread(target=self._read_loop, name="ppeseq-listener", daemon=True)
        self._reader.start()
        sessions = 0
        try:
            while True:
                try:
                    item = self._queue.get(timeout=self._POLL_S)
                except queue.Empty:
                    if self._stop.is_set() and not self._reader.is_alive():
                        break
                    continue
                kind, payload = item
                if kind == "batch":
                    consumer.feed(payload)
                elif kind == "end":
                    consumer.end_stream(payload)
                    sessions += 1
                    if max_sessions is not None and sessions >= max_sessions:
                        break
                elif kind == "stopped":
                    break
        finally:
            self._stop.set()
            if self._reader is not None:
                self._reader.join(timeout=5)
            self._sock.close()

    def _put(self, item) -> bool:
        # blocking put with a stop check: backpressure without deadlocking shutdown
        while not self._stop.is_set():
            try:
                self._queue.put(item, timeout=self._POLL_S)
                return True
            except queue.Full:
                continue
        return False

    def _read_loop(self) -> None:
        try:
            while not self._stop.is_set():
                try:
                    conn, peer = self._sock.accept()
                except socket.timeout:
                    continue
                except OSError:
                    break
                log.info("client connected from %s:%s", *peer[:2])
                self.stats.sessions += 1
                with conn:
                    reason = self._handle_client(conn)
                if not self._put(("end", reason)):
                    break
        finally:
            try:
                self._queue.put_nowait(("stopped", None))
            except queue.Full:
                pass

    def _handle_client(self, conn: socket.socket) -> EndReason:
        conn.settimeout(self._POLL_S)
        buf = b""
        lineno = 0
        last_frame = None
        idle_since = time.monotonic()
        pstats = self.stats.parse
        while not self._stop.is_set():
            try:
                chunk = conn.recv(65536)
            except socket.timeout:
                if self.idle_timeout_s is not None and time.monotonic() - idle_since >= self.idle_timeout_s:
                    return EndReason.TIMEOUT
                continue
            except OSError:
                break
            if not chunk:
                break
            idle_since = time.monotonic()
            buf += chunk
            *lines, buf = buf.split(b"\n")
            for raw in lines:
                lineno += 1
                if not raw.strip():
                    continue
                try:
                    batch = parse_event_line(
                        raw.decode("utf-8"), strict=self.strict, stats=pstats, position=lineno
                    )
                    if last_frame is not None and batch.frame_index <= last_frame:
                        raise NonMonotonicFrame(batch.frame_index, last_frame)
                except (UnicodeDecodeError, MalformedRecord, UnknownClass, NonMonotonicFrame) as exc:
                    if self.strict:
                        log.warning("rejecting client: %s", exc)
                        try:
                            conn.sendall(f"error: {exc}\n".encode("utf-8"))
                        except OSError:
                            pass
                        return EndReason.END_OF_STREAM
                    pstats.records_dropped += 1
                    continue
                last_frame = batch.frame_index
                if not self._put(("batch", batch)):
                    return EndReason.END_OF_STREAM
        # a final unterminated line is still a record
        if buf.strip() and not self._stop.is_set():
            try:
                batch = parse_event_line(buf.decode("utf-8"), strict=self.strict, stats=pstats, position=lineno + 1)
                if last_frame is None or batch.frame_index > last_frame:
                    self._put(("batch", batch))
                else:
                    pstats.records_dropped += 1
            except (UnicodeDecodeError, MalformedRecord, UnknownClass):
                pstats.records_dropped += 1
        return EndReason.END_OF_STREAM


def run_listener(
    source: NetworkListener,
    consumer: BatchConsumer,
    *,
    strict: bool = True,
    idle_timeout_s: Optional[float] = None,
    max_sessions: Optional[int] = None,
) -> Listener:
    listener = Listener(source, strict=strict, idle_timeout_s=idle_timeout_s)
    listener.bind()
    listener.serve(consumer, max_sessions=max_sessions)
    return listener


def send_batches(
    host: str,
    port: int,
    batches: Iterable[Union[FrameBatch, str]],
    *,
    connect_timeout_s: float = 5.0,
) -> str:
    """Loopback client: stream batches (or raw lines) to a listener, then disconnect.

    Returns whatever the server wrote back (error lines in strict mode).
    """
    deadline = time.monotonic() + connect_timeout_s
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=connect_timeout_s)
            break
        except ConnectionRefusedError:
            if time.monotonic() >= deadline:
                raise
            time.sleep(0.05)
    with sock:
        for b in batches:
            line = b if isinstance(b, str) else render_event_line(b)
            try:
                sock.sendall(line.encode("utf-8") + b"\n")
            except OSError:
                break
        try:
            sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass
        chunks = []
        sock.settimeout(connect_timeout_s)
        try:
            while True:
                data = sock.recv(4096)
                if not data:
                    break
                chunks.append(data)
        except OSError:
            pass
    return b"".join(chunks).decode("utf-8", "replace")
