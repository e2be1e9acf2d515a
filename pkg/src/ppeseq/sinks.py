"""Alert delivery: terminal, JSON-lines log, webhook.

The engine never talks to a sink directly. It hands alerts to an
:class:`AlertDispatcher`, whose worker thread delivers them to every sink in
emission order. Webhook posts go through a further bounded queue of their
own so a slow or dead endpoint cannot hold up the other sinks.
"""

from __future__ import annotations

import json
import logging
import queue
import sys
import threading
import urllib.error
import urllib.request
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, List, Optional, TextIO, Union

from .types import Alert, AlertKind

log = logging.getLogger(__name__)


def alert_json_line(alert: Alert) -> str:
    return json.dumps(alert.to_json_dict(), separators=(",", ":"))


@dataclass
class SinkStats:
    delivered: int = 0
    failed: int = 0
    dropped: int = 0


class AlertSink:
    name = "sink"

    def __init__(self):
        self.stats = SinkStats()

    def emit(self, alert: Alert) -> bool:
        raise NotImplementedError

    def close(self) -> None:
        pass


_COLORS = {
    AlertKind.STEP_COMPLETED: "\033[32m",
    AlertKind.MISSED_STEP: "\033[1;31m",
    AlertKind.SESSION_COMPLETE: "\033[36m",
    AlertKind.SESSION_TIMEOUT: "\033[33m",
}
_RESET = "\033[0m"


def format_ms(t_ms: int) -> str:
    minutes, ms = divmod(int(t_ms), 60_000)
    return f"{minutes:02d}:{ms / 1000:06.3f}"


def describe_alert(alert: Alert) -> str:
    if alert.kind is AlertKind.STEP_COMPLETED:
        return f"step {alert.step_index} done: {alert.label} ({alert.ppe_class.value})"
    if alert.kind is AlertKind.MISSED_STEP:
        return (
            f"MISSED STEP {alert.step_index}: {alert.label} "
            f"(skipped before {alert.ppe_class.value})"
        )
    if alert.kind is AlertKind.SESSION_COMPLETE:
        return "all steps done"
    return "session timed out with steps pending"


class TerminalSink(AlertSink):
    """One line per alert; colored only when the stream is a TTY."""

    name = "terminal"

    def __init__(self, stream: Optional[TextIO] = None, color: Optional[bool] = None):
        super().__init__()
        self.stream = stream if stream is not None else sys.stdout
        if color is None:
            isatty = getattr(self.stream, "isatty", None)
            color = bool(isatty and isatty())
        self.color = color

    def emit(self, alert: Alert) -> bool:
        text = f"[{format_ms(alert.timestamp_ms)}] frame {alert.frame_index:>6}  {describe_alert(alert)}"
        if self.color:
            text = f"{_COLORS[alert.kind]}{text}{_RESET}"
        try:
            self.stream.write(text + "\n")
            self.stream.flush()
        except (OSError, ValueError):
            self.stats.failed += 1
            return False
        self.stats.delivered += 1
        return True


class JsonLogSink(AlertSink):
    name = "jsonl"

    def __init__(self, path: Union[str, Path]):
        super().__init__()
        self.path = Path(path)
        self._fh = None

    def emit(self, alert: Alert) -> bool:
        try:
            if self._fh is None:
                self._fh = open(self.path, "a", encoding="utf-8", newline="\n")
            self._fh.write(alert_json_line(alert) + "\n")
            self._fh.flush()
        except OSError as exc:
            log.error("alert log %s: %s", self.path, exc)
            self.stats.failed += 1
            return False
        self.stats.delivered += 1
        return True

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def _urllib_post(url: str, body: bytes, timeout_s: float) -> int:
    req = urllib.request.Request(
        url, data=body, method="POST", headers={"Content-Type": "application/json"}
    )
    with urllib.request.urlopen(req, timeout=timeout_s) as resp:
        return resp.status


class WebhookSink(AlertSink):
    """POSTs each alert's JSON object; ``retry_count`` retries after the first attempt.

    ``emit`` only enqueues. When the queue is full the oldest pending alert
    is discarded and counted in ``stats.dropped``.
    """

    name = "webhook"

    def __init__(
        self,
        url: str,
        timeout_ms: int = 2000,
        retry_count: int = 2,
        queue_size: int = 256,
        post: Optional[Callable[[str, bytes, float], int]] = None,
    ):
        super().__init__()
        if timeout_ms < 1:
            raise ValueError("webhook timeout_ms must be >= 1")
        if retry_count < 0:
            raise ValueError("webhook retry_count must be >= 0")
        self.url = url
        self.timeout_ms = timeout_ms
        self.retry_count = retry_count
        self._post = post or _urllib_post
        self._pending: deque = deque(maxlen=queue_size)
        self._cv = threading.Condition()
        self._closing = False
        self._busy = False
        self._worker = threading.Thread(target=self._run, name="ppeseq-webhook", daemon=True)
        self._worker.start()

    def emit(self, alert: Alert) -> bool:
        with self._cv:
            if len(self._pending) == self._pending.maxlen:
                self.stats.dropped += 1
            self._pending.append(alert)
            self._cv.notify()
        return True

    def _run(self) -> None:
        while True:
            with self._cv:
                while not self._pending and not self._closing:
                    self._cv.wait()
                if not self._pending:
                    return
                alert = self._pending.popleft()
                self._busy = True
            try:
                self._deliver(alert)
            finally:
                with self._cv:
                    self._busy = False
                    self._cv.notify_all()

    def _deliver(self, alert: Alert) -> bool:
        body = alert_json_line(alert).encode("utf-8")
        last_error = None
        for _ in range(1 + self.retry_count):
            try:
                status = self._post(self.url, body, self.timeout_ms / 1000.0)
                if status < 400:
                    self.stats.delivered += 1
                    return True
                last_error = f"HTTP {status}"
            except urllib.error.HTTPError as exc:
                last_error = f"HTTP {exc.code}"
            except Exception as exc:  # network errors of every flavor
                last_error = str(exc) or type(exc).__name__
        self.stats.failed += 1
        log.warning("webhook %s failed after %d attempts: %s", self.url, 1 + self.retry_count, last_error)
        return False

    def flush(self, timeout_s: Optional[float] = None) -> bool:
        with self._cv:
            return self._cv.wait_for(lambda: not self._pending and not self._busy, timeout_s)

    def close(self, timeout_s: float = 5.0) -> None:
        self.flush(timeout_s)
        with self._cv:
            self._closing = True
            self._cv.notify_all()
        self._worker.join(timeout_s)


class AlertDispatcher:
    """Ordered fan-out of alerts to sinks on a dedicated thread."""

    def __init__(self, sinks: Iterable[AlertSink] = ()):
        self.sinks: List[AlertSink] = list(sinks)
        self.emitted = 0
        self._queue: "queue.Queue[Optional[Alert]]" = queue.Queue()
        self._thread = threading.Thread(target=self._run, name="ppeseq-alerts", daemon=True)
        self._thread.start()

    def submit(self, alert: Alert) -> None:
        self.emitted += 1
        self._queue.put(alert)

    def _run(self) -> None:
        while True:
            alert = self._queue.get()
            try:
                if alert is None:
                    return
                for sink in self.sinks:
                    try:
                        sink.emit(alert)
                    except Exception:
                        sink.stats.failed += 1
                        log.exception("sink %s raised", sink.name)
            finally:
                self._queue.task_done()

    def flush(self) -> None:
        """Block until every submitted alert has been handed to every sink."""
        self._queue.join()

    def close(self) -> None:
        self._queue.put(None)
        self._thread.join()
        for sink in self.sinks:
            sink.close()


def emit_alert(sink: AlertSink, alert: Alert) -> bool:
    return sink.emit(alert)
