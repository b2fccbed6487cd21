"""Frame ingestion: newline-delimited JSON records from files or sockets,
demultiplexed per sensor into timestamp-ordered streams."""

from __future__ import annotations

import heapq
import json
import logging
import queue
import socket
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Protocol

from .core import Diagnostics, FrameParseError, FrameRangeError, ThermalFrame, decode_frame

log = logging.getLogger(__name__)


class LineTransport(Protocol):
    """Adapter point: anything that yields raw text lines.

    ``lines`` may raise ``ConnectionError`` (or ``OSError``) when the link
    drops; :func:`ingest_stream` then reconnects by calling it again. A
    message-broker client only needs to implement this one method.
    """

    def lines(self) -> Iterator[str]: ...


@dataclass
class SocketTransport:
    host: str
    port: int
    timeout_s: float = 10.0

    def lines(self) -> Iterator[str]:
        with socket.create_connection((self.host, self.port), timeout=self.timeout_s) as sock:
            with sock.makefile("r", encoding="utf-8", newline="\n") as fh:
                for line in fh:
                    yield line
        raise ConnectionError(f"{self.host}:{self.port} closed the connection")


def parse_endpoint(endpoint: str) -> SocketTransport:
    """``tcp://host:port`` or ``host:port``."""
    text = endpoint.removeprefix("tcp://")
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bad endpoint {endpoint!r}, expected host:port")
    return SocketTransport(host, int(port))


@dataclass
class FileTransport:
    path: str | Path

    def lines(self) -> Iterator[str]:
        with Path(self.path).open(encoding="utf-8") as fh:
            yield from fh


@dataclass
class _Lane:
    heap: list[tuple[int, int, ThermalFrame]] = field(default_factory=list)
    held: set[int] = field(default_factory=set)
    last_out: int | None = None
    seq: int = 0


class StreamDemux:
    """Per-sensor reordering within a window of ``window`` frames.

    Each sensor lane holds up to ``window`` frames; a newer arrival pushes
    out the oldest held frame. Frames older than the last emitted one are
    dropped (``late``), repeated timestamps are dropped (``duplicate``).
    """

    def __init__(self, window: int = 2, diagnostics: Diagnostics | None = None) -> None:
        if window < 0:
            raise ValueError("window must be non-negative")
        self.window = window
        self.diag = diagnostics or Diagnostics()
        self._lanes: dict[str, _Lane] = {}

    def push(self, frame: ThermalFrame) -> list[ThermalFrame]:
        lane = self._lanes.setdefault(str(frame.sensor_id), _Lane())
        ts = frame.ts_ms
        if ts in lane.held or (lane.last_out is not None and ts == lane.last_out):
            self.diag.bump("duplicate")
            return []
        if lane.last_out is not None and ts < lane.last_out:
            self.diag.bump("late")
            return []
        heapq.heappush(lane.heap, (ts, lane.seq, frame))
        lane.seq += 1
        lane.held.add(ts)
        out = []
        while len(lane.heap) > self.window:
            out.append(self._pop(lane))
        return out

    def _pop(self, lane: _Lane) -> ThermalFrame:
        ts, _, frame = heapq.heappop(lane.heap)
        lane.held.discard(ts)
        lane.last_out = ts
        return frame

    def flush(self) -> list[ThermalFrame]:
        """Release everything still held, sensor by sensor."""
        out = []
        for key in sorted(self._lanes):
            lane = self._lanes[key]
            while lane.heap:
                out.append(self._pop(lane))
        return out


def parse_line(line: str, diag: Diagnostics, m: int | None = 64) -> ThermalFrame | None:
    text = line.strip()
    if not text:
        return None
    try:
        return decode_frame(json.loads(text), m=m)
    except (json.JSONDecodeError, FrameParseError, FrameRangeError, TypeError, KeyError) as exc:
        diag.bump("malformed")
        log.debug("skipping malformed record: %s", exc)
        return None


def demux_lines(
    lines: Iterable[str], window: int = 2, diag: Diagnostics | None = None, m: int | None = 64
) -> Iterator[ThermalFrame]:
    """Decoded frames in per-sensor timestamp order (sensors interleaved)."""
    dm = StreamDemux(window, diag)
    for line in lines:
        frame = parse_line(line, dm.diag, m)
        if frame is not None:
            yield from dm.push(frame)
    yield from dm.flush()


def read_frames(path: str | Path, window: int = 2, diag: Diagnostics | None = None,
                m: int | None = 64) -> list[ThermalFrame]:
    return list(demux_lines(FileTransport(path).lines(), window, diag, m))


def split_by_sensor(frames: Iterable[ThermalFrame]) -> dict[str, list[ThermalFrame]]:
    out: dict[str, list[ThermalFrame]] = {}
    for f in frames:
        out.setdefault(str(f.sensor_id), []).append(f)
    return out


def ingest_stream(
    transport: LineTransport,
    window: int = 2,
    diag: Diagnostics | None = None,
    max_retries: int = 5,
    base_delay_s: float = 0.5,
    max_delay_s: float = 8.0,
    sleep: Callable[[float], None] = time.sleep,
    m: int | None = 64,
) -> Iterator[ThermalFrame]:
    """Frames from a live transport, reconnecting with bounded exponential
    back-off. Stops when the transport ends cleanly, or (after flushing)
    once ``max_retries`` consecutive reconnects fail to deliver a line."""
    dm = StreamDemux(window, diag)
    failures = 0
    while True:
        try:
            for line in transport.lines():
                failures = 0
                frame = parse_line(line, dm.diag, m)
                if frame is not None:
                    yield from dm.push(frame)
            break
        except OSError as exc:
            reason = str(exc)
        failures += 1
        dm.diag.bump("disconnect")
        if failures > max_retries:
            log.warning("giving up after %d reconnects (%s)", max_retries, reason)
            break
        delay = min(max_delay_s, base_delay_s * 2 ** (failures - 1))
        log.info("reconnecting in %.1fs (%s)", delay, reason)
        sleep(delay)
    yield from dm.flush()


class BoundedSink:
    """Queue between a pipeline and a writer; ``put`` blocks when full."""

    _DONE = object()

    def __init__(self, maxsize: int = 1024) -> None:
        self._q: queue.Queue = queue.Queue(maxsize=maxsize)

    def put(self, item: object, timeout: float | None = None) -> None:
        self._q.put(item, timeout=timeout)

    def close(self) -> None:
        self._q.put(self._DONE)

    def __iter__(self) -> Iterator[object]:
        while True:
            item = self._q.get()
            if item is self._DONE:
                return
            yield item
