"""UDP capture of OSC pose streams into a session directory.

One thread does nothing but receive datagrams and stamp them with the
local monotonic clock; a second thread decodes them and appends rows to
``<source>.csv``. The two are joined by a bounded FIFO whose producer blocks
when it is full, so bursts are absorbed by the queue and the kernel socket
buffer rather than dropped.

Session layout::

    out_dir/
        manifest.json
        <source>.csv      t,recv_t,x,y,z,qw,qx,qy,qz,frame,source
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import os
import queue
import re
import socket
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from trackbench import __version__
from trackbench.errors import CaptureError, ProtocolError
from trackbench.ingest.formats import CAPTURE_HEADER, fmt
from trackbench.ingest.osc import OscPoseMessage, parse_packet

RCVBUF_BYTES = 4 * 1024 * 1024
MAX_DATAGRAM = 65535
_SOURCE_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]{0,127}$")


@dataclass
class SourceEntry:
    file: str
    count: int
    sha256: str


@dataclass
class SessionManifest:
    session_id: str
    started_at: str
    stopped_at: str
    listen: dict
    version: str
    sources: dict = field(default_factory=dict)
    malformed: int = 0
    ignored: int = 0
    partial: bool = False
    error: Optional[str] = None

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SessionManifest":
        d = dict(d)
        d["sources"] = {k: SourceEntry(**v) for k, v in d.get("sources", {}).items()}
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SessionManifest":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _now_iso():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="microseconds")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class CaptureSession:
    """Receive OSC pose packets on ``host:port`` and persist them.

    ``port=0`` binds an ephemeral port; read it back from :attr:`address`.
    Files for ``expected_sources`` are created up front so a silent source
    still leaves an (empty) file behind.
    """

    def __init__(
        self,
        out_dir,
        host: str = "127.0.0.1",
        port: int = 0,
        frame: str = "test",
        expected_sources: Iterable[str] = (),
        queue_size: int = 65536,
    ):
        self.out_dir = Path(out_dir)
        self.host = host
        self.port = port
        self.frame = frame
        self.expected_sources = tuple(expected_sources)
        self._queue: queue.Queue = queue.Queue(maxsize=queue_size)
        self._stop = threading.Event()
        self._files = {}
        self._counts = {}
        self._lock = threading.Lock()
        self.malformed = 0
        self.ignored = 0
        self.received = 0
        self.error: Optional[str] = None
        self._sock = None
        self._bound = None
        self._threads = []
        self._started_at = None
        self.manifest: Optional[SessionManifest] = None

    @property
    def address(self):
        return self._bound or (self.host, self.port)

    @property
    def persisted(self) -> int:
        with self._lock:
            return sum(self._counts.values())

    def start(self) -> "CaptureSession":
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CaptureError(f"cannot create {self.out_dir}: {exc}") from exc
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, RCVBUF_BYTES)
        except OSError:
            pass  # keep the system default
        try:
            sock.bind((self.host, self.port))
        except OSError as exc:
            sock.close()
            raise CaptureError(f"cannot bind {self.host}:{self.port}: {exc}") from exc
        sock.settimeout(0.05)
        self._sock = sock
        self._bound = sock.getsockname()[:2]
        self._started_at = _now_iso()
        for src in self.expected_sources:
            self._writer_for(src)
        self._threads = [
            threading.Thread(target=self._receive_loop, name="capture-recv", daemon=True),
            threading.Thread(target=self._write_loop, name="capture-write", daemon=True),
        ]
        for th in self._threads:
            th.start()
        return self

    def _receive_loop(self):
        sock = self._sock
        while True:
            try:
                data = sock.recv(MAX_DATAGRAM)
            except socket.timeout:
                if self._stop.is_set():
                    break
                continue
            except OSError:
                break
            self._queue.put((time.monotonic(), data))
            self.received += 1
        # drain what the kernel already holds
        sock.setblocking(False)
        while True:
            try:
                data = sock.recv(MAX_DATAGRAM)
            except OSError:
                break
            self._queue.put((time.monotonic(), data))
            self.received += 1
        self._queue.put(None)

    def _writer_for(self, source):
        w = self._files.get(source)
        if w is None:
            f = open(self.out_dir / f"{source}.csv", "w", newline="")
            w = (f, csv.writer(f, lineterminator="\n"))
            w[1].writerow(CAPTURE_HEADER)
            self._files[source] = w
            with self._lock:
                self._counts[source] = 0
        return w

    def _write_loop(self):
        failed = False
        while True:
            item = self._queue.get()
            if item is None:
                break
            if failed:
                continue  # keep draining so the receiver never blocks
            recv_t, data = item
            try:
                msgs, _ = parse_packet(data)
            except ProtocolError:
                self.malformed += 1
                continue
            try:
                for m in msgs:
                    if not isinstance(m, OscPoseMessage):
                        self.ignored += 1
                        continue
                    if not _SOURCE_RE.match(m.source_id):
                        self.malformed += 1
                        continue
                    _, w = self._writer_for(m.source_id)
                    w.writerow(
                        [fmt(m.t), fmt(recv_t)]
                        + [fmt(v) for v in m.position]
                        + [fmt(v) for v in m.orientation]
                        + [self.frame, m.source_id]
                    )
                    with self._lock:
                        self._counts[m.source_id] += 1
            except OSError as exc:
                self.error = f"write failed: {exc}"
                failed = True
                self._stop.set()

    def stop(self, partial: bool = False) -> SessionManifest:
        """Stop receiving, flush every file and write ``manifest.json``."""
        if self.manifest is not None:
            return self.manifest
        self._stop.set()
        for th in self._threads:
            th.join()
        if self._sock is not None:
            self._sock.close()
        for f, _ in self._files.values():
            try:
                f.close()
            except OSError as exc:
                self.error = self.error or f"close failed: {exc}"
        host, port = self.address
        sources = {}
        for src in sorted(self._counts):
            name = f"{src}.csv"
            sources[src] = SourceEntry(name, self._counts[src], file_sha256(self.out_dir / name))
        self.manifest = SessionManifest(
            session_id=uuid.uuid4().hex,
            started_at=self._started_at or _now_iso(),
            stopped_at=_now_iso(),
            listen={"host": host, "port": port},
            version=__version__,
            sources=sources,
            malformed=self.malformed,
            ignored=self.ignored,
            partial=bool(partial or self.error),
            error=self.error,
        )
        tmp = self.out_dir / "manifest.json.tmp"
        with open(tmp, "w") as f:
            json.dump(self.manifest.as_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, self.out_dir / "manifest.json")
        return self.manifest

    def run(self, duration: Optional[float] = None, max_messages: Optional[int] = None, stop_event=None) -> SessionManifest:
        """Capture until ``duration`` elapses, ``max_messages`` poses are
        persisted, ``stop_event`` is set or the writer fails.

        Ctrl-C ends the session with the manifest flagged partial.
        """
        if self._sock is None:
            self.start()
        t_end = None if duration is None else time.monotonic() + duration
        try:
            while not self._stop.is_set():
                if t_end is not None and time.monotonic() >= t_end:
                    break
                if max_messages is not None and self.persisted >= max_messages:
                    break
                if stop_event is not None and stop_event.is_set():
                    break
                time.sleep(0.01)
        except KeyboardInterrupt:
            return self.stop(partial=True)
        return self.stop()

    def __enter__(self):
        return self.start()

    def __exit__(self, exc_type, exc, tb):
        self.stop(partial=exc_type is not None)
        return False


def capture(out_dir, host="127.0.0.1", port=0, duration=None, max_messages=None, stop_event=None, **kw) -> SessionManifest:
    """Run a blocking capture session and return its manifest."""
    return CaptureSession(out_dir, host, port, **kw).run(duration, max_messages, stop_event)


def send_packets(packets, address, rate: Optional[float] = None) -> int:
    """Send raw datagrams to ``address``, paced at ``rate`` per second."""
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    t0 = time.perf_counter()
    n = 0
    try:
        for i, p in enumerate(packets):
            if rate:
                delay = t0 + i / rate - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
            sock.sendto(p, tuple(address))
            n += 1
    finally:
        sock.close()
    return n
