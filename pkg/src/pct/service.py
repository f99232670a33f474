"""Batch query service over the enclave wire protocol.

Requests queue until either batch_size of them are waiting or the oldest
has waited batch_timeout_s, then one trusted-region batch runs and every
waiter gets its own sealed response.  Batching is semantically invisible:
results equal running each query alone.

A per-client daily request counter guards against an adversary probing
an infected person's whereabouts by replaying variations of a query.
"""

from __future__ import annotations

import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field

from .enclave import (
    ERR_INTERNAL,
    ERR_MALFORMED,
    ERR_AUTH,
    ERR_RATE_LIMIT,
    HEADER,
    HEADER_LEN,
    MAGIC_HELLO,
    MAGIC_QUERY,
    Enclave,
    encode_error,
    encode_hello_reply,
    payload_length,
)
from .psi import MODE_STPSI, PsiConfig

DEFAULT_BATCH_SIZE = 256
DEFAULT_BATCH_TIMEOUT_S = 2.0
DEFAULT_DAILY_LIMIT = 2
MAX_FRAME_PAYLOAD = 1 << 26  # refuse to buffer more than 64 MiB per frame


@dataclass
class _Pending:
    frame: bytes
    client_id: bytes
    ts: float
    event: threading.Event = field(default_factory=threading.Event)
    response: bytes | None = None


class PctService:
    """Queueing front end around one Enclave instance."""

    def __init__(self, enclave: Enclave, mode: str = MODE_STPSI,
                 cfg: PsiConfig | None = None, *,
                 batch_size: int = DEFAULT_BATCH_SIZE,
                 batch_timeout_s: float = DEFAULT_BATCH_TIMEOUT_S,
                 daily_limit: int = DEFAULT_DAILY_LIMIT,
                 clock=time.time):
        if batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if batch_timeout_s <= 0:
            raise ValueError("batch_timeout_s must be positive")
        if daily_limit < 1:
            raise ValueError("daily_limit must be at least 1")
        self.enclave = enclave
        self.mode = mode
        self.cfg = cfg if cfg is not None else PsiConfig()
        self.batch_size = batch_size
        self.batch_timeout_s = batch_timeout_s
        self.daily_limit = daily_limit
        self.batches_run = 0
        self._clock = clock
        self._day: int | None = None
        self._day_counts: dict[bytes, int] = {}
        self._queue: list[_Pending] = []
        self._cond = threading.Condition()
        self._stop = False
        self._worker = threading.Thread(target=self._run_worker, daemon=True)
        self._worker.start()

    # -- request admission

    def _allow(self, client_id: bytes) -> bool:
        day = int(self._clock() // 86400)
        with self._cond:
            if day != self._day:
                self._day = day
                self._day_counts = {}
            n = self._day_counts.get(client_id, 0)
            if n >= self.daily_limit:
                return False
            self._day_counts[client_id] = n + 1
            return True

    def submit(self, frame: bytes) -> bytes:
        """Handle one wire frame, blocking until its reply exists."""
        if len(frame) < HEADER_LEN:
            return encode_error(b"\x00" * 16, ERR_MALFORMED, "frame too short")
        magic, _version, client_id, _, nonce, _count, _width = HEADER.unpack(
            frame[:HEADER_LEN])
        try:
            expect = payload_length(frame[:HEADER_LEN])
        except ValueError as e:
            return encode_error(b"\x00" * 16, ERR_MALFORMED, str(e))
        if len(frame) - HEADER_LEN != expect:
            return encode_error(client_id, ERR_MALFORMED,
                                "frame length does not match header")
        if magic == MAGIC_HELLO:
            return self._handshake(client_id, nonce, frame[HEADER_LEN:])
        if magic != MAGIC_QUERY:
            return encode_error(client_id, ERR_MALFORMED,
                                f"unexpected frame magic {magic!r}")
        if not self._allow(client_id):
            return encode_error(client_id, ERR_RATE_LIMIT,
                                f"daily request limit ({self.daily_limit}) reached")
        p = _Pending(frame, client_id, time.monotonic())
        with self._cond:
            if self._stop:
                return encode_error(client_id, ERR_INTERNAL, "service stopped")
            self._queue.append(p)
            self._cond.notify_all()
        p.event.wait()
        assert p.response is not None
        return p.response

    def _handshake(self, client_id: bytes, client_nonce: bytes,
                   payload: bytes) -> bytes:
        if len(payload) != 32:
            return encode_error(client_id, ERR_MALFORMED,
                                "handshake payload must be a 32-byte public key")
        try:
            record = self.enclave.handshake(payload, client_nonce)
        except Exception as e:
            return encode_error(client_id, ERR_MALFORMED, str(e))
        return encode_hello_reply(client_id, record, self.enclave.params)

    # -- batch worker

    def _ready_locked(self) -> bool:
        if not self._queue:
            return False
        if len(self._queue) >= self.batch_size:
            return True
        return time.monotonic() - self._queue[0].ts >= self.batch_timeout_s

    def _run_worker(self):
        while True:
            with self._cond:
                while not self._stop and not self._ready_locked():
                    if self._queue:
                        wait = (self._queue[0].ts + self.batch_timeout_s
                                - time.monotonic())
                        self._cond.wait(max(wait, 0.0) + 1e-3)
                    else:
                        self._cond.wait()
                if self._stop and not self._queue:
                    return
                batch = self._queue[: self.batch_size]
                del self._queue[: len(batch)]
            self._execute(batch)

    def _execute(self, batch: list[_Pending]) -> None:
        try:
            result = self.enclave.run_batch([p.frame for p in batch],
                                            self.mode, self.cfg)
            self.batches_run += 1
            rejected = dict(result.rejected)
            responses = iter(result.responses)
            for i, p in enumerate(batch):
                if i in rejected:
                    p.response = encode_error(p.client_id, ERR_AUTH, rejected[i])
                else:
                    _, p.response = next(responses)
        except Exception as e:
            for p in batch:
                if p.response is None:
                    p.response = encode_error(p.client_id, ERR_INTERNAL, str(e))
        finally:
            for p in batch:
                p.event.set()

    def close(self):
        with self._cond:
            self._stop = True
            self._cond.notify_all()
        self._worker.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


# ---------------------------------------------------------------------------
# TCP transport


def _read_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


class PctServer:
    """Threaded TCP front end; one service, many persistent connections."""

    def __init__(self, service: PctService, host: str = "127.0.0.1", port: int = 0):
        self.service = service
        outer = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                sock = self.request
                while True:
                    header = _read_exact(sock, HEADER_LEN)
                    if header is None:
                        return
                    try:
                        n = payload_length(header)
                        if n > MAX_FRAME_PAYLOAD:
                            raise ValueError("frame payload too large")
                    except ValueError as e:
                        sock.sendall(encode_error(b"\x00" * 16, ERR_MALFORMED, str(e)))
                        return
                    payload = _read_exact(sock, n) if n else b""
                    if payload is None:
                        return
                    sock.sendall(outer.service.submit(header + payload))

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._tcp = Server((host, port), Handler)
        self.host, self.port = self._tcp.server_address[:2]
        self._thread = threading.Thread(target=self._tcp.serve_forever, daemon=True)

    def start(self) -> "PctServer":
        self._thread.start()
        return self

    def close(self):
        self._tcp.shutdown()
        self._tcp.server_close()
        self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()
        return False


def request_reply(host: str, port: int, frames: list[bytes],
                  timeout: float = 30.0) -> list[bytes]:
    """Small client helper: send frames on one connection, collect replies."""
    replies = []
    with socket.create_connection((host, port), timeout=timeout) as sock:
        for frame in frames:
            sock.sendall(frame)
            header = _read_exact(sock, HEADER_LEN)
            if header is None:
                raise ConnectionError("server closed the connection")
            n = payload_length(header)
            payload = _read_exact(sock, n) if n else b""
            if payload is None:
                raise ConnectionError("truncated reply")
            replies.append(header + payload)
    return replies
