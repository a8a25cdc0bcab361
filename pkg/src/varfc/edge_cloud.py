"""Edge client and cloud server exchanging VFCB streams over TCP.

Frames are a u32 LE byte count followed by the body. A request body is one
VFCB stream. A response body is either

    u16 class, u16 K, K x f32 probabilities, u32 decode us, u32 task us

or, on failure, u16 0xFFFF, u16 error code, UTF-8 message.
"""
from __future__ import annotations

import logging
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass

import numpy as np

from .autoencoder import LambdaRangeError
from .bench import TimingRecord, time_edge
from .bitstream import BadMagic, BadVersion, BitstreamError, TableMismatch, Truncated
from .model import VariableRateModel
from .tensor import log_softmax

log = logging.getLogger(__name__)

ERROR_MARK = 0xFFFF
MAX_FRAME = 1 << 24
ERR_MALFORMED, ERR_MAGIC, ERR_VERSION, ERR_TABLES, ERR_TRUNCATED, ERR_INTERNAL = 1, 2, 3, 4, 5, 6
_ERROR_CODES = {BadMagic: ERR_MAGIC, BadVersion: ERR_VERSION, TableMismatch: ERR_TABLES,
                Truncated: ERR_TRUNCATED}
ERROR_NAMES = {ERR_MALFORMED: "malformed", ERR_MAGIC: "magic", ERR_VERSION: "version",
               ERR_TABLES: "tables", ERR_TRUNCATED: "truncated", ERR_INTERNAL: "internal"}


class NetworkError(ConnectionError):
    """Transport failure: unreachable server, reset, short read."""


class ProtocolError(RuntimeError):
    """The server answered with an error response."""

    def __init__(self, code: int, message: str):
        super().__init__(f"server error {ERROR_NAMES.get(code, code)}: {message}")
        self.code = code


@dataclass
class Response:
    label: int
    probs: np.ndarray
    decode_us: int
    task_us: int


def frame(body: bytes) -> bytes:
    return struct.pack("<I", len(body)) + body


def encode_response(r: Response) -> bytes:
    probs = np.asarray(r.probs, "<f4")
    return (struct.pack("<HH", r.label, probs.size) + probs.tobytes()
            + struct.pack("<II", min(r.decode_us, 0xFFFFFFFF), min(r.task_us, 0xFFFFFFFF)))


def encode_error(code: int, message: str) -> bytes:
    return struct.pack("<HH", ERROR_MARK, code) + message.encode("utf-8")


def decode_response(body: bytes) -> Response:
    if len(body) < 4:
        raise ProtocolError(ERR_MALFORMED, "short response")
    label, k = struct.unpack_from("<HH", body)
    if label == ERROR_MARK:
        raise ProtocolError(k, body[4:].decode("utf-8", "replace"))
    if len(body) != 4 + 4 * k + 8:
        raise ProtocolError(ERR_MALFORMED, "response length does not match class count")
    probs = np.frombuffer(body, "<f4", count=k, offset=4).astype(np.float32)
    dec, task = struct.unpack_from("<II", body, 4 + 4 * k)
    return Response(label, probs, dec, task)


def recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks, got = [], 0
    while got < n:
        c = sock.recv(min(n - got, 1 << 16))
        if not c:
            raise NetworkError(f"connection closed after {got} of {n} bytes")
        chunks.append(c)
        got += len(c)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> bytes:
    (n,) = struct.unpack("<I", recv_exact(sock, 4))
    if n > MAX_FRAME:
        raise NetworkError(f"frame of {n} bytes exceeds limit")
    return recv_exact(sock, n)


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(np.asarray(logits, np.float32))).astype(np.float32)


def cloud_infer(model: VariableRateModel, stream: bytes) -> Response:
    """Server-side pipeline: unpack + rANS decode, then autoencoder decode + back-end."""
    t0 = time.perf_counter()
    symbols, lam, _ = model.unpack(stream)
    t1 = time.perf_counter()
    logits = model.decode_symbols(symbols[None], lam)[0]
    t2 = time.perf_counter()
    probs = softmax(logits)
    return Response(int(logits.argmax()), probs, int((t1 - t0) * 1e6), int((t2 - t1) * 1e6))


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        srv: CloudServer = self.server  # type: ignore[assignment]
        sock = self.request
        while True:
            try:
                body = read_frame(sock)
            except (NetworkError, OSError):
                return
            srv.bytes_received += len(body)
            srv.requests += 1
            try:
                reply = encode_response(cloud_infer(srv.model, body))
            except BitstreamError as e:
                reply = encode_error(_ERROR_CODES.get(type(e), ERR_MALFORMED), str(e))
            except Exception as e:  # keep serving after a bad request
                log.exception("request failed")
                reply = encode_error(ERR_INTERNAL, f"{type(e).__name__}: {e}")
            try:
                sock.sendall(frame(reply))
            except OSError:
                return


class CloudServer(socketserver.TCPServer):
    """Sequential server: one connection, one request at a time."""

    allow_reuse_address = True

    def __init__(self, model: VariableRateModel, address=("127.0.0.1", 0)):
        model.require_tables()
        self.model = model
        self.bytes_received = 0
        self.requests = 0
        super().__init__(address, _Handler)

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


def serve(address: str, model_file, ready=None) -> None:
    """Load ``model_file`` and serve on ``host:port`` until interrupted."""
    model = VariableRateModel.load(model_file)
    with CloudServer(model, parse_addr(address)) as srv:
        log.info("serving Config.%d on %s (tables %08x)", model.config_k, srv.address, model.tables.checksum)
        if ready is not None:
            ready(srv)
        srv.serve_forever()


def parse_addr(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must be host:port, got {address!r}")
    return host or "127.0.0.1", int(port)


@dataclass
class RemoteResult:
    label: int
    probs: np.ndarray
    timing: TimingRecord
    bpp: float
    stream_bytes: int
    wire_bytes: int
    decode_us: int
    task_us: int


class EdgeClient:
    """Runs front-end, encoder and rANS locally, sends the stream to a cloud server."""

    def __init__(self, model: VariableRateModel, address: str, timeout: float = 30.0):
        self.model = model
        self.address = address
        self.timeout = timeout
        self.bytes_sent = 0
        self._sock: socket.socket | None = None

    def connect(self) -> None:
        try:
            self._sock = socket.create_connection(parse_addr(self.address), timeout=self.timeout)
        except OSError as e:
            raise NetworkError(f"cannot reach {self.address}: {e}") from e

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def __enter__(self):
        self.connect()
        return self

    def __exit__(self, *exc):
        self.close()

    def send_stream(self, stream: bytes) -> Response:
        if self._sock is None:
            self.connect()
        data = frame(stream)
        try:
            self._sock.sendall(data)
            body = read_frame(self._sock)
        except OSError as e:
            raise NetworkError(str(e)) from e
        self.bytes_sent += len(data)
        return decode_response(body)

    def infer(self, image: np.ndarray, lam: float) -> RemoteResult:
        lo, hi = self.model.lambda_range
        if not lo * (1 - 1e-6) <= lam <= hi * (1 + 1e-6):
            raise LambdaRangeError(f"lambda {lam} outside [{lo}, {hi}]; nothing sent")
        stream, cls_ms, comp_ms, enc_ms = time_edge(self.model, image, lam)
        r = self.send_stream(stream)
        _, h, w = self.model.spec.input_shape
        return RemoteResult(r.label, r.probs, TimingRecord(cls_ms, comp_ms, enc_ms),
                            8.0 * len(stream) / (h * w), len(stream), len(stream) + 4,
                            r.decode_us, r.task_us)


def infer_remote(image: np.ndarray, lam: float, address: str, model: VariableRateModel) -> RemoteResult:
    with EdgeClient(model, address) as client:
        return client.infer(image, lam)
