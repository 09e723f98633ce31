"""The untrusted server: a label -> ciphertext map plus its access log.

Everything the server sees goes through :class:`MemoryBackend`, which
appends one :class:`TraceEvent` per label touched.  The same store can be
served over TCP with a small length-prefixed protocol; :class:`RemoteBackend`
is a drop-in client.

Wire format (little-endian)::

    frame    = len:u32  opcode:u8  payload        (len counts opcode+payload)
    0x01 GET     count:u32  count * label[16]
    0x81 GET ok  count:u32  count * (clen:u32 ciphertext)
    0x02 PUT     count:u32  count * (label[16] clen:u32 ciphertext)
    0x82 PUT ok  (empty)
    0x03 DEL     count:u32  count * label[16]
    0x83 DEL ok  (empty)
    0x7F error   code:u8

Persistence file: ``b"SWKV"``, version:u16, clen:u32, count:u64, then
``count`` entries of ``label[16] ciphertext[clen]``.
"""

from __future__ import annotations

import csv
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, field

from .crypto import LABEL_SIZE

OP_GET = 0x01
OP_PUT = 0x02
OP_DELETE = 0x03
OP_ERROR = 0x7F
REPLY = 0x80

ERR_MISSING_LABEL = 1
ERR_BAD_FRAME = 2
ERR_UNKNOWN_OPCODE = 3

MAGIC = b"SWKV"
FILE_VERSION = 1
MAX_FRAME = 1 << 30

_U32 = struct.Struct("<I")
_HEADER = struct.Struct("<4sHIQ")


class MissingLabelError(KeyError):
    """A requested label is not stored."""


class ProtocolError(RuntimeError):
    """Malformed frame or unexpected reply."""


@dataclass(frozen=True)
class TraceEvent:
    slot: int
    label: bytes
    op: str


@dataclass
class AccessTrace:
    """Append-only log of server-visible accesses."""

    events: list = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _requests: int = 0

    def record(self, labels, op: str):
        with self._lock:
            slot = self._requests
            self._requests += 1
            self.events.extend(TraceEvent(slot, bytes(lb), op) for lb in labels)

    def __len__(self):
        return len(self.events)

    def labels(self, op: str | None = "read") -> list:
        return [e.label for e in self.events if op is None or e.op == op]

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["slot", "label_hex", "op"])
            for e in self.events:
                w.writerow([e.slot, e.label.hex(), e.op])

    @classmethod
    def from_csv(cls, path) -> "AccessTrace":
        t = cls()
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                t.events.append(TraceEvent(int(row["slot"]), bytes.fromhex(row["label_hex"]), row["op"]))
        t._requests = t.events[-1].slot + 1 if t.events else 0
        return t


class MemoryBackend:
    """In-process store; each batch call is atomic."""

    def __init__(self, trace: AccessTrace | None = None):
        self.data = {}
        self.trace = trace if trace is not None else AccessTrace()
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.data)

    def get_batch(self, labels) -> list:
        labels = [bytes(lb) for lb in labels]
        with self._lock:
            missing = [lb for lb in labels if lb not in self.data]
            if missing:
                raise MissingLabelError(missing[0].hex())
            out = [self.data[lb] for lb in labels]
            self.trace.record(labels, "read")
        return out

    def put_batch(self, entries):
        entries = [(bytes(lb), bytes(ct)) for lb, ct in entries]
        with self._lock:
            for lb, ct in entries:
                self.data[lb] = ct
            self.trace.record([lb for lb, _ in entries], "write")

    def delete_batch(self, labels):
        labels = [bytes(lb) for lb in labels]
        with self._lock:
            for lb in labels:
                self.data.pop(lb, None)
            self.trace.record(labels, "delete")

    def payload_bytes(self) -> int:
        return sum(len(ct) for ct in self.data.values())

    def persist(self, path):
        with self._lock:
            items = sorted(self.data.items())
        lengths = {len(ct) for _, ct in items}
        if len(lengths) > 1:
            raise ValueError("ciphertexts of unequal length cannot be persisted")
        clen = lengths.pop() if lengths else 0
        with open(path, "wb") as f:
            f.write(_HEADER.pack(MAGIC, FILE_VERSION, clen, len(items)))
            for lb, ct in items:
                f.write(lb)
                f.write(ct)

    def restore(self, path):
        with open(path, "rb") as f:
            head = f.read(_HEADER.size)
            if len(head) != _HEADER.size:
                raise ValueError("truncated store file")
            magic, version, clen, count = _HEADER.unpack(head)
            if magic != MAGIC or version != FILE_VERSION:
                raise ValueError("not a store file or unsupported version")
            data = {}
            for _ in range(count):
                lb = f.read(LABEL_SIZE)
                ct = f.read(clen)
                if len(lb) != LABEL_SIZE or len(ct) != clen:
                    raise ValueError("truncated store file")
                data[lb] = ct
        with self._lock:
            self.data = data

    @classmethod
    def load(cls, path) -> "MemoryBackend":
        b = cls()
        b.restore(path)
        return b


# -- wire protocol --------------------------------------------------------


def encode_frame(opcode: int, payload: bytes = b"") -> bytes:
    return _U32.pack(len(payload) + 1) + bytes([opcode]) + payload


def _recv_exact(sock, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        buf += chunk
    return bytes(buf)


def read_frame(sock):
    """Returns ``(opcode, payload)``; ``None`` on clean EOF."""
    head = sock.recv(4)
    if not head:
        return None
    if len(head) < 4:
        head += _recv_exact(sock, 4 - len(head))
    (n,) = _U32.unpack(head)
    if n < 1 or n > MAX_FRAME:
        raise ProtocolError(f"bad frame length {n}")
    body = _recv_exact(sock, n)
    return body[0], body[1:]


def encode_labels(labels) -> bytes:
    labels = list(labels)
    for lb in labels:
        if len(lb) != LABEL_SIZE:
            raise ValueError("labels are 16 bytes")
    return _U32.pack(len(labels)) + b"".join(labels)


def decode_labels(payload: bytes) -> list:
    (count,) = _U32.unpack_from(payload)
    if len(payload) != 4 + count * LABEL_SIZE:
        raise ProtocolError("label list length mismatch")
    return [payload[4 + i * LABEL_SIZE: 4 + (i + 1) * LABEL_SIZE] for i in range(count)]


def encode_blobs(blobs) -> bytes:
    parts = [_U32.pack(len(blobs))]
    for b in blobs:
        parts.append(_U32.pack(len(b)))
        parts.append(b)
    return b"".join(parts)


def decode_blobs(payload: bytes) -> list:
    (count,) = _U32.unpack_from(payload)
    out, pos = [], 4
    for _ in range(count):
        (n,) = _U32.unpack_from(payload, pos)
        pos += 4
        out.append(payload[pos:pos + n])
        pos += n
    if pos != len(payload):
        raise ProtocolError("trailing bytes in blob list")
    return out


def encode_entries(entries) -> bytes:
    entries = list(entries)
    parts = [_U32.pack(len(entries))]
    for lb, ct in entries:
        if len(lb) != LABEL_SIZE:
            raise ValueError("labels are 16 bytes")
        parts += [lb, _U32.pack(len(ct)), ct]
    return b"".join(parts)


def decode_entries(payload: bytes) -> list:
    (count,) = _U32.unpack_from(payload)
    out, pos = [], 4
    for _ in range(count):
        lb = payload[pos:pos + LABEL_SIZE]
        (n,) = _U32.unpack_from(payload, pos + LABEL_SIZE)
        pos += LABEL_SIZE + 4
        out.append((lb, payload[pos:pos + n]))
        pos += n
    if pos != len(payload):
        raise ProtocolError("trailing bytes in entry list")
    return out


def handle_request(store: MemoryBackend, opcode: int, payload: bytes) -> bytes:
    """Server-side dispatch; returns the full reply frame."""
    try:
        if opcode == OP_GET:
            return encode_frame(OP_GET | REPLY, encode_blobs(store.get_batch(decode_labels(payload))))
        if opcode == OP_PUT:
            store.put_batch(decode_entries(payload))
            return encode_frame(OP_PUT | REPLY)
        if opcode == OP_DELETE:
            store.delete_batch(decode_labels(payload))
            return encode_frame(OP_DELETE | REPLY)
        return encode_frame(OP_ERROR, bytes([ERR_UNKNOWN_OPCODE]))
    except MissingLabelError:
        return encode_frame(OP_ERROR, bytes([ERR_MISSING_LABEL]))
    except (ProtocolError, struct.error):
        return encode_frame(OP_ERROR, bytes([ERR_BAD_FRAME]))


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        while True:
            try:
                frame = read_frame(self.request)
            except (ConnectionError, ProtocolError):
                return
            if frame is None:
                return
            self.request.sendall(handle_request(self.server.store, *frame))


class BackendServer(socketserver.ThreadingTCPServer):
    """TCP front for a :class:`MemoryBackend`.  Port 0 picks a free port."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, store: MemoryBackend, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _Handler)
        self.store = store

    @property
    def address(self):
        return self.server_address[:2]

    def start(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t


class RemoteBackend:
    """Client for :class:`BackendServer` with the MemoryBackend batch interface."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self._lock = threading.Lock()

    def _call(self, opcode: int, payload: bytes) -> bytes:
        with self._lock:
            self.sock.sendall(encode_frame(opcode, payload))
            frame = read_frame(self.sock)
        if frame is None:
            raise ConnectionError("server closed the connection")
        op, body = frame
        if op == OP_ERROR:
            code = body[0] if body else 0
            if code == ERR_MISSING_LABEL:
                raise MissingLabelError("server reported a missing label")
            raise ProtocolError(f"server error code {code}")
        if op != opcode | REPLY:
            raise ProtocolError(f"unexpected reply opcode {op:#x}")
        return body

    def get_batch(self, labels) -> list:
        return decode_blobs(self._call(OP_GET, encode_labels([bytes(x) for x in labels])))

    def put_batch(self, entries):
        self._call(OP_PUT, encode_entries([(bytes(a), bytes(b)) for a, b in entries]))

    def delete_batch(self, labels):
        self._call(OP_DELETE, encode_labels([bytes(x) for x in labels]))

    def close(self):
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def parse_address(text: str):
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)
