import socket
import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from smoothstore.backend import (ERR_BAD_FRAME, ERR_MISSING_LABEL, ERR_UNKNOWN_OPCODE, MAGIC, OP_DELETE,
                                 OP_ERROR, OP_GET, OP_PUT, REPLY, AccessTrace, BackendServer,
                                 MemoryBackend, MissingLabelError, ProtocolError, RemoteBackend,
                                 decode_blobs, decode_entries, decode_labels, encode_blobs, encode_entries,
                                 encode_frame, encode_labels, handle_request, parse_address, read_frame)

labels16 = st.binary(min_size=16, max_size=16)


def lbl(i):
    return i.to_bytes(16, "little")


def test_put_then_get():
    b = MemoryBackend()
    b.put_batch([(lbl(1), b"one"), (lbl(2), b"two")])
    assert b.get_batch([lbl(2), lbl(1)]) == [b"two", b"one"]


def test_batch_order_preserved():
    b = MemoryBackend()
    b.put_batch([(lbl(i), bytes([i])) for i in range(5)])
    order = [lbl(i) for i in (4, 0, 3, 1, 2)]
    assert b.get_batch(order) == [bytes([i]) for i in (4, 0, 3, 1, 2)]


def test_missing_label():
    b = MemoryBackend()
    with pytest.raises(MissingLabelError):
        b.get_batch([lbl(9)])
    # a failed batch leaves no trace entry
    assert len(b.trace) == 0


def test_delete_and_trace():
    b = MemoryBackend()
    b.put_batch([(lbl(1), b"x")])
    b.get_batch([lbl(1)])
    b.delete_batch([lbl(1)])
    assert len(b) == 0
    assert [e.op for e in b.trace.events] == ["write", "read", "delete"]
    assert [e.slot for e in b.trace.events] == [0, 1, 2]
    assert b.trace.labels("read") == [lbl(1)]


def test_trace_csv_round_trip(tmp_path):
    t = AccessTrace()
    t.record([lbl(1), lbl(2)], "read")
    t.record([lbl(3)], "write")
    t.to_csv(tmp_path / "t.csv")
    back = AccessTrace.from_csv(tmp_path / "t.csv")
    assert back.events == t.events
    back.record([lbl(4)], "read")
    assert back.events[-1].slot == 2


def test_persist_restore_bit_exact(tmp_path):
    b = MemoryBackend()
    b.put_batch([(lbl(i), bytes([i]) * 20) for i in range(50)])
    b.persist(tmp_path / "a.swkv")
    c = MemoryBackend.load(tmp_path / "a.swkv")
    assert c.data == b.data
    c.persist(tmp_path / "b.swkv")
    assert (tmp_path / "a.swkv").read_bytes() == (tmp_path / "b.swkv").read_bytes()
    head = (tmp_path / "a.swkv").read_bytes()[:18]
    assert head[:4] == MAGIC
    assert struct.unpack("<HIQ", head[4:]) == (1, 20, 50)


def test_restore_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ValueError):
        MemoryBackend.load(tmp_path / "bad")
    b = MemoryBackend()
    b.put_batch([(lbl(1), b"abc")])
    b.persist(tmp_path / "ok")
    (tmp_path / "cut").write_bytes((tmp_path / "ok").read_bytes()[:-1])
    with pytest.raises(ValueError):
        MemoryBackend.load(tmp_path / "cut")


def test_persist_rejects_unequal_lengths(tmp_path):
    b = MemoryBackend()
    b.put_batch([(lbl(1), b"a"), (lbl(2), b"bb")])
    with pytest.raises(ValueError):
        b.persist(tmp_path / "x")


@given(st.lists(labels16, max_size=20))
def test_label_codec(labels):
    assert decode_labels(encode_labels(labels)) == labels


@given(st.lists(st.binary(max_size=50), max_size=20))
def test_blob_codec(blobs):
    assert decode_blobs(encode_blobs(blobs)) == blobs


@given(st.lists(st.tuples(labels16, st.binary(max_size=50)), max_size=20))
def test_entry_codec(entries):
    assert decode_entries(encode_entries(entries)) == entries


def test_frame_layout():
    f = encode_frame(OP_GET, encode_labels([lbl(1)]))
    assert f[:4] == struct.pack("<I", 1 + 4 + 16) and f[4] == OP_GET


def test_codec_errors():
    with pytest.raises(ValueError):
        encode_labels([b"short"])
    with pytest.raises(ProtocolError):
        decode_labels(struct.pack("<I", 2) + bytes(16))
    with pytest.raises(ProtocolError):
        decode_blobs(encode_blobs([b"a"]) + b"junk")


def test_handle_request_errors():
    store = MemoryBackend()
    assert handle_request(store, OP_GET, encode_labels([lbl(1)])) == encode_frame(OP_ERROR, bytes([ERR_MISSING_LABEL]))
    assert handle_request(store, 0x42, b"") == encode_frame(OP_ERROR, bytes([ERR_UNKNOWN_OPCODE]))
    assert handle_request(store, OP_GET, b"\x01") == encode_frame(OP_ERROR, bytes([ERR_BAD_FRAME]))
    assert handle_request(store, OP_PUT, encode_entries([(lbl(1), b"v")])) == encode_frame(OP_PUT | REPLY)
    assert handle_request(store, OP_DELETE, encode_labels([lbl(1)])) == encode_frame(OP_DELETE | REPLY)


@pytest.fixture
def server():
    store = MemoryBackend()
    srv = BackendServer(store)
    srv.start()
    yield srv
    srv.shutdown()
    srv.server_close()


def test_remote_round_trip(server):
    with RemoteBackend(*server.address) as r:
        r.put_batch([(lbl(1), b"a" * 100), (lbl(2), b"")])
        assert r.get_batch([lbl(2), lbl(1)]) == [b"", b"a" * 100]
        with pytest.raises(MissingLabelError):
            r.get_batch([lbl(3)])
        r.delete_batch([lbl(1)])
        with pytest.raises(MissingLabelError):
            r.get_batch([lbl(1)])
    assert server.store.trace.labels("write") == [lbl(1), lbl(2)]


def test_raw_socket_unknown_opcode(server):
    with socket.create_connection(server.address) as s:
        s.sendall(encode_frame(0x33))
        assert read_frame(s) == (OP_ERROR, bytes([ERR_UNKNOWN_OPCODE]))


def test_parse_address():
    assert parse_address("example:99") == ("example", 99)
    assert parse_address(":7600") == ("127.0.0.1", 7600)
