import numpy as np
import pytest

from smoothstore import IntegrityError, KeyPair, KVStore, MemoryBackend, RangeStore
from smoothstore.experiments import kv_store, range_store
from smoothstore.rangestore import ConfigurationError


def keys_of(result):
    return [int(k) for k in result["key"]]


def test_kv_read_returns_initial_value():
    store = kv_store([0.5, 0.3, 0.2], seed=1, theta=2)
    t = store.get(2)
    store.run_until_idle()
    assert t.done and t.result == (2).to_bytes(8, "little")
    assert t.latency >= 1


def test_kv_reads_see_preceding_writes():
    rng = np.random.default_rng(2)
    store = kv_store(np.full(6, 1 / 6), seed=2, theta=3)
    truth = {k: k.to_bytes(8, "little") for k in range(6)}
    checks = []
    for step in range(600):
        key = int(rng.integers(6))
        if rng.random() < 0.4:
            v = rng.bytes(8)
            store.put(key, v)
            truth[key] = v
        else:
            checks.append((store.get(key), truth[key]))
        if step % 2:
            store.tick()
    store.run_until_idle()
    assert all(t.result == want for t, want in checks)


def test_kv_batches_have_fixed_size():
    store = kv_store([0.7, 0.3], seed=3, theta=1, batch_size=4)
    for _ in range(20):
        store.tick()
    assert len(store.backend.trace.labels("read")) == 80


def test_kv_rejects_unknown_key():
    store = kv_store([1.0], seed=4, theta=0)
    with pytest.raises(KeyError):
        store.get(1)
    with pytest.raises(ConfigurationError):
        KVStore([b"a", b"b"], pi=[1.0], keys=KeyPair.from_seed(0))


def test_kv_detects_tampering():
    store = kv_store([0.5, 0.5], seed=5, theta=1)
    backend = store.backend
    label = next(iter(backend.data))
    ct = bytearray(backend.data[label])
    ct[-1] ^= 1
    backend.data[label] = bytes(ct)
    with pytest.raises(IntegrityError):
        for _ in range(50):
            store.tick()


def test_kv_ciphertexts_change_every_batch():
    store = kv_store([0.5, 0.5], seed=6, theta=1, batch_size=1)
    before = dict(store.backend.data)
    store.tick()
    label = store.backend.trace.labels("read")[-1]
    assert store.backend.data[label] != before[label]


def test_range_query_matches_oracle():
    store = range_store(n=600, domain=5000, z=16, seed=7, k=3)
    stored = set()
    for lid in store.components:
        if lid is not None:
            stored.update(keys_of(store._fetch(store.levels[lid])))
    stored.update(int(r["key"]) for r in store.buffer.records())
    rng = np.random.default_rng(8)
    tickets = []
    for _ in range(60):
        l, r = sorted(int(x) for x in rng.integers(1, 5001, 2))
        tickets.append((store.query(l, r), l, r))
        store.tick()
    store.run_until_idle()
    for t, l, r in tickets:
        assert keys_of(t.result) == sorted(k for k in stored if l <= k <= r)
    assert len(stored) == 600


def test_range_store_dynamic_against_dict():
    store = RangeStore(z=4, value_len=4, domain=200, k=2, rng=np.random.default_rng(9),
                       merge_rng=np.random.default_rng(10), keys=KeyPair.from_seed(9), theta=2)
    truth = {}
    rng = np.random.default_rng(11)
    checks = []
    for step in range(400):
        key = int(rng.integers(1, 201))
        u = rng.random()
        if u < 0.5:
            v = rng.bytes(4)
            store.insert(key, v)
            truth[key] = v
        elif u < 0.65:
            store.delete(key)
            truth.pop(key, None)
        else:
            l, r = sorted(int(x) for x in rng.integers(1, 201, 2))
            want = {k: v for k, v in truth.items() if l <= k <= r}
            checks.append((store.query(l, r), want))
        if step % 3 == 0:
            store.tick()
    store.run_until_idle()
    assert store.rebuilds
    for t, want in checks:
        got = {int(r["key"]): r["value"].tobytes() for r in t.result}
        assert got == want


def test_range_query_validation():
    store = RangeStore(z=4, domain=100, keys=KeyPair.from_seed(0))
    with pytest.raises(ValueError):
        store.query(5, 4)
    with pytest.raises(ValueError):
        store.insert(0)
    t = store.query(1, 100)
    assert t.done and len(t.result) == 0


def test_load_only_once():
    store = range_store(n=40, domain=100, z=8, seed=12, k=2)
    with pytest.raises(RuntimeError):
        store.load([1, 2])


def test_pickled_proxy_drops_backend():
    import pickle
    store = kv_store([0.5, 0.5], seed=13, theta=1)
    clone = pickle.loads(pickle.dumps(store))
    assert clone.backend is None
    clone.backend = store.backend
    t = clone.get(1)
    clone.run_until_idle()
    assert t.result == (1).to_bytes(8, "little")


def test_resident_bytes_is_small_relative_to_payload():
    store = range_store(n=5000, domain=1 << 20, z=64, seed=14, k=2, value_len=64,
                        backend=MemoryBackend())
    assert sum(store.resident_bytes().values()) < 0.05 * store.server_payload_bytes()
