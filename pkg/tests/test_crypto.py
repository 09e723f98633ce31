import pickle

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothstore.crypto import (LABEL_SIZE, BucketCipher, IntegrityError, KeyPair, label_for, open_bucket,
                                seal_bucket, sealed_size)

KEYS = KeyPair.from_seed(1)


def test_label_is_deterministic():
    assert label_for(KEYS.label_key, 0, 3, 1) == label_for(KEYS.label_key, 0, 3, 1)
    assert len(label_for(KEYS.label_key, 0, 3, 1)) == LABEL_SIZE


def test_labels_differ_by_replica_epoch_and_key():
    base = label_for(KEYS.label_key, 0, 3, 1)
    assert base != label_for(KEYS.label_key, 0, 3, 2)
    assert base != label_for(KEYS.label_key, 1, 3, 1)
    assert base != label_for(KeyPair.from_seed(2).label_key, 0, 3, 1)


def test_no_collisions_over_many_triples():
    rng = np.random.default_rng(0)
    triples = {tuple(int(x) for x in t) for t in rng.integers(0, 1 << 20, size=(100_000, 3))}
    labels = {label_for(KEYS.label_key, *t) for t in triples}
    assert len(labels) == len(triples)


@given(st.binary(max_size=300), st.binary(min_size=16, max_size=16))
@settings(max_examples=50)
def test_seal_round_trip(data, label):
    ct = seal_bucket(KEYS.seal_key, data, label)
    assert len(ct) == sealed_size(len(data))
    assert open_bucket(KEYS.seal_key, ct, label) == data


def test_bit_flip_is_detected():
    label = b"L" * 16
    ct = bytearray(seal_bucket(KEYS.seal_key, b"bucket payload", label))
    for pos in (0, 12, len(ct) - 1):
        bad = bytearray(ct)
        bad[pos] ^= 1
        with pytest.raises(IntegrityError):
            open_bucket(KEYS.seal_key, bytes(bad), label)


def test_wrong_label_is_rejected():
    ct = seal_bucket(KEYS.seal_key, b"x" * 40, b"a" * 16)
    with pytest.raises(IntegrityError):
        open_bucket(KEYS.seal_key, ct, b"b" * 16)


def test_truncated_ciphertext():
    with pytest.raises(IntegrityError):
        open_bucket(KEYS.seal_key, b"short", b"a" * 16)


def test_equal_length_buckets_seal_to_equal_length():
    a = seal_bucket(KEYS.seal_key, b"\x00" * 100, b"a" * 16)
    b = seal_bucket(KEYS.seal_key, b"\xff" * 100, b"b" * 16)
    assert len(a) == len(b)


def test_fresh_nonce_per_seal():
    c = BucketCipher(KEYS.seal_key)
    assert c.seal(b"same", b"l" * 16) != c.seal(b"same", b"l" * 16)


def test_cipher_pickles():
    c = BucketCipher(KEYS.seal_key)
    c2 = pickle.loads(pickle.dumps(c))
    assert c2.open(c.seal(b"hello", b"l" * 16), b"l" * 16) == b"hello"


def test_short_key_material_rejected():
    with pytest.raises(ValueError):
        KeyPair(b"short", b"x" * 32)


def test_seeded_keys_are_reproducible():
    assert KeyPair.from_seed(7) == KeyPair.from_seed(7)
    assert KeyPair.from_seed(7) != KeyPair.from_seed(8)
