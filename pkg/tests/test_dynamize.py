import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smoothstore.dynamize import (INF, BinomialLevels, InsertBuffer, decompose_oracle, level_units, merge_key,
                                  merge_records, privacy_per_rebuild, purge)
from smoothstore.rangestore import FLAG_TOMBSTONE, ConfigurationError, make_records


def test_setup():
    assert BinomialLevels(3).D == [0, 1, 2, INF]
    assert BinomialLevels(1).D == [0, INF]
    assert sum(BinomialLevels(3).units()) == 0
    with pytest.raises(ConfigurationError):
        BinomialLevels(0)


def test_oracle_examples():
    assert decompose_oracle(9, 3) == (2, 3, 4)
    assert decompose_oracle(10, 3) == (0, 1, 5)
    assert decompose_oracle(0, 4) == (0, 1, 2, 3)


@given(st.integers(0, 5000), st.integers(1, 8))
def test_oracle_is_a_decomposition(t, k):
    D = decompose_oracle(t, k)
    assert sum(math.comb(d, i + 1) for i, d in enumerate(D)) == t
    assert all(a < b for a, b in zip(D, D[1:]))


def test_first_bucket():
    lv = BinomialLevels(3)
    ev = lv.advance()
    assert lv.digits == decompose_oracle(1, 3) == (0, 1, 3)
    assert lv.units() == [0, 0, 1]
    assert ev.destroyed == [0, 1, 2] and ev.new_level == 2


def test_fig_transition():
    lv = BinomialLevels(3)
    for _ in range(9):
        lv.advance()
    assert lv.digits == (2, 3, 4)
    ev = lv.advance(z=4)
    assert lv.digits == (0, 1, 5)
    assert ev.touched_records == 4 * (9 + 1)


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_incremental_matches_oracle(k):
    lv = BinomialLevels(k)
    for t in range(1, 600):
        lv.advance()
        assert lv.digits == decompose_oracle(t, k)
        assert sum(lv.units()) == t


def test_level_units():
    assert level_units((2, 3, 4)) == [2, 3, 4]
    assert level_units((0, 1, 5)) == [0, 0, 10]


def test_buffer_flushes_at_z():
    buf = InsertBuffer(3, 4)
    assert buf.add(5, b"a", 0) is None
    assert buf.add(2, b"b", 1) is None
    out = buf.add(9, b"c", 2, tombstone=True)
    assert out["key"].tolist() == [2, 5, 9]
    assert out["flags"][2] & FLAG_TOMBSTONE
    assert len(buf) == 0


def test_buffer_rejects_bad_key():
    with pytest.raises(ValueError):
        InsertBuffer(2, 4).add(0, b"", 0)


def test_merge_key_orders_key_then_seq():
    recs = make_records([3, 1, 3], seqs=[7, 9, 2])
    assert np.argsort(merge_key(recs)).tolist() == [1, 2, 0]


def test_merge_records():
    a = make_records([1, 4, 9], seqs=[0, 1, 2])
    b = make_records([2, 4], seqs=[3, 4])
    out = merge_records([a, b], 8, 1.0, np.random.default_rng(0))
    assert out["key"].tolist() == [1, 2, 4, 4, 9]
    assert out["seq"].tolist() == [0, 3, 1, 4, 2]


def test_purge():
    recs = make_records([1, 1, 2, 3], seqs=[0, 5, 1, 6], tombstones=[False, False, False, True])
    assert purge(recs)["key"].tolist() == [1, 2]
    assert purge(recs, keep_tombstones=True)["key"].tolist() == [1, 2, 3]
    # a reader below seq 5 still needs the old version of key 1, and the
    # tombstone is newer than that reader
    assert purge(recs, watermark=5)["seq"].tolist() == [0, 5, 1, 6]


def test_privacy_per_rebuild():
    assert privacy_per_rebuild(1.0, 4) == 2.0
    assert privacy_per_rebuild(0.5, 1) == 0.0
