"""A dynamic range store: bulk load, queries, inserts, deletes.

Records live in buckets of Z sorted keys.  Inserts collect at the proxy
until a full bucket is ready, then k-binomial rebuilds merge it into the
smaller components with the differentially oblivious merge.  Each rebuild
spends eps of the merge budget per merge round.  Queries in flight across
a rebuild are moved onto the new component and still see every write
issued before them.

    python demos/dynamic_ranges.py
"""

import numpy as np

from smoothstore.experiments import range_store

store = range_store(n=3000, domain=50_000, z=32, seed=2, k=3, batch_size=4)
print("after bulk load: components", [lid for lid in store.components],
      "digits", store.bookkeeping.digits, "buckets", store.live_buckets())

rng = np.random.default_rng(0)
truth = {}
t = store.query(1000, 2000)
store.run_until_idle()
before = len(t.result)
print(f"query [1000, 2000]: {before} records after {t.latency} batches")

for _ in range(500):
    key = int(rng.integers(1000, 2001))
    if rng.random() < 0.8:
        store.insert(key, b"new")
        truth[key] = True
    else:
        store.delete(key)
        truth[key] = False
    store.tick()

t = store.query(1000, 2000)
store.run_until_idle()
fresh = sum(1 for r in t.result if r["value"].tobytes().rstrip(b"\0") == b"new")
print(f"after 500 writes: {len(t.result)} records, {fresh} written by us, "
      f"{sum(truth.values())} expected")
print(f"rebuilds={len(store.rebuilds)}  digits={store.bookkeeping.digits}  "
      f"merge budget spent={store.privacy_spent:.0f}")
print("records rewritten per rebuild:", [e.touched_records for e in store.rebuilds][:12], "...")

trace = store.backend.trace
print(f"server saw {len(trace.labels('read'))} reads in {store.batches} batches "
      f"of {store.batch_size}, plus {len(trace.labels('write'))} writes")
