"""Correlated point queries with and without the sampling pool.

A client walks a three-key Markov chain (k0 -> k1 -> k0 mostly, rare
k2).  The matrices fold replicas into their bucket (fake slots into "f")
and show pair frequencies scaled so a uniform trace is all ones.

Things to look for:

* the k0/k1 off-diagonal excess at small theta is the chain showing
  through;
* with only six slots, the pool's rule that one batch never holds the
  same replica twice also depresses the diagonal, so theta=1 can look
  worse than theta=0;
* at theta=4 the rsd sits close to the i.i.d. baseline printed last,
  i.e. what remains is the same dedup effect an uncorrelated client
  would produce.  Latency grows with theta.

    python demos/correlated_queries.py
"""

import numpy as np

from smoothstore.config import make_rng
from smoothstore.experiments import kv_store, run_point_queries
from smoothstore.leakage import aggregate, three_key_chain

N = 30_000

chain = three_key_chain()
pi = chain.stationary()
queries = chain.walk(N, make_rng(1, "workload"))
print("stationary law of the client:", np.round(pi, 3))
np.set_printoptions(precision=2, suppress=True)

for theta in (0, 1, 4):
    store = kv_store(pi, seed=1, theta=theta)
    run = run_point_queries(store, queries)
    st = store.state
    groups = [int(b) if b >= 0 else 3 for b in st.slot_bucket]
    m = aggregate(run.matrix, groups)
    # divide by what a uniform trace over the slots would give
    sizes = np.bincount(groups, minlength=4) / st.n_slots
    print(f"\ntheta={theta}  slots={st.n_slots}  rsd={run.rsd:.4f}  "
          f"mean latency={run.mean_latency:.2f} batches")
    print("       k0    k1    k2    f")
    for i, row in enumerate(m / np.outer(sizes, sizes)):
        print(["k0", "k1", "k2", "f "][i], row)

iid = make_rng(1, "iid").choice(3, size=N, p=pi)
run = run_point_queries(kv_store(pi, seed=1, theta=4), iid)
print(f"\ni.i.d. client, theta=4: rsd={run.rsd:.4f}")
