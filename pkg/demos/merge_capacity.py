"""Bin capacity for the oblivious merge.

The merge throws each record into one of 2n/Z bins; a bin overflowing its
capacity aborts the merge.  The capacity search finds the smallest
capacity whose overflow probability stays under the failure target and
compares it with the closed-form bound.

The bin count is rounded up, so feasibility is not monotone in the
capacity and the column below jumps around as Z changes.  The search
guarantees that the capacity one lattice step lower fails, not that no
smaller feasible capacity exists anywhere.

    python demos/merge_capacity.py
"""

from smoothstore import compute_bin_capacity

print("   Z  eps  lambda  capacity  bound  failure_prob")
for z in (64, 256, 512, 1024):
    for eps in (0.5, 1.0, 2.0):
        r = compute_bin_capacity(z, eps, 512)
        print(f"{z:4d}  {eps:3.1f}  {512:6d}  {r.xi:8d}  {r.xi_theory:5d}  {r.failure_prob:.3g}")
