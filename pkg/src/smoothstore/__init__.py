"""Encrypted key-value and range store with access-pattern smoothing.

A trusted proxy keeps keys, bucket tags and smoothing state; an untrusted
server holds only labels and ciphertexts.  Every batch touches a fixed
number of replicas drawn so that each stored replica is read at the same
rate, pending requests leave a random sampling pool rather than a queue,
and inserts are merged into the store through a differentially oblivious
merge.
"""

from .backend import AccessTrace, BackendServer, MemoryBackend, RemoteBackend
from .config import RunConfig, make_rng
from .crypto import IntegrityError, KeyPair
from .domerge import compute_bin_capacity, do_merge2, k_way_do_merge
from .dynamize import BinomialLevels, decompose_oracle
from .osort import oblivious_shuffle, oblivious_sort
from .pool import FifoQueue, SamplingPool, WeightPolicy
from .proxy import KVStore, RangeStore, Ticket
from .rangestore import ConfigurationError
from .smoothing import init_smoothing

__version__ = "0.1.0"

__all__ = [
    "AccessTrace", "BackendServer", "BinomialLevels", "ConfigurationError", "FifoQueue",
    "IntegrityError", "KVStore", "KeyPair", "MemoryBackend", "RangeStore", "RemoteBackend",
    "RunConfig", "SamplingPool", "Ticket", "WeightPolicy", "compute_bin_capacity",
    "decompose_oracle", "do_merge2", "init_smoothing", "k_way_do_merge", "make_rng",
    "oblivious_shuffle", "oblivious_sort",
]
