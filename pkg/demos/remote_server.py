"""Proxy and storage server over TCP.

Starts a storage server on a free local port, points a range store at it
and runs a few queries.  The server only ever handles GET/PUT/DELETE of
16-byte labels and opaque blobs; its log of labels is what an observer
of the server would see.

    python demos/remote_server.py
"""

from smoothstore import BackendServer, MemoryBackend, RemoteBackend
from smoothstore.experiments import range_run, range_store

server_side = MemoryBackend()
server = BackendServer(server_side)
server.start()
host, port = server.address
print(f"server on {host}:{port}")

with RemoteBackend(host, port) as remote:
    store = range_store(n=2000, domain=100_000, z=64, seed=3, k=2, backend=remote)
    tickets = range_run(store, 50, seed=3)
    print("answers:", [len(t.result) for t in tickets[:10]], "...")
    print("mean latency:", sum(t.latency for t in tickets) / len(tickets), "batches")

events = server_side.trace.events
print(f"server log: {len(events)} events, {len(server_side)} ciphertexts stored")
print("first reads:", [e.label.hex()[:8] for e in events if e.op == "read"][:6])
server.shutdown()
server.server_close()
