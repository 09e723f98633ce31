"""Command-line front end.

The proxy's state (keys, tags, smoothing tables, pool) is pickled into a
state directory between invocations; the server side lives either in the
same directory (``memory``), in a named file (``file:PATH``) or behind a
TCP server started with ``smoothstore serve`` (``tcp:HOST:PORT``).

    smoothstore setup --csv data.csv --bucket-size 64 --value-len 16
    smoothstore query --range 10:200
    smoothstore capacity --z 512 --eps 1 --lambda 512
"""

from __future__ import annotations

import argparse
import csv
import pickle
import sys
import time
from pathlib import Path

from . import experiments
from .backend import AccessTrace, BackendServer, MemoryBackend, RemoteBackend, parse_address
from .config import RunConfig, make_rng, read_config_file
from .crypto import KeyPair
from .domerge import compute_bin_capacity
from .leakage import (frequencies, ideal_trace, latency_summary, ror_distinguish, rsd,
                      three_key_chain, transition_matrix, uniform_ranges, uniformity_test,
                      write_matrix_csv, write_summary_csv, zipf_weights)
from .pool import WeightPolicy
from .proxy import RangeStore
from .rangestore import ConfigurationError

PROXY_FILE = "proxy.pkl"
SERVER_FILE = "server.swkv"

# flag name -> RunConfig field
FLAGS = {
    "n": "n", "domain": "N", "value_len": "L", "bucket_size": "Z", "alpha": "alpha",
    "theta": "theta", "eps": "eps", "lam": "lam", "k": "k", "batch_size": "batch_size",
    "selectivity": "selectivity", "rate": "rate", "policy": "policy", "seed": "seed",
    "backend": "backend",
}


class FixedRateDriver:
    """Issues one batch per tick, at ``rate`` batches per second (0 = back to back).

    Batches go out whether or not anything is pending, so the server sees
    the same cadence under any load.
    """

    def __init__(self, proxy, rate: float = 0.0, clock=time.monotonic, sleep=time.sleep):
        self.proxy = proxy
        self.period = 1.0 / rate if rate > 0 else 0.0
        self.clock = clock
        self.sleep = sleep
        self._next = None
        self.ticks = 0

    def tick(self) -> list:
        if self.period:
            now = self.clock()
            if self._next is None:
                self._next = now
            if self._next > now:
                self.sleep(self._next - now)
            self._next += self.period
        self.ticks += 1
        return self.proxy.tick()

    def run(self, n: int) -> list:
        done = []
        for _ in range(n):
            done += self.tick()
        return done

    def run_until(self, predicate, max_ticks: int = 1_000_000) -> list:
        done = []
        for _ in range(max_ticks):
            if predicate():
                return done
            done += self.tick()
        raise RuntimeError(f"not finished after {max_ticks} batches")


# -- configuration and state ------------------------------------------------


def resolve_config(args) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = cfg.update(read_config_file(args.config))
    overrides = {}
    for flag, name in FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            overrides[name] = val
    return cfg.update(overrides) if overrides else cfg.validate()


def open_backend(cfg: RunConfig, state_dir: Path):
    kind, _, rest = cfg.backend.partition(":")
    if kind == "memory":
        path = state_dir / SERVER_FILE
        return MemoryBackend.load(path) if path.exists() else MemoryBackend()
    if kind == "file":
        path = Path(rest)
        return MemoryBackend.load(path) if path.exists() else MemoryBackend()
    if kind == "tcp":
        return RemoteBackend(*parse_address(rest))
    raise ConfigurationError(f"unknown backend {cfg.backend!r}")


def save_backend(cfg: RunConfig, backend, state_dir: Path):
    kind, _, rest = cfg.backend.partition(":")
    if kind == "memory":
        backend.persist(state_dir / SERVER_FILE)
    elif kind == "file":
        backend.persist(rest)
    elif kind == "tcp":
        backend.close()


def load_store(args):
    state_dir = Path(args.state)
    path = state_dir / PROXY_FILE
    if not path.exists():
        raise ConfigurationError(f"no store in {state_dir}; run `setup` first")
    with open(path, "rb") as f:
        store, cfg = pickle.load(f)
    store.backend = open_backend(cfg, state_dir)
    return store, cfg


def save_store(args, store, cfg):
    state_dir = Path(args.state)
    state_dir.mkdir(parents=True, exist_ok=True)
    backend = store.backend
    tmp = state_dir / (PROXY_FILE + ".tmp")
    with open(tmp, "wb") as f:
        pickle.dump((store, cfg), f)
    tmp.replace(state_dir / PROXY_FILE)
    save_backend(cfg, backend, state_dir)


def new_store(cfg: RunConfig, n_records: int, backend=None) -> RangeStore:
    return RangeStore(z=cfg.Z, value_len=cfg.L, domain=cfg.N, k=cfg.k, eps=cfg.eps, lam=cfg.lam,
                      rng=make_rng(cfg.seed, "proxy"), merge_rng=make_rng(cfg.seed, "merge"),
                      keys=KeyPair.from_seed(cfg.seed), alpha=cfg.alpha, theta=cfg.theta,
                      policy=WeightPolicy.parse(cfg.policy),
                      batch_size=cfg.replace(n=max(1, n_records)).effective_batch_size(),
                      backend=backend if backend is not None else MemoryBackend())


def read_records(path) -> tuple:
    """``key,value`` CSV (header optional); values are UTF-8 text."""
    keys, values = [], []
    with open(path, newline="") as f:
        for row in csv.reader(f):
            if not row or row[0].strip().lower() == "key":
                continue
            keys.append(int(row[0]))
            values.append(row[1].encode() if len(row) > 1 else b"")
    return keys, values


def decode_value(raw: bytes) -> str:
    return raw.rstrip(b"\x00").decode(errors="replace")


def open_out(args, name: str):
    """Named CSV inside --out, or stdout when --out is not given."""
    if args.out is None:
        return sys.stdout, False
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return open(out / name, "w", newline=""), True


def write_rows(args, name: str, header, rows):
    f, close = open_out(args, name)
    try:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
    finally:
        if close:
            f.close()


# -- commands ---------------------------------------------------------------


def cmd_setup(args) -> int:
    cfg = resolve_config(args)
    keys, values = read_records(args.csv)
    if not keys:
        raise ConfigurationError(f"{args.csv} holds no records")
    if len(set(keys)) != len(keys):
        raise ConfigurationError("duplicate keys in the input")
    cfg = cfg.replace(n=len(keys))
    state_dir = Path(args.state)
    state_dir.mkdir(parents=True, exist_ok=True)
    if cfg.backend == "memory":
        (state_dir / SERVER_FILE).unlink(missing_ok=True)
    store = new_store(cfg, len(keys), open_backend(cfg, state_dir))
    store.load(keys, values)
    save_store(args, store, cfg)
    write_rows(args, "setup.csv", ["records", "buckets", "server_entries", "batch_size"],
               [[len(keys), store.live_buckets(), store.server_entries(), store.batch_size]])
    return 0


def _answer(store, cfg, tickets) -> None:
    driver = FixedRateDriver(store, cfg.rate)
    driver.run_until(lambda: all(t.done for t in tickets))


def cmd_query(args) -> int:
    store, cfg = load_store(args)
    l, sep, r = args.range.partition(":")
    if not sep:
        raise ConfigurationError("--range expects l:r")
    t = store.query(int(l), int(r))
    _answer(store, cfg, [t])
    save_store(args, store, cfg)
    rows = [[int(x["key"]), decode_value(x["value"].tobytes())] for x in t.result]
    write_rows(args, "query.csv", ["key", "value"], rows)
    return 0


def cmd_get(args) -> int:
    store, cfg = load_store(args)
    t = store.query(args.key, args.key)
    _answer(store, cfg, [t])
    save_store(args, store, cfg)
    rows = [[int(x["key"]), decode_value(x["value"].tobytes())] for x in t.result]
    write_rows(args, "get.csv", ["key", "value"], rows)
    return 0 if rows else 1


def cmd_put(args) -> int:
    store, cfg = load_store(args)
    seq = store.update(args.key, args.value.encode())
    save_store(args, store, cfg)
    write_rows(args, "put.csv", ["key", "seq"], [[args.key, seq]])
    return 0


def cmd_delete(args) -> int:
    store, cfg = load_store(args)
    seq = store.delete(args.key)
    save_store(args, store, cfg)
    write_rows(args, "delete.csv", ["key", "seq"], [[args.key, seq]])
    return 0


def cmd_insert(args) -> int:
    store, cfg = load_store(args)
    keys, values = read_records(args.csv)
    before = len(store.rebuilds)
    for k, v in zip(keys, values):
        store.insert(k, v)
    save_store(args, store, cfg)
    write_rows(args, "insert.csv", ["inserted", "rebuilds", "levels"],
               [[len(keys), len(store.rebuilds) - before, " ".join(map(str, store.bookkeeping.digits))]])
    return 0


def _parse_workload(spec: str) -> tuple:
    name, _, count = spec.partition(":")
    return name, int(count) if count else 10_000


def _write_trace_outputs(out: Path, trace: AccessTrace, universe, latencies):
    trace.to_csv(out / "trace.csv")
    with open(out / "labels.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["label_hex"])
        w.writerows([[lb.hex()] for lb in universe])
    with open(out / "latencies.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["op", "latency_batches"])
        w.writerows(enumerate(latencies))


def cmd_bench(args) -> int:
    cfg = resolve_config(args)
    name, count = _parse_workload(args.workload)
    out = Path(args.out or "bench-out")
    out.mkdir(parents=True, exist_ok=True)
    summary = {"workload": name, "ops": count, "theta": cfg.theta, "policy": cfg.policy}
    started = time.perf_counter()
    if name in ("markov", "zipf", "independent"):
        store_kw = dict(seed=cfg.seed, theta=cfg.theta, policy=cfg.policy,
                        batch_size=args.batch_size or 3)
        if name == "zipf":
            pi = zipf_weights(args.keys, args.zipf_s)
            queries = make_rng(cfg.seed, "workload").choice(args.keys, size=count, p=pi)
        else:
            chain = three_key_chain()
            pi = chain.stationary()
            wrng = make_rng(cfg.seed, "workload")
            queries = (wrng.choice(len(pi), size=count, p=pi) if name == "independent"
                       else chain.walk(count, wrng))
        store = experiments.kv_store(pi, fifo=args.fifo, **store_kw)
        run = experiments.run_point_queries(store, queries, load=args.load)
        _write_trace_outputs(out, store.backend.trace, run.universe, run.latencies)
        write_matrix_csv(out / "matrix.csv", run.matrix)
        summary.update(rsd=run.rsd, **{f"latency_{k}": v for k, v in latency_summary(run.latencies).items()})
    elif name in ("ranges", "mixed"):
        if Path(args.state, PROXY_FILE).exists():
            store, cfg = load_store(args)
        else:
            store = experiments.range_store(n=cfg.n, domain=cfg.N, z=cfg.Z, seed=cfg.seed,
                                            theta=cfg.theta, batch_size=cfg.effective_batch_size(),
                                            k=cfg.k, value_len=cfg.L)
        if not isinstance(store.backend, MemoryBackend):
            raise ConfigurationError("bench records the trace in-process; use the memory backend")
        store.backend.trace = AccessTrace()
        rng = make_rng(cfg.seed, "bench")
        driver = FixedRateDriver(store, cfg.rate)
        tickets = []
        for _ in range(count):
            u = rng.random() if name == "mixed" else 1.0
            key = int(rng.integers(1, store.domain + 1))
            if u < 0.2:
                store.insert(key, rng.bytes(min(8, store.value_len)))
            elif u < 0.25:
                store.delete(key)
            else:
                l, r = uniform_ranges(store.domain, 1, rng)[0]
                tickets.append(store.query(int(l), int(r)))
            driver.tick()
        driver.run_until(lambda: not store.inflight)
        universe = [lb for lv in store.levels.values() for lb in lv.labels]
        lat = [t.latency for t in tickets]
        _write_trace_outputs(out, store.backend.trace, universe, lat)
        summary.update(rebuilds=len(store.rebuilds), privacy_spent=store.privacy_spent,
                       **{f"latency_{k}": v for k, v in latency_summary(lat).items()})
    else:
        raise ConfigurationError(f"unknown workload {name!r} (markov, independent, zipf, ranges, mixed)")
    summary["seconds"] = round(time.perf_counter() - started, 3)
    write_summary_csv(out / "summary.csv", summary)
    print(f"wrote {out}/summary.csv")
    return 0


def cmd_analyze(args) -> int:
    trace = AccessTrace.from_csv(args.trace)
    labels = trace.labels(args.op)
    if not labels:
        raise ConfigurationError(f"no {args.op} events in {args.trace}")
    if args.labels:
        with open(args.labels, newline="") as f:
            universe = [bytes.fromhex(row["label_hex"]) for row in csv.DictReader(f)]
    else:
        universe = sorted(set(labels))
    out = Path(args.out or "analysis-out")
    out.mkdir(parents=True, exist_ok=True)
    m = transition_matrix(labels, universe)
    write_matrix_csv(out / "matrix.csv", m, [lb.hex()[:8] for lb in universe])
    dev, p_uniform = uniformity_test(labels, universe)
    ideal = ideal_trace(universe, len(labels), make_rng(args.seed, "ideal"))
    p_freq, p_pair = ror_distinguish(labels, ideal, universe)
    freq = frequencies(labels, universe)
    with open(out / "frequencies.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["label_hex", "count"])
        w.writerows(zip((lb.hex() for lb in universe), freq.tolist()))
    summary = {"accesses": len(labels), "labels": len(universe), "rsd": rsd(m),
               "max_relative_deviation": dev, "chi2_p": p_uniform,
               "ror_p_frequency": p_freq, "ror_p_pairs": p_pair,
               "indistinguishable": p_freq > 0.01 and p_pair > 0.01}
    write_summary_csv(out / "summary.csv", summary)
    for k, v in summary.items():
        print(f"{k},{v}")
    return 0


def cmd_capacity(args) -> int:
    res = compute_bin_capacity(args.z, args.eps, args.lam)
    write_rows(args, "capacity.csv",
               ["z", "eps", "lambda", "xi_c", "xi_t", "bins", "failure_prob", "delta", "xi_c_le_xi_t"],
               [[args.z, args.eps, args.lam, res.xi, res.xi_theory, res.bins,
                 f"{res.failure_prob:.6g}", f"{res.delta:.6g}", res.xi <= res.xi_theory]])
    return 0


def cmd_serve(args) -> int:
    store = MemoryBackend.load(args.file) if args.file and Path(args.file).exists() else MemoryBackend()
    server = BackendServer(store, args.host, args.port)
    print(f"serving on {server.address[0]}:{server.address[1]}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        if args.file:
            store.persist(args.file)
    return 0


# -- argument parsing -------------------------------------------------------


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--state", default="smoothstore-state", help="proxy state directory")
    p.add_argument("--out", help="output directory (single-table commands print to stdout without it)")
    p.add_argument("--theta", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--bucket-size", dest="bucket_size", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--rate", type=float, help="batches per second, 0 = back to back")
    p.add_argument("--policy", help="constant | linear[:rate] | exponential[:base]")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--selectivity", type=float)
    p.add_argument("--value-len", dest="value_len", type=int)
    p.add_argument("--domain", type=int, help="largest key N")
    p.add_argument("--n", type=int, help="record count for generated stores")
    p.add_argument("--backend", help="memory | file:PATH | tcp:HOST:PORT")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smoothstore", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("setup", help="load a key,value CSV into a fresh store")
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_setup)

    p = sub.add_parser("query", help="range query")
    p.add_argument("--range", required=True, help="l:r")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("get", help="point lookup")
    p.add_argument("--key", type=int, required=True)
    p.set_defaults(func=cmd_get)

    p = sub.add_parser("put", help="insert or update one key")
    p.add_argument("--key", type=int, required=True)
    p.add_argument("--value", required=True)
    p.set_defaults(func=cmd_put)

    p = sub.add_parser("delete", help="delete one key")
    p.add_argument("--key", type=int, required=True)
    p.set_defaults(func=cmd_delete)

    p = sub.add_parser("insert", help="insert every row of a key,value CSV")
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_insert)

    p = sub.add_parser("bench", help="run a workload and write trace, latencies and summary")
    p.add_argument("--workload", required=True,
                   help="markov[:n] | independent[:n] | zipf[:n] | ranges[:n] | mixed[:n]")
    p.add_argument("--load", type=float, default=1.0, help="client queries per batch (point workloads)")
    p.add_argument("--fifo", action="store_true", help="plain queue instead of the sampling pool")
    p.add_argument("--keys", type=int, default=100, help="key count for zipf")
    p.add_argument("--zipf-s", dest="zipf_s", type=float, default=1.1)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("analyze", help="leakage statistics of a trace CSV")
    p.add_argument("--trace", required=True)
    p.add_argument("--labels", help="label universe CSV (default: labels seen in the trace)")
    p.add_argument("--op", default="read")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("capacity", help="bin capacity for the oblivious merge")
    p.add_argument("--z", type=int, default=512)
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("serve", help="run the storage server over TCP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7600)
    p.add_argument("--file", help="persist the store here on shutdown")
    p.set_defaults(func=cmd_serve)

    for name, sp in sub.choices.items():
        _common(sp)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "capacity":
        args.eps = 1.0 if args.eps is None else args.eps
        args.lam = 512.0 if args.lam is None else args.lam
    if args.command == "analyze" and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except (ConfigurationError, ValueError, FileNotFoundError) as e:
        print(f"smoothstore {args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
