"""Request sets: trace ingestion, synthetic generation, episode sampling and
the adaptive-adversary lower-bound instance."""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .cluster import ClusterConfig
from .errors import ConfigError, TraceDataError, TraceParseError

# Reference split boundaries for a 110k-request trace; scaled for shorter ones.
REFERENCE_SPLITS = {"train": (0, 50_000), "valid": (50_000, 70_000), "test": (70_000, 110_000)}
REFERENCE_LENGTH = 110_000

DEFAULT_FLAVORS = (
    (1, 1), (1, 2), (2, 4), (4, 8), (8, 16), (16, 32), (32, 64), (64, 128),
    (2, 8), (4, 16), (8, 32), (16, 64), (1, 4), (2, 2), (4, 4),
)


@dataclass(frozen=True)
class VmRequest:
    id: int
    resources: tuple
    arrival: int
    lifetime: int
    div: int
    source_id: str | None = None


@dataclass(frozen=True)
class WorkloadTrace:
    requests: tuple
    stats: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.requests)

    def __getitem__(self, idx):
        return self.requests[idx]

    def __iter__(self):
        return iter(self.requests)

    @property
    def horizon(self):
        if not self.requests:
            return 0
        return max(r.arrival + r.lifetime for r in self.requests)


@dataclass(frozen=True)
class EpisodeSpec:
    start_index: int
    length: int
    split: str = "train"


def classify_div(resources, d_div, c_div):
    """1 when resource ``d_div`` (1-based) meets the split threshold."""
    if not 1 <= d_div <= len(resources):
        raise ConfigError(f"d_div={d_div} outside 1..{len(resources)}")
    return int(resources[d_div - 1] >= c_div)


def make_request(idx, resources, arrival, lifetime, config, source_id=None):
    resources = tuple(float(x) for x in resources)
    if len(resources) != config.D:
        raise TraceDataError(f"request {idx}: expected {config.D} resources, got {len(resources)}")
    if lifetime < 1:
        raise TraceDataError(f"request {idx}: lifetime must be >= 1, got {lifetime}")
    if arrival < 0:
        raise TraceDataError(f"request {idx}: negative arrival {arrival}")
    for r, cap in zip(resources, config.capacities):
        if r < 0 or r > 2 * cap:
            raise TraceDataError(f"request {idx}: resource {r} outside [0, {2 * cap}]")
    return VmRequest(id=idx, resources=resources, arrival=int(arrival), lifetime=int(lifetime),
                     div=classify_div(resources, config.d_div, config.c_div), source_id=source_id)


def build_trace(records, config, stats=None):
    """Build a trace from ``(resources, arrival, lifetime[, source_id])`` records.

    Records are stably sorted by arrival; ids are reassigned in that order.
    """
    records = sorted(records, key=lambda rec: rec[1])
    reqs = []
    for j, rec in enumerate(records):
        src = rec[3] if len(rec) > 3 else None
        reqs.append(make_request(j, rec[0], rec[1], rec[2], config, source_id=src))
    return WorkloadTrace(tuple(reqs), stats or {})


def _parse_number(text, what, line):
    try:
        value = float(text)
    except ValueError:
        raise TraceParseError(f"cannot parse {what} {text!r}", line) from None
    if not math.isfinite(value):
        raise TraceParseError(f"non-finite {what} {text!r}", line)
    return value


def load_trace(path, config):
    """Read a creation/deletion log and pair records by VM id.

    The header is ``vm_id,<resource columns...>,time,type`` with ``type``
    0 for creation and 1 for deletion. Creations without a matching deletion
    are dropped.
    """
    creations = {}
    deletions = {}
    order = []
    n_create = n_delete = 0
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise TraceParseError("empty trace file", 1) from None
        if len(header) < 4 or header[0] not in ("vm_id", "vmid") or header[-2:] != ["time", "type"]:
            raise TraceParseError(f"unexpected header {header}", 1)
        n_res = len(header) - 3
        if n_res != config.D:
            raise TraceParseError(f"trace has {n_res} resource columns, config expects {config.D}", 1)
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise TraceParseError(f"expected {len(header)} fields, got {len(row)}", line)
            vm_id = row[0].strip()
            res = tuple(_parse_number(c, "resource", line) for c in row[1:1 + n_res])
            t = _parse_number(row[-2], "time", line)
            if t != int(t):
                raise TraceParseError(f"time must be an integer, got {row[-2]!r}", line)
            kind = row[-1].strip()
            if kind == "0":
                n_create += 1
                if vm_id in creations:
                    raise TraceDataError(f"line {line}: duplicate creation of vm {vm_id}")
                creations[vm_id] = (res, int(t))
                order.append(vm_id)
            elif kind == "1":
                n_delete += 1
                deletions[vm_id] = int(t)
            else:
                raise TraceParseError(f"type must be 0 or 1, got {kind!r}", line)
    records = []
    for vm_id in order:
        if vm_id not in deletions:
            continue
        res, t0 = creations[vm_id]
        t1 = deletions[vm_id]
        if t1 < t0:
            raise TraceDataError(f"vm {vm_id} deleted at {t1} before creation at {t0}")
        if t1 == t0:
            raise TraceDataError(f"vm {vm_id} has zero lifetime")
        records.append((res, t0, t1 - t0, vm_id))
    stats = {"creations": n_create, "deletions": n_delete, "paired": len(records),
             "dropped": n_create - len(records)}
    return build_trace(records, config, stats)


def save_trace(trace, path, config, resource_names=None):
    """Write a trace as a creation/deletion log plus a ``.json`` config sidecar."""
    if resource_names is None:
        resource_names = ("cpu", "memory") if config.D == 2 else tuple(f"r{d + 1}" for d in range(config.D))
    events = []
    for r in trace.requests:
        vm_id = r.source_id if r.source_id is not None else str(r.id)
        events.append((r.arrival, 0, r.id, vm_id, r.resources))
        events.append((r.arrival + r.lifetime, 1, r.id, vm_id, r.resources))
    events.sort(key=lambda e: (e[0], e[1], e[2]))
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["vm_id", *resource_names, "time", "type"])
        for t, kind, _, vm_id, res in events:
            w.writerow([vm_id, *(_fmt(x) for x in res), t, kind])
    with open(sidecar_path(path), "w") as f:
        json.dump({"cluster": config.to_dict(), "requests": len(trace)}, f, indent=1)


def sidecar_path(path):
    root, _ = os.path.splitext(os.fspath(path))
    return root + ".json"


def load_sidecar_config(path):
    with open(sidecar_path(path)) as f:
        return ClusterConfig.from_dict(json.load(f)["cluster"])


def _fmt(x):
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def gen_synthetic(n, config, seed=0, flavors=DEFAULT_FLAVORS, arrival_rate=1.0,
                  mean_lifetime=20.0, flavor_weights=None):
    """Poisson arrivals on integer ticks, flavors drawn from a list and
    geometric lifetimes (mean ``mean_lifetime``, minimum 1 tick)."""
    rng = np.random.default_rng(seed)
    flavors = [tuple(float(x) for x in f) for f in flavors]
    if flavor_weights is not None:
        p = np.asarray(flavor_weights, dtype=float)
        p = p / p.sum()
    else:
        p = None
    gaps = rng.exponential(1.0 / arrival_rate, size=n)
    arrivals = np.floor(np.cumsum(gaps)).astype(int)
    picks = rng.choice(len(flavors), size=n, p=p)
    lifetimes = rng.geometric(1.0 / mean_lifetime, size=n)
    records = [(flavors[k], int(a), int(lt)) for k, a, lt in zip(picks, arrivals, lifetimes)]
    return build_trace(records, config, {"kind": "synthetic", "seed": seed})


def adversarial_config(m):
    # r=1 requests must split (div=1), r=1/(2q) requests must not.
    return ClusterConfig(m=m, capacities=(0.5,), d_div=1, c_div=0.6)


def adversarial_tr(m, q, mu):
    return m * (mu / (2 * q)) + (2 * q * m - m) / (2 * q) + (m - 1)


def gen_adversarial(m, q, mu, scheduler):
    """Worst-case instance for greedy online scheduling.

    ``2qm`` small requests (r = 1/(2q)) arrive at tick 0 and ``m - 1`` full-PM
    requests (r = 1, lifetime 1) at tick 1. The scheduler is first run on the
    tick-0 batch; afterwards the first request it placed on each PM receives
    lifetime ``mu`` and every other small request lifetime 1, so exactly one
    long-lived request pins each PM.

    Returns ``(trace, config, targets)`` where targets holds the analytic
    ``ON``, ``OPT`` and ``TR`` values.
    """
    from .cluster import ClusterState
    from .env import observe

    if m < 1 or q < 1:
        raise ConfigError(f"need m >= 1 and q >= 1, got m={m}, q={q}")
    if mu < 1 or float(mu) != int(mu):
        raise ConfigError(f"mu must be an integer >= 1 on a tick grid, got {mu}")
    mu = int(mu)
    config = adversarial_config(m)
    n_small = 2 * q * m
    small = [make_request(j, (1.0 / (2 * q),), 0, 1, config) for j in range(n_small)]

    state = ClusterState(config)
    if hasattr(scheduler, "reset"):
        scheduler.reset()
    first_on_pm = {}
    for vm in small:
        feasible = state.feasible_actions(vm)
        if not feasible:
            raise RuntimeError(f"probe run could not place small request {vm.id} at tick 0")
        action = scheduler.choose(observe(state, vm, 0), feasible)
        p = state.deploy(vm, action, 0)
        first_on_pm.setdefault(p.pm, vm.id)
    if len(first_on_pm) != m:
        raise RuntimeError("probe run left a PM without small requests")
    long_ids = set(first_on_pm.values())

    records = [((1.0 / (2 * q),), 0, mu if j in long_ids else 1) for j in range(n_small)]
    records += [((1.0,), 1, 1) for _ in range(m - 1)]
    trace = build_trace(records, config, {"kind": "adversarial", "m": m, "q": q, "mu": mu,
                                          "long_ids": sorted(long_ids),
                                          "probe_pm": {int(k): v for k, v in first_on_pm.items()}})
    targets = {"ON": (m - 1) * (mu - 1), "OPT": 0, "TR": adversarial_tr(m, q, mu)}
    return trace, config, targets


def split_range(split, n_requests):
    """Start-index range for a split, scaled down for traces shorter than 110k."""
    if split not in REFERENCE_SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    lo, hi = REFERENCE_SPLITS[split]
    if n_requests < REFERENCE_LENGTH:
        scale = n_requests / REFERENCE_LENGTH
        lo, hi = int(lo * scale), int(hi * scale)
    return lo, hi


def sample_episode(trace, split, length, rng, truncate=False):
    """Uniform start inside the split's range.

    Starts that would run past the end of the trace are either clipped
    (``truncate=True``) or drawn only from the range that still fits.
    """
    n = len(trace)
    lo, hi = split_range(split, n)
    if length == 0:
        return EpisodeSpec(int(rng.integers(lo, hi)) if hi > lo else lo, 0, split)
    if not truncate:
        hi = min(hi, n - length + 1)
    if hi <= lo:
        raise ConfigError(f"split {split!r} has no room for episodes of length {length} "
                          f"in a trace of {n} requests")
    start = int(rng.integers(lo, hi))
    return EpisodeSpec(start, min(length, n - start), split)


def frozen_episodes(trace, split, count, length, seed):
    """A fixed set of episodes for validation/testing, reproducible from ``seed``."""
    rng = np.random.default_rng([seed, _SPLIT_SALT[split]])
    return [sample_episode(trace, split, length, rng) for _ in range(count)]


_SPLIT_SALT = {"train": 0, "valid": 1, "test": 2}


def episode_requests(trace, spec):
    return trace.requests[spec.start_index:spec.start_index + spec.length]
