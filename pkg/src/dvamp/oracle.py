"""Exact offline optimum for tiny instances and an LP-format MILP exporter.

The search serves requests in order (start ticks non-decreasing, as in the
online environment) and only tries start ticks on the event grid: the
earliest allowed tick plus the end ticks of already-placed requests.
Between two consecutive events the set of active earlier requests does not
change, so any start can be moved back to the previous event without
breaking capacity and without increasing total wait.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .cluster import TOL, ClusterState
from .errors import ConfigError, OracleLimitError


@dataclass(frozen=True)
class ScheduledVm:
    vm_id: int
    pm: int
    numa_mask: tuple
    start: int

    @property
    def action(self):
        return 2 * self.pm + self.numa_mask[0]


@dataclass(frozen=True)
class OfflineSolution:
    schedule: tuple
    total_wait: int
    nodes: int = 0

    def starts(self):
        return [s.start for s in self.schedule]


def _requests(trace):
    return list(getattr(trace, "requests", trace))


def brute_force_opt(trace, config, max_requests=8, max_pms=3, strict_fifo=False):
    """Minimum total wait over all placements and event-aligned start ticks."""
    reqs = _requests(trace)
    n, m, D = len(reqs), config.m, config.D
    if n > max_requests or m > max_pms:
        raise OracleLimitError(f"instance has n={n}, m={m}; limits are n<={max_requests}, m<={max_pms}")
    if n == 0:
        return OfflineSolution((), 0)
    cap = np.asarray(config.capacities, dtype=float) + TOL
    arrivals = np.array([r.arrival for r in reqs])
    res = [np.asarray(r.resources, dtype=float) for r in reqs]
    gap = 1 if strict_fifo else 0

    best = {"cost": math.inf, "plan": None}
    memo = {}
    nodes = 0
    # placed entries: (pm, numa_mask, start, end, share)
    placed = []

    def util_at(t):
        u = np.zeros((m, 2, D))
        for pm, mask, _, end, share in placed:
            if end > t:
                for i in mask:
                    u[pm, i] += share
        return u

    def canonical(t):
        pms = []
        for k in range(m):
            numas = []
            for i in (0, 1):
                numas.append(tuple(sorted((end - t, tuple(share)) for pm, mask, _, end, share in placed
                                          if pm == k and i in mask and end > t)))
            pms.append(tuple(sorted(numas)))
        return tuple(sorted(pms))

    def future_bound(j, t):
        # later requests start no earlier than t (plus the strict gap)
        later = arrivals[j + 1:]
        offsets = np.arange(1, len(later) + 1) * gap
        return float(np.maximum(0, t + offsets - later).sum())

    def search(j, prev_st, cost):
        nonlocal nodes
        nodes += 1
        if j == n:
            if cost < best["cost"]:
                best["cost"] = cost
                best["plan"] = [(pm, mask, st) for pm, mask, st, _, _ in placed]
            return
        vm = reqs[j]
        t_min = vm.arrival if prev_st is None else max(vm.arrival, prev_st + gap)
        times = sorted({t_min} | {end for _, _, _, end, _ in placed if end > t_min})
        need = 0.5 * res[j] if vm.div else res[j]
        for t in times:
            wait = t - vm.arrival
            if cost + wait + future_bound(j, t) >= best["cost"]:
                break
            u = util_at(t)
            if vm.div:
                options = [(k, (0, 1)) for k in range(m) if np.all(u[k] + need <= cap)]
            else:
                options = [(k, (i,)) for k in range(m) for i in (0, 1) if np.all(u[k, i] + need <= cap)]
            seen = set()
            for pm, mask in options:
                placed.append((pm, mask, t, t + vm.lifetime, need))
                key = (j + 1, t, canonical(t))
                if key in seen or memo.get(key, math.inf) <= cost + wait:
                    placed.pop()
                    continue
                seen.add(key)
                memo[key] = cost + wait
                search(j + 1, t, cost + wait)
                placed.pop()

    search(0, None, 0)
    if best["plan"] is None:
        raise RuntimeError("search found no feasible schedule")
    schedule = tuple(ScheduledVm(r.id, pm, mask, st) for r, (pm, mask, st) in zip(reqs, best["plan"]))
    return OfflineSolution(schedule, int(best["cost"]), nodes)


def validate_solution(trace, config, solution, strict_fifo=False):
    """Replay a schedule through ClusterState; returns its total wait.

    Raises if a request starts before arrival, breaks request order, or
    overloads a NUMA node at its start tick.
    """
    reqs = _requests(trace)
    by_id = {s.vm_id: s for s in solution.schedule}
    if set(by_id) != {r.id for r in reqs}:
        raise ValueError("schedule does not cover exactly the instance's requests")
    state = ClusterState(config)
    prev = None
    total = 0
    for vm in reqs:
        s = by_id[vm.id]
        if s.start < vm.arrival:
            raise ValueError(f"vm {vm.id} starts at {s.start} before arrival {vm.arrival}")
        if prev is not None and (s.start < prev or (strict_fifo and s.start == prev)):
            raise ValueError(f"vm {vm.id} breaks request order ({s.start} after {prev})")
        if len(s.numa_mask) != 1 + vm.div:
            raise ValueError(f"vm {vm.id} has the wrong number of NUMA nodes")
        state.release_expired(s.start)
        state.deploy(vm, s.action, s.start)
        state.check_invariants()
        prev = s.start
        total += s.start - vm.arrival
    return total


# -- MILP export ---------------------------------------------------------------

def _terms(coefs):
    parts = []
    for c, name in coefs:
        if c == 0:
            continue
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        txt = name if mag == 1 else f"{_num(mag)} {name}"
        parts.append(f"{sign} {txt}")
    if not parts:
        return "0 dummy"
    first = parts[0]
    parts[0] = first[2:] if first.startswith("+ ") else "-" + first[2:]
    lines, line = [], ""
    for p in parts:
        if len(line) + len(p) > 200:
            lines.append(line)
            line = "   "
        line += (" " if line.strip() else "") + p
    lines.append(line)
    return "\n".join(lines)


def _num(x):
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def min_horizon(trace):
    reqs = _requests(trace)
    if not reqs:
        return 0
    return max(r.arrival for r in reqs) + sum(r.lifetime for r in reqs)


def export_milp(trace, config, horizon=None, strict_fifo=False):
    """Time-indexed MILP in CPLEX LP format.

    Variables: ``z_j_t`` (request j starts at tick t), ``x_k_i_j`` (request j
    uses NUMA i of PM k), ``a_k_i_j_t`` (j active on (k, i) at t, linearizing
    the product of placement and activity), ``st_j`` and ``w_j``
    (wait). The objective is the total wait.
    """
    reqs = _requests(trace)
    need = min_horizon(reqs)
    if horizon is None:
        horizon = need
    if horizon < need:
        raise ConfigError(f"horizon {horizon} is below the safe bound {need}")
    m, D = config.m, config.D
    R = config.capacities
    rows = []
    binaries = []
    generals = []

    def start_ticks(vm):
        return range(vm.arrival, horizon)

    for vm in reqs:
        j = vm.id
        zs = [f"z_{j}_{t}" for t in start_ticks(vm)]
        binaries += zs
        xs = [f"x_{k}_{i}_{j}" for k in range(m) for i in (0, 1)]
        binaries += xs
        rows.append((f"start_{j}", [(1, z) for z in zs], "=", 1))
        rows.append((f"nodes_{j}", [(1, x) for x in xs], "=", 1 + vm.div))
        if vm.div:
            for k in range(m):
                rows.append((f"split_{k}_{j}", [(1, f"x_{k}_0_{j}"), (-1, f"x_{k}_1_{j}")], "=", 0))
        rows.append((f"st_{j}_def", [(1, f"st_{j}")] + [(-t, f"z_{j}_{t}") for t in start_ticks(vm) if t],
                     "=", 0))
        rows.append((f"wait_{j}", [(1, f"w_{j}"), (-1, f"st_{j}")], "=", -vm.arrival))
    for prev, vm in zip(reqs, reqs[1:]):
        rows.append((f"order_{vm.id}", [(1, f"st_{vm.id}"), (-1, f"st_{prev.id}")], ">=",
                     1 if strict_fifo else 0))

    active_vars = {}
    for vm in reqs:
        j = vm.id
        for t in range(vm.arrival, horizon + vm.lifetime - 1):
            starts = [s for s in range(max(vm.arrival, t - vm.lifetime + 1), min(t, horizon - 1) + 1)]
            if not starts:
                continue
            for k in range(m):
                for i in (0, 1):
                    a = f"a_{k}_{i}_{j}_{t}"
                    active_vars[(k, i, j, t)] = a
                    coefs = [(1, a), (-1, f"x_{k}_{i}_{j}")] + [(-1, f"z_{j}_{s}") for s in starts]
                    rows.append((f"act_{k}_{i}_{j}_{t}", coefs, ">=", -1))
    ticks = sorted({t for (_, _, _, t) in active_vars})
    gamma = {vm.id: 1.0 - vm.div / 2 for vm in reqs}
    for t in ticks:
        for k in range(m):
            for i in (0, 1):
                for d in range(D):
                    coefs = [(gamma[vm.id] * vm.resources[d], active_vars[(k, i, vm.id, t)])
                             for vm in reqs if (k, i, vm.id, t) in active_vars and vm.resources[d] > 0]
                    if coefs:
                        rows.append((f"cap_{k}_{i}_{d}_{t}", coefs, "<=", R[d]))

    out = ["\\ total-wait MILP, "
           f"{len(reqs)} requests, m={m}, D={D}, horizon={horizon}",
           "Minimize",
           " obj: " + (_terms([(1, f"w_{vm.id}") for vm in reqs]) if reqs else "0 dummy"),
           "Subject To"]
    for name, coefs, sense, rhs in rows:
        out.append(f" {name}: {_terms(coefs)} {sense} {_num(rhs)}")
    out.append("Bounds")
    for vm in reqs:
        out.append(f" st_{vm.id} >= 0")
        out.append(f" w_{vm.id} >= 0")
    for a in active_vars.values():
        out.append(f" 0 <= {a} <= 1")
    out.append("Binaries")
    out += [f" {b}" for b in binaries]
    if generals:
        out.append("Generals")
        out += [f" {g}" for g in generals]
    out.append("End")
    return "\n".join(out) + "\n"


_PAIR = re.compile(r"^\s*([A-Za-z_][\w.]*)\s*[=\s]\s*([-+0-9.eE]+)\s*$")


def parse_solution(text, trace):
    """Read ``name value`` pairs from a solver's output into an OfflineSolution."""
    values = {}
    for line in text.splitlines():
        mt = _PAIR.match(line)
        if mt:
            values[mt.group(1)] = float(mt.group(2))
    reqs = _requests(trace)
    schedule = []
    total = 0
    for vm in reqs:
        j = vm.id
        nodes = sorted((int(k), int(i)) for key, val in values.items() if val > 0.5
                       for k, i, jj in [_x_index(key)] if jj == j)
        if not nodes:
            raise ValueError(f"no placement found for request {j}")
        pms = {k for k, _ in nodes}
        if len(pms) != 1:
            raise ValueError(f"request {j} spread over several PMs: {sorted(pms)}")
        if f"st_{j}" in values:
            st = int(round(values[f"st_{j}"]))
        else:
            starts = [int(key.split("_")[2]) for key, val in values.items()
                      if key.startswith(f"z_{j}_") and val > 0.5]
            if len(starts) != 1:
                raise ValueError(f"request {j} has no unique start tick")
            st = starts[0]
        schedule.append(ScheduledVm(j, nodes[0][0], tuple(i for _, i in nodes), st))
        total += st - vm.arrival
    return OfflineSolution(tuple(schedule), total)


def _x_index(name):
    parts = name.split("_")
    if len(parts) == 4 and parts[0] == "x":
        return int(parts[1]), int(parts[2]), int(parts[3])
    return -1, -1, -1
