"""Ground-truth NUMA utilization accounting.

Every physical machine (PM) has two NUMA nodes with identical per-resource
capacity ``R_d``. A request with ``div == 0`` lands on one node with its full
demand; a request with ``div == 1`` is split evenly over both nodes of one PM.

Actions are 0-based indices into ``range(2 * m)``: action ``a`` targets PM
``a // 2`` and NUMA node ``a % 2``. For split requests the node is ignored and
the action is normalized to the even id of the PM.
"""
from __future__ import annotations

import heapq
import itertools
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import AccountingError, ConfigError, InfeasibleActionError

TOL = 1e-9


@dataclass(frozen=True)
class ClusterConfig:
    """Cluster shape and the split rule.

    ``d_div`` is 1-based, as in the usual ``(d_div, c_div) = (2, 10)`` setting
    where resource 2 is memory in GiB.
    """

    m: int = 5
    capacities: tuple = (40.0, 90.0)
    d_div: int = 2
    c_div: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "capacities", tuple(float(c) for c in self.capacities))
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}")
        if len(self.capacities) < 1:
            raise ConfigError("at least one resource dimension is required")
        if any(c <= 0 for c in self.capacities):
            raise ConfigError(f"capacities must be positive, got {self.capacities}")
        if not 1 <= self.d_div <= len(self.capacities):
            raise ConfigError(f"d_div={self.d_div} outside 1..{len(self.capacities)}")

    @property
    def D(self):
        return len(self.capacities)

    @property
    def n_actions(self):
        return 2 * self.m

    def with_m(self, m):
        return ClusterConfig(m=m, capacities=self.capacities, d_div=self.d_div, c_div=self.c_div)

    def to_dict(self):
        d = asdict(self)
        d["capacities"] = list(self.capacities)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(m=int(d["m"]), capacities=tuple(d["capacities"]),
                   d_div=int(d["d_div"]), c_div=float(d["c_div"]))


def decode_action(action):
    """Return ``(pm, numa)`` for a 0-based action id."""
    return action // 2, action % 2


@dataclass(frozen=True)
class Placement:
    vm_id: int
    pm: int
    numa_mask: tuple
    start: int
    end: int
    gamma: float
    resources: tuple = field(repr=False)

    @property
    def share(self):
        """Per-node demand actually charged: gamma * r."""
        return np.asarray(self.resources, dtype=float) * self.gamma

    def to_dict(self):
        return {"vm_id": self.vm_id, "pm": self.pm, "numa_mask": list(self.numa_mask),
                "start": self.start, "end": self.end, "gamma": self.gamma,
                "resources": list(self.resources)}


class ClusterState:
    """Mutable per-NUMA utilization plus the ledger of active placements.

    ``util`` has shape ``(m, 2, D)`` and holds absolute (not normalized)
    utilization. Active placements are kept in a heap keyed by end tick.
    """

    def __init__(self, config):
        self.config = config
        self.capacity = np.asarray(config.capacities, dtype=float)
        self.util = np.zeros((config.m, 2, config.D))
        self.tick = 0
        self._heap = []
        self._active = {}
        self._seq = itertools.count()

    def __len__(self):
        return len(self._active)

    @property
    def active(self):
        """Active placements ordered by end tick (ties by deployment order)."""
        return [p for _, _, p in sorted(self._heap)]

    def feasible_mask(self, vm):
        r = np.asarray(vm.resources, dtype=float)
        limit = self.capacity + TOL
        if vm.div:
            pm_ok = np.all(self.util + 0.5 * r <= limit, axis=(1, 2))
            return np.repeat(pm_ok, 2)
        return np.all(self.util + r <= limit, axis=2).reshape(-1)

    def feasible(self, vm, action):
        if not 0 <= action < 2 * self.config.m:
            return False
        pm, numa = decode_action(action)
        r = np.asarray(vm.resources, dtype=float)
        if vm.div:
            return bool((self.util[pm] + 0.5 * r <= self.capacity + TOL).all())
        return bool((self.util[pm, numa] + r <= self.capacity + TOL).all())

    def feasible_actions(self, vm):
        return [int(a) for a in np.flatnonzero(self.feasible_mask(vm))]

    def deploy(self, vm, action, t):
        if t < vm.arrival:
            raise InfeasibleActionError(f"vm {vm.id} cannot start at {t} before arrival {vm.arrival}")
        if not self.feasible(vm, action):
            raise InfeasibleActionError(f"action {action} is infeasible for vm {vm.id} at tick {t}")
        pm, numa = decode_action(action)
        if vm.div:
            mask, gamma = (0, 1), 0.5
        else:
            mask, gamma = (numa,), 1.0
        placement = Placement(vm_id=vm.id, pm=pm, numa_mask=mask, start=t,
                              end=t + vm.lifetime, gamma=gamma,
                              resources=tuple(float(x) for x in vm.resources))
        share = placement.share
        for i in mask:
            self.util[pm, i] += share
        heapq.heappush(self._heap, (placement.end, next(self._seq), placement))
        self._active[vm.id] = placement
        self.tick = max(self.tick, t)
        return placement

    def next_release(self):
        """End tick of the earliest-finishing active placement, or None."""
        return self._heap[0][0] if self._heap else None

    def release_expired(self, t):
        """Remove every placement with ``end <= t``; returns released vm ids."""
        if t < self.tick:
            raise AccountingError(f"time went backwards: {t} < {self.tick}")
        self.tick = t
        released = []
        while self._heap and self._heap[0][0] <= t:
            _, _, p = heapq.heappop(self._heap)
            del self._active[p.vm_id]
            share = p.share
            for i in p.numa_mask:
                self.util[p.pm, i] -= share
            released.append(p.vm_id)
        if released:
            low = self.util.min()
            if low < -TOL:
                raise AccountingError(f"negative utilization {low} after releasing {released}")
            np.maximum(self.util, 0.0, out=self.util)
            if not self._active:
                self.util[:] = 0.0
        return released

    def recompute_util(self):
        """Utilization rebuilt from scratch out of the active ledger."""
        util = np.zeros_like(self.util)
        for p in self._active.values():
            share = p.share
            for i in p.numa_mask:
                util[p.pm, i] += share
        return util

    def check_invariants(self):
        """Raise AccountingError when capacity or bookkeeping is violated."""
        if np.any(self.util > self.capacity + TOL):
            raise AccountingError("utilization exceeds NUMA capacity")
        if np.any(self.util < -TOL):
            raise AccountingError("negative utilization")
        drift = np.abs(self.recompute_util() - self.util).max(initial=0.0)
        if drift > TOL:
            raise AccountingError(f"incremental utilization drifted by {drift}")

    def snapshot(self):
        return {"tick": int(self.tick), "util": self.util.tolist(),
                "active": [p.to_dict() for p in self.active]}

    def dump_snapshot(self, path):
        with open(path, "w") as f:
            json.dump(self.snapshot(), f, indent=1)
