"""Online episode loop with FIFO, greedy earliest-start semantics.

Requests are served strictly in order. Each request starts at the earliest
integer tick, no sooner than its arrival and the previous request's start,
at which at least one placement is feasible. The scheduler only chooses
*where*; *when* is fixed by the greedy rule.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .cluster import TOL, ClusterState
from .errors import InfeasibleActionError, UnschedulableError
from .workload import EpisodeSpec, episode_requests


@dataclass(frozen=True)
class ObservableState:
    """What a scheduler may see when placing one request.

    ``numa_util`` has shape ``(m, 2, D)`` and, like ``vm_resources``, is
    normalized by the per-node capacity. No lifetimes are exposed.
    """

    numa_util: np.ndarray
    vm_resources: np.ndarray
    div: int
    wait_so_far: int
    pending: bool = True

    @property
    def m(self):
        return self.numa_util.shape[0]

    def feasible_mask(self):
        """Feasibility rebuilt from capacity headroom alone."""
        if not self.pending:
            return np.zeros(2 * self.m, dtype=bool)
        return feasible_mask_normalized(self.numa_util[None], self.vm_resources[None],
                                        np.array([self.div]))[0]


def feasible_mask_normalized(util, vm, div):
    """Batched feasibility on normalized arrays.

    util: (B, m, 2, D); vm: (B, D); div: (B,). Returns (B, 2m) bool.
    """
    limit = 1.0 + TOL
    vm = vm[:, None, None, :]
    single = np.all(util + vm <= limit, axis=3).reshape(util.shape[0], -1)
    split = np.all(util + 0.5 * vm <= limit, axis=(2, 3))
    split = np.repeat(split, 2, axis=1)
    return np.where(np.asarray(div, dtype=bool)[:, None], split, single)


def observe(state, vm, st):
    cap = state.capacity
    return ObservableState(numa_util=state.util / cap,
                           vm_resources=np.asarray(vm.resources, dtype=float) / cap,
                           div=int(vm.div), wait_so_far=int(st - vm.arrival))


def terminal_observation(m, D):
    return ObservableState(np.zeros((m, 2, D)), np.zeros(D), 0, 0, pending=False)


def earliest_start(state, vm, t_min, released=None):
    """Smallest tick >= t_min at which ``vm`` fits somewhere.

    Advances ``state`` through release events as a side effect; released vm
    ids are appended to ``released`` when given.
    """
    if released is None:
        released = []
    r = np.asarray(vm.resources, dtype=float)
    need = 0.5 * r if vm.div else r
    if np.any(need > state.capacity + TOL):
        raise UnschedulableError(f"vm {vm.id} exceeds the capacity of an empty PM")
    t = max(t_min, state.tick)
    released.extend(state.release_expired(t))
    while not state.feasible_mask(vm).any():
        t = state.next_release()
        if t is None:
            raise UnschedulableError(f"vm {vm.id} does not fit on a drained cluster")
        released.extend(state.release_expired(t))
    return t


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    obs: ObservableState
    done: bool
    info: dict


@dataclass
class EpisodeResult:
    total_wait: int
    per_vm_wait: list
    requests_served: int
    log: list = field(default_factory=list, repr=False)


class DvampEnv:
    """One episode at a time over a list of requests.

    >>> env = DvampEnv(trace, config)
    >>> obs = env.reset(EpisodeSpec(0, 100))
    >>> while not env.done:
    ...     out = env.step(env.feasible_actions()[0])
    """

    def __init__(self, trace, config, strict_fifo=False):
        self.trace = trace
        self.config = config
        self.strict_fifo = strict_fifo
        self.state = ClusterState(config)
        self._queue = ()
        self._cursor = 0
        self._prev_st = None
        self._mask = None
        self.st = None
        self.obs = None
        self.waits = []
        self.log = []

    @property
    def done(self):
        return self._cursor >= len(self._queue)

    @property
    def current(self):
        return None if self.done else self._queue[self._cursor]

    def reset(self, spec=None, requests=None):
        """Start an episode from a spec (or an explicit request list)."""
        if requests is None:
            if spec is None:
                spec = EpisodeSpec(0, len(self.trace))
            requests = episode_requests(self.trace, spec)
        self._queue = tuple(requests)
        self._cursor = 0
        self._prev_st = None
        self.state = ClusterState(self.config)
        self.waits = []
        self.log = []
        return self._advance()

    def _advance(self, released=None):
        if self.done:
            self.st = None
            self.obs = terminal_observation(self.config.m, self.config.D)
            return self.obs
        vm = self._queue[self._cursor]
        t_min = vm.arrival
        if self._prev_st is not None:
            t_min = max(t_min, self._prev_st + (1 if self.strict_fifo else 0))
        t_min = max(t_min, self.state.tick)
        self.st = earliest_start(self.state, vm, t_min, released)
        self._mask = self.state.feasible_mask(vm)
        self.obs = observe(self.state, vm, self.st)
        return self.obs

    def feasible_mask(self):
        if self.done:
            return np.zeros(2 * self.config.m, dtype=bool)
        return self._mask.copy()

    def feasible_actions(self):
        return [int(a) for a in np.flatnonzero(self.feasible_mask())]

    def step(self, action):
        if self.done:
            raise InfeasibleActionError("episode is finished")
        vm = self.current
        st = self.st
        placement = self.state.deploy(vm, int(action), st)
        wait = st - vm.arrival
        self.waits.append(wait)
        self.log.append((vm.id, vm.arrival, st, wait, int(action), placement.pm,
                         placement.numa_mask))
        self._prev_st = st
        self._cursor += 1
        released = []
        obs = self._advance(released)
        info = {"st": st, "action": int(action), "released": released}
        return StepOutcome(reward=-float(wait), obs=obs, done=self.done, info=info)

    def result(self):
        return EpisodeResult(total_wait=int(sum(self.waits)), per_vm_wait=list(self.waits),
                             requests_served=len(self.waits), log=list(self.log))


def run_episode(trace, spec, scheduler, config, strict_fifo=False, requests=None):
    """Drive one episode with ``scheduler`` and return its EpisodeResult."""
    if hasattr(scheduler, "reset"):
        scheduler.reset()
    env = DvampEnv(trace, config, strict_fifo=strict_fifo)
    obs = env.reset(spec, requests=requests)
    while not env.done:
        action = scheduler.choose(obs, env.feasible_actions())
        obs = env.step(action).obs
    return env.result()


LOG_HEADER = ("j", "at", "st", "wait", "action", "pm", "numa_mask")


def format_log_rows(log):
    return [(j, at, st, wait, a, pm, "|".join(str(i) for i in mask))
            for j, at, st, wait, a, pm, mask in log]


def write_episode_log(result, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(LOG_HEADER)
        w.writerows(format_log_rows(result.log))
