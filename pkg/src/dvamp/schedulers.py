"""Placement policies.

A scheduler is any object with ``choose(obs, feasible) -> action``; it may
also define ``reset()`` (called at the start of every episode), ``name`` and
``deterministic``. ``feasible`` is the ascending list of 0-based actions that
fit at the request's start tick, and the returned action must be one of them.
"""
from __future__ import annotations

import numpy as np

from .errors import InfeasibleActionError, NumericError


def _require(feasible):
    if len(feasible) == 0:
        raise InfeasibleActionError("no feasible action to choose from")


def first_fit(obs, feasible):
    """Lowest-numbered feasible action: PM order first, NUMA 0 before 1."""
    _require(feasible)
    return int(min(feasible))


def balance_scores(numa_util):
    """Per-PM imbalance, sum over resources of |u0 - u1| / R (inputs normalized)."""
    return np.abs(numa_util[:, 0, :] - numa_util[:, 1, :]).sum(axis=1)


def balance_fit(obs, feasible):
    """Split requests go to the first PM that fits. Single-node requests go to
    the most imbalanced PM with room, on its less utilized feasible node."""
    _require(feasible)
    if obs.div:
        return int(min(feasible))
    feasible = set(int(a) for a in feasible)
    pms = sorted({a // 2 for a in feasible})
    scores = balance_scores(obs.numa_util)
    best_pm = pms[int(np.argmax(scores[pms]))]
    options = [a for a in (2 * best_pm, 2 * best_pm + 1) if a in feasible]
    if len(options) == 1:
        return options[0]
    load = obs.numa_util[best_pm].sum(axis=1)
    return options[1] if load[1] < load[0] else options[0]


def random_policy(obs, feasible, rng):
    _require(feasible)
    return int(feasible[rng.integers(len(feasible))])


def masked_argmax(q, feasible):
    """Index of the largest q among feasible actions, ties to the lowest id."""
    _require(feasible)
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise NumericError("non-finite Q values")
    idx = np.asarray(sorted(feasible), dtype=int)
    return int(idx[int(np.argmax(q[idx]))])


def greedy_q_policy(qnet, obs, feasible):
    return masked_argmax(qnet.q_values(obs), feasible)


class Scheduler:
    name = "scheduler"
    deterministic = True

    def reset(self):
        pass

    def choose(self, obs, feasible):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class FirstFit(Scheduler):
    name = "first_fit"

    def choose(self, obs, feasible):
        return first_fit(obs, feasible)


class BalanceFit(Scheduler):
    name = "balance_fit"

    def choose(self, obs, feasible):
        return balance_fit(obs, feasible)


class RandomPolicy(Scheduler):
    """Uniform over feasible actions; the stream restarts from ``seed`` on reset."""

    name = "random"
    deterministic = False

    def __init__(self, seed=0):
        self.seed = seed
        self.reset()

    def reset(self):
        self.rng = np.random.default_rng(self.seed)

    def choose(self, obs, feasible):
        return random_policy(obs, feasible, self.rng)


class QPolicy(Scheduler):
    """Greedy masked-argmax policy over any network exposing ``q_values(obs)``."""

    name = "qnet"

    def __init__(self, qnet):
        self.qnet = qnet

    def choose(self, obs, feasible):
        return greedy_q_policy(self.qnet, obs, feasible)


SCHEDULERS = {"first_fit": FirstFit, "balance_fit": BalanceFit, "random": RandomPolicy}


def make_scheduler(name, seed=0):
    if name == "random":
        return RandomPolicy(seed)
    try:
        return SCHEDULERS[name]()
    except KeyError:
        raise ValueError(f"unknown scheduler {name!r}") from None
