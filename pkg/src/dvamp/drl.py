"""Double DQN with dueling heads, n-step returns and optional permutation
augmentation of the replay data."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from .env import DvampEnv, feasible_mask_normalized, run_episode
from .errors import NumericError
from .qnet import Adam, ObsBatch, make_network, permute_obs
from .schedulers import QPolicy, masked_argmax
from .workload import frozen_episodes, sample_episode

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 5000
    batch_size: int = 1024
    lr: float = 0.01
    l2: float = 1e-8
    n_step: int = 50
    eps_start: float = 0.6
    eps_end: float = 0.0
    valid_interval: int = 250
    valid_episodes: int = 150
    test_episodes: int = 1000
    warmup_episodes: int = 100
    gamma: float = 0.99
    target_sync_interval: int = 100
    replay_capacity: int = 200_000
    episode_len: int = 1000
    updates_per_epoch: int = 1
    augment_copies: int = 23
    reward_scale: float = 1.0
    centered_advantage: bool = False
    seed: int = 0
    eval_seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "n_step", "valid_interval", "target_sync_interval",
                     "replay_capacity", "episode_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")

    def epsilon(self, epoch):
        if self.epochs <= 1:
            return self.eps_start
        frac = min(epoch / (self.epochs - 1), 1.0)
        return self.eps_start + (self.eps_end - self.eps_start) * frac

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Transition:
    obs: object
    action: int
    nstep_reward: float
    next_obs: object      # None when truncated
    steps: int
    truncated: bool


def nstep_transitions(observations, actions, rewards, n, gamma):
    """Slide an n-step window over one finished episode.

    Windows that reach the end of the episode are truncated: they sum the
    remaining rewards and carry no successor to bootstrap from.
    """
    L = len(rewards)
    rewards = np.asarray(rewards, dtype=float)
    out = []
    for j in range(L):
        steps = min(n, L - j)
        ret = float(np.sum(rewards[j:j + steps] * gamma ** np.arange(steps)))
        if j + n < L:
            out.append(Transition(observations[j], int(actions[j]), ret, observations[j + n], n, False))
        else:
            out.append(Transition(observations[j], int(actions[j]), ret, None, steps, True))
    return out


def augment_action(action, sigma):
    """Move an action to PM ``sigma[action // 2]``, keeping its NUMA index."""
    sigma = np.asarray(sigma, dtype=int)
    return int(2 * sigma[action // 2] + action % 2)


def augment(transition, sigmas):
    """Permuted copies of a transition (the original is not included).

    The action is relabeled with ``augment_action``; observations are
    reordered with the inverse permutation so that the relabeled action
    addresses the same physical machine state as before.
    """
    out = []
    for sigma in sigmas:
        sigma = np.asarray(sigma, dtype=int)
        if sigma.ndim != 1 or not np.array_equal(np.sort(sigma), np.arange(len(sigma))):
            raise ValueError(f"{sigma.tolist()} is not a permutation")
        inv = np.empty_like(sigma)
        inv[sigma] = np.arange(len(sigma))
        nxt = None if transition.next_obs is None else permute_obs(transition.next_obs, inv)
        out.append(Transition(permute_obs(transition.obs, inv), augment_action(transition.action, sigma),
                              transition.nstep_reward, nxt, transition.steps, transition.truncated))
    return out


class ReplayMemory:
    """Ring buffer of transitions stored column-wise."""

    def __init__(self, capacity, seed=0):
        self.capacity = capacity
        self.rng = np.random.default_rng(seed)
        self.size = 0
        self.pos = 0
        self.pushed = 0
        self._cols = None

    def __len__(self):
        return self.size

    def _allocate(self, t):
        m, _, D = t.obs.numa_util.shape
        cap = self.capacity
        self._cols = {
            "util": np.zeros((cap, m, 2, D)), "vm": np.zeros((cap, D)),
            "div": np.zeros(cap), "wait": np.zeros(cap),
            "action": np.zeros(cap, dtype=int), "reward": np.zeros(cap),
            "next_util": np.zeros((cap, m, 2, D)), "next_vm": np.zeros((cap, D)),
            "next_div": np.zeros(cap), "next_wait": np.zeros(cap),
            "steps": np.zeros(cap, dtype=int), "truncated": np.zeros(cap, dtype=bool),
        }

    def push(self, t):
        if self._cols is None:
            self._allocate(t)
        c, i = self._cols, self.pos
        c["util"][i] = t.obs.numa_util
        c["vm"][i] = t.obs.vm_resources
        c["div"][i] = t.obs.div
        c["wait"][i] = t.obs.wait_so_far
        c["action"][i] = t.action
        c["reward"][i] = t.nstep_reward
        c["steps"][i] = t.steps
        c["truncated"][i] = t.truncated
        if t.next_obs is not None:
            c["next_util"][i] = t.next_obs.numa_util
            c["next_vm"][i] = t.next_obs.vm_resources
            c["next_div"][i] = t.next_obs.div
            c["next_wait"][i] = t.next_obs.wait_so_far
        else:
            c["next_util"][i] = 0.0
            c["next_vm"][i] = 0.0
            c["next_div"][i] = 0.0
            c["next_wait"][i] = 0.0
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.pushed += 1

    def sample(self, batch_size):
        idx = self.rng.integers(0, self.size, size=batch_size)
        return {k: v[idx] for k, v in self._cols.items()}


def batch_obs(sample, prefix=""):
    return ObsBatch(sample[prefix + "util"], sample[prefix + "vm"], sample[prefix + "div"],
                    sample[prefix + "wait"])


def td_targets(sample, online, target, gamma):
    """Double-DQN n-step targets.

    The online network picks the successor action (restricted to placements
    that fit according to the successor's capacity headroom); the target
    network scores it. Truncated windows do not bootstrap.
    """
    reward = sample["reward"]
    live = ~sample["truncated"]
    y = reward.astype(float).copy()
    if gamma == 0.0 or not live.any():
        return y
    nxt = batch_obs({k: v[live] for k, v in sample.items()}, "next_")
    mask = feasible_mask_normalized(nxt.util, nxt.vm, nxt.div)
    q_online = np.where(mask, online.forward(nxt).q, -np.inf)
    best = np.argmax(q_online, axis=1)
    q_target = target.forward(nxt).q[np.arange(len(best)), best]
    y[live] += gamma ** sample["steps"][live] * q_target
    return y


def collect_episode(env, net, eps, rng, spec, n, gamma, reward_scale=1.0):
    """Play one epsilon-greedy episode; returns (transitions, total_wait)."""
    obs = env.reset(spec)
    observations, actions, rewards = [], [], []
    while not env.done:
        feasible = env.feasible_actions()
        if rng.random() < eps:
            a = int(feasible[rng.integers(len(feasible))])
        else:
            a = masked_argmax(net.q_values(obs), feasible)
        out = env.step(a)
        observations.append(obs)
        actions.append(a)
        rewards.append(out.reward * reward_scale)
        obs = out.obs
    return nstep_transitions(observations, actions, rewards, n, gamma), env.result().total_wait


@dataclass
class EvalStats:
    totals: list

    @property
    def mean(self):
        return float(np.mean(self.totals)) if self.totals else 0.0

    def percentile(self, p):
        return float(np.percentile(self.totals, p)) if self.totals else 0.0

    def to_dict(self):
        return {"episodes": len(self.totals), "mean": self.mean,
                "p50": self.percentile(50), "p90": self.percentile(90), "totals": list(self.totals)}


def evaluate(scheduler, trace, cluster_config, specs):
    """Total wait of ``scheduler`` on each episode spec."""
    return EvalStats([run_episode(trace, s, scheduler, cluster_config).total_wait for s in specs])


@dataclass
class TrainResult:
    best_net: object
    best_score: float
    best_epoch: int
    final_net: object
    curves: list = field(default_factory=list)
    transitions_stored: int = 0


def train(trace, cluster_config, config, arch="spane", progress=None):
    """Train a Q-network and keep the parameters with the lowest validation wait.

    Validation runs the greedy policy on a frozen set of validation-split
    episodes and scores the mean total wait. ``mlp_aug`` stores 24 versions
    of each transition and collects fresh episodes only when it has fallen
    behind the other architectures' data volume.
    """
    rng = np.random.default_rng(config.seed)
    net = make_network(arch, cluster_config.m, cluster_config.D, seed=config.seed,
                       centered=config.centered_advantage)
    target = net.copy()
    opt = Adam(net.params, lr=config.lr, weight_decay=config.l2)
    memory = ReplayMemory(config.replay_capacity, seed=config.seed + 1)
    env = DvampEnv(trace, cluster_config)
    valid_specs = frozen_episodes(trace, "valid", config.valid_episodes, config.episode_len,
                                  config.eval_seed)
    copies = config.augment_copies if arch == "mlp_aug" else 0
    m = cluster_config.m

    budget = 0      # episodes' worth of data the plain architectures would have stored
    stored = 0      # episodes' worth stored so far, counting augmented copies

    def collect(eps):
        nonlocal stored
        spec = sample_episode(trace, "train", config.episode_len, rng)
        transitions, _ = collect_episode(env, net, eps, rng, spec, config.n_step, config.gamma,
                                         config.reward_scale)
        for t in transitions:
            memory.push(t)
            if copies:
                sigmas = [rng.permutation(m) for _ in range(copies)]
                for a in augment(t, sigmas):
                    memory.push(a)
        stored += 1 + copies

    def validate():
        return evaluate(QPolicy(net), trace, cluster_config, valid_specs).mean

    for _ in range(config.warmup_episodes):
        budget += 1
        if stored < budget:
            collect(config.eps_start)

    best_score = validate()
    best_net, best_epoch = net.copy(), 0
    curves = [{"epoch": 0, "eps": config.eps_start, "td_loss": "", "valid_score": best_score}]
    n_updates = 0
    for epoch in range(1, config.epochs + 1):
        eps = config.epsilon(epoch - 1)
        budget += 1
        if stored < budget:
            collect(eps)
        losses = []
        if len(memory) > 0:
            for _ in range(config.updates_per_epoch):
                sample = memory.sample(config.batch_size)
                y = td_targets(sample, net, target, config.gamma)
                loss, grads = net.loss_grads(batch_obs(sample), sample["action"], y)
                if not np.isfinite(loss):
                    raise NumericError(f"TD loss diverged at epoch {epoch}")
                opt.step(net.params, grads)
                losses.append(loss)
                n_updates += 1
                if n_updates % config.target_sync_interval == 0:
                    target.load_params(net)
        row = {"epoch": epoch, "eps": eps, "td_loss": float(np.mean(losses)) if losses else "",
               "valid_score": ""}
        if epoch % config.valid_interval == 0 or epoch == config.epochs:
            score = validate()
            row["valid_score"] = score
            if score < best_score:
                best_score, best_net, best_epoch = score, net.copy(), epoch
            log.info("epoch %d eps %.3f valid %.2f (best %.2f @ %d)", epoch, eps, score,
                     best_score, best_epoch)
            if progress:
                progress(row)
        curves.append(row)
    return TrainResult(best_net=best_net, best_score=best_score, best_epoch=best_epoch,
                       final_net=net, curves=curves, transitions_stored=memory.pushed)


CURVE_HEADER = ("epoch", "eps", "td_loss", "valid_score")


def write_curves(curves, path):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CURVE_HEADER, lineterminator="\n")
        w.writeheader()
        for row in curves:
            w.writerow({k: row[k] for k in CURVE_HEADER})


def write_manifest(path, **payload):
    with open(path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
