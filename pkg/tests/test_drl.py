import numpy as np
import pytest

from dvamp.cluster import ClusterConfig
from dvamp.drl import (CURVE_HEADER, ReplayMemory, TrainConfig, Transition, augment, augment_action,
                       collect_episode, evaluate, nstep_transitions, td_targets, train, write_curves)
from dvamp.env import DvampEnv, ObservableState
from dvamp.qnet import SpaneNet, inverse_permutation, stack_obs
from dvamp.schedulers import FirstFit, QPolicy, RandomPolicy
from dvamp.workload import EpisodeSpec, frozen_episodes, gen_synthetic


def obs(m=2, fill=0.0, wait=0):
    return ObservableState(np.full((m, 2, 2), fill), np.array([0.1, 0.1]), 0, wait)


def test_train_config_defaults():
    c = TrainConfig()
    assert (c.lr, c.n_step, c.batch_size, c.epochs, c.valid_interval, c.valid_episodes,
            c.test_episodes, c.eps_start, c.eps_end, c.l2) == \
        (0.01, 50, 1024, 5000, 250, 150, 1000, 0.6, 0.0, 1e-8)
    assert c.epsilon(0) == 0.6 and c.epsilon(4999) == 0.0
    with pytest.raises(ValueError):
        TrainConfig(eps_start=0.1, eps_end=0.5)


def test_nstep_window_sum():
    o = [obs(wait=j) for j in range(3)]
    ts = nstep_transitions(o, [0, 1, 2], [0.0, -3.0, -1.0], n=2, gamma=1.0)
    assert ts[0].nstep_reward == -3.0 and ts[0].next_obs is o[2] and not ts[0].truncated
    assert ts[1].nstep_reward == -4.0 and ts[1].truncated and ts[1].steps == 2
    assert ts[2].nstep_reward == -1.0 and ts[2].truncated and ts[2].steps == 1


def test_nstep_discounting():
    o = [obs() for _ in range(4)]
    ts = nstep_transitions(o, [0] * 4, [-1.0] * 4, n=3, gamma=0.5)
    assert ts[0].nstep_reward == pytest.approx(-1.75)


def _sample(rewards, truncated, steps=None):
    B = len(rewards)
    o = stack_obs([obs(m=3, fill=0.2) for _ in range(B)])
    return {"util": o.util, "vm": o.vm, "div": o.div, "wait": o.wait,
            "action": np.zeros(B, dtype=int), "reward": np.asarray(rewards, dtype=float),
            "next_util": o.util, "next_vm": o.vm, "next_div": o.div, "next_wait": o.wait,
            "steps": np.asarray(steps or [1] * B), "truncated": np.asarray(truncated)}


def test_td_targets_no_bootstrap_cases():
    net = SpaneNet(2, seed=0)
    s = _sample([-1.0, -2.0], [True, True])
    assert td_targets(s, net, net, 0.99).tolist() == [-1.0, -2.0]
    s = _sample([-1.0, -2.0], [False, False])
    assert td_targets(s, net, net, 0.0).tolist() == [-1.0, -2.0]
    zero = SpaneNet(2, seed=0)
    for v in zero.params.values():
        v[...] = 0
    assert td_targets(s, net, zero, 0.99).tolist() == [-1.0, -2.0]


def test_td_targets_double_dqn():
    online, target = SpaneNet(2, seed=1), SpaneNet(2, seed=2)
    s = _sample([-1.0], [False], steps=[3])
    nxt = stack_obs([obs(m=3, fill=0.2)])
    a = int(np.argmax(online.forward(nxt).q[0]))
    expected = -1.0 + 0.9 ** 3 * target.forward(nxt).q[0, a]
    assert td_targets(s, online, target, 0.9)[0] == pytest.approx(expected)


def test_augment_action_examples():
    assert augment_action(0, [1, 0]) == 2
    assert augment_action(3, [1, 0]) == 1
    assert augment_action(5, [0, 1, 2]) == 5


def test_augment_preserves_target_machine(rng):
    o = ObservableState(rng.uniform(size=(4, 2, 2)), np.array([0.1, 0.2]), 0, 3)
    t = Transition(o, 5, -2.0, o, 3, False)
    (same,) = augment(t, [np.arange(4)])
    assert same.action == 5 and np.array_equal(same.obs.numa_util, o.numa_util)
    sigmas = [rng.permutation(4) for _ in range(10)]
    for sigma, a in zip(sigmas, augment(t, sigmas)):
        pm, numa = divmod(a.action, 2)
        assert np.array_equal(a.obs.numa_util[pm], o.numa_util[2])
        assert numa == 1
        assert a.nstep_reward == -2.0 and a.steps == 3
        assert np.array_equal(a.obs.numa_util, o.numa_util[inverse_permutation(sigma)])


def test_augment_keeps_feasibility(rng):
    cfg = ClusterConfig(m=4)
    tr = gen_synthetic(400, cfg, seed=1, arrival_rate=2.0)
    env = DvampEnv(tr, cfg)
    o = env.reset(EpisodeSpec(0, 100))
    while not env.done:
        acts = env.feasible_actions()
        a = int(rng.choice(acts))
        for aug in augment(Transition(o, a, 0.0, None, 1, True), [rng.permutation(4) for _ in range(5)]):
            assert aug.obs.feasible_mask()[aug.action]
        o = env.step(a).obs


def test_replay_ring_buffer():
    mem = ReplayMemory(3, seed=0)
    for j in range(5):
        mem.push(Transition(obs(wait=j), j, float(j), None, 1, True))
    assert len(mem) == 3 and mem.pushed == 5
    s = mem.sample(50)
    assert set(s["reward"].tolist()) == {2.0, 3.0, 4.0}


def test_eps_one_matches_random_distribution(cfg):
    tr = gen_synthetic(200, cfg, seed=0, arrival_rate=0.5)
    env = DvampEnv(tr, cfg)
    net = SpaneNet(2, seed=0)
    counts = np.zeros(cfg.n_actions)
    for seed in range(20):
        ts, _ = collect_episode(env, net, 1.0, np.random.default_rng(seed), EpisodeSpec(0, 50), 3, 1.0)
        for t in ts:
            counts[t.action] += 1
    freq = counts / counts.sum()
    assert np.all(np.abs(freq - 0.1) < 0.03)


def test_eps_zero_zero_net_is_first_fit(cfg):
    tr = gen_synthetic(300, cfg, seed=0, arrival_rate=1.0)
    net = SpaneNet(2)
    for v in net.params.values():
        v[...] = 0
    specs = frozen_episodes(tr, "valid", 5, 40, 0)
    assert evaluate(QPolicy(net), tr, cfg, specs).totals == evaluate(FirstFit(), tr, cfg, specs).totals


def small_cfg(**kw):
    base = dict(epochs=6, episode_len=30, valid_interval=3, valid_episodes=3, warmup_episodes=2,
                batch_size=16, n_step=3, target_sync_interval=4, replay_capacity=5000, seed=1)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def small_trace():
    c = ClusterConfig(m=3)
    return gen_synthetic(2000, c, seed=2, arrival_rate=0.6), c


def test_train_zero_epochs_returns_initial(small_trace):
    tr, c = small_trace
    res = train(tr, c, small_cfg(epochs=0))
    init = SpaneNet(2, seed=1)
    for k, v in init.params.items():
        assert np.array_equal(res.best_net.params[k], v)
    specs = frozen_episodes(tr, "valid", 3, 30, 0)
    assert res.best_score == evaluate(QPolicy(init), tr, c, specs).mean


def test_train_is_deterministic(small_trace, tmp_path):
    tr, c = small_trace
    a = train(tr, c, small_cfg())
    b = train(tr, c, small_cfg())
    assert a.curves == b.curves
    write_curves(a.curves, tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == ",".join(CURVE_HEADER)
    assert len(a.curves) == 7


@pytest.mark.parametrize("arch", ["mlp", "mlp_aug"])
def test_train_mlp_variants(small_trace, arch):
    tr, c = small_trace
    res = train(tr, c, small_cfg(augment_copies=5), arch=arch)
    assert res.best_net.arch == "mlp"
    plain = train(tr, c, small_cfg(), arch="mlp")
    # augmentation stores 6 copies per transition but only collects when behind
    assert res.transitions_stored <= plain.transitions_stored * 6
    if arch == "mlp_aug":
        assert res.transitions_stored != plain.transitions_stored
