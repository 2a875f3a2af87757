import dataclasses

import numpy as np
import pytest

from dvamp.cluster import ClusterConfig, ClusterState
from dvamp.env import (LOG_HEADER, DvampEnv, ObservableState, earliest_start, feasible_mask_normalized,
                       observe, run_episode, write_episode_log)
from dvamp.errors import InfeasibleActionError, UnschedulableError
from dvamp.schedulers import BalanceFit, FirstFit, RandomPolicy
from dvamp.workload import EpisodeSpec, build_trace, gen_adversarial, gen_synthetic

from conftest import vm


def test_reset_starts_empty(cfg):
    tr = gen_synthetic(500, cfg, seed=2)
    env = DvampEnv(tr, cfg)
    obs = env.reset(EpisodeSpec(100, 50))
    assert not obs.numa_util.any()
    assert obs.wait_so_far == 0
    assert obs.numa_util.shape == (5, 2, 2)


def test_zero_length_episode_is_terminal(cfg):
    tr = gen_synthetic(10, cfg, seed=2)
    env = DvampEnv(tr, cfg)
    obs = env.reset(EpisodeSpec(3, 0))
    assert env.done and not obs.pending
    assert not obs.feasible_mask().any()


def test_observation_hides_lifetimes(cfg):
    names = {f.name for f in dataclasses.fields(ObservableState)}
    assert names == {"numa_util", "vm_resources", "div", "wait_so_far", "pending"}
    s = ClusterState(cfg)
    s.deploy(vm((20, 9), lifetime=9), 0, 0)
    obs = observe(s, vm((4, 9), id=1), 0)
    assert np.allclose(obs.numa_util[0, 0], [0.5, 0.1])
    assert np.allclose(obs.vm_resources, [0.1, 0.1])


def test_normalized_mask_matches_state(cfg, rng):
    s = ClusterState(cfg)
    for j in range(40):
        v = vm((float(rng.integers(1, 40)), float(rng.integers(1, 90))), id=j)
        obs = observe(s, v, 0)
        assert np.array_equal(obs.feasible_mask(), s.feasible_mask(v))
        acts = s.feasible_actions(v)
        if acts:
            s.deploy(v, int(rng.choice(acts)), 0)


def test_feasible_mask_normalized_batch():
    util = np.zeros((2, 1, 2, 1))
    util[1, 0, 0, 0] = 0.9
    m = feasible_mask_normalized(util, np.array([[0.2], [0.3]]), np.array([0, 1]))
    assert m.tolist() == [[True, True], [False, False]]


def test_earliest_start_empty_cluster(cfg):
    assert earliest_start(ClusterState(cfg), vm((1, 1), arrival=4), 4) == 4


def test_earliest_start_worst_case():
    c = ClusterConfig(m=2, capacities=(0.5,), d_div=1, c_div=0.6)
    s = ClusterState(c)
    s.deploy(vm((0.5,), lifetime=2, config=c, id=0), 0, 0)
    s.deploy(vm((0.5,), lifetime=2, config=c, id=1), 2, 0)
    assert earliest_start(s, vm((1.0,), arrival=1, config=c, id=2), 1) == 2


def test_earliest_start_skips_useless_release(cfg):
    c = ClusterConfig(m=1)
    s = ClusterState(c)
    s.deploy(vm((30, 1), lifetime=3, id=0), 0, 0)     # ends at 3, too small to matter
    s.deploy(vm((10, 1), lifetime=5, id=1), 0, 0)     # NUMA 0 full until 5
    s.deploy(vm((40, 1), lifetime=9, id=2), 1, 0)     # NUMA 1 full until 9
    released = []
    assert earliest_start(s, vm((35, 1), id=3), 0, released) == 5
    assert released == [0, 1]


def test_earliest_start_oversized_vm():
    c = ClusterConfig(m=1, capacities=(1.0,), d_div=1, c_div=5)
    with pytest.raises(UnschedulableError):
        earliest_start(ClusterState(c), vm((1.5,), config=c), 0)


def test_rewards_and_total_wait():
    c = ClusterConfig(m=1)
    reqs = build_trace([((40, 1), 3, 2), ((40, 1), 3, 2), ((40, 1), 3, 1)], c)
    env = DvampEnv(reqs, c)
    obs = env.reset()
    rewards = []
    for expected_st in (3, 3, 5):
        assert env.st == expected_st
        out = env.step(env.feasible_actions()[0])
        rewards.append(out.reward)
    assert rewards == [0.0, 0.0, -2.0]
    assert out.done
    assert env.result().total_wait == -sum(rewards) == 2


def test_step_rejects_infeasible_action(cfg):
    tr = build_trace([((40, 1), 0, 4), ((1, 1), 0, 4)], cfg)
    env = DvampEnv(tr, cfg)
    env.reset()
    env.step(0)
    with pytest.raises(InfeasibleActionError):
        env.step(0)


def test_strict_fifo_separates_starts():
    c = ClusterConfig(m=2)
    tr = build_trace([((1, 1), 0, 5)] * 3, c)
    loose = run_episode(tr, None, FirstFit(), c)
    strict = run_episode(tr, None, FirstFit(), c, strict_fifo=True)
    assert loose.total_wait == 0
    assert strict.per_vm_wait == [0, 1, 2]


def test_adversarial_first_fit_wait():
    tr, c, _ = gen_adversarial(2, 2, 3, FirstFit())
    assert run_episode(tr, None, FirstFit(), c).total_wait == 2


def test_adversarial_balance_fit_wait():
    tr, c, _ = gen_adversarial(5, 50, 10, BalanceFit())
    assert run_episode(tr, None, BalanceFit(), c).total_wait == 36


def test_single_vm(cfg):
    tr = build_trace([((1, 1), 7, 3)], cfg)
    assert run_episode(tr, None, RandomPolicy(0), cfg).total_wait == 0


def test_episode_log(tmp_path, cfg):
    tr = build_trace([((16, 64), 0, 3), ((4, 8), 1, 3)], cfg)
    res = run_episode(tr, None, FirstFit(), cfg)
    p = tmp_path / "log.csv"
    write_episode_log(res, p)
    lines = p.read_text().splitlines()
    assert lines[0] == ",".join(LOG_HEADER)
    assert lines[1:] == ["0,0,0,0,0,0,0|1", "1,1,1,0,0,0,0"]
