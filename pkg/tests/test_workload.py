import numpy as np
import pytest

from dvamp.cluster import ClusterConfig
from dvamp.errors import ConfigError, TraceDataError, TraceParseError
from dvamp.schedulers import BalanceFit, FirstFit, RandomPolicy
from dvamp.workload import (EpisodeSpec, build_trace, classify_div, episode_requests, frozen_episodes,
                            gen_adversarial, gen_synthetic, load_sidecar_config, load_trace,
                            sample_episode, save_trace, split_range)


def write(tmp_path, text, name="trace.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


@pytest.mark.parametrize("res,d,c,expected", [((2, 10), 2, 10, 1), ((1, 1), 2, 10, 0), ((0.5,), 1, 0.6, 0)])
def test_classify_div(res, d, c, expected):
    assert classify_div(res, d, c) == expected


def test_classify_div_bad_dimension():
    with pytest.raises(ConfigError):
        classify_div((1, 2), 3, 1)


def test_load_pairs_creation_and_deletion(tmp_path, cfg):
    p = write(tmp_path, "vm_id,cpu,memory,time,type\n7,4,8,100,0\n7,4,8,160,1\n")
    tr = load_trace(p, cfg)
    (r,) = tr.requests
    assert (r.arrival, r.lifetime, r.resources, r.div, r.source_id) == (100, 60, (4.0, 8.0), 0, "7")
    assert tr.stats == {"creations": 1, "deletions": 1, "paired": 1, "dropped": 0}


def test_load_drops_unpaired_creation(tmp_path, cfg):
    p = write(tmp_path, "vmid,cpu,memory,time,type\n1,4,8,0,0\n2,4,8,5,0\n1,4,8,9,1\n")
    tr = load_trace(p, cfg)
    assert [r.source_id for r in tr] == ["1"]
    assert tr.stats["dropped"] == 1


def test_load_deletion_before_creation(tmp_path, cfg):
    p = write(tmp_path, "vm_id,cpu,memory,time,type\n7,4,8,100,0\n7,4,8,90,1\n")
    with pytest.raises(TraceDataError):
        load_trace(p, cfg)


@pytest.mark.parametrize("body,line", [("1,4,x,0,0\n", 2), ("1,4,8,0,0\n1,4,8,3,2\n", 3),
                                       ("1,4,8,0\n", 2), ("1,4,8,0.5,0\n", 2)])
def test_load_parse_errors_report_line(tmp_path, cfg, body, line):
    p = write(tmp_path, "vm_id,cpu,memory,time,type\n" + body)
    with pytest.raises(TraceParseError) as err:
        load_trace(p, cfg)
    assert err.value.line == line
    assert str(err.value).startswith(f"line {line}:")


def test_load_wrong_resource_count(tmp_path):
    p = write(tmp_path, "vm_id,cpu,memory,time,type\n1,4,8,0,0\n1,4,8,3,1\n")
    with pytest.raises(TraceParseError):
        load_trace(p, ClusterConfig(capacities=(1.0,), d_div=1, c_div=1))


def test_load_is_deterministic_and_sorted(tmp_path, cfg):
    p = write(tmp_path, "vm_id,cpu,memory,time,type\n"
                        "b,2,4,5,0\na,1,2,5,0\nc,1,2,1,0\na,1,2,9,1\nb,2,4,7,1\nc,1,2,2,1\n")
    a, b = load_trace(p, cfg), load_trace(p, cfg)
    assert a == b
    assert [r.source_id for r in a] == ["c", "b", "a"]    # arrival ties keep file order
    assert [r.id for r in a] == [0, 1, 2]


def test_save_load_round_trip(tmp_path, cfg):
    tr = gen_synthetic(300, cfg, seed=5)
    p = tmp_path / "syn.csv"
    save_trace(tr, p, cfg)
    assert load_sidecar_config(p) == cfg
    back = load_trace(p, cfg)
    assert [(r.resources, r.arrival, r.lifetime, r.div) for r in back] == \
        [(r.resources, r.arrival, r.lifetime, r.div) for r in tr]


def test_synthetic_seeded():
    c = ClusterConfig(m=3)
    assert gen_synthetic(200, c, seed=3) == gen_synthetic(200, c, seed=3)
    assert gen_synthetic(200, c, seed=3) != gen_synthetic(200, c, seed=4)
    tr = gen_synthetic(200, c, seed=3)
    arr = [r.arrival for r in tr]
    assert arr == sorted(arr)
    assert min(r.lifetime for r in tr) >= 1


def test_adversarial_m2_q2_mu3():
    tr, c, targets = gen_adversarial(2, 2, 3, FirstFit())
    small = [r for r in tr if r.arrival == 0]
    big = [r for r in tr if r.arrival == 1]
    assert len(small) == 8 and all(r.resources == (0.25,) and r.div == 0 for r in small)
    assert len(big) == 1 and big[0].resources == (1.0,) and big[0].div == 1 and big[0].lifetime == 1
    assert targets == {"ON": 2, "OPT": 0, "TR": 4.0}
    # one long-lived request per PM of the probe run
    assert sorted(r.lifetime for r in small).count(3) == 2


def test_adversarial_targets_small_cases():
    _, _, t = gen_adversarial(2, 1, 2, FirstFit())
    assert (t["ON"], t["OPT"]) == (1, 0)
    tr, _, t = gen_adversarial(1, 4, 7, BalanceFit())
    assert t["ON"] == 0
    assert all(r.arrival == 0 for r in tr)


def test_adversarial_adapts_to_scheduler():
    tr_ff, _, _ = gen_adversarial(3, 2, 5, FirstFit())
    tr_rnd, _, _ = gen_adversarial(3, 2, 5, RandomPolicy(11))
    assert tr_ff.stats["long_ids"] == [0, 4, 8]
    assert tr_rnd.stats["long_ids"] != tr_ff.stats["long_ids"]


def test_adversarial_rejects_fractional_mu():
    with pytest.raises(ConfigError):
        gen_adversarial(2, 2, 2.5, FirstFit())


def test_split_ranges_full_length():
    assert split_range("train", 110_000) == (0, 50_000)
    assert split_range("valid", 110_000) == (50_000, 70_000)
    assert split_range("test", 110_000) == (70_000, 110_000)


class _Fake:
    def __init__(self, n):
        self.requests = tuple(range(n))

    def __len__(self):
        return len(self.requests)


def test_sample_episode_within_split():
    rng = np.random.default_rng(0)
    tr = _Fake(110_000)
    for _ in range(200):
        s = sample_episode(tr, "train", 100, rng)
        assert 0 <= s.start_index < 50_000
        s = sample_episode(tr, "test", 100, rng)
        assert 70_000 <= s.start_index < 110_000 and s.start_index + 100 <= 110_000


def test_empty_episode(cfg):
    from dvamp.env import run_episode
    tr = gen_synthetic(50, cfg, seed=0)
    s = sample_episode(tr, "train", 0, np.random.default_rng(0))
    assert s.length == 0
    assert episode_requests(tr, s) == ()
    assert run_episode(tr, s, FirstFit(), cfg).total_wait == 0


def test_frozen_episodes_reproducible(cfg):
    tr = gen_synthetic(2000, cfg, seed=0)
    a = frozen_episodes(tr, "valid", 10, 50, seed=4)
    assert a == frozen_episodes(tr, "valid", 10, 50, seed=4)
    assert a != frozen_episodes(tr, "test", 10, 50, seed=4)
    assert all(isinstance(s, EpisodeSpec) and s.length == 50 for s in a)


def test_build_trace_rejects_bad_records(cfg):
    with pytest.raises(TraceDataError):
        build_trace([((1, 1), 0, 0)], cfg)
    with pytest.raises(TraceDataError):
        build_trace([((100, 1), 0, 1)], cfg)
