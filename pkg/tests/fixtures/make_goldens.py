"""Regenerate the heuristic golden logs. Only rerun on an intentional behavior change."""
import json
import os

from dvamp.cluster import ClusterConfig
from dvamp.env import run_episode, write_episode_log
from dvamp.schedulers import BalanceFit, FirstFit
from dvamp.workload import EpisodeSpec, gen_synthetic

HERE = os.path.dirname(os.path.abspath(__file__))
CONFIG = ClusterConfig(m=5)
TRACE = dict(n=600, seed=2024, arrival_rate=1.0, mean_lifetime=20)
SPEC = EpisodeSpec(0, 400)


def golden_runs():
    trace = gen_synthetic(config=CONFIG, **TRACE)
    return {s.name: run_episode(trace, SPEC, s, CONFIG) for s in (FirstFit(), BalanceFit())}


if __name__ == "__main__":
    totals = {}
    for name, result in golden_runs().items():
        write_episode_log(result, os.path.join(HERE, f"golden_{name}.csv"))
        totals[name] = result.total_wait
    with open(os.path.join(HERE, "golden_totals.json"), "w") as f:
        json.dump({"trace": TRACE, "episode": [SPEC.start_index, SPEC.length], "totals": totals}, f, indent=1)
