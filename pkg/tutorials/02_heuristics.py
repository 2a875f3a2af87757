"""First Fit, Balance Fit and random placement on a synthetic workload."""
import os
import tempfile

import numpy as np

from dvamp.cluster import ClusterConfig
from dvamp.drl import evaluate
from dvamp.env import run_episode, write_episode_log
from dvamp.schedulers import BalanceFit, FirstFit, RandomPolicy
from dvamp.workload import EpisodeSpec, frozen_episodes, gen_synthetic, save_trace

config = ClusterConfig(m=5)            # 5 PMs x 2 NUMA nodes, 40 cores / 90 GB each
trace = gen_synthetic(20_000, config, seed=0, arrival_rate=1.0, mean_lifetime=20)
print(len(trace), "requests,", sum(r.div for r in trace), "of them split over both NUMA nodes")

# %% fixed test episodes, as used for every comparison
specs = frozen_episodes(trace, "test", 100, 300, seed=0)
for sched in (FirstFit(), BalanceFit(), RandomPolicy(0)):
    stats = evaluate(sched, trace, config, specs)
    print(f"{sched.name:12s} mean wait {stats.mean:8.1f}  p90 {stats.percentile(90):8.1f}")

# %% one episode in detail
res = run_episode(trace, EpisodeSpec(specs[0].start_index, 300), BalanceFit(), config)
waits = np.array(res.per_vm_wait)
print("served", res.requests_served, "waited", int((waits > 0).sum()), "longest wait", waits.max())

out = tempfile.mkdtemp()
write_episode_log(res, os.path.join(out, "balance_fit.csv"))
save_trace(trace, os.path.join(out, "synthetic.csv"), config)
print("wrote", sorted(os.listdir(out)), "to", out)
