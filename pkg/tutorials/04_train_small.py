"""A short DQN run on a contended 3-PM cluster, then evaluation at other m.

Takes a minute or two. The learning smoke test in tests/test_acceptance.py
runs this same configuration for seeds 0, 1 and 2.
"""
import logging

from dvamp.cluster import ClusterConfig
from dvamp.drl import TrainConfig, evaluate, train
from dvamp.schedulers import BalanceFit, FirstFit, QPolicy, RandomPolicy
from dvamp.workload import frozen_episodes, gen_synthetic

logging.basicConfig(level=logging.INFO, format="%(message)s")

config = ClusterConfig(m=3)
trace = gen_synthetic(20_000, config, seed=1, arrival_rate=0.25, mean_lifetime=30,
                      flavors=[(12, 8), (20, 8), (28, 8)], flavor_weights=[0.4, 0.3, 0.3])

cfg = TrainConfig(epochs=300, episode_len=200, valid_interval=50, valid_episodes=100,
                  warmup_episodes=20, batch_size=256, updates_per_epoch=96, reward_scale=0.1,
                  centered_advantage=True, seed=0)
result = train(trace, config, cfg, arch="spane")
print("best validation wait", result.best_score, "at epoch", result.best_epoch)

test = frozen_episodes(trace, "test", 100, 200, seed=0)
for sched in (QPolicy(result.best_net), FirstFit(), BalanceFit(), RandomPolicy(0)):
    print(f"{sched.name:12s} {evaluate(sched, trace, config, test).mean:8.1f}")

# %% no retraining needed for a bigger cluster
for m in (4, 6):
    bigger = ClusterConfig(m=m)
    specs = frozen_episodes(trace, "test", 50, 200, seed=0)
    print(m, "PMs:", evaluate(QPolicy(result.best_net), trace, bigger, specs).mean,
          "vs balance fit", evaluate(BalanceFit(), trace, bigger, specs).mean)
