"""Why greedy online placement can be far from optimal.

An adaptive adversary watches where a greedy scheduler puts 2qm tiny VMs at
t=0 and then makes the first VM on every PM long-lived. At t=1 m-1 VMs that
need a whole PM arrive and have to wait for those stragglers.
"""
from dvamp.env import run_episode
from dvamp.metrics import bound_report, gap_limit
from dvamp.oracle import brute_force_opt
from dvamp.schedulers import BalanceFit, FirstFit, RandomPolicy
from dvamp.workload import gen_adversarial

# %% the instance for m=2, q=2, mu=3
trace, config, targets = gen_adversarial(2, 2, 3, FirstFit())
for r in trace:
    print(r.id, r.resources, "at", r.arrival, "lt", r.lifetime, "split" if r.div else "")
print("targets:", targets)

# %% any greedy scheduler pays (m-1)(mu-1)
for sched in (FirstFit(), BalanceFit(), RandomPolicy(3)):
    tr, cfg, _ = gen_adversarial(3, 2, 10, sched)
    print(sched.name, run_episode(tr, None, sched, cfg).total_wait)

# %% the offline optimum packs the long VMs together (possible while m <= 2q)
print("OPT m=3 q=2:", brute_force_opt(*gen_adversarial(3, 2, 10, FirstFit())[:2],
                                       max_requests=14).total_wait)

# %% the gap ratio approaches (m-1)/(2m-1) * (mu-1) as q grows
for q in (2, 10, 100, 1000):
    r = bound_report(5, q, 10, FirstFit())
    print(f"q={q:5d}  ratio={r.ratio:.4f}  limit={gap_limit(5, 10):.4f}")
