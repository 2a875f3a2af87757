"""Exact optimum for a tiny instance, and the same instance as a MILP.

The LP file can be handed to any MILP solver; if highspy is installed we
solve it here and check both answers agree.
"""
import os
import tempfile

from dvamp.cluster import ClusterConfig
from dvamp.env import run_episode
from dvamp.oracle import brute_force_opt, export_milp, parse_solution, validate_solution
from dvamp.schedulers import BalanceFit, FirstFit
from dvamp.workload import build_trace

config = ClusterConfig(m=1, capacities=(4.0, 4.0), d_div=2, c_div=3)
trace = build_trace([((3, 1), 0, 2), ((3, 3), 0, 3), ((2, 1), 1, 1), ((4, 1), 1, 2)], config)

opt = brute_force_opt(trace, config)
print("optimal total wait", opt.total_wait, "after", opt.nodes, "search nodes")
for s in opt.schedule:
    print("  vm", s.vm_id, "pm", s.pm, "numa", s.numa_mask, "start", s.start)
print("first fit", run_episode(trace, None, FirstFit(), config).total_wait,
      "balance fit", run_episode(trace, None, BalanceFit(), config).total_wait)

lp = export_milp(trace, config)
path = os.path.join(tempfile.mkdtemp(), "tiny.lp")
with open(path, "w") as f:
    f.write(lp)
print(len(lp.splitlines()), "LP lines written to", path)

try:
    import highspy
except ImportError:
    highspy = None
if highspy:
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.readModel(path)
    h.run()
    lp_model = h.getLp()
    values = h.getSolution().col_value
    text = "\n".join(f"{lp_model.col_names_[i]} {values[i]}" for i in range(lp_model.num_col_))
    sol = parse_solution(text, trace)
    print("HiGHS objective", h.getInfo().objective_function_value,
          "replayed wait", validate_solution(trace, config, sol))
