"""Online VM placement on multi-NUMA hosts.

A small numpy library: a cluster simulator with NUMA-aware capacity, trace
ingestion and generators, First Fit / Balance Fit baselines, a
permutation-equivariant dueling Q-network trained with double n-step DQN,
and an exact offline solver for tiny instances.
"""
from .cluster import ClusterConfig, ClusterState, Placement, decode_action
from .env import DvampEnv, ObservableState, run_episode
from .errors import (AccountingError, ConfigError, DvampError, InfeasibleActionError, NumericError,
                     OracleLimitError, ShapeError, TraceDataError, TraceParseError, UnschedulableError)
from .schedulers import BalanceFit, FirstFit, QPolicy, RandomPolicy, make_scheduler
from .workload import (EpisodeSpec, VmRequest, WorkloadTrace, gen_adversarial, gen_synthetic,
                       load_trace, save_trace)

__version__ = "0.1.0"
