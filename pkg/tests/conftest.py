import numpy as np
import pytest

from dvamp.cluster import ClusterConfig
from dvamp.workload import VmRequest, classify_div


def vm(resources, arrival=0, lifetime=1, config=None, id=0):
    config = config or ClusterConfig()
    resources = tuple(float(x) for x in resources)
    return VmRequest(id=id, resources=resources, arrival=arrival, lifetime=lifetime,
                     div=classify_div(resources, config.d_div, config.c_div))


@pytest.fixture
def cfg():
    return ClusterConfig()


@pytest.fixture
def cfg2():
    return ClusterConfig(m=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CRITERIA = {
    1: "greedy lower bound (ON exact, OPT=0 at q=2, ratio at q=1000)",
    2: "symmetry suite",
    3: "gradient correctness",
    4: "constraint invariants fuzz",
    5: "oracle dominance",
    6: "heuristic determinism goldens",
    7: "learning smoke test",
    8: "flexibility across m",
    9: "public trace ingestion",
}


def pytest_terminal_summary(terminalreporter):
    import re

    outcome = {}
    details = {}
    for key in ("passed", "failed", "skipped", "error"):
        for rep in terminalreporter.stats.get(key, []):
            match = re.search(r"test_criterion_(\d+)_", getattr(rep, "nodeid", ""))
            if not match or (rep.when != "call" and key == "passed"):
                continue
            n = int(match.group(1))
            status = {"passed": "PASS", "failed": "FAIL", "error": "FAIL", "skipped": "SKIP"}[key]
            prev = outcome.get(n)
            if prev != "FAIL" and not (prev == "PASS" and status == "SKIP"):
                outcome[n] = status
            for name, value in getattr(rep, "user_properties", []):
                if name == "detail" and (status == "FAIL" or n != 1 or "checks in" in value):
                    details.setdefault(n, []).append(("FAIL: " if status == "FAIL" else "") + value)
    if not outcome:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(outcome):
        line = f"criterion {n}: {outcome[n]} - {CRITERIA.get(n, '')}"
        terminalreporter.write_line(line)
        for d in details.get(n, [])[:6]:
            terminalreporter.write_line(f"    {d}")
