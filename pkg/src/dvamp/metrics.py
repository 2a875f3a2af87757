"""Optimality-gap arithmetic for the greedy lower-bound instance, and
run aggregation."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np


def tr(trace):
    """Total time-resource: sum over requests and resources of r * lifetime."""
    return float(sum(sum(r.resources) * r.lifetime for r in getattr(trace, "requests", trace)))


def gap_limit(m, mu):
    """Limit of (ON - OPT) / TR as q grows: (m-1)/(2m-1) * (mu-1)."""
    return (m - 1) / (2 * m - 1) * (mu - 1)


@dataclass(frozen=True)
class BoundReport:
    m: int
    q: int
    mu: int
    ON: int
    OPT: int
    TR: float

    @property
    def ratio(self):
        return (self.ON - self.OPT) / self.TR if self.TR else 0.0

    @property
    def limit(self):
        return gap_limit(self.m, self.mu)

    def row(self):
        return (self.m, self.q, self.mu, self.ON, _fmt(self.TR), _fmt(self.ratio), _fmt(self.limit))


def _fmt(x):
    return f"{x:.4f}".rstrip("0").rstrip(".")


def bound_report(m, q, mu, scheduler, opt=None):
    """Run ``scheduler`` on the adaptive-adversary instance and report the gap.

    ``opt`` defaults to 0, the optimum attained by co-locating all long-lived
    requests; pass an oracle value to override it.
    """
    from .env import run_episode
    from .workload import gen_adversarial

    trace, config, targets = gen_adversarial(m, q, mu, scheduler)
    result = run_episode(trace, None, scheduler, config)
    return BoundReport(m=m, q=q, mu=int(mu), ON=result.total_wait,
                       OPT=targets["OPT"] if opt is None else opt, TR=tr(trace))


SWEEP_HEADER = ("m", "q", "mu", "ON", "TR", "ratio", "limit")


def write_bound_sweep(reports, path, meta=None):
    with open(path, "w", newline="") as f:
        if meta:
            for k, v in meta.items():
                f.write(f"# {k}={v}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in reports:
            w.writerow(r.row())


def trimmed_mean(values, trim=2):
    """Mean after dropping the ``trim`` largest and smallest values.

    With fewer than ``2 * trim + 1`` values the plain mean is returned.
    """
    values = sorted(values)
    if len(values) < 2 * trim + 1:
        warnings.warn(f"only {len(values)} values; trimmed mean falls back to the plain mean")
        return float(np.mean(values))
    return float(np.mean(values[trim:len(values) - trim]))


def aggregate_runs(test_scores, valid_scores=None, trim=2, top=3):
    """Summaries across seeds: mean, trimmed mean and the mean test score of
    the ``top`` runs with the lowest validation score."""
    test_scores = list(test_scores)
    out = {"mean": float(np.mean(test_scores)), "trimmed_mean": trimmed_mean(test_scores, trim)}
    if valid_scores is not None:
        if len(valid_scores) != len(test_scores):
            raise ValueError("need one validation score per run")
        order = np.argsort(np.asarray(valid_scores, dtype=float), kind="stable")[:top]
        out["mean_top3_by_valid"] = float(np.mean([test_scores[i] for i in order]))
    return out
