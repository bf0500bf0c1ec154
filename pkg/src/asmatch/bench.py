"""Benchmark harness: mean edit distance per noise level and time-to-optimum.

A run is described by a :class:`RunManifest`.  Searches stop on the wall
clock the first time a manifest is executed; the number of expansions each
search managed is written back into the manifest, and a replay stops at
exactly those expansion counts.  Everything in ``report.json`` and
``report.txt`` is a function of the manifest alone, so a replay reproduces
them byte for byte.  Wall-clock observations (time to reach the optimum and
the optimal-within-budget curve) go to ``timings.json``.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .datagen import Dataset, InstancePair, load_dataset
from .errors import ConfigError, EmptySelection, QueryLargerThanTarget, TooLarge
from .oracle import count_injections, exact_asm
from .policies import GreedyLBPolicy, RandomPolicy
from .search import SearchBudget, branch_and_bound

CHECKPOINTS = (0.1, 0.5, 1.0, 2.0, 5.0, 10.0)
POLICY_KINDS = ("random", "greedy", "neural")


@dataclass
class RunManifest:
    dataset: str
    policies: list
    budget_seconds: float = 10.0
    seed: int = 0
    cache: bool = True
    checkpoint: str | None = None
    split: str = "test"
    workers: int = 1
    checkpoints: list = field(default_factory=lambda: list(CHECKPOINTS))
    oracle_limit: int = 2_000_000
    oracle_expansions: int = 200_000
    # filled in by the first execution: policy -> pair_id -> expansion count
    expansions: dict = field(default_factory=dict)
    optima: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.policies:
            raise ConfigError("no policies given")
        for p in self.policies:
            if p not in POLICY_KINDS:
                raise ConfigError(f"unknown policy {p!r}; choose from {POLICY_KINDS}")
        if "neural" in self.policies and not self.checkpoint:
            raise ConfigError("the neural policy needs a checkpoint")
        if not self.budget_seconds > 0:
            raise ConfigError("budget must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        d = dict(d)
        # JSON object keys are strings; pair ids are ints
        d["expansions"] = {k: {int(pid): n for pid, n in v.items()} for k, v in d.get("expansions", {}).items()}
        d["optima"] = {int(pid): v for pid, v in d.get("optima", {}).items()}
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


def make_policy(kind: str, seed: int = 0, checkpoint=None):
    if kind == "greedy":
        return GreedyLBPolicy()
    if kind == "random":
        return RandomPolicy(seed)
    if kind == "neural":
        from .policy_net import NeuralPolicy, PolicyNet
        return NeuralPolicy(PolicyNet.load(checkpoint))
    raise ConfigError(f"unknown policy {kind!r}")


def reference_optimum(pair: InstancePair, oracle_limit: int, oracle_expansions: int) -> dict:
    """Certified optimum by enumeration, or by an exhausted greedy search.

    Returns ``{"cost": None, "method": "infeasible"}`` when neither fits the
    limits; such instances are left out of the optimal-probability metric.
    """
    try:
        if count_injections(pair.target.node_count, pair.query.node_count) <= oracle_limit:
            return {"cost": exact_asm(pair.query, pair.target, limit=oracle_limit).best_cost.total,
                    "method": "enumeration"}
    except (TooLarge, QueryLargerThanTarget):
        pass
    res = branch_and_bound(pair.query, pair.target, GreedyLBPolicy(),
                           SearchBudget(max_expansions=oracle_expansions))
    if res.exhausted:
        return {"cost": res.best_cost.total, "method": "exhaustive-search"}
    return {"cost": None, "method": "infeasible"}


def _run_one(args):
    kind, seed, checkpoint, pair, budget_seconds, max_exp, cache = args
    policy = make_policy(kind, seed, checkpoint)
    if max_exp is None:
        budget = SearchBudget(wall_clock_limit=budget_seconds)
    else:
        budget = SearchBudget(max_expansions=max(int(max_exp), 1))
    res = branch_and_bound(pair.query, pair.target, policy, budget, cache_enabled=cache)
    return kind, pair.pair_id, res


def _time_to(trace, cost) -> float:
    for t, _, c in trace:
        if c <= cost:
            return t
    return math.inf


def _finite_or_none(x: float):
    return x if math.isfinite(x) else None


def _exps_to(trace, cost):
    for _, e, c in trace:
        if c <= cost:
            return e
    return None


def run_benchmark(manifest: RunManifest, dataset: Dataset | None = None) -> dict:
    """Execute (or replay) ``manifest``; returns report and timing dicts.

    On a first execution the manifest's ``expansions`` and ``optima`` tables
    are filled in place.
    """
    manifest.validate()
    ds = dataset if dataset is not None else load_dataset(manifest.dataset)
    pairs = sorted(ds.split(manifest.split) if manifest.split != "all" else ds.pairs,
                   key=lambda p: p.pair_id)
    if not pairs:
        raise EmptySelection(f"split {manifest.split!r} of {manifest.dataset} has no instances")

    for p in pairs:
        if p.pair_id not in manifest.optima:
            manifest.optima[p.pair_id] = reference_optimum(p, manifest.oracle_limit, manifest.oracle_expansions)

    jobs = []
    for kind in manifest.policies:
        caps = manifest.expansions.get(kind, {})
        for p in pairs:
            jobs.append((kind, manifest.seed, manifest.checkpoint, p, manifest.budget_seconds,
                         caps.get(p.pair_id), manifest.cache))
    if manifest.workers > 1:
        with ProcessPoolExecutor(manifest.workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]

    by_pair = {p.pair_id: p for p in pairs}
    records, timings = [], []
    for kind, pid, res in sorted(results, key=lambda r: (manifest.policies.index(r[0]), r[1])):
        manifest.expansions.setdefault(kind, {}).setdefault(pid, res.expansions)
        p = by_pair[pid]
        opt = manifest.optima[pid]["cost"]
        records.append({
            "policy": kind,
            "pair_id": pid,
            "noise_level": p.noise.level,
            "n_noise_actual": p.noise.actual,
            "query_nodes": p.query.node_count,
            "ged": res.best_cost.total,
            "first_round_ged": res.first_round_cost.total,
            "expansions": res.expansions,
            "expansions_to_best": res.expansions_to_best,
            "expansions_to_optimum": None if opt is None else _exps_to(res.trace, opt),
            "exhausted": res.exhausted,
            "optimum": opt,
        })
        timings.append({
            "policy": kind,
            "pair_id": pid,
            "elapsed": res.elapsed,
            "time_to_best": res.time_to_best,
            "optimum_known": opt is not None,
            # None when the optimum was never reached
            "time_to_optimum": None if opt is None else _finite_or_none(_time_to(res.trace, opt)),
        })
    report = summarize(records, manifest.policies)
    report["records"] = records
    report["flagged_no_optimum"] = sorted(pid for pid, o in manifest.optima.items()
                                          if o["cost"] is None and pid in by_pair)
    return {"report": report, "timings": optimal_curve(timings, manifest)}


def summarize(records: Sequence[dict], policies: Sequence[str]) -> dict:
    """Per-policy, per-noise-level means recomputed from the records."""
    out = {}
    for kind in policies:
        rows = [r for r in records if r["policy"] == kind]
        levels = {}
        for lvl in sorted({r["noise_level"] for r in rows}):
            sel = [r for r in rows if r["noise_level"] == lvl]
            levels[_level_key(lvl)] = {
                "count": len(sel),
                "mean_ged": _mean(r["ged"] for r in sel),
                "mean_first_round_ged": _mean(r["first_round_ged"] for r in sel),
            }
        out[kind] = {
            "by_noise_level": levels,
            "mean_ged": _mean(r["ged"] for r in rows),
            "mean_first_round_ged": _mean(r["first_round_ged"] for r in rows),
        }
    return {"policies": out}


def _level_key(level: float) -> str:
    return f"{100 * level:g}%"


def _mean(values) -> float:
    vals = list(values)
    return float(np.mean(vals)) if vals else math.nan


def optimal_curve(timings: Sequence[dict], manifest: RunManifest) -> dict:
    """Fraction of oracle-known instances solved optimally within each checkpoint."""
    curves = {}
    for kind in manifest.policies:
        rows = [t for t in timings if t["policy"] == kind and t["optimum_known"]]
        curves[kind] = {
            f"{c:g}": (sum(t["time_to_optimum"] is not None and t["time_to_optimum"] <= c for t in rows)
                       / len(rows)) if rows else None
            for c in manifest.checkpoints
        }
        curves[kind]["instances"] = len(rows)
    return {"optimal_within_budget": curves, "records": list(timings)}


def format_table(report: dict) -> str:
    """Aligned text: one row per policy, final and first-round GED per noise level."""
    pol = report["policies"]
    levels = sorted({lvl for v in pol.values() for lvl in v["by_noise_level"]},
                    key=lambda s: float(s.rstrip("%")))
    header = ["Method"] + [f"{lvl} noise" for lvl in levels] + [f"{lvl} FR" for lvl in levels]
    rows = [header]
    for kind, v in pol.items():
        by = v["by_noise_level"]
        rows.append([kind] + [f"{by[lvl]['mean_ged']:.2f}" if lvl in by else "-" for lvl in levels]
                    + [f"{by[lvl]['mean_first_round_ged']:.2f}" if lvl in by else "-" for lvl in levels])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(r, widths)))
             for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_outputs(result: dict, manifest: RunManifest, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(result["report"], indent=2, sort_keys=True) + "\n")
    (out / "report.txt").write_text(format_table(result["report"]))
    (out / "timings.json").write_text(json.dumps(result["timings"], indent=2, sort_keys=True) + "\n")
    manifest.save(out / "manifest.json")
    return out

