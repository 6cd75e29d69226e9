"""Experiment runner: replays shared trajectories through several filters and aggregates traces."""

from __future__ import annotations

import csv
import math
import time
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .baselines import BkReferenceFilter, ParticleFilter
from .clustering import Clustering, make_clustering, parse_clustering_name
from .dbn import ProcessModel
from .errors import InfeasibleError
from .exact import ENUM_CAP, ExactFilter
from .factored import FactoredModel, FactorSet, PsbfFilter, init_uniform, psbf_update
from .metrics import BoundReport, mixing_rate_dbn, safe_relative_entropy, error_bound_check
from .synthgen import Trajectory

TRACE_HEADER = ["process", "size", "passivity", "filter", "step", "action", "kl", "factors_total",
                "transition_updated", "observation_updated", "entries_evaluated", "wall_nanos", "status"]
PRECOMPUTE_HEADER = ["process", "size", "passivity", "filter", "precompute_seconds", "status"]


@dataclass(frozen=True)
class FilterSpec:
    """``kind`` is one of psbf, pf, bkref, exact; ``param`` a clustering name or particle count."""

    kind: str
    param: str = ""

    @property
    def name(self) -> str:
        return f"{self.kind}:{self.param}" if self.param else self.kind

    @classmethod
    def parse(cls, text: str) -> "FilterSpec":
        kind, _, param = text.strip().partition(":")
        if kind in ("psbf", "bkref"):
            parse_clustering_name(param or "moral")
            return cls(kind, param or "moral")
        if kind == "pf":
            count = int(float(param)) if param else 1000
            if count < 1:
                raise ValueError("particle count must be positive")
            return cls(kind, str(count))
        if kind == "exact" and not param:
            return cls(kind)
        raise ValueError(f"unknown filter {text!r}; expected psbf:<clustering>, pf:<N>, bkref:<clustering> or exact")


def parse_filters(text: str) -> list[FilterSpec]:
    return [FilterSpec.parse(part) for part in text.split(",") if part.strip()]


def parse_seeds(text: str) -> list[int]:
    """``"0..9"`` (inclusive range), ``"1,4,7"`` or a mix of both."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..")
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def clustering_for(process: ProcessModel, name: str, named: Mapping[str, Clustering] | None = None) -> Clustering:
    """A clustering stored with the process under ``name``, or one built by method name."""
    if named and name in named:
        return named[name]
    state, obs = parse_clustering_name(name)
    return make_clustering(process, state, obs)


def exact_feasible(process: ProcessModel, cap: int = ENUM_CAP) -> bool:
    return process.n_states <= cap


@dataclass(frozen=True)
class ProcessRun:
    """One process with its shared trajectory and labels for the trace columns."""

    label: str
    process: ProcessModel
    trajectory: Trajectory
    seed: int = 0
    clusterings: Mapping[str, Clustering] | None = None

    @property
    def size(self) -> str:
        gen = self.process.meta.get("generator", {}) if self.process.meta else {}
        return str(gen.get("size") or "")

    @property
    def passivity(self) -> str:
        gen = self.process.meta.get("generator", {}) if self.process.meta else {}
        return "" if gen.get("passivity") is None else f"{gen['passivity']:g}"


def _trace_row(run: ProcessRun, spec: FilterSpec, step: int, action: str, kl, stats: Sequence[int], wall: int,
               status: str = "ok") -> list:
    kl_cell = "" if kl is None else repr(float(kl))
    return [run.label, run.size, run.passivity, spec.name, step, action, kl_cell, *stats, wall, status]


def run_filter(run: ProcessRun, spec: FilterSpec, exact_beliefs: Sequence[np.ndarray] | None,
               sparsity: float = 0.0, pf_seed: int | None = None) -> tuple[list[list], list]:
    """Replay ``run.trajectory`` through one filter; returns trace rows and the precompute row."""
    process, traj = run.process, run.trajectory
    pre_row = [run.label, run.size, run.passivity, spec.name]
    rows = []
    try:
        if spec.kind == "psbf":
            model = FactoredModel(process, clustering_for(process, spec.param, run.clusterings), sparsity=sparsity)
            pre = model.precompute()
            filt = PsbfFilter(model)
            for t, (a, o) in enumerate(zip(traj.actions, traj.observations), start=1):
                stats = filt.update(a, o)
                kl = None
                if exact_beliefs is not None:
                    kl = safe_relative_entropy(exact_beliefs[t - 1], filt.state.joint())
                rows.append(_trace_row(run, spec, t, a, kl, (stats.factors_total, stats.transition_updated,
                                                             stats.observation_updated, stats.entries_evaluated),
                                       stats.wall_nanos))
        elif spec.kind == "bkref":
            start = time.perf_counter()
            model = FactoredModel(process, clustering_for(process, spec.param, run.clusterings))
            filt = BkReferenceFilter(model)
            pre = time.perf_counter() - start
            size = process.n_states
            for t, (a, o) in enumerate(zip(traj.actions, traj.observations), start=1):
                t0 = time.perf_counter_ns()
                fs = filt.update(a, o)
                wall = time.perf_counter_ns() - t0
                kl = None
                if exact_beliefs is not None:
                    kl = safe_relative_entropy(exact_beliefs[t - 1], fs.joint())
                k = len(model.clusters)
                rows.append(_trace_row(run, spec, t, a, kl, (k, k, k, size), wall))
        elif spec.kind == "pf":
            count = int(spec.param)
            rng = np.random.default_rng(np.random.SeedSequence([run.seed if pf_seed is None else pf_seed, count]))
            pre = 0.0
            filt = ParticleFilter(process, count, rng)
            for t, (a, o) in enumerate(zip(traj.actions, traj.observations), start=1):
                t0 = time.perf_counter_ns()
                filt.update(a, o)
                wall = time.perf_counter_ns() - t0
                kl = None
                if exact_beliefs is not None:
                    kl = safe_relative_entropy(exact_beliefs[t - 1], filt.belief())
                rows.append(_trace_row(run, spec, t, a, kl, (1, 1, 1, count), wall))
        elif spec.kind == "exact":
            start = time.perf_counter()
            filt = ExactFilter(process)
            pre = time.perf_counter() - start
            b = filt.initial()
            size = process.n_states
            for t, (a, o) in enumerate(zip(traj.actions, traj.observations), start=1):
                t0 = time.perf_counter_ns()
                b = filt.update(b, a, o)
                wall = time.perf_counter_ns() - t0
                rows.append(_trace_row(run, spec, t, a, 0.0, (1, 1, 1, size), wall))
        else:
            raise ValueError(f"unknown filter kind {spec.kind!r}")
    except InfeasibleError as exc:
        status = f"skipped: {exc}"
        return [_trace_row(run, spec, 0, "", None, ("", "", "", ""), "", status)], pre_row + ["", status]
    return rows, pre_row + [repr(pre), "ok"]


def exact_trace(process: ProcessModel, traj: Trajectory) -> list[np.ndarray] | None:
    """Exact posteriors after every step, or ``None`` if the state space is too large."""
    if not exact_feasible(process):
        return None
    filt = ExactFilter(process)
    b = filt.initial()
    out = []
    for a, o in zip(traj.actions, traj.observations):
        b = filt.update(b, a, o)
        out.append(b)
    return out


def run_experiment(runs: Iterable[ProcessRun], filters: Sequence[FilterSpec],
                   sparsity: float = 0.0) -> tuple[list[list], list[list]]:
    """All filters on all runs; every filter consumes the same trajectory per run."""
    trace, pre = [], []
    for run in runs:
        exact = exact_trace(run.process, run.trajectory)
        for spec in filters:
            rows, p = run_filter(run, spec, exact, sparsity)
            trace.extend(rows)
            pre.append(p)
    return trace, pre


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summarize(trace_rows: Iterable[Mapping[str, str]],
              precompute_rows: Iterable[Mapping[str, str]] = ()) -> dict:
    """Per (size, passivity, filter) means of timing, update fractions and relative entropy."""
    groups: dict[tuple[str, str, str], list[Mapping[str, str]]] = defaultdict(list)
    for row in trace_rows:
        if row.get("status", "ok") != "ok":
            continue
        groups[(row["size"], row["passivity"], row["filter"])].append(row)
    pre: dict[tuple[str, str, str], list[float]] = defaultdict(list)
    for row in precompute_rows:
        if row.get("status", "ok") == "ok" and row.get("precompute_seconds"):
            pre[(row["size"], row["passivity"], row["filter"])].append(float(row["precompute_seconds"]))
    out = []
    for (size, passivity, name), rows in sorted(groups.items()):
        wall = [int(r["wall_nanos"]) for r in rows]
        trans = [int(r["transition_updated"]) / int(r["factors_total"]) for r in rows]
        obs = [int(r["observation_updated"]) / int(r["factors_total"]) for r in rows]
        kls = [float(r["kl"]) for r in rows if r["kl"] not in ("", None)]
        finite = [k for k in kls if math.isfinite(k)]
        out.append({
            "size": size,
            "passivity": passivity,
            "filter": name,
            "transitions": len(rows),
            "seconds_per_1000_transitions": float(np.mean(wall)) * 1000 / 1e9,
            "transition_update_fraction": float(np.mean(trans)),
            "observation_update_fraction": float(np.mean(obs)),
            "transition_skip_fraction": 1.0 - float(np.mean(trans)),
            "observation_skip_fraction": 1.0 - float(np.mean(obs)),
            "mean_kl": float(np.mean(finite)) if finite else None,
            "infinite_kl_steps": len(kls) - len(finite),
            "precompute_seconds": float(np.mean(pre[(size, passivity, name)])) if pre[(size, passivity, name)] else None,
        })
    return {"groups": out}


@dataclass(frozen=True)
class BoundRun:
    kl: np.ndarray
    eps_hat: dict[str, float]
    gamma: dict[str, float]
    report: BoundReport


def bound_experiment(process: ProcessModel, clustering: Clustering, traj: Trajectory) -> BoundRun:
    """Run the factored filter against the exact filter and evaluate the error bound.

    At every step the one-step error ``KL(b'||b~') - KL(b'||b^')`` is measured,
    where ``b'`` is the exact update of the exact belief, ``b~'`` the factored
    update of the factored belief and ``b^'`` the exact update of the
    factored belief; ``eps_hat`` is its maximum per action.
    """
    model = FactoredModel(process, clustering)
    exact = ExactFilter(process)
    b = exact.initial()
    fs = init_uniform(model)
    kls, eps = [], defaultdict(float)
    for a, o in zip(traj.actions, traj.observations):
        b_next = exact.update(b, a, o)
        joint = fs.joint()
        check = exact.update(joint, a, o)
        fs = psbf_update(fs, a, o)
        approx = fs.joint()
        gap = safe_relative_entropy(b_next, approx) - safe_relative_entropy(b_next, check)
        eps[a] = max(eps[a], gap)
        kls.append(safe_relative_entropy(b_next, approx))
        b = b_next
    gamma = {a: mixing_rate_dbn(process.actions[a], clustering).gamma for a in set(traj.actions)}
    report = error_bound_check(kls, max(eps.values(), default=0.0), min(gamma.values(), default=0.0))
    return BoundRun(np.array(kls), dict(eps), gamma, report)


def psbf_kl_trace(process: ProcessModel, clustering: Clustering, traj: Trajectory) -> np.ndarray:
    """Relative entropy from the exact belief to the factored belief after every step."""
    exact = exact_trace(process, traj)
    if exact is None:
        raise InfeasibleError("exact filtering is infeasible for this process")
    model = FactoredModel(process, clustering)
    fs: FactorSet = init_uniform(model)
    out = []
    for b, a, o in zip(exact, traj.actions, traj.observations):
        fs = psbf_update(fs, a, o)
        out.append(safe_relative_entropy(b, fs.joint()))
    return np.array(out)


def pf_kl_trace(process: ProcessModel, traj: Trajectory, count: int, seed: int,
                exact: Sequence[np.ndarray] | None = None) -> np.ndarray:
    exact = exact if exact is not None else exact_trace(process, traj)
    filt = ParticleFilter(process, count, np.random.default_rng(np.random.SeedSequence([seed, count])))
    out = []
    for b, a, o in zip(exact, traj.actions, traj.observations):
        filt.update(a, o)
        out.append(safe_relative_entropy(b, filt.belief()))
    return np.array(out)


def pf_samples_to_match(process: ProcessModel, traj: Trajectory, target_kl: float, seed: int,
                        candidates: Sequence[int] = (100, 300, 1000, 3000, 10000, 30000, 100000, 200000)) -> int | None:
    """Smallest particle count whose mean relative entropy is within 10% of ``target_kl``."""
    exact = exact_trace(process, traj)
    for count in candidates:
        if float(np.mean(pf_kl_trace(process, traj, count, seed, exact))) <= 1.1 * target_kl:
            return count
    return None
