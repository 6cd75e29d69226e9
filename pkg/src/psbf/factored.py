"""Selective factored belief filtering.

The belief state is kept as one factor per state cluster; factor ``k`` is an
array over the members of ``C_k`` (ascending index, one axis per member).
Each update runs a transition step followed by an observation step. In the
transition step a cluster is recomputed only if it is not skippable under the
action (it holds an active variable or one reachable from an active variable
by a causal path); in the observation step only clusters with a directed path
to some observation variable are conditioned, and only on the observation
clusters they can reach.

Both steps read an immutable snapshot of the previous factors, so per-cluster
work is independent and may be scheduled concurrently.
"""

from __future__ import annotations

import time
from concurrent.futures import Executor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from ._tensor import Contraction
from .clustering import Clustering, EnforcedProcess, LocalCpt, enforce_a1
from .dbn import OBS, T, T1, ProcessModel
from .errors import ZeroMassError
from .passivity import (ENUM_CAP, PARENT_CAP, PassivityVerdict, detect_all, observation_dependents,
                        skippable_clusters)

# Largest |S(pa(C_k))| * |S(C_k)| for which the cluster transition table is materialized.
DENSE_TRANSITION_CAP = 2**22


@dataclass(frozen=True)
class UpdateStats:
    factors_total: int
    transition_updated: int
    observation_updated: int
    entries_evaluated: int
    wall_nanos: int

    @property
    def transition_fraction(self) -> float:
        return self.transition_updated / self.factors_total

    @property
    def observation_fraction(self) -> float:
        return self.observation_updated / self.factors_total


def _prod(values) -> int:
    return int(np.prod(list(values), dtype=np.int64)) if values else 1


@dataclass(frozen=True, eq=False)
class _TransitionPlan:
    members: tuple[int, ...]
    parents: tuple[int, ...]
    contributors: tuple[tuple[int, tuple[int, ...]], ...]
    weights: Contraction
    table: np.ndarray | None
    propagate: Contraction | None
    cpts: tuple[np.ndarray, ...]
    entries: int


@dataclass(frozen=True, eq=False)
class _ObservationTerm:
    cluster: int
    parents: tuple[int, ...]
    own: tuple[int, ...]
    others: tuple[tuple[int, tuple[int, ...]], ...]
    contraction: Contraction
    entries: int


@dataclass(frozen=True, eq=False)
class ActionAnalysis:
    """Cached, state-independent analysis of one action under a clustering."""

    action: str
    verdicts: Mapping[int, PassivityVerdict]
    skippable: frozenset[int]
    obs_dependents: tuple[frozenset[int], ...]
    relevant_obs: tuple[tuple[int, ...], ...]

    def to_json(self, clustering: Clustering) -> dict:
        k_total = len(clustering.state)
        return {
            "skippable_clusters": [k + 1 for k in sorted(self.skippable)],
            "transition_skip_fraction": len(self.skippable) / k_total if k_total else 0.0,
            "observation_skip_fraction": (sum(1 for r in self.relevant_obs if not r) / k_total) if k_total else 0.0,
            "relevant_obs_clusters": [[l + 1 for l in r] for r in self.relevant_obs],
        }


class FactoredModel:
    """A process, a clustering and every per-action cache needed for filtering.

    Args:
        process: the process to filter.
        clustering: state and observation clusters covering all variables.
        strict: use the unguarded passivity test.
        sparsity: zero factor entries below this value after each step (0 disables).
    """

    def __init__(self, process: ProcessModel, clustering: Clustering, *, strict: bool = False,
                 sparsity: float = 0.0, parent_cap: int = PARENT_CAP, enum_cap: int = ENUM_CAP,
                 dense_cap: int = DENSE_TRANSITION_CAP):
        clustering.check_cover(process.n, process.m)
        self.process = process
        self.clustering = clustering
        self.strict = strict
        self.sparsity = float(sparsity)
        self.parent_cap = parent_cap
        self.enum_cap = enum_cap
        self.dense_cap = dense_cap
        self._analysis: dict[str, ActionAnalysis] = {}
        self._transition: dict[tuple[str, int], _TransitionPlan] = {}
        self._obs_terms: dict[tuple[str, int, int], _ObservationTerm] = {}
        self._likelihood: dict[tuple[str, int, tuple[int, ...]], np.ndarray] = {}

    @cached_property
    def enforced(self) -> EnforcedProcess:
        return enforce_a1(self.process, self.clustering)

    @property
    def clusters(self) -> tuple[tuple[int, ...], ...]:
        return self.clustering.state

    def shape(self, k: int) -> tuple[int, ...]:
        return tuple(self.process.state_domains[i] for i in self.clusters[k])

    def analysis(self, action: str) -> ActionAnalysis:
        if action not in self._analysis:
            dbn = self.process.actions[action]
            verdicts = detect_all(dbn, strict=self.strict, parent_cap=self.parent_cap, enum_cap=self.enum_cap)
            skip = skippable_clusters(self.clusters, dbn, verdicts)
            deps = tuple(observation_dependents(c, dbn) for c in self.clusters)
            relevant = tuple(tuple(l for l, oc in enumerate(self.clustering.obs) if set(oc) & dep) for dep in deps)
            self._analysis[action] = ActionAnalysis(action, verdicts, skip, deps, relevant)
        return self._analysis[action]

    def precompute(self) -> float:
        """Build every per-action analysis and transition plan; returns elapsed seconds."""
        start = time.perf_counter()
        _ = self.enforced
        for a in self.process.actions:
            self.analysis(a)
            for k in range(len(self.clusters)):
                self.transition_plan(a, k)
        return time.perf_counter() - start

    def _owners(self, k: int, variables: Sequence[int]) -> tuple[tuple[int, tuple[int, ...]], ...]:
        """Group ``variables`` by the factor their marginal is read from.

        A variable is read from cluster ``k`` when it is a member, otherwise from
        the lowest-indexed cluster containing it, so that each variable enters a
        product exactly once even when clusters overlap.
        """
        groups: dict[int, list[int]] = {}
        for v in variables:
            owner = k if v in self.clusters[k] else self._first_cluster[v]
            groups.setdefault(owner, []).append(v)
        return tuple((kk, tuple(sorted(vs))) for kk, vs in sorted(groups.items()))

    @cached_property
    def _first_cluster(self) -> dict[int, int]:
        first: dict[int, int] = {}
        for kk, c in enumerate(self.clusters):
            for v in c:
                first.setdefault(v, kk)
        return first

    def transition_plan(self, action: str, k: int) -> _TransitionPlan:
        key = (action, k)
        if key in self._transition:
            return self._transition[key]
        n = self.process.n
        domains = self.process.state_domains
        members = self.clusters[k]
        local: dict[int, LocalCpt] = self.enforced.state_cpts[action][k]
        parents = tuple(sorted({p.index for i in members for p in local[i].parents if p.slice == T}))
        contributors = self._owners(k, parents)
        weights = Contraction([shared for _, shared in contributors], parents)
        labels = [[p.index + (n if p.slice == T1 else 0) for p in local[i].parents] + [n + i] for i in members]
        cpts = tuple(local[i].table for i in members)
        out = list(parents) + [n + i for i in members]
        entries = _prod(domains[i] for i in parents) * _prod(domains[i] for i in members)
        table, propagate = None, None
        if entries <= self.dense_cap:
            table = Contraction(labels, out)(*cpts).reshape(_prod(domains[i] for i in parents), -1)
        else:
            propagate = Contraction([list(parents)] + labels, [n + i for i in members])
        plan = _TransitionPlan(members, parents, contributors, weights, table, propagate, cpts, entries)
        self._transition[key] = plan
        return plan

    def observation_term(self, action: str, k: int, l: int) -> _ObservationTerm:
        key = (action, k, l)
        if key in self._obs_terms:
            return self._obs_terms[key]
        members = set(self.clusters[k])
        local = self.enforced.obs_cpts[action][l]
        parents = tuple(sorted({p.index for j in self.clustering.obs[l] for p in local[j].parents if p.slice == T1}))
        own = tuple(v for v in parents if v in members)
        others = self._owners(k, tuple(v for v in parents if v not in members))
        contraction = Contraction([list(parents)] + [list(s) for _, s in others], list(own))
        domains = self.process.state_domains
        term = _ObservationTerm(k, parents, own, tuple(others), contraction,
                                _prod(domains[i] for i in self.clusters[k]) * _prod(domains[i] for i in parents))
        self._obs_terms[key] = term
        return term

    def obs_likelihood(self, action: str, l: int, o: Sequence[int]) -> np.ndarray:
        """Likelihood of the observation-cluster values of ``o`` over the cluster's state parents."""
        cluster = self.clustering.obs[l]
        key = (action, l, tuple(int(o[j]) for j in cluster))
        if key in self._likelihood:
            return self._likelihood[key]
        local = self.enforced.obs_cpts[action][l]
        parents = tuple(sorted({p.index for j in cluster for p in local[j].parents if p.slice == T1}))
        domains = self.process.state_domains
        out = np.ones(tuple(domains[i] for i in parents))
        for j in cluster:
            lc = local[j]
            idx = tuple(o[p.index] if p.slice == OBS else slice(None) for p in lc.parents) + (o[j],)
            sub = lc.table[idx]
            axes = [parents.index(p.index) for p in lc.parents if p.slice == T1]
            shape = [1] * len(parents)
            for ax, pos in enumerate(axes):
                shape[pos] = sub.shape[ax]
            out = out * np.reshape(sub, shape)
        out.setflags(write=False)
        self._likelihood[key] = out
        return out

    def uniform(self) -> "FactorSet":
        return init_uniform(self)


@dataclass(frozen=True, eq=False)
class FactorSet:
    """Belief factors aligned with ``model.clusters``; ``stats`` describes the update that produced them."""

    model: FactoredModel
    factors: tuple[np.ndarray, ...]
    stats: UpdateStats | None = None

    def joint(self, cap: int | None = None) -> np.ndarray:
        from .exact import ENUM_CAP as JOINT_CAP, reconstruct_joint
        return reconstruct_joint(self.factors, self.model.clusters, self.model.process.state_domains,
                                 cap or JOINT_CAP)

    def to_rows(self) -> list[tuple[int, int, float]]:
        """``(cluster, local_state_index, probability)`` rows for CSV export."""
        return [(k, idx, float(p)) for k, f in enumerate(self.factors) for idx, p in enumerate(f.reshape(-1))]


def init_uniform(model: FactoredModel) -> FactorSet:
    factors = []
    for k in range(len(model.clusters)):
        shape = model.shape(k)
        factors.append(np.full(shape, 1.0 / _prod(shape)))
    return FactorSet(model, tuple(factors))


def from_factors(model: FactoredModel, factors: Sequence[np.ndarray]) -> FactorSet:
    out = []
    for k, f in enumerate(factors):
        f = np.asarray(f, dtype=np.float64).reshape(model.shape(k))
        out.append(f / f.sum())
    return FactorSet(model, tuple(out))


class _Marginals:
    """Per-step cache of factor marginals keyed by (cluster, kept variables)."""

    def __init__(self, model: FactoredModel, factors: Sequence[np.ndarray]):
        self.model = model
        self.factors = factors
        self.cache: dict[tuple[int, tuple[int, ...]], np.ndarray] = {}

    def __call__(self, k: int, keep: tuple[int, ...]) -> np.ndarray:
        key = (k, keep)
        if key not in self.cache:
            members = self.model.clusters[k]
            drop = tuple(ax for ax, v in enumerate(members) if v not in keep)
            self.cache[key] = self.factors[k].sum(axis=drop) if drop else self.factors[k]
        return self.cache[key]


def _finish(v: np.ndarray, sparsity: float, what: str) -> np.ndarray:
    total = v.sum()
    if not total > 0:
        raise ZeroMassError(f"{what} has zero total mass")
    v = v / total
    if sparsity > 0:
        v = np.where(v < sparsity, 0.0, v)
        total = v.sum()
        if not total > 0:
            raise ZeroMassError(f"{what} vanished under the sparsity threshold")
        v = v / total
    return v


def _propagate(model: FactoredModel, action: str, k: int, marg: _Marginals) -> np.ndarray:
    plan = model.transition_plan(action, k)
    ops = [marg(kk, shared) for kk, shared in plan.contributors]
    weights = plan.weights(*ops) if ops else np.ones(())
    if plan.table is not None:
        out = weights.reshape(-1) @ plan.table
    else:
        out = plan.propagate(weights, *plan.cpts)
    return _finish(out.reshape(model.shape(k)), model.sparsity, f"propagated factor {k}")


def _condition(model: FactoredModel, action: str, k: int, o: Sequence[int], marg: _Marginals,
               obs_clusters: Sequence[int]) -> tuple[np.ndarray, int]:
    members = model.clusters[k]
    out = marg.factors[k]
    entries = 0
    for l in obs_clusters:
        term = model.observation_term(action, k, l)
        lik = model.obs_likelihood(action, l, o)
        ops = [marg(kk, shared) for kk, shared in term.others]
        values = term.contraction(lik, *ops)
        shape = [1] * len(members)
        for ax, v in enumerate(term.own):
            shape[members.index(v)] = values.shape[ax]
        out = out * np.reshape(values, shape)
        entries += term.entries
    return _finish(out, model.sparsity, f"conditioned factor {k}"), entries


def _run(executor: Executor | None, fn, ks):
    if executor is None:
        return [fn(k) for k in ks]
    return list(executor.map(fn, ks))


def transition_step(fs: FactorSet, action: str, *, force: bool | Sequence[int] = False,
                    executor: Executor | None = None) -> FactorSet:
    """Propagate the factors through ``action``; skippable factors are carried over unchanged.

    ``force`` (all clusters, or a collection of cluster indices) evaluates the
    update even for skippable clusters.
    """
    model = fs.model
    skip = model.analysis(action).skippable
    forced = set(range(len(model.clusters))) if force is True else set(force or ())
    todo = [k for k in range(len(model.clusters)) if k not in skip or k in forced]
    marg = _Marginals(model, fs.factors)
    new = _run(executor, lambda k: _propagate(model, action, k, marg), todo)
    factors = list(fs.factors)
    for k, f in zip(todo, new):
        factors[k] = f
    entries = sum(model.transition_plan(action, k).entries for k in todo)
    return FactorSet(model, tuple(factors), UpdateStats(len(factors), len(todo), 0, entries, 0))


def observation_step(fs: FactorSet, action: str, o: Sequence[int], *, force: bool | Sequence[int] = False,
                     executor: Executor | None = None) -> FactorSet:
    """Condition the propagated factors on ``o``.

    Clusters without a directed path to any observation variable are carried
    over; forced clusters are conditioned on every observation cluster.
    """
    model = fs.model
    if len(o) != model.process.m:
        raise ValueError(f"observation has {len(o)} entries, expected {model.process.m}")
    relevant = model.analysis(action).relevant_obs
    forced = set(range(len(model.clusters))) if force is True else set(force or ())
    all_obs = tuple(range(len(model.clustering.obs)))
    todo = [k for k in range(len(model.clusters)) if relevant[k] or k in forced]
    marg = _Marginals(model, fs.factors)

    def work(k):
        return _condition(model, action, k, o, marg, all_obs if k in forced else relevant[k])

    new = _run(executor, work, todo)
    factors = list(fs.factors)
    entries = 0
    for k, (f, e) in zip(todo, new):
        factors[k] = f
        entries += e
    return FactorSet(model, tuple(factors), UpdateStats(len(factors), 0, len(todo), entries, 0))


def psbf_update(fs: FactorSet, action: str, o: Sequence[int], *, executor: Executor | None = None) -> FactorSet:
    """One full update: selective transition step then selective observation step."""
    start = time.perf_counter_ns()
    hat = transition_step(fs, action, executor=executor)
    post = observation_step(hat, action, o, executor=executor)
    wall = time.perf_counter_ns() - start
    stats = UpdateStats(len(fs.factors), hat.stats.transition_updated, post.stats.observation_updated,
                        hat.stats.entries_evaluated + post.stats.entries_evaluated, wall)
    return FactorSet(fs.model, post.factors, stats)


@dataclass
class PsbfFilter:
    """Stateful convenience wrapper used by the experiment harness."""

    model: FactoredModel
    executor: Executor | None = None
    state: FactorSet = field(init=False)

    def __post_init__(self):
        self.state = init_uniform(self.model)

    def update(self, action: str, o: Sequence[int]) -> UpdateStats:
        self.state = psbf_update(self.state, action, o, executor=self.executor)
        return self.state.stats
