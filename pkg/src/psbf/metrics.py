"""Relative entropy, mixing rates and the factored-filter error bound check."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ._tensor import contract
from .clustering import Clustering, _localize
from .dbn import T, T1, Dbn, x
from .errors import InfeasibleError

# Largest |rows|^2 * |columns| work for the pairwise mixing-rate minimization.
MIXING_WORK_CAP = 2**33


class AbsoluteContinuityError(ValueError):
    """``p`` puts mass where ``q`` has none, so the relative entropy is infinite."""


def relative_entropy(p: np.ndarray, q: np.ndarray, floor: float | None = None) -> float:
    """``sum p ln(p/q)`` with ``0 ln 0 = 0``.

    With ``floor``, ``q`` is raised to at least ``floor`` and renormalized
    first. Rounding can make the sum of an identical pair slightly negative;
    the result is clamped at zero.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if p.shape != q.shape:
        raise ValueError(f"distributions differ in size: {p.size} vs {q.size}")
    if floor:
        q = np.maximum(q, floor)
        q = q / q.sum()
    support = p > 0
    if np.any(q[support] <= 0):
        raise AbsoluteContinuityError("q vanishes where p is positive")
    ps, qs = p[support], q[support]
    return max(float(np.sum(ps * (np.log(ps) - np.log(qs)))), 0.0)


def safe_relative_entropy(p: np.ndarray, q: np.ndarray, floor: float | None = None) -> float:
    """Like :func:`relative_entropy` but returns ``inf`` on an absolute-continuity violation."""
    try:
        return relative_entropy(p, q, floor)
    except AbsoluteContinuityError:
        return float("inf")


def cluster_transition_table(dbn: Dbn, cluster: Sequence[int]) -> tuple[tuple[int, ...], np.ndarray]:
    """``T_k`` as a matrix: rows are assignments of the cluster's t-parents, columns cluster states.

    Foreign intra-slice parents are averaged out uniformly, as for filtering.
    """
    n = dbn.n
    members = tuple(sorted(cluster))
    local = {i: _localize(dbn, x(i), T1, set(members))[0] for i in members}
    parents = tuple(sorted({p.index for lc in local.values() for p in lc.parents if p.slice == T}))
    rows = int(np.prod([dbn.state_domains[i] for i in parents], dtype=np.float64))
    cols = int(np.prod([dbn.state_domains[i] for i in members], dtype=np.float64))
    if rows * cols > 2**24:
        raise InfeasibleError(f"cluster transition table of {rows} x {cols} entries")
    ops = [(local[i].table, [p.index + (n if p.slice == T1 else 0) for p in local[i].parents] + [n + i])
           for i in members]
    table = contract(ops, list(parents) + [n + i for i in members])
    return parents, table.reshape(rows, cols)


def min_row_overlap(table: np.ndarray) -> float:
    """``min`` over row pairs of ``sum_s min(row1[s], row2[s])``."""
    rows = np.unique(table, axis=0)
    r, c = rows.shape
    if r == 1:
        return float(min(1.0, rows.sum()))
    if float(r) * r * c > MIXING_WORK_CAP:
        raise InfeasibleError(f"mixing rate over {r} distinct rows of width {c}")
    chunk = max(1, int(2**23 // (r * c)))
    best = np.inf
    for start in range(0, r, chunk):
        block = rows[start:start + chunk]
        overlap = np.minimum(block[:, None, :], rows[None, :, :]).sum(axis=2)
        best = min(best, float(overlap.min()))
    return float(np.clip(best, 0.0, 1.0))


def mixing_rate_cluster(dbn: Dbn, cluster: Sequence[int]) -> float:
    """Mixing rate of one cluster's transition dynamics, in [0, 1]."""
    return min_row_overlap(cluster_transition_table(dbn, cluster)[1])


@dataclass(frozen=True)
class MixingReport:
    gamma: float
    cluster_rates: tuple[float, ...]
    r: int
    q: int
    factored: bool


def cluster_dependencies(dbn: Dbn, clusters: Sequence[Sequence[int]]) -> tuple[int, int]:
    """``(r, q)``: the most clusters any cluster depends on, and the most it influences.

    Counts include the cluster itself and are at least one.
    """
    owner = {v: k for k, c in enumerate(clusters) for v in c}
    deps = []
    for c in clusters:
        deps.append({owner[p] for i in c for p in dbn.t_parents(i)})
    infl = [sum(1 for d in deps if k in d) for k in range(len(clusters))]
    r = max((len(d) for d in deps), default=1)
    q = max(infl, default=1)
    return max(r, 1), max(q, 1)


def mixing_rate_dbn(dbn: Dbn, clustering: Clustering) -> MixingReport:
    """Mixing rate of the action under the clustering.

    Uses ``(min_k gamma_k / r) ** q`` when the state clusters are closed under
    intra-slice parents, pairwise disjoint, and the observations form a single
    cluster; otherwise the rate of the single cluster of all state variables.
    """
    clusters = clustering.state
    members = [v for c in clusters for v in c]
    closed = all(set(dbn.t1_parents(i)) <= set(c) for c in clusters for i in c)
    disjoint = len(members) == len(set(members))
    if closed and disjoint and len(clustering.obs) <= 1:
        rates = tuple(mixing_rate_cluster(dbn, c) for c in clusters)
        r, q = cluster_dependencies(dbn, clusters)
        return MixingReport((min(rates) / r) ** q, rates, r, q, True)
    whole = tuple(range(dbn.n))
    rate = mixing_rate_cluster(dbn, whole)
    return MixingReport(rate, (rate,), 1, 1, False)


@dataclass(frozen=True)
class BoundReport:
    """Running-mean relative entropy against the bound ``eps_hat / gamma``."""

    running_mean: np.ndarray
    bound: float
    vacuous: bool
    exceeded_steps: tuple[int, ...] = field(default=())

    @property
    def final_mean(self) -> float:
        return float(self.running_mean[-1]) if self.running_mean.size else 0.0

    @property
    def holds(self) -> bool:
        return self.vacuous or self.final_mean <= self.bound

    def to_json(self) -> dict:
        return {"final_mean_kl": self.final_mean, "bound": None if self.vacuous else self.bound,
                "vacuous": self.vacuous, "holds": self.holds, "exceeded_steps": len(self.exceeded_steps)}


def error_bound_check(kl_trace: Sequence[float], eps_hat: float, gamma: float) -> BoundReport:
    """Compare the running mean of a relative-entropy trace with ``eps_hat / gamma``."""
    kl = np.asarray(kl_trace, dtype=np.float64)
    running = np.cumsum(kl) / np.arange(1, kl.size + 1) if kl.size else kl
    if gamma <= 0:
        return BoundReport(running, float("inf"), True)
    bound = max(eps_hat, 0.0) / gamma
    exceeded = tuple(int(t) for t in np.flatnonzero(running > bound))
    return BoundReport(running, bound, False, exceeded)


def update_fraction_means(stats: Sequence) -> dict[str, float]:
    """Mean transition/observation updated-factor fractions over a sequence of update statistics."""
    if not stats:
        return {"transition": 0.0, "observation": 0.0}
    return {"transition": float(np.mean([s.transition_updated / s.factors_total for s in stats])),
            "observation": float(np.mean([s.observation_updated / s.factors_total for s in stats]))}


def expected_transition_fraction(skip_sets: Mapping[str, frozenset], n_clusters: int) -> float:
    """Updated-factor fraction of the transition step averaged over uniformly chosen actions."""
    return float(np.mean([1.0 - len(s) / n_clusters for s in skip_sets.values()]))
