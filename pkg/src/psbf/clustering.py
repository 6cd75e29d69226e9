"""State and observation clusterings, assumption checks and A1/A3 enforcement.

The structural assumptions are:

* A1: every t+1 state parent of a cluster member lies in the same cluster;
* A2: state clusters are pairwise disjoint;
* A3: every observation parent of an observation-cluster member lies in the
  same observation cluster;
* A4: observation clusters are pairwise disjoint.

When A1 (A3) fails, each member gets a cluster-local CPT in which the foreign
intra-slice parents are averaged out under a uniform weighting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import islice
from typing import Mapping, Sequence

import networkx as nx
import numpy as np

from .dbn import OBS, T1, Dbn, ProcessModel, x, y
from .errors import InfeasibleError, ModelError

CLIQUE_CAP = 2**16
STATE_METHODS = ("pc", "moral", "modis", "single", "singleton")
OBS_METHODS = STATE_METHODS


def _sorted_clusters(clusters) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(sorted(c)) for c in clusters)


@dataclass(frozen=True)
class Clustering:
    """State clusters ``C_k`` and observation clusters, as 0-based index tuples."""

    state: tuple[tuple[int, ...], ...]
    obs: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "state", _sorted_clusters(self.state))
        object.__setattr__(self, "obs", _sorted_clusters(self.obs))

    def check_cover(self, n: int, m: int) -> None:
        """Raise :class:`ModelError` unless the clusters cover exactly the declared variables."""
        if set(v for c in self.state for v in c) != set(range(n)):
            raise ModelError("state clusters do not cover exactly the state variables")
        if set(v for c in self.obs for v in c) != set(range(m)):
            raise ModelError("observation clusters do not cover exactly the observation variables")
        if any(not c for c in self.state + self.obs):
            raise ModelError("empty cluster")

    def to_json(self) -> dict:
        return {"state": [[i + 1 for i in c] for c in self.state],
                "obs": [[j + 1 for j in c] for c in self.obs]}

    @classmethod
    def from_json(cls, doc: Mapping) -> "Clustering":
        return cls(tuple(tuple(i - 1 for i in c) for c in doc["state"]),
                   tuple(tuple(j - 1 for j in c) for c in doc.get("obs", ())))


def state_graph(process: ProcessModel) -> nx.DiGraph:
    """Union over actions of the t+1 state-to-state edges."""
    g = nx.DiGraph()
    g.add_nodes_from(range(process.n))
    for dbn in process.actions.values():
        g.add_edges_from((a.index, b.index) for a, b in dbn.edges if a.slice == T1 and b.slice == T1)
    return g


def obs_graph(process: ProcessModel) -> nx.DiGraph:
    """Union over actions of the observation-to-observation edges."""
    g = nx.DiGraph()
    g.add_nodes_from(range(process.m))
    for dbn in process.actions.values():
        g.add_edges_from((a.index, b.index) for a, b in dbn.edges if a.slice == OBS and b.slice == OBS)
    return g


def components(g: nx.DiGraph) -> list[tuple[int, ...]]:
    """Weakly connected components, ordered by smallest member."""
    return sorted(tuple(sorted(c)) for c in nx.weakly_connected_components(g))


def moral_cliques(g: nx.DiGraph, cap: int = CLIQUE_CAP) -> list[tuple[int, ...]]:
    """Maximal cliques of the moral graph of ``g``, sorted lexicographically."""
    moral = nx.moral_graph(g) if g.number_of_edges() else nx.Graph(g.to_undirected())
    cliques = list(islice(nx.find_cliques(moral), cap + 1))
    if len(cliques) > cap:
        raise InfeasibleError(f"moral graph has more than {cap} maximal cliques")
    return sorted(tuple(sorted(c)) for c in cliques)


def truncate_disjoint(cliques: Sequence[Sequence[int]]) -> list[tuple[int, ...]]:
    """Make cliques disjoint: larger first (lexicographic ties), later ones drop claimed members."""
    claimed: set[int] = set()
    out = []
    for c in sorted((tuple(sorted(c)) for c in cliques), key=lambda c: (-len(c), c)):
        rest = tuple(v for v in c if v not in claimed)
        if rest:
            out.append(rest)
            claimed.update(rest)
    return out


def _clusters(g: nx.DiGraph, method: str) -> list[tuple[int, ...]]:
    nodes = sorted(g.nodes)
    if not nodes:
        return []
    if method == "pc":
        return components(g)
    if method == "moral":
        return moral_cliques(g)
    if method == "modis":
        return truncate_disjoint(moral_cliques(g))
    if method == "single":
        return [tuple(nodes)]
    if method == "singleton":
        return [(v,) for v in nodes]
    raise ValueError(f"unknown clustering method {method!r}; expected one of {STATE_METHODS}")


def make_clustering(process: ProcessModel, state_method: str, obs_method: str | None = None) -> Clustering:
    """Build a clustering; the observation method defaults to the state method."""
    obs_method = obs_method or state_method
    return Clustering(tuple(_clusters(state_graph(process), state_method)),
                      tuple(_clusters(obs_graph(process), obs_method)))


def cluster_pc(process: ProcessModel, obs_method: str | None = None) -> Clustering:
    return make_clustering(process, "pc", obs_method)


def cluster_moral(process: ProcessModel, obs_method: str | None = None) -> Clustering:
    return make_clustering(process, "moral", obs_method)


def cluster_modis(process: ProcessModel, obs_method: str | None = None) -> Clustering:
    return make_clustering(process, "modis", obs_method)


def parse_clustering_name(name: str) -> tuple[str, str | None]:
    """Split ``"moral/singleton"`` into state and observation method names."""
    state, _, obs = name.partition("/")
    for method in (state, obs):
        if method and method not in STATE_METHODS:
            raise ValueError(f"unknown clustering method {method!r}; expected one of {STATE_METHODS}")
    return state, obs or None


@dataclass(frozen=True)
class AssumptionStatus:
    a1: dict[str, bool]
    a2: bool
    a3: dict[str, bool]
    a4: bool

    def all_hold(self) -> bool:
        return self.a2 and self.a4 and all(self.a1.values()) and all(self.a3.values())

    def to_json(self) -> dict:
        return {"a1": self.a1, "a2": self.a2, "a3": self.a3, "a4": self.a4}


def _disjoint(clusters: Sequence[Sequence[int]]) -> bool:
    members = [v for c in clusters for v in c]
    return len(members) == len(set(members))


def _closed(clusters: Sequence[Sequence[int]], parents_of) -> bool:
    return all(set(parents_of(i)) <= set(c) for c in clusters for i in c)


def _obs_parents(dbn: Dbn, j: int) -> tuple[int, ...]:
    return tuple(p.index for p in dbn.parents(y(j)) if p.slice == OBS)


def check_assumptions(clustering: Clustering, process: ProcessModel) -> AssumptionStatus:
    a1 = {a: _closed(clustering.state, dbn.t1_parents) for a, dbn in process.actions.items()}
    a3 = {a: _closed(clustering.obs, lambda j, d=dbn: _obs_parents(d, j)) for a, dbn in process.actions.items()}
    return AssumptionStatus(a1, _disjoint(clustering.state), a3, _disjoint(clustering.obs))


@dataclass(frozen=True)
class LocalCpt:
    """A CPT as seen from inside one cluster; ``parents`` follow the canonical node order."""

    parents: tuple
    table: np.ndarray


def _localize(dbn: Dbn, node, allowed_slice: int, allowed: set[int]) -> tuple[LocalCpt, bool]:
    parents = dbn.parents(node)
    table = dbn.cpt(node)
    foreign = tuple(ax for ax, p in enumerate(parents) if p.slice == allowed_slice and p.index not in allowed)
    if not foreign:
        return LocalCpt(parents, table), False
    kept = tuple(p for ax, p in enumerate(parents) if ax not in foreign)
    local = table.mean(axis=foreign)
    local = local / local.sum(axis=-1, keepdims=True)
    local.setflags(write=False)
    return LocalCpt(kept, local), True


@dataclass(frozen=True, eq=False)
class EnforcedProcess:
    """Cluster-local CPTs for every (action, cluster, member).

    ``state_cpts[a][k][i]`` is the CPT of ``x_i`` used when updating cluster
    ``k`` under action ``a``; ``obs_cpts[a][l][j]`` the CPT of ``y_j`` inside
    observation cluster ``l``. ``modified`` and ``modified_obs`` list the
    ``(action, cluster, variable)`` triples whose CPT had parents averaged out.
    """

    process: ProcessModel
    clustering: Clustering
    state_cpts: Mapping[str, tuple[dict[int, LocalCpt], ...]]
    obs_cpts: Mapping[str, tuple[dict[int, LocalCpt], ...]]
    modified: frozenset = field(default_factory=frozenset)
    modified_obs: frozenset = field(default_factory=frozenset)

    def modified_map(self) -> dict[str, dict[int, tuple[int, ...]]]:
        """Per action, cluster index -> modified member variables."""
        out: dict[str, dict[int, list[int]]] = {}
        for a, k, i in sorted(self.modified):
            out.setdefault(a, {}).setdefault(k, []).append(i)
        return {a: {k: tuple(v) for k, v in d.items()} for a, d in out.items()}

    def as_process(self, k: int) -> ProcessModel:
        """The process in which members of state cluster ``k`` use their local CPTs."""
        actions = {}
        for a, dbn in self.process.actions.items():
            local = self.state_cpts[a][k]
            edges = {e for e in dbn.edges if not (e[1].slice == T1 and e[1].index in local)}
            cpts = dict(dbn.cpts)
            for i, lc in local.items():
                edges.update((p, x(i)) for p in lc.parents)
                cpts[x(i)] = lc.table
            actions[a] = Dbn(a, dbn.state_domains, dbn.obs_domains, frozenset(edges), cpts)
        return ProcessModel(self.process.variables, actions, self.process.meta)


def enforce_a1(process: ProcessModel, clustering: Clustering) -> EnforcedProcess:
    """Build cluster-local CPTs, averaging out foreign intra-slice parents.

    Also applies the analogous treatment to observation clusters (A3). When
    the assumptions already hold every local CPT is the original table and
    the modified sets are empty.
    """
    clustering.check_cover(process.n, process.m)
    state_cpts, obs_cpts = {}, {}
    modified, modified_obs = set(), set()
    for a, dbn in process.actions.items():
        per_cluster = []
        for k, c in enumerate(clustering.state):
            local = {}
            for i in c:
                local[i], changed = _localize(dbn, x(i), T1, set(c))
                if changed:
                    modified.add((a, k, i))
            per_cluster.append(local)
        state_cpts[a] = tuple(per_cluster)
        per_obs = []
        for l, c in enumerate(clustering.obs):
            local = {}
            for j in c:
                local[j], changed = _localize(dbn, y(j), OBS, set(c))
                if changed:
                    modified_obs.add((a, l, j))
            per_obs.append(local)
        obs_cpts[a] = tuple(per_obs)
    return EnforcedProcess(process, clustering, state_cpts, obs_cpts, frozenset(modified), frozenset(modified_obs))
