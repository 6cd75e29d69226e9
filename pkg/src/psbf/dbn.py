"""Discrete processes as per-action two-slice DBNs with dense CPTs.

Variables are addressed by :class:`Node` values. ``Node(T, i)`` is the state
variable ``x_i`` at time t, ``Node(T1, i)`` the same variable at t+1 and
``Node(OBS, j)`` the observation variable ``y_j``. Indices are 0-based; the
external name of ``Node(T1, 0)`` is ``x1``.

Tuple ordering of nodes is the canonical variable order: every time-t state
variable precedes every t+1 state variable, which precede the observation
variables, and within a slice variables are ordered by index. CPT parent
axes follow this order, so a CPT for a variable with parents ``p_1..p_k`` is
an array of shape ``(|p_1|, ..., |p_k|, |child|)`` and its flattened row index
is the mixed-radix encoding of the parent values.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from ._tensor import contract
from .errors import InfeasibleError, ModelError

T, T1, OBS = 0, 1, 2

NORMALIZATION_TOL = 1e-9
# Largest state space for which the dense |S| x |S| transition matrix is built.
DENSE_MATRIX_CAP = 2**12

_LEGAL_EDGES = {(T, T1), (T1, T1), (T1, OBS), (OBS, OBS)}


class Node(NamedTuple):
    slice: int
    index: int

    @property
    def name(self) -> str:
        return ("y" if self.slice == OBS else "x") + str(self.index + 1)

    def __repr__(self) -> str:
        suffix = {T: "@t", T1: "@t1", OBS: ""}[self.slice]
        return self.name + suffix


def xt(i: int) -> Node:
    return Node(T, i)


def x(i: int) -> Node:
    return Node(T1, i)


def y(j: int) -> Node:
    return Node(OBS, j)


@dataclass(frozen=True)
class VariableDecl:
    """Declaration of one state or observation variable (0-based ``index``)."""

    index: int
    kind: str
    domain_size: int

    def __post_init__(self):
        if self.kind not in ("state", "obs"):
            raise ModelError(f"unknown variable kind {self.kind!r}")
        if self.domain_size < 2:
            raise ModelError(f"{self.name} has domain size {self.domain_size}; constants are not allowed")

    @property
    def name(self) -> str:
        return ("x" if self.kind == "state" else "y") + str(self.index + 1)


@dataclass(frozen=True)
class Finding:
    kind: str
    message: str


def _as_table(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dbn:
    """Two-slice DBN for a single action.

    Parents of every t+1 node are derived from ``edges``; ``cpts`` maps each
    t+1 state node and observation node to its dense table.
    """

    action_id: str
    state_domains: tuple[int, ...]
    obs_domains: tuple[int, ...]
    edges: frozenset
    cpts: Mapping[Node, np.ndarray]

    def __post_init__(self):
        object.__setattr__(self, "state_domains", tuple(int(d) for d in self.state_domains))
        object.__setattr__(self, "obs_domains", tuple(int(d) for d in self.obs_domains))
        object.__setattr__(self, "edges", frozenset((Node(*a), Node(*b)) for a, b in self.edges))
        object.__setattr__(self, "cpts", {Node(*k): _as_table(v) for k, v in self.cpts.items()})

    @property
    def n(self) -> int:
        return len(self.state_domains)

    @property
    def m(self) -> int:
        return len(self.obs_domains)

    def domain(self, node: Node) -> int:
        return self.obs_domains[node.index] if node.slice == OBS else self.state_domains[node.index]

    @cached_property
    def _parent_map(self) -> dict[Node, tuple[Node, ...]]:
        pa: dict[Node, list[Node]] = {}
        for a, b in self.edges:
            pa.setdefault(b, []).append(a)
        return {k: tuple(sorted(v)) for k, v in pa.items()}

    @cached_property
    def _child_map(self) -> dict[Node, tuple[Node, ...]]:
        ch: dict[Node, list[Node]] = {}
        for a, b in self.edges:
            ch.setdefault(a, []).append(b)
        return {k: tuple(sorted(v)) for k, v in ch.items()}

    def parents(self, node: Node) -> tuple[Node, ...]:
        return self._parent_map.get(node, ())

    def children(self, node: Node) -> tuple[Node, ...]:
        return self._child_map.get(node, ())

    def t_parents(self, i: int) -> tuple[int, ...]:
        return tuple(p.index for p in self.parents(x(i)) if p.slice == T)

    def t1_parents(self, i: int) -> tuple[int, ...]:
        return tuple(p.index for p in self.parents(x(i)) if p.slice == T1)

    def cpt(self, node: Node) -> np.ndarray:
        return self.cpts[node]

    @cached_property
    def state_order(self) -> tuple[int, ...]:
        """Topological order of the t+1 state variables, index-ascending among ready ones."""
        return tuple(nd.index for nd in _kahn([x(i) for i in range(self.n)], self.edges))

    @cached_property
    def obs_order(self) -> tuple[int, ...]:
        return tuple(nd.index for nd in _kahn([y(j) for j in range(self.m)], self.edges))


def _kahn(nodes: Sequence[Node], edges: Iterable[tuple[Node, Node]]) -> list[Node]:
    """Kahn's algorithm restricted to ``nodes``; raises on a cycle."""
    members = set(nodes)
    indeg = {nd: 0 for nd in nodes}
    succ: dict[Node, list[Node]] = {nd: [] for nd in nodes}
    for a, b in edges:
        if a in members and b in members:
            indeg[b] += 1
            succ[a].append(b)
    ready = [nd for nd in nodes if indeg[nd] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        nd = heapq.heappop(ready)
        order.append(nd)
        for b in succ[nd]:
            indeg[b] -= 1
            if indeg[b] == 0:
                heapq.heappush(ready, b)
    if len(order) != len(nodes):
        raise ModelError("cycle among " + ", ".join(repr(nd) for nd in nodes if nd not in order))
    return order


def validate_dbn(dbn: Dbn, variables: Sequence[VariableDecl] | None = None) -> list[Finding]:
    """Enumerate every structural and numerical problem in ``dbn``.

    Returns an empty list iff the DBN is valid. Never raises.
    """
    findings: list[Finding] = []
    if variables is not None:
        sd = tuple(v.domain_size for v in variables if v.kind == "state")
        od = tuple(v.domain_size for v in variables if v.kind == "obs")
        if sd != dbn.state_domains or od != dbn.obs_domains:
            findings.append(Finding("dimension-mismatch", "DBN domains disagree with variable declarations"))

    def known(nd: Node) -> bool:
        size = dbn.m if nd.slice == OBS else dbn.n
        return nd.slice in (T, T1, OBS) and 0 <= nd.index < size

    for a, b in sorted(dbn.edges):
        if not (known(a) and known(b)):
            findings.append(Finding("unknown-variable", f"edge {a!r} -> {b!r} references an undeclared variable"))
        elif (a.slice, b.slice) not in _LEGAL_EDGES:
            findings.append(Finding("illegal-edge", f"edge {a!r} -> {b!r} is not a legal DBN edge class"))

    slice_nodes = [x(i) for i in range(dbn.n)] + [y(j) for j in range(dbn.m)]
    try:
        _kahn(slice_nodes, dbn.edges)
    except ModelError as exc:
        findings.append(Finding("cycle", f"t+1 slice is cyclic: {exc}"))

    for nd in slice_nodes:
        if nd not in dbn.cpts:
            findings.append(Finding("missing-cpt", f"no CPT for {nd!r}"))
            continue
        table = dbn.cpts[nd]
        pa = [p for p in dbn.parents(nd) if known(p)]
        expected = tuple(dbn.domain(p) for p in pa) + (dbn.domain(nd),)
        if table.shape != expected:
            findings.append(Finding("dimension-mismatch", f"CPT of {nd!r} has shape {table.shape}, expected {expected}"))
            continue
        rows = table.reshape(-1, expected[-1])
        bad = np.flatnonzero((np.abs(rows.sum(axis=1) - 1.0) > NORMALIZATION_TOL) | (rows < 0).any(axis=1))
        if bad.size:
            findings.append(Finding("unnormalized-row", f"CPT of {nd!r} has {bad.size} invalid rows (first: {bad[0]})"))
    for nd in dbn.cpts:
        if nd not in set(slice_nodes):
            findings.append(Finding("unknown-variable", f"CPT given for {nd!r}, which is not a t+1 variable"))
    return findings


def _check_tuple(values: Sequence[int], domains: Sequence[int], what: str) -> None:
    if len(values) != len(domains):
        raise ModelError(f"{what} has {len(values)} entries, expected {len(domains)}")
    for v, d in zip(values, domains):
        if not 0 <= v < d:
            raise ModelError(f"{what} value {v} outside domain of size {d}")


def _value(nd: Node, s, s_next, o) -> int:
    return (s, s_next, o)[nd.slice][nd.index]


def transition_prob(dbn: Dbn, s: Sequence[int], s_next: Sequence[int]) -> float:
    """Probability of moving from state ``s`` to ``s_next`` under ``dbn``."""
    _check_tuple(s, dbn.state_domains, "state")
    _check_tuple(s_next, dbn.state_domains, "next state")
    p = 1.0
    for i in range(dbn.n):
        nd = x(i)
        idx = tuple(_value(pa, s, s_next, None) for pa in dbn.parents(nd)) + (s_next[i],)
        p *= float(dbn.cpts[nd][idx])
    return p


def observation_prob(dbn: Dbn, s_next: Sequence[int], o: Sequence[int]) -> float:
    """Probability of observing ``o`` in state ``s_next`` under ``dbn``."""
    _check_tuple(s_next, dbn.state_domains, "state")
    _check_tuple(o, dbn.obs_domains, "observation")
    p = 1.0
    for j in range(dbn.m):
        nd = y(j)
        idx = tuple(_value(pa, None, s_next, o) for pa in dbn.parents(nd)) + (o[j],)
        p *= float(dbn.cpts[nd][idx])
    return p


def _draw(rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(rows.shape[0])
    cum = np.cumsum(rows, axis=1)
    return np.minimum((u[:, None] >= cum).sum(axis=1), rows.shape[1] - 1)


def sample_states(dbn: Dbn, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample a successor for every row of ``states`` (shape ``(N, n)``)."""
    states = np.asarray(states, dtype=np.int64)
    nxt = np.zeros_like(states)
    for i in dbn.state_order:
        nd = x(i)
        idx = tuple(states[:, p.index] if p.slice == T else nxt[:, p.index] for p in dbn.parents(nd))
        nxt[:, i] = _draw(dbn.cpts[nd][idx].reshape(states.shape[0], -1), rng)
    return nxt


def sample_observations(dbn: Dbn, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    states = np.asarray(states, dtype=np.int64)
    obs = np.zeros((states.shape[0], dbn.m), dtype=np.int64)
    for j in dbn.obs_order:
        nd = y(j)
        idx = tuple(states[:, p.index] if p.slice == T1 else obs[:, p.index] for p in dbn.parents(nd))
        obs[:, j] = _draw(dbn.cpts[nd][idx].reshape(states.shape[0], -1), rng)
    return obs


def sample_step(dbn: Dbn, s: Sequence[int], rng: np.random.Generator) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Sample the next state and the observation emitted in it."""
    _check_tuple(s, dbn.state_domains, "state")
    nxt = sample_states(dbn, np.asarray([s]), rng)
    obs = sample_observations(dbn, nxt, rng)
    return tuple(int(v) for v in nxt[0]), tuple(int(v) for v in obs[0])


def all_states(domains: Sequence[int]) -> np.ndarray:
    """Every value tuple over ``domains`` in mixed-radix order, shape ``(prod, len)``."""
    if not domains:
        return np.zeros((1, 0), dtype=np.int64)
    return np.indices(tuple(domains)).reshape(len(domains), -1).T.copy()


def state_index(s: Sequence[int], domains: Sequence[int]) -> int:
    return int(np.ravel_multi_index(tuple(s), tuple(domains)))


def _labels(nd: Node, n: int) -> int:
    return nd.index + (n if nd.slice == T1 else 0) if nd.slice != OBS else 2 * n + nd.index


def transition_matrix(dbn: Dbn) -> np.ndarray:
    """Dense ``T[s, s']`` for small state spaces."""
    n, size = dbn.n, int(np.prod(dbn.state_domains))
    if size > DENSE_MATRIX_CAP:
        raise InfeasibleError(f"dense transition matrix over {size} states")
    ops = [(np.ones(d), [i]) for i, d in enumerate(dbn.state_domains)]
    for i in range(n):
        nd = x(i)
        ops.append((dbn.cpts[nd], [_labels(p, n) for p in dbn.parents(nd)] + [n + i]))
    return contract(ops, list(range(2 * n))).reshape(size, size)


def observation_matrix(dbn: Dbn) -> np.ndarray:
    """Dense ``Omega[s', o]`` for small state spaces."""
    n, m = dbn.n, dbn.m
    size = int(np.prod(dbn.state_domains))
    if size > DENSE_MATRIX_CAP:
        raise InfeasibleError(f"dense observation matrix over {size} states")
    ops = [(np.ones(d), [n + i]) for i, d in enumerate(dbn.state_domains)]
    for j in range(m):
        nd = y(j)
        ops.append((dbn.cpts[nd], [_labels(p, n) for p in dbn.parents(nd)] + [2 * n + j]))
    out = contract(ops, [n + i for i in range(n)] + [2 * n + j for j in range(m)])
    return out.reshape(size, -1)


@dataclass(frozen=True, eq=False)
class ProcessModel:
    """A set of per-action DBNs over shared variable declarations."""

    variables: tuple[VariableDecl, ...]
    actions: Mapping[str, Dbn]
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "actions", dict(self.actions))
        for dbn in self.actions.values():
            if dbn.state_domains != self.state_domains or dbn.obs_domains != self.obs_domains:
                raise ModelError(f"action {dbn.action_id!r} disagrees with the variable declarations")

    @classmethod
    def build(cls, state_domains: Sequence[int], obs_domains: Sequence[int],
              actions: Mapping[str, tuple[Iterable, Mapping]], meta: Mapping | None = None) -> "ProcessModel":
        variables = [VariableDecl(i, "state", d) for i, d in enumerate(state_domains)]
        variables += [VariableDecl(j, "obs", d) for j, d in enumerate(obs_domains)]
        dbns = {a: Dbn(a, tuple(state_domains), tuple(obs_domains), frozenset(edges), cpts)
                for a, (edges, cpts) in actions.items()}
        return cls(tuple(variables), dbns, dict(meta or {}))

    @cached_property
    def state_domains(self) -> tuple[int, ...]:
        return tuple(v.domain_size for v in self.variables if v.kind == "state")

    @cached_property
    def obs_domains(self) -> tuple[int, ...]:
        return tuple(v.domain_size for v in self.variables if v.kind == "obs")

    @property
    def n(self) -> int:
        return len(self.state_domains)

    @property
    def m(self) -> int:
        return len(self.obs_domains)

    @property
    def n_states(self) -> int:
        return int(np.prod(self.state_domains, dtype=np.float64)) if self.n <= 62 else 2**62

    @property
    def action_ids(self) -> list[str]:
        return list(self.actions)

    def validate(self) -> dict[str, list[Finding]]:
        return {a: f for a, dbn in self.actions.items() if (f := validate_dbn(dbn, self.variables))}
