"""Passive-variable detection, causal paths and skippable clusters.

A state variable ``x_i`` is passive in an action when there is a witness set
``phi`` of its time-t parents, each also linked to ``x_i`` inside the t+1
slice, such that ``x_i`` cannot change value on any positive-probability
transition in which every member of ``phi`` keeps its value.

Detection works on a boolean "violation" table over the labels
``(x_J^t, x_J^{t+1}, x_i^t, x_i^{t+1})`` where ``J`` are the candidate
witnesses: an entry is set when the configuration is reachable and ``x_i``
changes. Each reachable configuration yields an "unchanged pattern", the set
of candidates keeping their value. A candidate set ``phi`` is a witness iff no
pattern contains all of ``phi``.

In the default (guarded) mode reachability is decided on the t+1 ancestral
closure of ``x_i``, so only transitions with positive probability count. The
strict mode looks at ``x_i``'s own table only, treating every parent
assignment as reachable; it never reports a variable passive that the guarded
mode rejects.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._tensor import _compact
from .dbn import OBS, T1, Dbn, x
from .errors import InfeasibleError

PARENT_CAP = 16
ENUM_CAP = 2**22

PASSIVE, ACTIVE, UNDETERMINED = "passive", "active", "undetermined"


@dataclass(frozen=True)
class PassivityVerdict:
    variable: int
    status: str
    phi: tuple[int, ...] | None = None
    # "guarded", "strict", or "strict-fallback" when the guarded closure was too large.
    method: str = "guarded"

    @property
    def passive(self) -> bool:
        return self.status == PASSIVE

    def to_json(self) -> dict:
        out = {"variable": f"x{self.variable + 1}", "status": self.status, "method": self.method}
        if self.phi is not None:
            out["phi"] = [f"x{j + 1}" for j in self.phi]
        return out


def witness_candidates(var: int, dbn: Dbn) -> tuple[int, ...]:
    """Parents ``x_j^t`` (j != var) whose t+1 counterpart is also a parent of ``x_var``."""
    t1 = set(dbn.t1_parents(var))
    return tuple(j for j in dbn.t_parents(var) if j != var and j in t1)


def _label(slice_: int, index: int, n: int) -> int:
    return index + n if slice_ == T1 else index


_LARGEST = re.compile(r"Largest intermediate:\s*([0-9.eE+]+)")


def _violation_table_guarded(var: int, cand: Sequence[int], dbn: Dbn, enum_cap: int) -> np.ndarray | None:
    n = dbn.n
    closure = {var}
    frontier = [var]
    while frontier:
        k = frontier.pop()
        for p in dbn.t1_parents(k):
            if p not in closure:
                closure.add(p)
                frontier.append(p)
    operands, labels = [], []
    for k in sorted(closure):
        node = x(k)
        operands.append((dbn.cpt(node) > 0).astype(np.float64))
        labels.append([_label(p.slice, p.index, n) for p in dbn.parents(node)] + [n + k])
    # Ensure every output label is bound even when x_var^t is not a parent.
    operands.append(np.ones(dbn.state_domains[var]))
    labels.append([var])
    output = list(cand) + [n + j for j in cand] + [var, n + var]
    try:
        subs, out = _compact(labels, output)
    except InfeasibleError:
        return None
    args = []
    for arr, sub in zip(operands, subs):
        args += [arr, sub]
    args.append(out)
    path, info = np.einsum_path(*args, optimize="greedy")
    match = _LARGEST.search(info)
    out_size = int(np.prod([dbn.state_domains[j] for j in cand], dtype=np.float64) ** 2 * dbn.state_domains[var] ** 2)
    if out_size > enum_cap or (match and float(match.group(1)) > enum_cap):
        return None
    return np.einsum(*args, optimize=path) > 0


def _violation_table_strict(var: int, cand: Sequence[int], dbn: Dbn) -> np.ndarray:
    n = dbn.n
    node = x(var)
    pos = (dbn.cpt(node) > 0).astype(np.float64)
    labels = [_label(p.slice, p.index, n) for p in dbn.parents(node)] + [n + var]
    output = list(cand) + [n + j for j in cand] + [var, n + var]
    subs, out = _compact([labels, [var]], output)
    return np.einsum(pos, subs[0], np.ones(dbn.state_domains[var]), subs[1], out) > 0


def _unchanged_patterns(table: np.ndarray, n_cand: int) -> np.ndarray:
    """Bitmasks (bit q = candidate q unchanged) of reachable configurations in which x_i changes."""
    idx = np.nonzero(table)
    own_t, own_t1 = idx[2 * n_cand], idx[2 * n_cand + 1]
    changed = own_t != own_t1
    masks = np.zeros(int(changed.sum()), dtype=np.int64)
    for q in range(n_cand):
        masks |= (idx[q][changed] == idx[n_cand + q][changed]).astype(np.int64) << q
    return np.unique(masks)


def detect_passive(var: int, dbn: Dbn, *, strict: bool = False, parent_cap: int = PARENT_CAP,
                   enum_cap: int = ENUM_CAP) -> PassivityVerdict:
    """Decide whether state variable ``var`` (0-based) is passive in ``dbn``.

    Candidate witness sets are tried in ascending size, lexicographically
    within a size, so the returned ``phi`` is the first minimum-cardinality
    witness.
    """
    cand = witness_candidates(var, dbn)
    if len(cand) > parent_cap:
        return PassivityVerdict(var, UNDETERMINED, None, "strict" if strict else "guarded")
    method = "strict"
    table = None
    if not strict:
        table = _violation_table_guarded(var, cand, dbn, enum_cap)
        method = "guarded" if table is not None else "strict-fallback"
    if table is None:
        size = np.prod([dbn.state_domains[j] for j in cand], dtype=np.float64) ** 2 * dbn.state_domains[var] ** 2
        if size > enum_cap:
            return PassivityVerdict(var, UNDETERMINED, None, method)
        table = _violation_table_strict(var, cand, dbn)
    patterns = _unchanged_patterns(table, len(cand))
    for size in range(len(cand) + 1):
        for combo in combinations(range(len(cand)), size):
            mask = sum(1 << q for q in combo)
            if not np.any((patterns & mask) == mask):
                return PassivityVerdict(var, PASSIVE, tuple(cand[q] for q in combo), method)
    return PassivityVerdict(var, ACTIVE, None, method)


def detect_all(dbn: Dbn, *, strict: bool = False, parent_cap: int = PARENT_CAP,
               enum_cap: int = ENUM_CAP) -> dict[int, PassivityVerdict]:
    """Verdicts for every state variable of ``dbn``."""
    return {i: detect_passive(i, dbn, strict=strict, parent_cap=parent_cap, enum_cap=enum_cap)
            for i in range(dbn.n)}


def _causal_successors(dbn: Dbn, verdicts: Mapping[int, PassivityVerdict], u: int) -> Iterable[int]:
    for child in dbn.children(x(u)):
        if child.slice != T1:
            continue
        v = verdicts[child.index]
        if v.passive and u in v.phi:
            yield child.index


def causal_reach(src: int, dbn: Dbn, verdicts: Mapping[int, PassivityVerdict]) -> set[int]:
    """Variables reachable from ``src`` by causal paths of length two or more."""
    seen: set[int] = set()
    queue = deque(_causal_successors(dbn, verdicts, src))
    while queue:
        v = queue.popleft()
        if v in seen:
            continue
        seen.add(v)
        queue.extend(_causal_successors(dbn, verdicts, v))
    return seen


def causal_path_exists(src: int, dst: int, dbn: Dbn, verdicts: Mapping[int, PassivityVerdict]) -> bool:
    """True iff a causal path leads from active variable ``src`` to ``dst``."""
    return dst in causal_reach(src, dbn, verdicts)


def _queue_order(dbn: Dbn) -> list[int]:
    """State variables by descending t+1-slice out-degree, index-ascending on ties."""
    def degree(i):
        return sum(1 for c in dbn.children(x(i)) if c.slice == T1)
    return sorted(range(dbn.n), key=lambda i: (-degree(i), i))


def skippable_clusters(clusters: Sequence[Sequence[int]], dbn: Dbn,
                       verdicts: Mapping[int, PassivityVerdict]) -> frozenset[int]:
    """Indices of clusters whose transition update can be omitted.

    A cluster is dropped if it contains an active (or undetermined) variable
    or a variable reachable by a causal path from one. Reachability is checked
    against every variable rather than only those still queued, so the result
    does not depend on the queue order.
    """
    remaining = set(range(len(clusters)))
    member_of: dict[int, list[int]] = {}
    for k, c in enumerate(clusters):
        for i in c:
            member_of.setdefault(i, []).append(k)
    for i in _queue_order(dbn):
        if not remaining:
            break
        if verdicts[i].passive:
            continue
        hit = {i} | causal_reach(i, dbn, verdicts)
        for v in hit:
            remaining.difference_update(member_of.get(v, ()))
    return frozenset(remaining)


def observation_dependents(cluster: Sequence[int], dbn: Dbn) -> frozenset[int]:
    """Observation variables reachable by a directed path from any member of ``cluster``."""
    seen, out = set(), set()
    stack = [x(i) for i in cluster]
    while stack:
        node = stack.pop()
        for c in dbn.children(node):
            if c in seen:
                continue
            seen.add(c)
            if c.slice == OBS:
                out.add(c.index)
            stack.append(c)
    return frozenset(out)


def transition_skip_fraction(clusters: Sequence[Sequence[int]], dbn: Dbn,
                             verdicts: Mapping[int, PassivityVerdict]) -> float:
    return len(skippable_clusters(clusters, dbn, verdicts)) / len(clusters) if clusters else 0.0


__all__ = [
    "PASSIVE", "ACTIVE", "UNDETERMINED", "PassivityVerdict", "witness_candidates", "detect_passive",
    "detect_all", "causal_reach", "causal_path_exists", "skippable_clusters", "observation_dependents",
    "transition_skip_fraction",
]
