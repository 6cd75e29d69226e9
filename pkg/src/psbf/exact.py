"""Exact belief filtering over the full joint state space.

A dense belief is a float array of length ``|S|`` indexed by the mixed-radix
encoding of the state tuple (``x1`` most significant).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ._tensor import Contraction, contract
from .dbn import DENSE_MATRIX_CAP, OBS, T1, Dbn, ProcessModel, transition_matrix, x, y
from .errors import InfeasibleError, ZeroMassError

ENUM_CAP = 2**20


def _check_size(domains: Sequence[int], cap: int) -> int:
    size = int(np.prod(domains, dtype=np.float64))
    if size > cap:
        raise InfeasibleError(f"joint state space of {size} states exceeds the cap of {cap}")
    return size


def uniform_belief(domains: Sequence[int], cap: int = ENUM_CAP) -> np.ndarray:
    size = _check_size(domains, cap)
    return np.full(size, 1.0 / size)


def point_belief(state: Sequence[int], domains: Sequence[int], cap: int = ENUM_CAP) -> np.ndarray:
    b = np.zeros(_check_size(domains, cap))
    b[np.ravel_multi_index(tuple(state), tuple(domains))] = 1.0
    return b


def _normalize(v: np.ndarray, what: str) -> np.ndarray:
    total = v.sum()
    if not total > 0:
        raise ZeroMassError(f"{what} has zero total mass")
    return v / total


def _transition_plan(dbn: Dbn) -> tuple[Contraction, list[np.ndarray]]:
    n = dbn.n
    labels, arrays = [list(range(n))], []
    for i in range(n):
        node = x(i)
        labels.append([p.index + (n if p.slice == T1 else 0) for p in dbn.parents(node)] + [n + i])
        arrays.append(dbn.cpt(node))
    return Contraction(labels, list(range(n, 2 * n))), arrays


def likelihood(dbn: Dbn, o: Sequence[int]) -> np.ndarray:
    """``Omega(s', o)`` for every ``s'``, shaped by the state domains."""
    n = dbn.n
    out = np.ones(dbn.state_domains)
    for j in range(dbn.m):
        node = y(j)
        parents = dbn.parents(node)
        idx = tuple(o[p.index] if p.slice == OBS else slice(None) for p in parents) + (o[j],)
        sub = dbn.cpt(node)[idx]
        state_axes = [p.index for p in parents if p.slice == T1]
        shape = [1] * n
        for ax, i in enumerate(state_axes):
            shape[i] = sub.shape[ax]
        out = out * np.reshape(sub, shape)
    return out


def predict(b: np.ndarray, dbn: Dbn, cap: int = ENUM_CAP) -> np.ndarray:
    """Propagate a dense belief through the transition model (no normalization needed)."""
    _check_size(dbn.state_domains, cap)
    plan, arrays = _transition_plan(dbn)
    out = plan(b.reshape(dbn.state_domains), *arrays).reshape(-1)
    return _normalize(out, "propagated belief")


def condition(b_hat: np.ndarray, dbn: Dbn, o: Sequence[int]) -> np.ndarray:
    """Condition a propagated belief on observation ``o``."""
    return _normalize(b_hat * likelihood(dbn, o).reshape(-1), "posterior belief")


def exact_update(b: np.ndarray, dbn: Dbn, o: Sequence[int], cap: int = ENUM_CAP) -> np.ndarray:
    """One exact filtering step: transition then observation."""
    return condition(predict(b, dbn, cap), dbn, o)


class ExactFilter:
    """Exact filter with per-action caches (dense matrices for small state spaces)."""

    def __init__(self, process: ProcessModel, cap: int = ENUM_CAP):
        _check_size(process.state_domains, cap)
        self.process = process
        self.domains = process.state_domains
        self._dense = int(np.prod(self.domains)) <= DENSE_MATRIX_CAP
        self._trans: dict[str, object] = {}
        self._lik: dict[tuple[str, tuple[int, ...]], np.ndarray] = {}

    def initial(self) -> np.ndarray:
        return uniform_belief(self.domains)

    def predict(self, b: np.ndarray, action: str) -> np.ndarray:
        dbn = self.process.actions[action]
        if action not in self._trans:
            self._trans[action] = transition_matrix(dbn) if self._dense else _transition_plan(dbn)
        tr = self._trans[action]
        if self._dense:
            out = b @ tr
        else:
            plan, arrays = tr
            out = plan(b.reshape(self.domains), *arrays).reshape(-1)
        return _normalize(out, "propagated belief")

    def likelihood(self, action: str, o: Sequence[int]) -> np.ndarray:
        key = (action, tuple(int(v) for v in o))
        if key not in self._lik:
            self._lik[key] = likelihood(self.process.actions[action], o).reshape(-1)
        return self._lik[key]

    def update(self, b: np.ndarray, action: str, o: Sequence[int]) -> np.ndarray:
        return _normalize(self.predict(b, action) * self.likelihood(action, o), "posterior belief")


def reconstruct_joint(factors: Sequence[np.ndarray], clusters: Sequence[Sequence[int]],
                      domains: Sequence[int], cap: int = ENUM_CAP) -> np.ndarray:
    """Joint belief assembled from cluster factors in cluster order.

    Each factor is conditioned on its members already covered by earlier
    clusters, so a shared variable is counted once (taken from the first
    cluster containing it). For disjoint clusters this is the plain product.
    Conditionals on zero-mass configurations are uniform.
    """
    _check_size(domains, cap)
    covered: set[int] = set()
    ops = []
    for f, c in zip(factors, clusters):
        f = np.asarray(f, dtype=np.float64)
        f = f / f.sum() if f.sum() > 0 else f
        shared = tuple(axis for axis, v in enumerate(c) if v in covered)
        if shared:
            fresh = tuple(axis for axis in range(len(c)) if axis not in shared)
            if not fresh:
                covered.update(c)
                continue
            marg = f.sum(axis=fresh, keepdims=True)
            size = int(np.prod([f.shape[a] for a in fresh]))
            f = np.where(marg > 0, f / np.where(marg > 0, marg, 1.0), 1.0 / size)
        ops.append((f, list(c)))
        covered.update(c)
    if covered != set(range(len(domains))):
        raise ValueError("clusters do not cover every state variable")
    joint = contract(ops, list(range(len(domains))))
    return _normalize(joint.reshape(-1), "reconstructed belief")


def project(b: np.ndarray, clusters: Sequence[Sequence[int]], domains: Sequence[int]) -> list[np.ndarray]:
    """Marginals of a dense belief onto each cluster, shaped by member domains."""
    t = b.reshape(tuple(domains))
    out = []
    for c in clusters:
        drop = tuple(i for i in range(len(domains)) if i not in c)
        out.append(t.sum(axis=drop) if drop else t.copy())
    return out
