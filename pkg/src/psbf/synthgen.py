"""Seeded generator for synthetic benchmark processes.

Edges are placed with probabilities derived from a random mixture of
Gaussians over variable positions, so that correlated "areas" of variables
emerge. A fraction ``p`` of the state variables is made passive with respect
to all of their time-t parents, and each of the two actions retargets one to
three variables with freshly sampled dynamics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dbn import T, Dbn, Node, ProcessModel, sample_observations, sample_states, x, xt, y

SIZES = {"S": (10, 3), "M": (20, 6), "L": (30, 9), "XL": (40, 12)}

LAMBDA = 4.0
SIGMA_MIN = 5.0 / LAMBDA
OBS_EDGE_PROB = 0.1
TARGET_EDGE_PROB = 0.1
ACTIONS = ("a0", "a1")


@dataclass(frozen=True)
class GaussianComponent:
    mean: int
    sigma: float

    @property
    def variance(self) -> float:
        return self.sigma**2


@dataclass(frozen=True)
class GenSpec:
    n: int
    m: int
    passivity: float
    seed: int
    size: str | None = None

    @classmethod
    def of_size(cls, size: str, passivity: float, seed: int) -> "GenSpec":
        if size not in SIZES:
            raise ValueError(f"unknown size class {size!r}; expected one of {sorted(SIZES)}")
        n, m = SIZES[size]
        return cls(n, m, passivity, seed, size)

    @property
    def label(self) -> str:
        return f"{self.size or f'n{self.n}m{self.m}'}_p{self.passivity:g}_s{self.seed}"


def streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for process generation, trajectory simulation and particle filtering."""
    gen, traj, pf = np.random.SeedSequence(seed).spawn(3)
    return {"generation": np.random.default_rng(gen), "trajectory": np.random.default_rng(traj),
            "pf": np.random.default_rng(pf)}


def _open_unit(rng: np.random.Generator) -> float:
    """A uniform draw from (0, 1]; 0 has probability zero anyway but must not occur."""
    return 1.0 - rng.random()


def mixture_of_gaussians(n: int, rng: np.random.Generator) -> list[GaussianComponent]:
    """Random Gaussians over positions ``1..n`` covering the range with little overlap."""
    if n < 1:
        raise ValueError("need at least one variable")
    sigma_max = n / 10.0
    regions = [list(range(1, n + 1))]
    out = []
    while regions:
        region = regions.pop(0)
        mu = region[math.ceil(_open_unit(rng) * len(region)) - 1]
        beta = min(mu - region[0], region[-1] - mu) / LAMBDA
        sigma = min(sigma_max, max(SIGMA_MIN, _open_unit(rng) * beta))
        out.append(GaussianComponent(mu, sigma))
        lower = [r for r in region if r < mu - sigma * LAMBDA]
        upper = [r for r in region if r > mu + sigma * LAMBDA]
        if lower:
            regions.append(lower)
        if upper:
            regions.append(upper)
    return out


def edge_probabilities(n: int, mixture: Sequence[GaussianComponent]) -> np.ndarray:
    """``P[i, j]``: max over components of the peak-normalized density product at positions i+1, j+1."""
    pos = np.arange(1, n + 1, dtype=np.float64)
    best = np.zeros((n, n))
    for g in mixture:
        d = np.exp(-((pos - g.mean) ** 2) / (2 * g.variance))
        best = np.maximum(best, np.outer(d, d))
    return best


def _random_cpt(rng: np.random.Generator, parent_domains: Sequence[int], domain: int) -> np.ndarray:
    rows = rng.dirichlet(np.ones(domain), size=int(np.prod(parent_domains, dtype=np.int64)))
    return rows.reshape(tuple(parent_domains) + (domain,))


def _passive_cpt(rng: np.random.Generator, parents: Sequence[Node], var: int) -> np.ndarray:
    """Random binary CPT overwritten so the variable keeps its value while all witnesses keep theirs."""
    table = _random_cpt(rng, [2] * len(parents), 2)
    witnesses = [(ax, parents.index(x(p.index))) for ax, p in enumerate(parents)
                 if p.slice == T and p.index != var]
    own = parents.index(xt(var))
    for idx in np.ndindex(*([2] * len(parents))):
        if all(idx[a] == idx[b] for a, b in witnesses):
            row = np.zeros(2)
            row[idx[own]] = 1.0
            table[idx] = row
    return table


def _obs_cpt(rng: np.random.Generator, n_parents: int) -> np.ndarray:
    rows = 2 ** n_parents
    high = rng.random(rows) < 0.5
    p1 = np.where(high, rng.uniform(0.8, 1.0, rows), rng.uniform(0.0, 0.2, rows))
    return np.stack([1.0 - p1, p1], axis=-1).reshape((2,) * n_parents + (2,))


def generate_process(spec: GenSpec, rng: np.random.Generator | None = None) -> ProcessModel:
    """Generate a two-action binary process; a pure function of ``spec`` (and ``rng`` if given)."""
    rng = rng if rng is not None else streams(spec.seed)["generation"]
    n, m = spec.n, spec.m
    passive = rng.random(n) < spec.passivity
    edges: set[tuple[Node, Node]] = {(xt(i), x(i)) for i in range(n) if passive[i]}
    prob = edge_probabilities(n, mixture_of_gaussians(n, rng))

    for i in range(n):
        for j in range(n):
            if rng.random() < prob[i, j]:
                if passive[j] and i != j:
                    if i < j:
                        edges.add((xt(i), x(j)))
                        edges.add((x(i), x(j)))
                elif not passive[j]:
                    edges.add((xt(i), x(j)))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < prob[i, j]:
                edges.add((x(i), x(j)))
                if passive[j]:
                    edges.add((xt(i), x(j)))
    for i in range(n):
        if not any(a == xt(i) for a, _ in edges):
            edges.add((xt(i), x(i)))
    for j in range(n):
        if not any(b == x(j) for _, b in edges):
            edges.add((xt(j), x(j)))
    for j in range(m):
        parents = [i for i in range(n) if rng.random() < OBS_EDGE_PROB]
        if not parents:
            parents = [int(rng.integers(n))]
        edges.update((x(i), y(j)) for i in parents)

    def parents_of(node, es):
        return sorted(a for a, b in es if b == node)

    base_cpts = {}
    for j in range(n):
        pa = parents_of(x(j), edges)
        base_cpts[x(j)] = _passive_cpt(rng, pa, j) if passive[j] else _random_cpt(rng, [2] * len(pa), 2)
    for j in range(m):
        base_cpts[y(j)] = _obs_cpt(rng, len(parents_of(y(j), edges)))

    actions, targets = {}, {}
    for a in ACTIONS:
        count = int(rng.integers(1, 4))
        chosen = sorted(int(v) for v in rng.choice(n, size=min(count, n), replace=False))
        a_edges = set(edges)
        cpts = dict(base_cpts)
        for j in chosen:
            a_edges.update((xt(i), x(j)) for i in range(n) if rng.random() < TARGET_EDGE_PROB)
            cpts[x(j)] = _random_cpt(rng, [2] * len(parents_of(x(j), a_edges)), 2)
        actions[a] = (a_edges, cpts)
        targets[a] = chosen
    meta = {
        "generator": {"n": n, "m": m, "passivity": spec.passivity, "seed": spec.seed, "size": spec.size},
        "designated_passive": [int(i) + 1 for i in np.flatnonzero(passive)],
        "targets": {a: [j + 1 for j in t] for a, t in targets.items()},
    }
    return ProcessModel.build([2] * n, [2] * m, actions, meta)


def designated_passive(process: ProcessModel, action: str) -> list[int]:
    """0-based variables made passive by the generator and not retargeted by ``action``."""
    meta = process.meta
    targets = set(j - 1 for j in meta["targets"][action])
    return [i - 1 for i in meta["designated_passive"] if i - 1 not in targets]


@dataclass(frozen=True)
class Trajectory:
    """Actions ``actions[t]`` lead from ``states[t]`` to ``states[t+1]``, which emits ``observations[t]``."""

    actions: tuple[str, ...]
    states: np.ndarray
    observations: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)


def simulate_trajectory(process: ProcessModel, steps: int, rng: np.random.Generator) -> Trajectory:
    """Random initial state, then ``steps`` transitions under uniformly chosen actions."""
    ids = list(process.actions)
    state = np.array([[int(rng.integers(d)) for d in process.state_domains]])
    states, obs, acts = [state[0]], [], []
    for _ in range(steps):
        a = ids[int(rng.integers(len(ids)))]
        dbn: Dbn = process.actions[a]
        state = sample_states(dbn, state, rng)
        obs.append(sample_observations(dbn, state, rng)[0])
        states.append(state[0])
        acts.append(a)
    return Trajectory(tuple(acts), np.array(states, dtype=np.int64),
                      np.array(obs, dtype=np.int64).reshape(steps, process.m))
