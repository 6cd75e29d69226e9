"""Reference filters: a bootstrap particle filter and an exact-update-plus-projection filter."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dbn import T1, Dbn, ProcessModel, sample_states, y
from .errors import ZeroMassError
from .exact import ENUM_CAP, ExactFilter, exact_update, project, reconstruct_joint
from .factored import FactorSet, FactoredModel, UpdateStats, init_uniform

HISTOGRAM_FLOOR = 1e-12


@dataclass(frozen=True)
class ParticleSet:
    """``particles`` has shape ``(N, n)``; the induced belief is the normalized histogram."""

    particles: np.ndarray

    def __post_init__(self):
        if self.particles.ndim != 2 or self.particles.shape[0] < 1:
            raise ValueError("a particle set needs at least one particle")

    @property
    def count(self) -> int:
        return self.particles.shape[0]

    def histogram(self, domains: Sequence[int], floor: float | None = None) -> np.ndarray:
        """Dense belief over the joint space; with ``floor`` empty bins get that mass before renormalizing."""
        idx = np.ravel_multi_index(tuple(self.particles.T), tuple(domains))
        h = np.bincount(idx, minlength=int(np.prod(domains))).astype(np.float64)
        h /= h.sum()
        if floor:
            h = np.maximum(h, floor)
            h /= h.sum()
        return h


def uniform_particles(domains: Sequence[int], count: int, rng: np.random.Generator) -> ParticleSet:
    cols = [rng.integers(d, size=count) for d in domains]
    return ParticleSet(np.stack(cols, axis=1).astype(np.int64))


def observation_weights(dbn: Dbn, states: np.ndarray, o: Sequence[int]) -> np.ndarray:
    """``Omega(s', o)`` for every row of ``states``."""
    w = np.ones(states.shape[0])
    for j in range(dbn.m):
        node = y(j)
        idx = tuple(states[:, p.index] if p.slice == T1 else np.full(states.shape[0], o[p.index])
                    for p in dbn.parents(node)) + (np.full(states.shape[0], o[j]),)
        w *= dbn.cpt(node)[idx]
    return w


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices drawn by systematic resampling (one uniform offset, N evenly spaced pointers)."""
    n = weights.shape[0]
    total = weights.sum()
    if not total > 0:
        raise ZeroMassError("every particle has zero observation weight")
    cum = np.cumsum(weights / total)
    cum[-1] = 1.0
    pointers = (rng.random() + np.arange(n)) / n
    return np.searchsorted(cum, pointers, side="right")


def pf_update(ps: ParticleSet, dbn: Dbn, o: Sequence[int], rng: np.random.Generator) -> ParticleSet:
    """Propagate every particle, weight by the observation likelihood, resample systematically."""
    moved = sample_states(dbn, ps.particles, rng)
    idx = systematic_resample(observation_weights(dbn, moved, o), rng)
    return ParticleSet(moved[idx])


class ParticleFilter:
    def __init__(self, process: ProcessModel, count: int, rng: np.random.Generator):
        self.process = process
        self.rng = rng
        self.state = uniform_particles(process.state_domains, count, rng)

    def update(self, action: str, o: Sequence[int]) -> ParticleSet:
        self.state = pf_update(self.state, self.process.actions[action], o, self.rng)
        return self.state

    def belief(self) -> np.ndarray:
        return self.state.histogram(self.process.state_domains, HISTOGRAM_FLOOR)


def bk_reference_update(fs: FactorSet, dbn: Dbn, o: Sequence[int], cap: int = ENUM_CAP) -> FactorSet:
    """Exact update of the reconstructed joint, projected back onto the clusters."""
    model = fs.model
    domains = model.process.state_domains
    joint = reconstruct_joint(fs.factors, model.clusters, domains, cap)
    post = exact_update(joint, dbn, o, cap)
    k = len(model.clusters)
    return FactorSet(model, tuple(project(post, model.clusters, domains)), UpdateStats(k, k, k, 0, 0))


class BkReferenceFilter:
    """Projection filter with cached exact-update machinery."""

    def __init__(self, model: FactoredModel):
        self.model = model
        self.exact = ExactFilter(model.process)
        self.state = init_uniform(model)

    def update(self, action: str, o: Sequence[int]) -> FactorSet:
        domains = self.model.process.state_domains
        joint = reconstruct_joint(self.state.factors, self.model.clusters, domains)
        post = self.exact.update(joint, action, o)
        k = len(self.model.clusters)
        self.state = FactorSet(self.model, tuple(project(post, self.model.clusters, domains)),
                               UpdateStats(k, k, k, 0, 0))
        return self.state
