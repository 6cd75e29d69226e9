"""Selective belief filtering for factored processes with passive variables."""

from .clustering import Clustering, check_assumptions, enforce_a1, make_clustering
from .dbn import Dbn, Node, ProcessModel, validate_dbn
from .errors import InfeasibleError, ModelError, ZeroMassError
from .exact import ExactFilter, exact_update, reconstruct_joint
from .factored import FactoredModel, FactorSet, PsbfFilter, init_uniform, psbf_update
from .passivity import PassivityVerdict, detect_all, detect_passive, skippable_clusters
from .synthgen import GenSpec, generate_process, simulate_trajectory

__all__ = [
    "Clustering", "Dbn", "ExactFilter", "FactorSet", "FactoredModel", "GenSpec", "InfeasibleError",
    "ModelError", "Node", "PassivityVerdict", "ProcessModel", "PsbfFilter", "ZeroMassError",
    "check_assumptions", "detect_all", "detect_passive", "enforce_a1", "exact_update", "generate_process",
    "init_uniform", "make_clustering", "psbf_update", "reconstruct_joint", "simulate_trajectory",
    "skippable_clusters", "validate_dbn",
]
