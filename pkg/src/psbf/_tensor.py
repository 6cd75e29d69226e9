"""Labelled sum-product contractions on top of ``numpy.einsum``.

Every tensor carries a sequence of integer labels, one per axis. Labels are
arbitrary hashable integers; they are compacted to einsum's 52-symbol range
per contraction.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import InfeasibleError

_MAX_LABELS = 52


def _compact(operand_labels: Sequence[Sequence[int]], output: Sequence[int]):
    labels = sorted({lab for ls in operand_labels for lab in ls} | set(output))
    if len(labels) > _MAX_LABELS:
        raise InfeasibleError(f"contraction over {len(labels)} variables exceeds {_MAX_LABELS}")
    remap = {lab: k for k, lab in enumerate(labels)}
    return [[remap[lab] for lab in ls] for ls in operand_labels], [remap[lab] for lab in output]


class Contraction:
    """A reusable contraction whose einsum path is computed on first use."""

    def __init__(self, operand_labels: Sequence[Sequence[int]], output: Sequence[int]):
        self.operand_labels = [tuple(ls) for ls in operand_labels]
        self.output = tuple(output)
        self._subs, self._out = _compact(self.operand_labels, self.output)
        self._path = None

    def __call__(self, *arrays: np.ndarray) -> np.ndarray:
        args: list = []
        for arr, sub in zip(arrays, self._subs):
            args += [arr, sub]
        args.append(self._out)
        if len(arrays) == 1:
            return np.einsum(*args)
        if self._path is None:
            self._path = np.einsum_path(*args, optimize="greedy")[0]
        return np.einsum(*args, optimize=self._path)


def contract(operands: Sequence[tuple[np.ndarray, Sequence[int]]], output: Sequence[int]) -> np.ndarray:
    """One-shot labelled contraction."""
    plan = Contraction([ls for _, ls in operands], output)
    return plan(*[arr for arr, _ in operands])


def marginal(table: np.ndarray, axes_vars: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Sum ``table`` (axes labelled by ``axes_vars``) down to the sorted ``keep`` subset."""
    keep = set(keep)
    drop = tuple(ax for ax, v in enumerate(axes_vars) if v not in keep)
    return table.sum(axis=drop) if drop else table
