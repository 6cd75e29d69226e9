"""JSON process files and CSV trajectory / belief files.

Process file layout::

    {
      "variables": [{"id": 1, "kind": "state", "domain_size": 2}, ...],
      "actions": [
        {"action_id": "a0",
         "edges": [[["x1", "t"], ["x2", "t1"]], [["x2", "t1"], ["y1", "t1"]], ...],
         "cpts": {"x1": [[0.9, 0.1], [0.2, 0.8]], "y1": [...], ...}}
      ],
      "clusterings": {"moral": {"state": [[1, 2], [2, 3]], "obs": [[1]]}},
      "meta": {...}
    }

Ids and variable names are 1-based. A CPT is a list of rows, one per parent
assignment in mixed-radix order over the parents (canonical order, first
parent most significant), each row a distribution over the child's values.
"""

from __future__ import annotations

import csv
import io
import json
import re
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .clustering import Clustering
from .dbn import NORMALIZATION_TOL, OBS, T, T1, Dbn, Finding, Node, ProcessModel, VariableDecl, validate_dbn
from .errors import ModelError
from .synthgen import Trajectory

_NAME = re.compile(r"^([xy])([1-9][0-9]*)$")
_ROUNDING_NOISE = 64 * np.finfo(np.float64).eps


class ProcessValidationError(ModelError):
    """The file parsed but at least one action DBN is invalid."""

    def __init__(self, findings: Mapping[str, list[Finding]]):
        self.findings = dict(findings)
        count = sum(len(f) for f in self.findings.values())
        super().__init__(f"{count} validation finding(s) in actions {sorted(self.findings)}")


def _node(endpoint) -> Node:
    if not (isinstance(endpoint, (list, tuple)) and len(endpoint) == 2):
        raise ModelError(f"edge endpoint {endpoint!r} must be [name, slice]")
    name, slice_ = endpoint
    match = _NAME.match(str(name))
    if not match:
        raise ModelError(f"bad variable name {name!r}")
    index = int(match.group(2)) - 1
    if match.group(1) == "y":
        if slice_ != "t1":
            raise ModelError(f"observation {name} must be in slice t1")
        return Node(OBS, index)
    if slice_ not in ("t", "t1"):
        raise ModelError(f"bad slice {slice_!r} for {name}")
    return Node(T if slice_ == "t" else T1, index)


def _endpoint(node: Node) -> list[str]:
    return [node.name, "t" if node.slice == T else "t1"]


def _cpt_key(name: str) -> Node:
    match = _NAME.match(name)
    if not match:
        raise ModelError(f"bad CPT variable name {name!r}")
    return Node(OBS if match.group(1) == "y" else T1, int(match.group(2)) - 1)


def _domain(node: Node, state_domains: Sequence[int], obs_domains: Sequence[int]) -> int | None:
    domains = obs_domains if node.slice == OBS else state_domains
    return domains[node.index] if 0 <= node.index < len(domains) else None


def _renormalize(table: np.ndarray) -> np.ndarray:
    """Rescale rows that are off by more than rounding noise but within the tolerance."""
    if table.ndim == 0 or table.size == 0:
        return table
    sums = table.sum(axis=-1, keepdims=True)
    off = np.abs(sums - 1.0)
    close = (off <= NORMALIZATION_TOL) & (off > _ROUNDING_NOISE)
    return np.where(close & (sums > 0), table / np.where(sums > 0, sums, 1.0), table)


def process_from_json(doc: Mapping, validate: bool = True) -> tuple[ProcessModel, dict[str, Clustering]]:
    """Parse a process document.

    Rows within the normalization tolerance are renormalized. With
    ``validate``, any remaining finding raises :class:`ProcessValidationError`.
    """
    try:
        variables = [VariableDecl(int(v["id"]) - 1, v["kind"], int(v["domain_size"])) for v in doc["variables"]]
        actions_doc = doc["actions"]
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed process document: {exc}") from exc
    for kind in ("state", "obs"):
        ids = sorted(v.index for v in variables if v.kind == kind)
        if ids != list(range(len(ids))):
            raise ModelError(f"{kind} variable ids must be 1..{len(ids)}")
    state_domains = tuple(v.domain_size for v in sorted(variables, key=lambda v: v.index) if v.kind == "state")
    obs_domains = tuple(v.domain_size for v in sorted(variables, key=lambda v: v.index) if v.kind == "obs")
    variables = sorted(variables, key=lambda v: (v.kind != "state", v.index))

    dbns, findings = {}, {}
    for entry in actions_doc:
        action_id = str(entry["action_id"])
        if action_id in dbns:
            raise ModelError(f"duplicate action {action_id!r}")
        edges = frozenset((_node(a), _node(b)) for a, b in entry.get("edges", ()))
        cpts = {}
        for name, rows in entry.get("cpts", {}).items():
            node = _cpt_key(name)
            table = np.asarray(rows, dtype=np.float64)
            sizes = [_domain(p, state_domains, obs_domains) for p in sorted(a for a, b in edges if b == node)]
            child = _domain(node, state_domains, obs_domains)
            if None not in sizes and child is not None and table.shape == (int(np.prod(sizes)), child):
                table = table.reshape(tuple(sizes) + (child,))
            cpts[node] = _renormalize(table)
        dbn = Dbn(action_id, state_domains, obs_domains, edges, cpts)
        found = validate_dbn(dbn, variables)
        if found:
            findings[action_id] = found
        dbns[action_id] = dbn
    if validate and findings:
        raise ProcessValidationError(findings)
    process = ProcessModel(tuple(variables), dbns, dict(doc.get("meta", {})))
    clusterings = {name: Clustering.from_json(c) for name, c in doc.get("clusterings", {}).items()}
    return process, clusterings


def validation_findings(doc: Mapping) -> dict[str, list[Finding]]:
    """All findings for a process document (empty when valid)."""
    try:
        process_from_json(doc, validate=True)
    except ProcessValidationError as exc:
        return exc.findings
    return {}


def process_to_json(process: ProcessModel, clusterings: Mapping[str, Clustering] | None = None) -> dict:
    doc = {
        "variables": [{"id": v.index + 1, "kind": v.kind, "domain_size": v.domain_size} for v in process.variables],
        "actions": [],
    }
    for a, dbn in process.actions.items():
        cpts = {}
        for node in sorted(dbn.cpts):
            table = dbn.cpts[node]
            cpts[node.name] = table.reshape(-1, table.shape[-1]).tolist()
        doc["actions"].append({
            "action_id": a,
            "edges": [[_endpoint(a_), _endpoint(b_)] for a_, b_ in sorted(dbn.edges)],
            "cpts": cpts,
        })
    if clusterings:
        doc["clusterings"] = {name: c.to_json() for name, c in clusterings.items()}
    if process.meta:
        doc["meta"] = dict(process.meta)
    return doc


def dumps_process(process: ProcessModel, clusterings: Mapping[str, Clustering] | None = None) -> str:
    return json.dumps(process_to_json(process, clusterings), indent=1, sort_keys=False) + "\n"


def save_process(path: str | Path, process: ProcessModel, clusterings: Mapping[str, Clustering] | None = None) -> None:
    Path(path).write_text(dumps_process(process, clusterings))


def load_process(path: str | Path, validate: bool = True) -> tuple[ProcessModel, dict[str, Clustering]]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: not valid JSON ({exc})") from exc
    return process_from_json(doc, validate)


def trajectory_header(n: int, m: int) -> list[str]:
    return ["step", "action"] + [f"x{i + 1}" for i in range(n)] + [f"y{j + 1}" for j in range(m)]


def dumps_trajectory(traj: Trajectory, n: int, m: int) -> str:
    """Row 0 holds the initial state (no action or observation); row t the t-th transition."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trajectory_header(n, m))
    w.writerow([0, ""] + list(traj.states[0]) + [""] * m)
    for t, a in enumerate(traj.actions, start=1):
        w.writerow([t, a] + list(traj.states[t]) + list(traj.observations[t - 1]))
    return buf.getvalue()


def save_trajectory(path: str | Path, traj: Trajectory, n: int, m: int) -> None:
    Path(path).write_text(dumps_trajectory(traj, n, m))


def load_trajectory(path: str | Path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n = sum(1 for h in header if h.startswith("x"))
    m = sum(1 for h in header if h.startswith("y"))
    if not body or body[0][0] != "0":
        raise ModelError(f"{path}: first row must be the initial state")
    states = [[int(v) for v in body[0][2:2 + n]]]
    actions, obs = [], []
    for row in body[1:]:
        actions.append(row[1])
        states.append([int(v) for v in row[2:2 + n]])
        obs.append([int(v) for v in row[2 + n:2 + n + m]])
    return Trajectory(tuple(actions), np.array(states, dtype=np.int64).reshape(len(states), n),
                      np.array(obs, dtype=np.int64).reshape(len(actions), m))


def write_rows(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def belief_rows(b: np.ndarray) -> list[tuple[int, float]]:
    return [(i, float(p)) for i, p in enumerate(b)]
