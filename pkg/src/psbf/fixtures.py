"""Small hand-built processes used as worked examples and test fixtures."""

from __future__ import annotations

import numpy as np

from .clustering import Clustering
from .dbn import ProcessModel, x, xt, y


def _copy_table(domain: int) -> np.ndarray:
    return np.eye(domain)


def swap_process() -> ProcessModel:
    """Two binary variables exchanging their values every step, with uninformative sensors."""
    edges = {(xt(1), x(0)), (xt(0), x(1)), (x(0), y(0))}
    cpts = {x(0): _copy_table(2), x(1): _copy_table(2), y(0): np.full((2, 2), 0.5)}
    return ProcessModel.build([2, 2], [2], {"swap": (edges, cpts)}, {"name": "swap"})


def identity_process(n: int = 3, m: int = 1, sensor: str = "uniform") -> ProcessModel:
    """Every variable keeps its value; sensors are uniform or copy ``x1``."""
    edges = {(xt(i), x(i)) for i in range(n)} | {(x(0), y(j)) for j in range(m)}
    cpts = {x(i): _copy_table(2) for i in range(n)}
    for j in range(m):
        cpts[y(j)] = np.full((2, 2), 0.5) if sensor == "uniform" else _copy_table(2)
    return ProcessModel.build([2] * n, [2] * m, {"stay": (edges, cpts)}, {"name": "identity"})


ARM_JOINTS = 3
ARM_DOMAIN = 8
ARM_SUCCESS = 0.9
ARM_SENSOR_CORRECT = 0.8


def _joint_table(domain: int, has_prev: bool, shift: int, success: float) -> np.ndarray:
    """CPT of one joint; parents are (prev^t, own^t, prev^{t+1}) or just (own^t)."""
    if not has_prev:
        table = np.zeros((domain, domain))
        for v in range(domain):
            table[v, v] += 1.0 - success if shift else 1.0
            if shift:
                table[v, (v + shift) % domain] += success
        return table
    table = np.zeros((domain, domain, domain, domain))
    for prev, own, prev_next in np.ndindex(domain, domain, domain):
        moved = (own + prev_next - prev) % domain
        if shift:
            table[prev, own, prev_next, moved] += 1.0 - success
            table[prev, own, prev_next, (moved + shift) % domain] += success
        else:
            table[prev, own, prev_next, moved] = 1.0
    return table


def _sensor_table(domain: int, correct: float) -> np.ndarray:
    noise = (1.0 - correct) / 2
    table = np.zeros((domain, domain))
    for v in range(domain):
        table[v, v] = correct
        table[v, (v - 1) % domain] += noise
        table[v, (v + 1) % domain] += noise
    return table


def robot_arm(domain: int = ARM_DOMAIN) -> ProcessModel:
    """Three-joint arm; action ``CW<i>``/``CCW<i>`` rotates joint i, carrying the later joints along.

    Joint orientations are relative to the world, so when joint ``i-1`` moves
    by some amount joint ``i`` moves by the same amount. Each joint has a noisy
    orientation sensor.
    """
    edges = {(xt(0), x(0))}
    for i in range(1, ARM_JOINTS):
        edges |= {(xt(i - 1), x(i)), (xt(i), x(i)), (x(i - 1), x(i))}
    edges |= {(x(i), y(i)) for i in range(ARM_JOINTS)}
    sensor = _sensor_table(domain, ARM_SENSOR_CORRECT)
    actions = {}
    for target in range(ARM_JOINTS):
        for name, shift in (("CW", 1), ("CCW", -1)):
            cpts = {x(i): _joint_table(domain, i > 0, shift if i == target else 0, ARM_SUCCESS)
                    for i in range(ARM_JOINTS)}
            cpts.update({y(i): sensor for i in range(ARM_JOINTS)})
            actions[f"{name}{target + 1}"] = (edges, cpts)
    return ProcessModel.build([domain] * ARM_JOINTS, [domain] * ARM_JOINTS, actions, {"name": "robot-arm"})


def robot_arm_clusterings() -> dict[str, Clustering]:
    """The three hand clusterings of the arm: per joint, all joints, and neighbouring pairs."""
    single_obs = ((0,), (1,), (2,))
    return {
        "joints": Clustering(((0,), (1,), (2,)), single_obs),
        "whole": Clustering(((0, 1, 2),), single_obs),
        "pairs": Clustering(((0, 1), (1, 2)), single_obs),
    }
