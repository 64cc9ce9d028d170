"""Backward/forward sweep power flow for radial single-phase feeders.

Injections are consumption-positive (a PV export is a negative P). Impedances
are given in ohms and converted with z_base = v_base^2 / s_base.
"""
import logging
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, Optional, Sequence

import numpy as np

from app.config import settings
from app.errors import FeederTopologyError, ModelValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Branch:
    from_node: int
    to_node: int
    r_ohm: float
    x_ohm: float

    @property
    def impedance(self) -> complex:
        return complex(self.r_ohm, self.x_ohm)


@dataclass(frozen=True)
class FeederModel:
    """Radial feeder; nodes[0] is the slack node at the feeder head."""
    nodes: Sequence[int]
    branches: Sequence[Branch]
    v_base: float = 400.0
    s_base: float = 10.0
    slack_voltage: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "branches", tuple(self.branches))
        if not self.nodes:
            raise FeederTopologyError("feeder has no nodes")
        if len(set(self.nodes)) != len(self.nodes):
            raise FeederTopologyError("duplicate node identifiers")
        if self.v_base <= 0 or self.s_base <= 0 or self.slack_voltage <= 0:
            raise FeederTopologyError("bases and slack voltage must be positive")

        known = set(self.nodes)
        parents: Dict[int, Branch] = {}
        for branch in self.branches:
            if branch.from_node not in known or branch.to_node not in known:
                raise FeederTopologyError(f"branch {branch.from_node}->{branch.to_node} references an unknown node")
            if branch.r_ohm <= 0 or branch.x_ohm <= 0:
                raise FeederTopologyError(f"branch {branch.from_node}->{branch.to_node} needs R, X > 0")
            if branch.to_node == self.slack:
                raise FeederTopologyError("the slack node cannot have a parent")
            if branch.to_node in parents:
                raise FeederTopologyError(f"node {branch.to_node} has more than one parent")
            parents[branch.to_node] = branch
        if len(parents) != len(self.nodes) - 1:
            raise FeederTopologyError("every non-slack node needs exactly one parent branch")
        if len(self.sweep_order) != len(self.nodes):
            raise FeederTopologyError("feeder is not connected to the slack node")

    @property
    def slack(self) -> int:
        return self.nodes[0]

    @cached_property
    def parent_branch(self) -> Dict[int, Branch]:
        return {branch.to_node: branch for branch in self.branches}

    @cached_property
    def children(self) -> Dict[int, List[int]]:
        result: Dict[int, List[int]] = {node: [] for node in self.nodes}
        for branch in self.branches:
            result[branch.from_node].append(branch.to_node)
        return {node: sorted(kids) for node, kids in result.items()}

    @cached_property
    def sweep_order(self) -> List[int]:
        """Nodes in breadth-first order from the slack, parents before children."""
        order, queue, seen = [], deque([self.slack]), {self.slack}
        while queue:
            node = queue.popleft()
            order.append(node)
            for child in self.children.get(node, []):
                if child not in seen:
                    seen.add(child)
                    queue.append(child)
        return order

    @property
    def z_base(self) -> float:
        return self.v_base ** 2 / (self.s_base * 1000.0)

    def index(self, node: int) -> int:
        try:
            return self.nodes.index(node)
        except ValueError:
            raise FeederTopologyError(f"node {node} is not part of the feeder")

    def depth(self, node: int) -> int:
        self.index(node)
        hops = 0
        while node != self.slack:
            node = self.parent_branch[node].from_node
            hops += 1
        return hops

    def path_impedance(self, node: int) -> complex:
        """Series impedance (ohms) between the slack node and ``node``."""
        self.index(node)
        total = 0j
        while node != self.slack:
            branch = self.parent_branch[node]
            total += branch.impedance
            node = branch.from_node
        return total


def four_bus_feeder(v_base: Optional[float] = None, s_base: Optional[float] = None,
                    slack_voltage: float = 1.0) -> FeederModel:
    """Four-node low-voltage line with progressively longer sections."""
    return FeederModel(
        nodes=[1, 2, 3, 4],
        branches=[
            Branch(1, 2, 0.0922, 0.0470),
            Branch(2, 3, 0.1844, 0.0940),
            Branch(3, 4, 0.3660, 0.1864),
        ],
        v_base=settings.default_v_base if v_base is None else v_base,
        s_base=settings.default_s_base if s_base is None else s_base,
        slack_voltage=slack_voltage,
    )


@dataclass(frozen=True)
class NodalInjection:
    """Per-node consumption-positive P (kW) and Q (kVAr), aligned with feeder.nodes."""
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(-1)
        q = np.asarray(self.q, dtype=float).reshape(-1)
        if p.size != q.size:
            raise ModelValidationError("P and Q injections differ in length")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ModelValidationError("injections must be finite")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @classmethod
    def zeros(cls, feeder: FeederModel) -> "NodalInjection":
        return cls(np.zeros(len(feeder.nodes)), np.zeros(len(feeder.nodes)))


@dataclass(frozen=True)
class VoltageSolution:
    nodes: Sequence[int]
    voltage: np.ndarray
    iterations: int
    converged: bool
    max_mismatch: float

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.voltage)

    @property
    def angle(self) -> np.ndarray:
        return np.angle(self.voltage)

    def magnitude_at(self, node: int) -> float:
        return float(abs(self.voltage[list(self.nodes).index(node)]))


def _power_mismatch(feeder: FeederModel, z: np.ndarray, V: np.ndarray, S: np.ndarray) -> float:
    pos = {node: i for i, node in enumerate(feeder.nodes)}
    branch_current = np.zeros(len(feeder.nodes), dtype=complex)
    for node in feeder.sweep_order[1:]:
        i = pos[node]
        parent = pos[feeder.parent_branch[node].from_node]
        branch_current[i] = (V[parent] - V[i]) / z[i]
    worst = 0.0
    for node in feeder.sweep_order[1:]:
        i = pos[node]
        drawn = branch_current[i] - sum(branch_current[pos[c]] for c in feeder.children[node])
        worst = max(worst, abs(V[i] * np.conj(drawn) - S[i]))
    return worst


def backward_forward_sweep(feeder: FeederModel, inj: NodalInjection, max_iter: Optional[int] = None,
                           voltage_tol: Optional[float] = None,
                           mismatch_tol: Optional[float] = None) -> VoltageSolution:
    """Solve nodal voltages from a flat start; ``converged`` is False if the sweep stalls."""
    max_iter = settings.powerflow_max_iter if max_iter is None else max_iter
    voltage_tol = settings.powerflow_voltage_tol if voltage_tol is None else voltage_tol
    mismatch_tol = settings.powerflow_mismatch_tol if mismatch_tol is None else mismatch_tol

    n = len(feeder.nodes)
    if inj.p.size != n:
        raise ModelValidationError(f"injection covers {inj.p.size} nodes, feeder has {n}")
    pos = {node: i for i, node in enumerate(feeder.nodes)}
    z = np.zeros(n, dtype=complex)
    for node, branch in feeder.parent_branch.items():
        z[pos[node]] = branch.impedance / feeder.z_base
    S = (inj.p + 1j * inj.q) / feeder.s_base
    S[pos[feeder.slack]] = 0.0

    V = np.full(n, complex(feeder.slack_voltage))
    mismatch = float("inf")
    for iteration in range(1, max_iter + 1):
        # Branch currents: own load plus everything downstream
        branch_current = np.conj(S / V)
        for node in reversed(feeder.sweep_order[1:]):
            parent = feeder.parent_branch[node].from_node
            if parent != feeder.slack:
                branch_current[pos[parent]] += branch_current[pos[node]]

        V_new = V.copy()
        for node in feeder.sweep_order[1:]:
            i = pos[node]
            V_new[i] = V_new[pos[feeder.parent_branch[node].from_node]] - z[i] * branch_current[i]

        if not np.all(np.isfinite(V_new)) or np.any(np.abs(V_new) < 1e-6):
            logger.warning(f"Power flow diverged at iteration {iteration}")
            return VoltageSolution(feeder.nodes, V_new, iteration, False, float("inf"))

        change = float(np.max(np.abs(V_new - V)))
        V = V_new
        mismatch = _power_mismatch(feeder, z, V, S)
        if change < voltage_tol or mismatch < mismatch_tol:
            return VoltageSolution(feeder.nodes, V, iteration, True, mismatch)

    logger.warning(f"Power flow did not converge in {max_iter} iterations (mismatch {mismatch:.3e})")
    return VoltageSolution(feeder.nodes, V, max_iter, False, mismatch)
