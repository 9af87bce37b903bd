"""Graph representation of a transmission grid and nodal-balance kernels.

A grid is a directed graph of buses and branches. Every branch carries a
series impedance z = r + jx (p.u.); every bus carries a type and the
setpoints that define the standard power flow problem:

    slack      v_set, delta_set known;  p, q solved
    generator  p_set, v_set     known;  q, delta solved
    load       p_set, q_set     known;  v, delta solved

Per-bus electrical state is the 4-tuple (p, q, v, delta) in per-unit and
radians, with p > 0 meaning net generation. Branch current, branch flow
and the per-bus power balance follow

    I_ij = (V_i - V_j) / z_ij
    S_ij = V_i * conj(I_ij)
    S_i  = sum over out-edges of S_ij
           - sum over in-edges of (S_ki - z_ki * |I_ki|^2)

where the in-edge term is the power arriving at i (sent minus series
losses). All kernels here are pure functions over immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence, Union

import numpy as np

from .errors import (
    DimensionMismatch,
    Disconnected,
    MultipleSlack,
    NoSlack,
    ValidationError,
    ZeroImpedance,
)

#: Feature order used by every (n_bus, 4) state array in the package.
FEATURES = ("p", "q", "v", "delta")


class BusType(IntEnum):
    """Bus classification; integer codes match the case-file convention."""

    LOAD = 1
    GENERATOR = 2
    SLACK = 3


@dataclass(frozen=True)
class Bus:
    """A bus with its type and problem-defining setpoints (p.u. / rad)."""

    type: BusType
    p_set: float = 0.0
    q_set: float = 0.0
    v_set: float = 1.0
    delta_set: float = 0.0


@dataclass(frozen=True)
class Branch:
    """Directed branch with complex series impedance z (p.u.)."""

    from_bus: int
    to_bus: int
    z: complex

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise ValidationError(
                f"branch endpoints must differ, got {self.from_bus}->{self.to_bus}"
            )
        if abs(self.z) == 0.0:
            raise ZeroImpedance(
                f"branch {self.from_bus}->{self.to_bus} has zero impedance"
            )


@dataclass(frozen=True)
class NodeState:
    """Per-bus electrical state (p.u. injections, p.u. voltage, radians)."""

    p: float
    q: float
    v: float
    delta: float


@dataclass(frozen=True)
class Grid:
    """Weakly connected bus/branch graph with exactly one slack bus."""

    name: str
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]

    def __post_init__(self):
        n = len(self.buses)
        if n == 0:
            raise ValidationError("grid has no buses")
        for br in self.branches:
            if not (0 <= br.from_bus < n and 0 <= br.to_bus < n):
                raise ValidationError(
                    f"branch {br.from_bus}->{br.to_bus} references a missing bus"
                )
        n_slack = sum(1 for b in self.buses if b.type is BusType.SLACK)
        if n_slack == 0:
            raise NoSlack(f"grid '{self.name}' has no slack bus")
        if n_slack > 1:
            raise MultipleSlack(f"grid '{self.name}' has {n_slack} slack buses")
        if not _weakly_connected(n, self.branches):
            raise Disconnected(f"grid '{self.name}' is not weakly connected")

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    def bus_types(self) -> np.ndarray:
        """Integer bus-type codes, shape (n_bus,)."""
        return np.array([int(b.type) for b in self.buses], dtype=np.int64)

    def edge_index(self) -> tuple[np.ndarray, np.ndarray]:
        """(from, to) bus index arrays, shape (n_branch,) each."""
        frm = np.array([b.from_bus for b in self.branches], dtype=np.int64)
        to = np.array([b.to_bus for b in self.branches], dtype=np.int64)
        return frm, to

    def impedances(self) -> np.ndarray:
        """Complex series impedances, shape (n_branch,)."""
        return np.array([b.z for b in self.branches], dtype=np.complex128)

    def slack_index(self) -> int:
        for i, b in enumerate(self.buses):
            if b.type is BusType.SLACK:
                return i
        raise NoSlack(f"grid '{self.name}' has no slack bus")

    def setpoint_state(self) -> np.ndarray:
        """(n_bus, 4) array of the setpoints in (p, q, v, delta) order.

        Entries that are solved rather than specified for a bus type hold
        the stored defaults; callers mask them as appropriate.
        """
        return np.array(
            [[b.p_set, b.q_set, b.v_set, b.delta_set] for b in self.buses],
            dtype=np.float64,
        )


StateLike = Union[np.ndarray, Sequence[NodeState]]


def _weakly_connected(n: int, branches: Sequence[Branch]) -> bool:
    if n == 1:
        return True
    adj: list[list[int]] = [[] for _ in range(n)]
    for br in branches:
        adj[br.from_bus].append(br.to_bus)
        adj[br.to_bus].append(br.from_bus)
    seen = [False] * n
    stack = [0]
    seen[0] = True
    count = 1
    while stack:
        u = stack.pop()
        for w in adj[u]:
            if not seen[w]:
                seen[w] = True
                count += 1
                stack.append(w)
    return count == n


def as_state_array(state: StateLike, n_bus: int | None = None) -> np.ndarray:
    """Normalize a state to a float64 (n_bus, 4) array in FEATURES order."""
    if isinstance(state, np.ndarray):
        arr = np.asarray(state, dtype=np.float64)
    else:
        arr = np.array(
            [[s.p, s.q, s.v, s.delta] for s in state], dtype=np.float64
        )
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise DimensionMismatch(f"state must have shape (n, 4), got {arr.shape}")
    if n_bus is not None and arr.shape[0] != n_bus:
        raise DimensionMismatch(
            f"state has {arr.shape[0]} rows for a {n_bus}-bus grid"
        )
    return arr


def to_node_states(state: np.ndarray) -> list[NodeState]:
    """Inverse of :func:`as_state_array`."""
    arr = as_state_array(state)
    return [NodeState(*row) for row in arr.tolist()]


def complex_voltages(state: StateLike) -> np.ndarray:
    """V_i = v_i * exp(j delta_i) for every bus."""
    arr = as_state_array(state)
    return arr[:, 2] * np.exp(1j * arr[:, 3])


def complex_injections(state: StateLike) -> np.ndarray:
    """S_i = p_i + j q_i for every bus."""
    arr = as_state_array(state)
    return arr[:, 0] + 1j * arr[:, 1]


def branch_current(vi: complex, vj: complex, z: complex) -> complex:
    """Series current I = (vi - vj) / z; raises ZeroImpedance for |z| = 0."""
    if abs(z) == 0.0:
        raise ZeroImpedance("branch impedance has zero magnitude")
    return (vi - vj) / z


def branch_flow(vi: complex, current: complex) -> complex:
    """Sending-end power S = vi * conj(I)."""
    return vi * np.conj(current)


def branch_quantities(
    grid: Grid, state: StateLike
) -> tuple[np.ndarray, np.ndarray]:
    """(currents, sending-end flows) per branch, shape (n_branch,) each."""
    arr = as_state_array(state, grid.n_bus)
    volts = complex_voltages(arr)
    frm, to = grid.edge_index()
    z = grid.impedances()
    currents = (volts[frm] - volts[to]) / z
    flows = volts[frm] * np.conj(currents)
    return currents, flows


def injection_mismatch(grid: Grid, state: StateLike) -> np.ndarray:
    """Per-bus power-balance residual, shape (n_bus,) complex.

    Residual_i = (out-flows - net received in-flows) - S_i; the zero vector
    iff the state satisfies nodal balance. The received in-flow on branch
    (k, i) is S_ki - z_ki |I_ki|^2, the sending-end flow minus series loss.
    """
    arr = as_state_array(state, grid.n_bus)
    balance = np.zeros(grid.n_bus, dtype=np.complex128)
    if grid.n_branch:
        frm, to = grid.edge_index()
        z = grid.impedances()
        currents, flows = branch_quantities(grid, arr)
        received = flows - z * np.abs(currents) ** 2
        np.add.at(balance, frm, flows)
        np.add.at(balance, to, -received)
    return balance - complex_injections(arr)


def equation_counts(grid: Grid) -> tuple[int, int]:
    """(equations, variables) of the real-valued nodal/branch system.

    The complex balance, current and flow equations expand to
    2 n_bus + 4 n_branch real equations over the 4 n_bus node variables
    plus the 4 n_branch branch variables.
    """
    n, e = grid.n_bus, grid.n_branch
    return 2 * n + 4 * e, 4 * n + 4 * e


def total_losses(grid: Grid, state: StateLike) -> complex:
    """Sum over branches of z |I|^2; equals sum_i S_i at nodal balance."""
    if grid.n_branch == 0:
        return 0j
    currents, _ = branch_quantities(grid, state)
    return complex(np.sum(grid.impedances() * np.abs(currents) ** 2))


def wrap_angle(delta: np.ndarray) -> np.ndarray:
    """Wrap angles into (-pi, pi]."""
    wrapped = np.mod(-np.asarray(delta) + np.pi, 2 * np.pi)
    return -(wrapped - np.pi)
