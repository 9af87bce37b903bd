"""Newton-Raphson AC power flow on the series-impedance model, plus the
linear DC approximation.

The AC solve uses the polar bus-injection formulation: mismatch in active
power at generator and load buses and reactive power at load buses, with
the Jacobian assembled from the complex-matrix derivatives of
S = V conj(Y V). Voltage magnitudes at generator/slack buses are pinned
to their setpoints; the slack angle is a gauge and keeps its initial
value. After convergence the full 4-variable state is re-expanded: solved
injections come from the converged voltages, while every known variable
is returned bit-identical to its input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularJacobian, SingularSystem, ZeroImpedance
from .network import (
    BusType,
    Grid,
    injection_mismatch,
    wrap_angle,
)

#: Bus count above which the Newton step uses sparse LU instead of dense
#: elimination.
SPARSE_THRESHOLD = 200


@dataclass(frozen=True)
class PfOptions:
    """Solver options; ``start=None`` means a flat start (setpoint voltage
    magnitudes, zero angles)."""

    tol: float = 1e-8
    max_iter: int = 50
    start: np.ndarray | None = None

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass(frozen=True)
class PfSolution:
    """Solver result. ``residual_inf_norm`` is recomputed from the final
    state with :func:`~gridmae.network.injection_mismatch`, independently
    of the Newton iteration's own bookkeeping."""

    state: np.ndarray  # (n_bus, 4) in (p, q, v, delta) order
    converged: bool
    iterations: int
    residual_inf_norm: float
    retried: bool = False


def build_ybus(grid: Grid, sparse: bool = False):
    """Bus admittance matrix of the pure series-impedance network."""
    n = grid.n_bus
    frm, to = grid.edge_index()
    y = 1.0 / grid.impedances()
    if sparse:
        rows = np.concatenate([frm, to, frm, to])
        cols = np.concatenate([frm, to, to, frm])
        vals = np.concatenate([y, y, -y, -y])
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    ybus = np.zeros((n, n), dtype=np.complex128)
    np.add.at(ybus, (frm, frm), y)
    np.add.at(ybus, (to, to), y)
    np.add.at(ybus, (frm, to), -y)
    np.add.at(ybus, (to, frm), -y)
    return ybus


def _bus_partitions(grid: Grid) -> tuple[int, np.ndarray, np.ndarray]:
    types = grid.bus_types()
    slack = int(np.flatnonzero(types == BusType.SLACK)[0])
    pv = np.flatnonzero(types == BusType.GENERATOR)
    pq = np.flatnonzero(types == BusType.LOAD)
    return slack, pv, pq


def _initial_voltages(
    grid: Grid, start: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray]:
    setp = grid.setpoint_state()
    slack, pv, _ = _bus_partitions(grid)
    if start is None:
        vm = np.where(
            np.isin(np.arange(grid.n_bus), np.append(pv, slack)),
            setp[:, 2],
            1.0,
        )
        va = np.zeros(grid.n_bus)
        va[slack] = setp[slack, 3]
    else:
        start = np.asarray(start, dtype=np.float64)
        vm = start[:, 2].copy()
        va = start[:, 3].copy()
    # Magnitudes at generator and slack buses are knowns: pin to setpoint.
    vm[pv] = setp[pv, 2]
    vm[slack] = setp[slack, 2]
    return vm, va


def _jacobian(ybus, volts: np.ndarray, pvpq: np.ndarray, pq: np.ndarray):
    """Power-injection Jacobian blocks in polar coordinates."""
    n = len(volts)
    ibus = ybus @ volts
    if sp.issparse(ybus):
        ix = np.arange(n)
        diag_v = sp.csr_matrix((volts, (ix, ix)), shape=(n, n))
        diag_i = sp.csr_matrix((ibus, (ix, ix)), shape=(n, n))
        diag_vn = sp.csr_matrix((volts / np.abs(volts), (ix, ix)), shape=(n, n))
        ds_dva = 1j * diag_v @ (diag_i - ybus @ diag_v).conjugate()
        ds_dvm = diag_v @ (ybus @ diag_vn).conjugate() + diag_i.conjugate() @ diag_vn
        j11 = ds_dva[pvpq][:, pvpq].real
        j12 = ds_dvm[pvpq][:, pq].real
        j21 = ds_dva[pq][:, pvpq].imag
        j22 = ds_dvm[pq][:, pq].imag
        return sp.bmat([[j11, j12], [j21, j22]], format="csc")
    diag_v = np.diag(volts)
    diag_i = np.diag(ibus)
    diag_vn = np.diag(volts / np.abs(volts))
    ds_dva = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
    ds_dvm = diag_v @ np.conj(ybus @ diag_vn) + np.conj(diag_i) @ diag_vn
    return np.block(
        [
            [ds_dva[np.ix_(pvpq, pvpq)].real, ds_dvm[np.ix_(pvpq, pq)].real],
            [ds_dva[np.ix_(pq, pvpq)].imag, ds_dvm[np.ix_(pq, pq)].imag],
        ]
    )


def _newton_step(jac, f: np.ndarray, iteration: int) -> np.ndarray:
    try:
        if sp.issparse(jac):
            lu = spla.splu(jac.tocsc())
            dx = lu.solve(-f)
        else:
            dx = np.linalg.solve(jac, -f)
    except (np.linalg.LinAlgError, RuntimeError) as exc:
        raise SingularJacobian(iteration) from exc
    if not np.all(np.isfinite(dx)):
        raise SingularJacobian(iteration)
    return dx


def _constrained_error(ds: np.ndarray, pv: np.ndarray, pq: np.ndarray) -> float:
    """Infinity norm of the mismatch restricted to constrained components:
    full complex modulus at load buses, active part at generator buses."""
    parts = []
    if len(pq):
        parts.append(np.abs(ds[pq]).max())
    if len(pv):
        parts.append(np.abs(ds[pv].real).max())
    return float(max(parts)) if parts else 0.0


def _run_newton(
    grid: Grid,
    ybus,
    opts: PfOptions,
    damping: float,
    err_history: list[float] | None = None,
) -> tuple[np.ndarray, np.ndarray, int, float]:
    """Iterate to convergence; returns the best (vm, va) seen."""
    slack, pv, pq = _bus_partitions(grid)
    pvpq = np.concatenate([pv, pq])
    setp = grid.setpoint_state()
    s_spec = setp[:, 0] + 1j * setp[:, 1]

    vm, va = _initial_voltages(grid, opts.start)
    best = (vm.copy(), va.copy(), np.inf)

    iterations = 0
    for it in range(opts.max_iter + 1):
        volts = vm * np.exp(1j * va)
        ds = volts * np.conj(ybus @ volts) - s_spec
        err = _constrained_error(ds, pv, pq)
        if err_history is not None:
            err_history.append(err)
        if err < best[2]:
            best = (vm.copy(), va.copy(), err)
        if err < opts.tol:
            return vm, va, iterations, err
        if it == opts.max_iter:
            break
        f = np.concatenate([ds[pvpq].real, ds[pq].imag])
        jac = _jacobian(ybus, volts, pvpq, pq)
        dx = _newton_step(jac, f, it)
        va[pvpq] += damping * dx[: len(pvpq)]
        vm[pq] += damping * dx[len(pvpq) :]
        iterations += 1

    vm, va, err = best
    return vm, va, iterations, err


def _expand_state(
    grid: Grid, ybus, vm: np.ndarray, va: np.ndarray
) -> np.ndarray:
    """Full (p, q, v, delta) state; known entries bit-identical to inputs."""
    slack, pv, pq = _bus_partitions(grid)
    setp = grid.setpoint_state()
    volts = vm * np.exp(1j * va)
    s_calc = volts * np.conj(ybus @ volts)

    state = np.empty((grid.n_bus, 4), dtype=np.float64)
    state[:, 0] = s_calc.real
    state[:, 1] = s_calc.imag
    state[:, 2] = vm
    state[:, 3] = wrap_angle(va)
    # Known variables are copied straight from the problem definition.
    state[pv, 0] = setp[pv, 0]
    state[pq, 0] = setp[pq, 0]
    state[pq, 1] = setp[pq, 1]
    state[pv, 2] = setp[pv, 2]
    state[slack, 2] = setp[slack, 2]
    state[slack, 3] = va[slack]
    return state


def solve_ac(grid: Grid, opts: PfOptions = PfOptions()) -> PfSolution:
    """Solve the standard AC power flow problem by Newton-Raphson.

    On non-convergence the best iterate is retried once with half-damped
    steps before the solution is returned with ``converged=False``.
    Raises :class:`SingularJacobian` if a Newton step matrix is singular.
    """
    ybus = build_ybus(grid, sparse=grid.n_bus > SPARSE_THRESHOLD)

    vm, va, iterations, err = _run_newton(grid, ybus, opts, damping=1.0)
    retried = False
    if not err < opts.tol:
        vm2, va2, it2, err2 = _run_newton(grid, ybus, opts, damping=0.5)
        retried = True
        if err2 < err:
            vm, va, iterations, err = vm2, va2, it2, err2

    state = _expand_state(grid, ybus, vm, va)
    residual = float(np.abs(injection_mismatch(grid, state)).max())
    return PfSolution(
        state=state,
        converged=bool(residual < opts.tol),
        iterations=iterations,
        residual_inf_norm=residual,
        retried=retried,
    )


def solve_dc(grid: Grid) -> np.ndarray:
    """Linear DC power flow: angles from B delta = p with the slack angle
    fixed, unit voltage magnitudes, zero reactive power.

    Requires x != 0 on every branch; raises :class:`SingularSystem` if the
    susceptance system cannot be solved.
    """
    x = grid.impedances().imag
    if np.any(x == 0.0):
        raise ZeroImpedance("DC power flow requires x != 0 on every branch")

    n = grid.n_bus
    frm, to = grid.edge_index()
    w = 1.0 / x
    b_mat = np.zeros((n, n))
    np.add.at(b_mat, (frm, frm), w)
    np.add.at(b_mat, (to, to), w)
    np.add.at(b_mat, (frm, to), -w)
    np.add.at(b_mat, (to, frm), -w)

    slack, _, _ = _bus_partitions(grid)
    setp = grid.setpoint_state()
    keep = np.flatnonzero(np.arange(n) != slack)
    rhs = setp[keep, 0] - b_mat[keep, slack] * setp[slack, 3]
    try:
        delta_red = np.linalg.solve(b_mat[np.ix_(keep, keep)], rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("DC susceptance matrix is singular") from exc
    if not np.all(np.isfinite(delta_red)):
        raise SingularSystem("DC susceptance matrix is singular")

    delta = np.empty(n)
    delta[slack] = setp[slack, 3]
    delta[keep] = delta_red

    state = np.zeros((n, 4))
    state[:, 0] = setp[:, 0]
    state[slack, 0] = -setp[keep, 0].sum()
    state[:, 2] = 1.0
    state[:, 3] = delta
    return state
