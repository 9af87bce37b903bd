"""AC and DC solver tests against closed-form and Gauss-Seidel oracles."""

from __future__ import annotations

import numpy as np
import pytest

from gridmae.errors import SingularJacobian, SingularSystem, ZeroImpedance
from gridmae.network import (
    Branch,
    Bus,
    BusType,
    Grid,
    injection_mismatch,
)
from gridmae.solver import (
    PfOptions,
    PfSolution,
    _jacobian,
    _run_newton,
    build_ybus,
    solve_ac,
    solve_dc,
)

from oracles import gauss_seidel, two_bus_closed_form
from test_network import make_two_bus


class TestSolveAc:
    def test_no_load_flat_needs_zero_iterations(self):
        grid = make_two_bus(p2=0.0, q2=0.0)
        sol = solve_ac(grid)
        assert sol.converged
        assert sol.iterations == 0
        assert sol.state[1, 2] == pytest.approx(1.0, abs=1e-12)
        assert sol.state[1, 3] == pytest.approx(0.0, abs=1e-12)

    def test_two_bus_matches_closed_form(self, two_bus_grid):
        sol = solve_ac(two_bus_grid)
        assert sol.converged
        v2, d2 = two_bus_closed_form(p2=-0.5, q2=0.0, x=0.1)
        assert sol.state[1, 2] == pytest.approx(v2, abs=1e-8)
        assert sol.state[1, 3] == pytest.approx(d2, abs=1e-8)

    def test_two_bus_with_reactive_load_matches_closed_form(self):
        grid = make_two_bus(p2=-0.4, q2=-0.15)
        sol = solve_ac(grid)
        assert sol.converged
        v2, d2 = two_bus_closed_form(p2=-0.4, q2=-0.15, x=0.1)
        assert sol.state[1, 2] == pytest.approx(v2, abs=1e-8)
        assert sol.state[1, 3] == pytest.approx(d2, abs=1e-8)

    def test_case14_matches_gauss_seidel(self, case14_grid):
        sol = solve_ac(case14_grid)
        assert sol.converged
        ref = gauss_seidel(case14_grid, tol=1e-10)
        assert np.abs(sol.state[:, 2] - ref[:, 2]).max() < 1e-6
        assert np.abs(sol.state[:, 3] - ref[:, 3]).max() < 1e-5

    def test_known_variables_bit_identical(self, case14_grid):
        sol = solve_ac(case14_grid)
        setp = case14_grid.setpoint_state()
        types = case14_grid.bus_types()
        for i, t in enumerate(types):
            if t == BusType.LOAD:
                assert sol.state[i, 0] == setp[i, 0]
                assert sol.state[i, 1] == setp[i, 1]
            elif t == BusType.GENERATOR:
                assert sol.state[i, 0] == setp[i, 0]
                assert sol.state[i, 2] == setp[i, 2]
            else:
                assert sol.state[i, 2] == setp[i, 2]
                assert sol.state[i, 3] == setp[i, 3]

    def test_residual_recomputed_below_tol(self, case14_grid):
        sol = solve_ac(case14_grid, PfOptions(tol=1e-8))
        mis = injection_mismatch(case14_grid, sol.state)
        assert np.abs(mis).max() < 1e-8
        assert sol.residual_inf_norm == pytest.approx(np.abs(mis).max())

    def test_nonconvergence_reported_not_raised(self):
        # far beyond the two-bus loadability limit
        grid = make_two_bus(p2=-30.0)
        sol = solve_ac(grid, PfOptions(max_iter=20))
        assert isinstance(sol, PfSolution)
        assert not sol.converged
        assert sol.retried
        assert sol.residual_inf_norm > 0

    def test_singular_jacobian_reports_iteration(self):
        # two parallel branches with cancelling reactances zero out the
        # admittance matrix, leaving a singular Newton step
        grid = Grid(
            name="cancel",
            buses=(
                Bus(type=BusType.SLACK, v_set=1.0),
                Bus(type=BusType.LOAD, p_set=-0.5),
            ),
            branches=(Branch(0, 1, 0.1j), Branch(0, 1, -0.1j)),
        )
        with pytest.raises(SingularJacobian) as err:
            solve_ac(grid)
        assert err.value.iteration == 0

    def test_determinism_bit_identical(self, case14_grid):
        a = solve_ac(case14_grid)
        b = solve_ac(case14_grid)
        assert np.array_equal(a.state, b.state)
        assert a.iterations == b.iterations
        assert a.residual_inf_norm == b.residual_inf_norm

    def test_slack_invariance(self, two_bus_grid, case14_grid):
        shift = 0.3
        for grid in (two_bus_grid, case14_grid):
            base = solve_ac(grid)
            start = base.state.copy()
            start[:, 3] = 0.0
            start[:, 2] = grid.setpoint_state()[:, 2]
            types = grid.bus_types()
            start[types == BusType.LOAD, 2] = 1.0
            shifted_start = start.copy()
            shifted_start[:, 3] += shift
            shifted = solve_ac(grid, PfOptions(start=shifted_start))
            assert shifted.converged
            assert np.abs(
                (shifted.state[:, 3] - base.state[:, 3]) - shift
            ).max() < 1e-7
            assert np.abs(shifted.state[:, 2] - base.state[:, 2]).max() < 1e-8

    def test_warm_start_from_solution_converges_immediately(self, case14_grid):
        base = solve_ac(case14_grid)
        warm = solve_ac(case14_grid, PfOptions(start=base.state))
        assert warm.converged
        assert warm.iterations == 0


def make_ring_grid(n: int, chord_stride: int = 9) -> Grid:
    """Deterministic n-bus ring plus chords, used to reach the sparse path."""
    buses = [Bus(type=BusType.SLACK, v_set=1.02)]
    for i in range(1, n):
        if i % 6 == 0:
            buses.append(Bus(type=BusType.GENERATOR, p_set=0.25, v_set=1.01))
        else:
            buses.append(Bus(type=BusType.LOAD, p_set=-0.05, q_set=-0.01))
    branches = [
        Branch(i, (i + 1) % n, complex(0.01 + 0.0001 * (i % 7), 0.06))
        for i in range(n)
    ]
    branches += [
        Branch(i, (i + chord_stride) % n, complex(0.02, 0.09))
        for i in range(0, n, 13)
        if i != (i + chord_stride) % n
    ]
    return Grid(name=f"ring{n}", buses=tuple(buses), branches=tuple(branches))


class TestSparsePath:
    def test_large_grid_uses_sparse_and_converges(self):
        grid = make_ring_grid(250)
        sol = solve_ac(grid)
        assert sol.converged
        assert np.abs(injection_mismatch(grid, sol.state)).max() < 1e-8

    def test_sparse_matches_dense_jacobian(self):
        grid = make_ring_grid(250)
        types = grid.bus_types()
        pv = np.flatnonzero(types == BusType.GENERATOR)
        pq = np.flatnonzero(types == BusType.LOAD)
        pvpq = np.concatenate([pv, pq])
        rng = np.random.default_rng(3)
        volts = (1 + rng.uniform(-0.03, 0.03, grid.n_bus)) * np.exp(
            1j * rng.uniform(-0.1, 0.1, grid.n_bus)
        )
        dense = _jacobian(build_ybus(grid, sparse=False), volts, pvpq, pq)
        sparse = _jacobian(build_ybus(grid, sparse=True), volts, pvpq, pq)
        assert np.allclose(sparse.toarray(), dense, atol=1e-12)

    def test_sparse_and_dense_solutions_agree(self, monkeypatch):
        grid = make_ring_grid(250)
        sparse_sol = solve_ac(grid)
        monkeypatch.setattr("gridmae.solver.SPARSE_THRESHOLD", 10_000)
        dense_sol = solve_ac(grid)
        assert np.abs(sparse_sol.state - dense_sol.state).max() < 1e-10


class TestJacobian:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_central_differences(self, case14_grid, seed):
        grid = case14_grid
        ybus = build_ybus(grid)
        types = grid.bus_types()
        pv = np.flatnonzero(types == BusType.GENERATOR)
        pq = np.flatnonzero(types == BusType.LOAD)
        pvpq = np.concatenate([pv, pq])
        setp = grid.setpoint_state()
        s_spec = setp[:, 0] + 1j * setp[:, 1]

        rng = np.random.default_rng(seed)
        vm = np.ones(grid.n_bus)
        vm[pv] = setp[pv, 2]
        vm[grid.slack_index()] = setp[grid.slack_index(), 2]
        vm[pq] += rng.uniform(-0.05, 0.05, size=len(pq))
        va = rng.uniform(-0.2, 0.2, size=grid.n_bus)

        def mismatch_vec(x):
            va_l = va.copy()
            vm_l = vm.copy()
            va_l[pvpq] = x[: len(pvpq)]
            vm_l[pq] = x[len(pvpq):]
            volts = vm_l * np.exp(1j * va_l)
            ds = volts * np.conj(ybus @ volts) - s_spec
            return np.concatenate([ds[pvpq].real, ds[pq].imag])

        x0 = np.concatenate([va[pvpq], vm[pq]])
        analytic = _jacobian(ybus, vm * np.exp(1j * va), pvpq, pq)
        step = 1e-6
        fd = np.zeros_like(analytic)
        for k in range(len(x0)):
            xp = x0.copy()
            xm = x0.copy()
            xp[k] += step
            xm[k] -= step
            fd[:, k] = (mismatch_vec(xp) - mismatch_vec(xm)) / (2 * step)
        rel = np.abs(fd - analytic) / np.maximum(1.0, np.abs(analytic))
        assert rel.max() < 1e-5

    def test_monotone_residual_decrease_final_iterations(self, case14_grid):
        ybus = build_ybus(case14_grid)
        history: list[float] = []
        _run_newton(
            case14_grid, ybus, PfOptions(tol=1e-12, max_iter=30), 1.0, history
        )
        tail = [e for e in history if e > 0][-3:]
        assert len(tail) == 3
        assert tail[0] > tail[1] > tail[2]


class TestSolveDc:
    def test_zero_injection_gives_zero_angles(self, triangle_grid):
        zero = Grid(
            name="zero",
            buses=tuple(
                Bus(type=b.type, v_set=b.v_set) for b in triangle_grid.buses
            ),
            branches=triangle_grid.branches,
        )
        state = solve_dc(zero)
        assert np.allclose(state[:, 3], 0.0, atol=1e-15)

    def test_two_bus_hand_value(self, two_bus_grid):
        state = solve_dc(two_bus_grid)
        # delta2 = p2 * x = -0.5 * 0.1
        assert state[1, 3] == pytest.approx(-0.05, abs=1e-12)
        assert np.all(state[:, 2] == 1.0)
        assert np.all(state[:, 1] == 0.0)

    def test_case14_close_to_ac_angles(self, case14_grid):
        dc = solve_dc(case14_grid)
        ac = solve_ac(case14_grid)
        assert np.abs(dc[:, 3] - ac.state[:, 3]).max() < 0.1

    def test_slack_balances_dc(self, case14_grid):
        state = solve_dc(case14_grid)
        assert state[:, 0].sum() == pytest.approx(0.0, abs=1e-12)

    def test_singular_system(self):
        grid = Grid(
            name="cancel",
            buses=(
                Bus(type=BusType.SLACK, v_set=1.0),
                Bus(type=BusType.LOAD, p_set=-0.5),
            ),
            branches=(Branch(0, 1, 0.1j), Branch(0, 1, -0.1j)),
        )
        with pytest.raises(SingularSystem):
            solve_dc(grid)

    def test_zero_reactance_rejected(self):
        grid = Grid(
            name="resistive",
            buses=(Bus(type=BusType.SLACK), Bus(type=BusType.LOAD, p_set=-0.1)),
            branches=(Branch(0, 1, complex(0.1, 0.0)),),
        )
        with pytest.raises(ZeroImpedance):
            solve_dc(grid)


class TestOptionsValidation:
    def test_bad_tol(self):
        with pytest.raises(ValueError):
            PfOptions(tol=0.0)

    def test_bad_max_iter(self):
        with pytest.raises(ValueError):
            PfOptions(max_iter=0)
