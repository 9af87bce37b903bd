"""Wall-clock comparison of the numeric solver against the neural
reconstruction path (mask + predict + merge).

Ratios are reported, never asserted: at desk scale with a small model the
interesting output is the measurement itself, alongside the balance
residual each path achieves.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

from .evaluation import Predictor, neural_pf, sample_from_grid
from .network import Grid
from .solver import PfOptions, solve_ac


@dataclass
class BenchmarkRow:
    grid_name: str
    n_bus: int
    n_branch: int
    solve_s: float
    neural_s: float
    solver_residual: float
    neural_residual: float

    @property
    def speedup(self) -> float:
        return self.solve_s / self.neural_s

    def to_dict(self) -> dict:
        return {
            "grid": self.grid_name,
            "n_bus": self.n_bus,
            "n_branch": self.n_branch,
            "solve_s": self.solve_s,
            "neural_s": self.neural_s,
            "solver_residual": self.solver_residual,
            "neural_residual": self.neural_residual,
            "speedup": self.speedup,
        }


@dataclass
class BenchmarkReport:
    n_repeats: int
    rows: list[BenchmarkRow]

    def to_dict(self) -> dict:
        return {"n_repeats": self.n_repeats, "rows": [r.to_dict() for r in self.rows]}


def _median(values: list[float]) -> float:
    ordered = sorted(values)
    mid = len(ordered) // 2
    if len(ordered) % 2:
        return ordered[mid]
    return 0.5 * (ordered[mid - 1] + ordered[mid])


def benchmark(
    model: Predictor,
    grids: Sequence[Grid],
    n_repeats: int = 5,
    pf_options: PfOptions = PfOptions(),
) -> BenchmarkReport:
    """Median timings of solve_ac vs the neural path on each grid."""
    rows: list[BenchmarkRow] = []
    for grid in grids:
        solve_times: list[float] = []
        neural_times: list[float] = []
        solver_residual = neural_residual = 0.0
        knowns = sample_from_grid(grid)
        for _ in range(max(1, n_repeats)):
            t0 = time.perf_counter()
            sol = solve_ac(grid, pf_options)
            solve_times.append(max(time.perf_counter() - t0, 1e-12))
            solver_residual = sol.residual_inf_norm

            t0 = time.perf_counter()
            _, neural_residual = neural_pf(model, grid, knowns)
            neural_times.append(max(time.perf_counter() - t0, 1e-12))
        rows.append(
            BenchmarkRow(
                grid_name=grid.name,
                n_bus=grid.n_bus,
                n_branch=grid.n_branch,
                solve_s=_median(solve_times),
                neural_s=_median(neural_times),
                solver_residual=solver_residual,
                neural_residual=neural_residual,
            )
        )
    return BenchmarkReport(n_repeats=n_repeats, rows=rows)
