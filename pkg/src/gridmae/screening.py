"""Contingency screening: enumerate element outages, assess each by a
numeric solve or a neural reconstruction, and check operating limits.

The numeric engine is the ground truth; the neural engine additionally
reports the balance residual of each reconstruction so screening quality
stays auditable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .evaluation import Predictor, neural_pf, sample_from_grid
from .network import Grid, branch_quantities
from .scenarios import (
    ContingencySpec,
    ElementRef,
    Rejected,
    enumerate_contingencies,
    perturb_topology,
)
from .solver import PfOptions, solve_ac


@dataclass(frozen=True)
class OperatingLimits:
    v_min: float = 0.9
    v_max: float = 1.1
    #: optional per-branch apparent-flow magnitude limits (p.u.), keyed by
    #: the branch index in the pre-contingency grid
    branch_flow_limits: dict[int, float] | None = None

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise ValidationError(
                f"need v_min < v_max, got [{self.v_min}, {self.v_max}]"
            )

    def to_dict(self) -> dict:
        return {
            "v_min": self.v_min,
            "v_max": self.v_max,
            "branch_flow_limits": (
                {str(k): v for k, v in self.branch_flow_limits.items()}
                if self.branch_flow_limits
                else None
            ),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OperatingLimits":
        limits = d.get("branch_flow_limits")
        return cls(
            v_min=d.get("v_min", 0.9),
            v_max=d.get("v_max", 1.1),
            branch_flow_limits=(
                {int(k): float(v) for k, v in limits.items()} if limits else None
            ),
        )


@dataclass
class ContingencyRow:
    dropped: tuple[ElementRef, ...]
    status: str  # "ok" | "violations" | "rejected" | "nonconverged"
    violations: list[dict] = field(default_factory=list)
    residual: float | None = None  # neural engine only

    @property
    def feasible(self) -> bool:
        return self.status in ("ok", "violations")

    def to_dict(self) -> dict:
        out = {
            "dropped": [[k, i] for k, i in self.dropped],
            "status": self.status,
            "violations": self.violations,
        }
        if self.residual is not None:
            out["residual"] = self.residual
        return out


@dataclass
class ViolationReport:
    engine: str
    k: int
    rows: list[ContingencyRow]

    @property
    def n_rejected(self) -> int:
        return sum(1 for r in self.rows if r.status == "rejected")

    @property
    def n_nonconverged(self) -> int:
        return sum(1 for r in self.rows if r.status == "nonconverged")

    @property
    def n_violating(self) -> int:
        return sum(1 for r in self.rows if r.status == "violations")

    def to_dict(self) -> dict:
        return {
            "engine": self.engine,
            "k": self.k,
            "n_rows": len(self.rows),
            "n_rejected": self.n_rejected,
            "n_nonconverged": self.n_nonconverged,
            "n_violating": self.n_violating,
            "rows": [r.to_dict() for r in self.rows],
        }


def _check_limits(
    grid: Grid,
    state: np.ndarray,
    limits: OperatingLimits,
    surviving_branch_ids: Sequence[int],
) -> list[dict]:
    violations: list[dict] = []
    v = state[:, 2]
    for bus in np.flatnonzero((v < limits.v_min) | (v > limits.v_max)):
        violations.append({"kind": "voltage", "bus": int(bus), "v": float(v[bus])})
    if limits.branch_flow_limits:
        _, flows = branch_quantities(grid, state)
        for local_idx, original_idx in enumerate(surviving_branch_ids):
            limit = limits.branch_flow_limits.get(original_idx)
            if limit is not None and abs(flows[local_idx]) > limit:
                violations.append(
                    {
                        "kind": "flow",
                        "branch": int(original_idx),
                        "flow": float(abs(flows[local_idx])),
                        "limit": float(limit),
                    }
                )
    return violations


def screen_contingencies(
    engine: str,
    grid: Grid,
    spec: ContingencySpec,
    limits: OperatingLimits = OperatingLimits(),
    model: Predictor | None = None,
    pf_options: PfOptions = PfOptions(),
) -> ViolationReport:
    """Assess every enumerated contingency; one row per subset.

    ``engine`` is "numeric" (solve each post-contingency case) or
    "neural" (reconstruct from the power-flow knowns with ``model``).
    Per-case failures are recorded as rows, never raised.
    """
    if engine not in ("numeric", "neural"):
        raise ValidationError(f"unknown engine {engine!r}")
    if engine == "neural" and model is None:
        raise ValidationError("neural engine requires a model")

    rows: list[ContingencyRow] = []
    for subset in enumerate_contingencies(spec):
        result = perturb_topology(grid, subset)
        if isinstance(result, Rejected):
            rows.append(ContingencyRow(dropped=subset, status="rejected"))
            continue
        post = result
        dropped_branches = {i for kind, i in subset if kind == "branch"}
        survivors = [i for i in range(grid.n_branch) if i not in dropped_branches]
        if engine == "numeric":
            sol = solve_ac(post, pf_options)
            if not sol.converged:
                rows.append(ContingencyRow(dropped=subset, status="nonconverged"))
                continue
            violations = _check_limits(post, sol.state, limits, survivors)
            rows.append(
                ContingencyRow(
                    dropped=subset,
                    status="violations" if violations else "ok",
                    violations=violations,
                )
            )
        else:
            state, residual = neural_pf(model, post, sample_from_grid(post))
            violations = _check_limits(post, state, limits, survivors)
            rows.append(
                ContingencyRow(
                    dropped=subset,
                    status="violations" if violations else "ok",
                    violations=violations,
                    residual=residual,
                )
            )
    return ViolationReport(engine=engine, k=spec.k, rows=rows)


def feasibility_agreement(
    numeric: ViolationReport, neural: ViolationReport
) -> float:
    """Fraction of contingencies on which both engines agree about
    feasibility; a screening-quality metric, not an assertion."""
    if len(numeric.rows) != len(neural.rows):
        raise ValidationError("reports cover different contingency sets")
    agree = sum(
        1
        for a, b in zip(numeric.rows, neural.rows)
        if a.feasible == b.feasible
    )
    return agree / max(len(numeric.rows), 1)
