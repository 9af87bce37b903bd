"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    model_loaded: bool
    checkpoint_hash: str | None = None


class SolveRequest(BaseModel):
    case_text: str = Field(description="Case file content (bus/gen/branch tables)")
    dc: bool = False
    tol: float = 1e-8
    max_iter: int = 50


class BusState(BaseModel):
    p: float
    q: float
    v: float
    delta: float


class SolveResponse(BaseModel):
    case: str
    n_bus: int
    n_branch: int
    converged: bool
    iterations: int
    residual_inf_norm: float
    state: list[BusState]


class LoadModelRequest(BaseModel):
    path: str


class LoadModelResponse(BaseModel):
    checkpoint_hash: str
    hidden_dim: int
    parameter_count: int


class NeuralPfRequest(BaseModel):
    case_text: str


class NeuralPfResponse(BaseModel):
    case: str
    residual_inf_norm: float
    state: list[BusState]


class LimitsModel(BaseModel):
    v_min: float = 0.9
    v_max: float = 1.1
    branch_flow_limits: dict[int, float] | None = None


class ScreenRequest(BaseModel):
    case_text: str
    k: int = 1
    engine: str = "numeric"  # "numeric" | "neural"
    element_kinds: list[str] = Field(default_factory=lambda: ["branch"])
    limits: LimitsModel = Field(default_factory=LimitsModel)


class ViolationModel(BaseModel):
    kind: str
    bus: int | None = None
    branch: int | None = None
    v: float | None = None
    flow: float | None = None
    limit: float | None = None


class ContingencyRowModel(BaseModel):
    dropped: list[list]
    status: str
    violations: list[ViolationModel]
    residual: float | None = None


class ScreenResponse(BaseModel):
    engine: str
    k: int
    n_rows: int
    n_rejected: int
    n_nonconverged: int
    n_violating: int
    rows: list[ContingencyRowModel]


class BenchRequest(BaseModel):
    case_texts: list[str]
    repeats: int = 5


class BenchRowModel(BaseModel):
    grid: str
    n_bus: int
    n_branch: int
    solve_s: float
    neural_s: float
    solver_residual: float
    neural_residual: float
    speedup: float


class BenchResponse(BaseModel):
    n_repeats: int
    rows: list[BenchRowModel]
