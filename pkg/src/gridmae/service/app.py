"""FastAPI service wrapping the core package.

The service covers the request/response-shaped operations: numeric and
DC solves, neural power flow against a loaded checkpoint, contingency
screening and the numeric-vs-neural benchmark. Long-running batch jobs
(dataset generation, training) stay on the CLI.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from ..benchmark import benchmark
from ..cases import parse_case, reduce_case
from ..errors import GridMaeError, ValidationError
from ..evaluation import neural_pf, sample_from_grid
from ..model import Model, load_checkpoint, parameter_count
from ..network import Grid
from ..scenarios import ContingencySpec, element_candidates
from ..screening import OperatingLimits, screen_contingencies
from ..solver import PfOptions, solve_ac, solve_dc
from . import schemas


class ModelRegistry:
    """Holds the checkpoint currently served."""

    def __init__(self):
        self.model: Model | None = None
        self.checkpoint_hash: str | None = None

    def require(self) -> Model:
        if self.model is None:
            raise HTTPException(
                status_code=409, detail="no model loaded; POST /model/load first"
            )
        return self.model


def _grid_from_text(case_text: str) -> Grid:
    return reduce_case(parse_case(case_text))


def _state_rows(state) -> list[schemas.BusState]:
    return [
        schemas.BusState(p=row[0], q=row[1], v=row[2], delta=row[3])
        for row in state.tolist()
    ]


def create_app(checkpoint: str | None = None) -> FastAPI:
    app = FastAPI(
        title="gridmae",
        description="AC power flow, neural reconstruction and contingency screening",
        version="0.1.0",
    )
    registry = ModelRegistry()
    if checkpoint is not None:
        registry.model = load_checkpoint(checkpoint)
        registry.checkpoint_hash = _hash_of(registry.model)
    app.state.registry = registry

    @app.exception_handler(GridMaeError)
    async def _domain_error(request, exc: GridMaeError):
        from fastapi.responses import JSONResponse

        status = 422 if isinstance(exc, ValidationError) else 409
        return JSONResponse(
            status_code=status,
            content={"error": type(exc).__name__, "message": str(exc)},
        )

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(
            status="ok",
            model_loaded=registry.model is not None,
            checkpoint_hash=registry.checkpoint_hash,
        )

    @app.post("/solve", response_model=schemas.SolveResponse)
    def solve(req: schemas.SolveRequest):
        grid = _grid_from_text(req.case_text)
        if req.dc:
            state = solve_dc(grid)
            return schemas.SolveResponse(
                case=grid.name, n_bus=grid.n_bus, n_branch=grid.n_branch,
                converged=True, iterations=0, residual_inf_norm=0.0,
                state=_state_rows(state),
            )
        sol = solve_ac(grid, PfOptions(tol=req.tol, max_iter=req.max_iter))
        return schemas.SolveResponse(
            case=grid.name, n_bus=grid.n_bus, n_branch=grid.n_branch,
            converged=sol.converged, iterations=sol.iterations,
            residual_inf_norm=sol.residual_inf_norm, state=_state_rows(sol.state),
        )

    @app.post("/model/load", response_model=schemas.LoadModelResponse)
    def model_load(req: schemas.LoadModelRequest):
        try:
            model = load_checkpoint(req.path)
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        registry.model = model
        registry.checkpoint_hash = _hash_of(model)
        return schemas.LoadModelResponse(
            checkpoint_hash=registry.checkpoint_hash,
            hidden_dim=model.config.hidden_dim,
            parameter_count=parameter_count(model.config),
        )

    @app.post("/neural-pf", response_model=schemas.NeuralPfResponse)
    def neural_power_flow(req: schemas.NeuralPfRequest):
        model = registry.require()
        grid = _grid_from_text(req.case_text)
        state, residual = neural_pf(model, grid, sample_from_grid(grid))
        return schemas.NeuralPfResponse(
            case=grid.name, residual_inf_norm=residual, state=_state_rows(state)
        )

    @app.post("/screen", response_model=schemas.ScreenResponse)
    def screen(req: schemas.ScreenRequest):
        grid = _grid_from_text(req.case_text)
        spec = ContingencySpec(
            k=req.k, candidates=element_candidates(grid, req.element_kinds)
        )
        limits = OperatingLimits(
            v_min=req.limits.v_min,
            v_max=req.limits.v_max,
            branch_flow_limits=req.limits.branch_flow_limits,
        )
        model = registry.require() if req.engine == "neural" else None
        report = screen_contingencies(req.engine, grid, spec, limits, model=model)
        return schemas.ScreenResponse(**report.to_dict())

    @app.post("/bench", response_model=schemas.BenchResponse)
    def bench(req: schemas.BenchRequest):
        model = registry.require()
        grids = [_grid_from_text(text) for text in req.case_texts]
        report = benchmark(model, grids, n_repeats=req.repeats)
        return schemas.BenchResponse(**report.to_dict())

    return app


def _hash_of(model: Model) -> str:
    from ..model import _checkpoint_payload, _content_hash

    return _content_hash(_checkpoint_payload(model))
