"""Command-line interface: a thin layer over the core package.

Every subcommand reads JSON configs, emits JSON reports to stdout or
``--out``, and exits 0 on success, 2 on validation errors and 3 on
numeric failures (non-convergence, empty output, singular systems).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .benchmark import benchmark
from .cases import RawCase, builtin_case, builtin_case_names, load_case_file, reduce_case
from .errors import NumericError, ValidationError
from .evaluation import (
    MaskingSpec,
    evaluate,
    mean_imputation_mse,
    neural_pf,
    sample_from_grid,
    split_by_scenario,
    split_by_topology,
)
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .scenarios import (
    ContingencySpec,
    PerturbConfig,
    element_candidates,
    generate_dataset,
    load_dataset,
)
from .screening import OperatingLimits, screen_contingencies
from .solver import PfOptions, solve_ac, solve_dc
from .training import TrainConfig, train as run_training

EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


def _load_case(ref: str) -> RawCase:
    """A case reference is a file path or a builtin fixture name."""
    path = Path(ref)
    if path.exists():
        return load_case_file(path)
    try:
        return builtin_case(ref)
    except FileNotFoundError:
        raise ValidationError(
            f"case {ref!r} is neither a file nor a builtin "
            f"(builtins: {builtin_case_names()})"
        ) from None


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        click.echo(text)


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ValidationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON in {path}: {exc}") from exc


def _run(body):
    try:
        return body()
    except (ValidationError, FileNotFoundError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    except NumericError as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)


@click.group()
def main():
    """Power-grid workbench: solve, generate, train, eval, screen, bench."""


@main.command()
@click.option("--case", "case_ref", required=True, help="Case file path or builtin name.")
@click.option("--dc", is_flag=True, help="Linear DC solve instead of Newton AC.")
@click.option("--tol", default=1e-8, show_default=True, help="Mismatch tolerance (p.u.).")
@click.option("--max-iter", default=50, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Emit the full solution as JSON.")
@click.option("--out", default=None, help="Write the report to a file instead of stdout.")
def solve(case_ref, dc, tol, max_iter, as_json, out):
    """Solve the power flow for one case."""

    def body():
        grid = reduce_case(_load_case(case_ref))
        if dc:
            state = solve_dc(grid)
            payload = {
                "case": grid.name, "method": "dc", "converged": True,
                "iterations": 0, "residual_inf_norm": 0.0, "state": state.tolist(),
            }
            _emit(payload, out) if (as_json or out) else click.echo(
                f"{grid.name}: DC solve, {grid.n_bus} buses"
            )
            return
        sol = solve_ac(grid, PfOptions(tol=tol, max_iter=max_iter))
        payload = {
            "case": grid.name, "method": "newton",
            "converged": sol.converged, "iterations": sol.iterations,
            "residual_inf_norm": sol.residual_inf_norm, "retried": sol.retried,
            "state": sol.state.tolist(),
        }
        if as_json or out:
            _emit(payload, out)
        else:
            click.echo(
                f"{grid.name}: converged={sol.converged} "
                f"iterations={sol.iterations} residual={sol.residual_inf_norm:.3e}"
            )
        if not sol.converged:
            raise NumericError(
                f"did not converge within {max_iter} iterations "
                f"(residual {sol.residual_inf_norm:.3e})"
            )

    _run(body)


@main.command()
@click.option("--case", "case_refs", required=True, multiple=True,
              help="Case file or builtin name; repeatable.")
@click.option("--config", "config_path", required=True, help="Perturbation config JSON.")
@click.option("--out", required=True, help="Output dataset directory.")
@click.option("--samples", required=True, type=int, help="Scenarios per case.")
@click.option("--tol", default=1e-8, show_default=True)
def generate(case_refs, config_path, out, samples, tol):
    """Generate a solved-scenario JSONL dataset."""

    def body():
        cases = [_load_case(ref) for ref in case_refs]
        cfg = PerturbConfig.from_dict(_read_json(config_path))
        report = generate_dataset(cases, cfg, n_samples=samples, out=out, tol=tol)
        _emit(report.to_dict(), None)

    _run(body)


@main.command()
@click.option("--data", required=True, help="Dataset directory (JSONL shards).")
@click.option("--model-config", "model_config_path", default=None,
              help="ModelConfig JSON; defaults apply when omitted.")
@click.option("--train-config", "train_config_path", default=None,
              help="TrainConfig JSON; defaults apply when omitted.")
@click.option("--out", required=True, help="Final checkpoint path.")
@click.option("--warm-start", default=None, help="Checkpoint to fine-tune from.")
def train(data, model_config_path, train_config_path, out, warm_start):
    """Train the masked autoencoder on a dataset."""

    def body():
        _, dataset = load_dataset(data)
        model_cfg = ModelConfig.from_dict(_read_json(model_config_path)) \
            if model_config_path else ModelConfig()
        train_cfg = TrainConfig.from_dict(_read_json(train_config_path)) \
            if train_config_path else TrainConfig()
        start = load_checkpoint(warm_start) if warm_start else None
        epochs_dir = Path(out).parent / (Path(out).stem + ".epochs")
        model, history = run_training(
            dataset, model_cfg, train_cfg, out_dir=epochs_dir, warm_start=start
        )
        digest = save_checkpoint(model, out)
        _emit(
            {
                "checkpoint": str(out),
                "checkpoint_hash": digest,
                "epochs": len(history),
                "history": [m.to_dict() for m in history],
            },
            None,
        )

    _run(body)


@main.command(name="eval")
@click.option("--data", required=True, help="Dataset directory.")
@click.option("--ckpt", required=True, help="Model checkpoint.")
@click.option("--mask", "mask_spec", default="pf", show_default=True,
              help="Masking protocol: 'pf' or 'random:ALPHA'.")
@click.option("--split", type=click.Choice(["topology", "scenario"]), default=None,
              help="Hold out part of the data and report both sides.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default=None)
def eval_cmd(data, ckpt, mask_spec, split, seed, out):
    """Evaluate a checkpoint on a dataset."""

    def body():
        _, dataset = load_dataset(data)
        model = load_checkpoint(ckpt)
        spec = MaskingSpec.parse(mask_spec)
        payload: dict = {"mask": mask_spec, "n_samples": len(dataset)}
        if split is None:
            payload["metrics"] = evaluate(model, dataset, spec, seed=seed).to_dict()
        else:
            if split == "scenario":
                train_side, held = split_by_scenario(dataset, seed=seed)
            else:
                train_side, held = split_by_topology(dataset)
            m_train = evaluate(model, train_side, spec, seed=seed)
            m_held = evaluate(model, held, spec, seed=seed)
            payload["split"] = split
            payload["train"] = m_train.to_dict()
            payload["held_out"] = m_held.to_dict()
            payload["overfitting_gap"] = m_held.masked_mse - m_train.masked_mse
        import numpy as np

        means = np.concatenate([s.state for s in dataset]).mean(axis=0)
        payload["mean_imputation_mse"] = mean_imputation_mse(
            dataset, spec, means, seed=seed
        )
        _emit(payload, out)

    _run(body)


@main.command()
@click.option("--case", "case_ref", required=True)
@click.option("--k", default=1, show_default=True, help="Elements removed per contingency.")
@click.option("--engine", default="numeric", show_default=True,
              help="'numeric' or 'neural:CKPT'.")
@click.option("--limits", "limits_path", default=None, help="OperatingLimits JSON.")
@click.option("--elements", default="branch", show_default=True,
              help="Comma-separated candidate kinds: branch,gen.")
@click.option("--out", default=None)
def screen(case_ref, k, engine, limits_path, elements, out):
    """Enumerate N-k contingencies and check operating limits."""

    def body():
        grid = reduce_case(_load_case(case_ref))
        kinds = tuple(s.strip() for s in elements.split(",") if s.strip())
        spec = ContingencySpec(k=k, candidates=element_candidates(grid, kinds))
        limits = OperatingLimits.from_dict(_read_json(limits_path)) \
            if limits_path else OperatingLimits()
        if engine.startswith("neural:"):
            model = load_checkpoint(engine.split(":", 1)[1])
            report = screen_contingencies("neural", grid, spec, limits, model=model)
        elif engine == "numeric":
            report = screen_contingencies("numeric", grid, spec, limits)
        else:
            raise ValidationError(f"unknown engine {engine!r}")
        _emit(report.to_dict(), out)

    _run(body)


@main.command()
@click.option("--cases", "case_refs", required=True, multiple=True)
@click.option("--ckpt", required=True)
@click.option("--repeats", default=5, show_default=True)
@click.option("--out", default=None)
def bench(case_refs, ckpt, repeats, out):
    """Time the numeric solver against the neural reconstruction path."""

    def body():
        model = load_checkpoint(ckpt)
        grids = [reduce_case(_load_case(ref)) for ref in case_refs]
        report = benchmark(model, grids, n_repeats=repeats)
        _emit(report.to_dict(), out)

    _run(body)


@main.command(name="neural-pf")
@click.option("--case", "case_ref", required=True)
@click.option("--ckpt", required=True)
@click.option("--out", default=None)
def neural_pf_cmd(case_ref, ckpt, out):
    """Reconstruct a solved state from power-flow knowns with a model."""

    def body():
        grid = reduce_case(_load_case(case_ref))
        model = load_checkpoint(ckpt)
        state, residual = neural_pf(model, grid, sample_from_grid(grid))
        _emit(
            {
                "case": grid.name,
                "residual_inf_norm": residual,
                "state": state.tolist(),
            },
            out,
        )

    _run(body)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--ckpt", default=None, help="Checkpoint to serve at startup.")
def serve(host, port, ckpt):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(checkpoint=ckpt), host=host, port=port)


if __name__ == "__main__":
    main()
