"""Solved-scenario dataset generation and contingency enumeration.

Scenarios are derived from a base case by multiplicative load scaling and
optional removal of k grid elements. Every random quantity comes from a
counter-based Philox stream keyed on (seed, purpose label, scenario
index), so regeneration with the same config is reproducible bit-for-bit
and independent of execution order.

Dataset shards are JSONL: shard 0 starts with a header line

    {"schema": 1, "tol": <solver tol>, "config": {...}}

and every sample line carries, in this exact key order:

    case_id, topology_hash, dropped_elements, bus_type, x, edges, r,
    x_react, converged, iterations

where ``x`` is the per-bus (p, q, v, delta) state and ``r``/``x_react``
are the per-branch series impedance components.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence, Union

import numpy as np

from .cases import RawCase, reduce_case
from .errors import EmptyOutput, InvalidRef, ValidationError
from .network import Branch, Bus, BusType, Grid
from .solver import PfOptions, solve_ac

#: Element reference: ("branch", branch_index) or ("gen", bus_index).
ElementRef = tuple[str, int]

_LOAD_STREAM = 1
_TOPOLOGY_STREAM = 2
_MASK64 = (1 << 64) - 1


def scenario_rng(seed: int, label: int, draw: int) -> np.random.Generator:
    """Philox generator keyed on (seed, label, draw)."""
    key = [seed & _MASK64, ((label << 48) ^ draw) & _MASK64]
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class LoadScale:
    """Multiplicative load-factor distribution."""

    kind: str  # "uniform" | "lognormal"
    lo: float = 1.0
    hi: float = 1.0
    mu: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind == "uniform":
            if not (0.0 < self.lo <= self.hi):
                raise ValidationError(f"need 0 < lo <= hi, got [{self.lo}, {self.hi}]")
        elif self.kind == "lognormal":
            if self.sigma < 0:
                raise ValidationError(f"sigma must be >= 0, got {self.sigma}")
        else:
            raise ValidationError(f"unknown load_scale kind {self.kind!r}")

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.lo, self.hi, size=size)
        return rng.lognormal(self.mu, self.sigma, size=size)

    def to_dict(self) -> dict:
        if self.kind == "uniform":
            return {"kind": "uniform", "lo": self.lo, "hi": self.hi}
        return {"kind": "lognormal", "mu": self.mu, "sigma": self.sigma}

    @classmethod
    def from_dict(cls, d: dict) -> "LoadScale":
        return cls(**d)


@dataclass(frozen=True)
class TopologyDrop:
    """Per-scenario random removal of k elements (``kind="none"`` disables)."""

    kind: str = "none"  # "none" | "n_minus_k"
    k: int = 1
    element_kinds: tuple[str, ...] = ("branch",)

    def __post_init__(self):
        if self.kind not in ("none", "n_minus_k"):
            raise ValidationError(f"unknown topology_drop kind {self.kind!r}")
        if self.kind == "n_minus_k" and self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        for ek in self.element_kinds:
            if ek not in ("branch", "gen"):
                raise ValidationError(f"unknown element kind {ek!r}")

    def to_dict(self) -> dict:
        if self.kind == "none":
            return {"kind": "none"}
        return {"kind": "n_minus_k", "k": self.k, "element_kinds": list(self.element_kinds)}

    @classmethod
    def from_dict(cls, d: dict) -> "TopologyDrop":
        d = dict(d)
        if "element_kinds" in d:
            d["element_kinds"] = tuple(d["element_kinds"])
        return cls(**d)


@dataclass(frozen=True)
class PerturbConfig:
    load_scale: LoadScale = LoadScale(kind="uniform", lo=1.0, hi=1.0)
    q_tracks_p: bool = True
    shared_factor: bool = False
    topology_drop: TopologyDrop = TopologyDrop(kind="none")
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "load_scale": self.load_scale.to_dict(),
            "q_tracks_p": self.q_tracks_p,
            "shared_factor": self.shared_factor,
            "topology_drop": self.topology_drop.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbConfig":
        return cls(
            load_scale=LoadScale.from_dict(d.get("load_scale", {"kind": "uniform", "lo": 1.0, "hi": 1.0})),
            q_tracks_p=d.get("q_tracks_p", True),
            shared_factor=d.get("shared_factor", False),
            topology_drop=TopologyDrop.from_dict(d.get("topology_drop", {"kind": "none"})),
            seed=d.get("seed", 0),
        )


@dataclass(frozen=True)
class ContingencySpec:
    k: int
    candidates: tuple[ElementRef, ...]

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.k > len(self.candidates):
            raise ValidationError(
                f"k={self.k} exceeds {len(self.candidates)} candidates"
            )


@dataclass(frozen=True)
class Rejected:
    """A perturbed topology that is no longer a valid grid."""

    reason: str


@dataclass(frozen=True, eq=False)
class Sample:
    """One solved grid snapshot."""

    case_id: str
    topology_hash: int
    dropped_elements: tuple[ElementRef, ...]
    state: np.ndarray  # (n_bus, 4)
    bus_types: np.ndarray  # int codes, (n_bus,)
    converged: bool
    iterations: int
    grid: Grid

    @property
    def n_bus(self) -> int:
        return len(self.bus_types)


def topology_hash(grid: Grid) -> int:
    """Stable 64-bit hash of the electrical topology (buses, edges, z)."""
    h = hashlib.blake2b(digest_size=8)
    h.update(repr(grid.n_bus).encode())
    for b in grid.buses:
        h.update(repr(int(b.type)).encode())
    for br in grid.branches:
        h.update(repr((br.from_bus, br.to_bus, br.z.real, br.z.imag)).encode())
    return int.from_bytes(h.digest(), "big")


def perturb_load(grid: Grid, cfg: PerturbConfig, draw: int) -> Grid:
    """Scale load-bus injections by factors drawn from cfg.load_scale.

    One factor per bus is drawn in bus order from the Philox stream keyed
    on (cfg.seed, load label, draw); only load buses consume theirs, so
    the factor applied at a bus depends only on (seed, draw, bus index).
    """
    rng = scenario_rng(cfg.seed, _LOAD_STREAM, draw)
    if cfg.shared_factor:
        factors = np.full(grid.n_bus, cfg.load_scale.draw(rng, 1)[0])
    else:
        factors = cfg.load_scale.draw(rng, grid.n_bus)
    buses = []
    for i, bus in enumerate(grid.buses):
        if bus.type is BusType.LOAD:
            buses.append(
                Bus(
                    type=bus.type,
                    p_set=bus.p_set * factors[i],
                    q_set=bus.q_set * factors[i] if cfg.q_tracks_p else bus.q_set,
                    v_set=bus.v_set,
                    delta_set=bus.delta_set,
                )
            )
        else:
            buses.append(bus)
    return Grid(name=grid.name, buses=tuple(buses), branches=grid.branches)


def perturb_topology(
    grid: Grid, drop: Sequence[ElementRef]
) -> Union[Grid, Rejected]:
    """Remove branches / demote generators; Rejected if the result is not
    a valid one-slack connected grid."""
    branch_drops: set[int] = set()
    gen_drops: set[int] = set()
    for kind, index in drop:
        if kind == "branch":
            if not 0 <= index < grid.n_branch:
                raise InvalidRef(f"no branch with index {index}")
            branch_drops.add(index)
        elif kind == "gen":
            if not 0 <= index < grid.n_bus or grid.buses[index].type is not BusType.GENERATOR:
                raise InvalidRef(f"bus {index} is not a generator bus")
            gen_drops.add(index)
        else:
            raise InvalidRef(f"unknown element kind {kind!r}")

    buses = tuple(
        Bus(type=BusType.LOAD, p_set=0.0, q_set=0.0, v_set=1.0)
        if i in gen_drops
        else bus
        for i, bus in enumerate(grid.buses)
    )
    branches = tuple(
        br for i, br in enumerate(grid.branches) if i not in branch_drops
    )
    try:
        return Grid(name=grid.name, buses=buses, branches=branches)
    except ValidationError as exc:
        return Rejected(reason=str(exc))


def branch_candidates(grid: Grid) -> tuple[ElementRef, ...]:
    return tuple(("branch", i) for i in range(grid.n_branch))


def gen_candidates(grid: Grid) -> tuple[ElementRef, ...]:
    return tuple(
        ("gen", i)
        for i, b in enumerate(grid.buses)
        if b.type is BusType.GENERATOR
    )


def element_candidates(grid: Grid, element_kinds: Iterable[str]) -> tuple[ElementRef, ...]:
    out: tuple[ElementRef, ...] = ()
    for kind in element_kinds:
        if kind == "branch":
            out += branch_candidates(grid)
        elif kind == "gen":
            out += gen_candidates(grid)
        else:
            raise InvalidRef(f"unknown element kind {kind!r}")
    return out


def enumerate_contingencies(
    spec: ContingencySpec,
) -> Iterator[tuple[ElementRef, ...]]:
    """All C(n, k) candidate subsets, exactly once, in lexicographic order
    of candidate positions."""
    return itertools.combinations(spec.candidates, spec.k)


# --- dataset pipeline -------------------------------------------------------


@dataclass
class CaseReport:
    produced: int = 0
    skipped_nonconverged: int = 0
    skipped_rejected: int = 0
    retried: int = 0


@dataclass
class GenerationReport:
    tol: float
    config: dict
    n_requested: int
    per_case: dict[str, CaseReport] = field(default_factory=dict)

    @property
    def produced(self) -> int:
        return sum(r.produced for r in self.per_case.values())

    @property
    def skipped(self) -> int:
        return sum(
            r.skipped_nonconverged + r.skipped_rejected
            for r in self.per_case.values()
        )

    def to_dict(self) -> dict:
        return {
            "tol": self.tol,
            "config": self.config,
            "n_requested": self.n_requested,
            "produced": self.produced,
            "skipped": self.skipped,
            "per_case": {
                name: {
                    "produced": r.produced,
                    "skipped_nonconverged": r.skipped_nonconverged,
                    "skipped_rejected": r.skipped_rejected,
                    "retried": r.retried,
                }
                for name, r in self.per_case.items()
            },
        }


def sample_from_solution(
    grid: Grid,
    state: np.ndarray,
    case_id: str,
    dropped: Sequence[ElementRef],
    converged: bool,
    iterations: int,
) -> Sample:
    return Sample(
        case_id=case_id,
        topology_hash=topology_hash(grid),
        dropped_elements=tuple((str(k), int(i)) for k, i in dropped),
        state=np.asarray(state, dtype=np.float64),
        bus_types=grid.bus_types(),
        converged=converged,
        iterations=iterations,
        grid=grid,
    )


def sample_to_record(sample: Sample) -> dict:
    frm, to = sample.grid.edge_index()
    z = sample.grid.impedances()
    return {
        "case_id": sample.case_id,
        "topology_hash": sample.topology_hash,
        "dropped_elements": [[k, i] for k, i in sample.dropped_elements],
        "bus_type": sample.bus_types.tolist(),
        "x": sample.state.tolist(),
        "edges": np.stack([frm, to], axis=1).tolist() if len(frm) else [],
        "r": z.real.tolist(),
        "x_react": z.imag.tolist(),
        "converged": sample.converged,
        "iterations": sample.iterations,
    }


def sample_from_record(rec: dict) -> Sample:
    state = np.asarray(rec["x"], dtype=np.float64)
    types = np.asarray(rec["bus_type"], dtype=np.int64)
    buses = tuple(
        Bus(
            type=BusType(int(t)),
            p_set=row[0],
            q_set=row[1],
            v_set=row[2],
            delta_set=row[3],
        )
        for t, row in zip(types, state.tolist())
    )
    branches = tuple(
        Branch(int(f), int(t), complex(r, x))
        for (f, t), r, x in zip(rec["edges"], rec["r"], rec["x_react"])
    )
    grid = Grid(name=rec["case_id"], buses=buses, branches=branches)
    return Sample(
        case_id=rec["case_id"],
        topology_hash=int(rec["topology_hash"]),
        dropped_elements=tuple((k, int(i)) for k, i in rec["dropped_elements"]),
        state=state,
        bus_types=types,
        converged=bool(rec["converged"]),
        iterations=int(rec["iterations"]),
        grid=grid,
    )


def _json_line(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def generate_dataset(
    cases: Sequence[RawCase],
    cfg: PerturbConfig,
    n_samples: int,
    out: str | Path,
    tol: float = 1e-8,
    max_iter: int = 50,
    shard_size: int = 1000,
) -> GenerationReport:
    """Solve perturbed scenarios for each case and write JSONL shards.

    Each case contributes up to ``n_samples`` converged samples;
    non-converged and rejected scenarios are skipped and counted. Output
    is a pure function of (cases, cfg, n_samples, tol): rerunning with
    identical inputs produces byte-identical shards.
    """
    if n_samples < 1:
        raise ValidationError(f"n_samples must be >= 1, got {n_samples}")
    if math.isnan(tol) or tol <= 0:
        raise ValidationError(f"tol must be > 0, got {tol}")

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = GenerationReport(tol=tol, config=cfg.to_dict(), n_requested=n_samples)

    lines: list[str] = [
        _json_line({"schema": 1, "tol": tol, "config": cfg.to_dict()})
    ]

    opts = PfOptions(tol=tol, max_iter=max_iter)
    for case_index, case in enumerate(cases):
        base = reduce_case(case)
        case_report = report.per_case.setdefault(case.name, CaseReport())
        for i in range(n_samples):
            scenario = case_index * n_samples + i
            grid = perturb_load(base, cfg, draw=scenario)
            dropped: tuple[ElementRef, ...] = ()
            if cfg.topology_drop.kind == "n_minus_k":
                candidates = element_candidates(base, cfg.topology_drop.element_kinds)
                rng = scenario_rng(cfg.seed, _TOPOLOGY_STREAM, scenario)
                picks = rng.permutation(len(candidates))[: cfg.topology_drop.k]
                dropped = tuple(candidates[j] for j in sorted(picks.tolist()))
                result = perturb_topology(grid, dropped)
                if isinstance(result, Rejected):
                    case_report.skipped_rejected += 1
                    continue
                grid = result
            sol = solve_ac(grid, opts)
            if sol.retried:
                case_report.retried += 1
            if not sol.converged:
                case_report.skipped_nonconverged += 1
                continue
            sample = sample_from_solution(
                grid, sol.state, case.name, dropped, sol.converged, sol.iterations
            )
            lines.append(_json_line(sample_to_record(sample)))
            case_report.produced += 1

    if report.produced == 0:
        raise EmptyOutput("no scenario converged; nothing to write")

    header, body = lines[0], lines[1:]
    for shard_index in range(0, max(1, math.ceil(len(body) / shard_size))):
        chunk = body[shard_index * shard_size : (shard_index + 1) * shard_size]
        text = "\n".join(([header] if shard_index == 0 else []) + chunk) + "\n"
        (out_dir / f"shard-{shard_index:05d}.jsonl").write_text(text, encoding="utf-8")

    return report


def load_dataset(path: str | Path) -> tuple[dict, list[Sample]]:
    """Read shards written by :func:`generate_dataset`."""
    directory = Path(path)
    shard_paths = sorted(directory.glob("shard-*.jsonl"))
    if not shard_paths:
        raise FileNotFoundError(f"no shard-*.jsonl files under {directory}")
    header: dict | None = None
    samples: list[Sample] = []
    for shard_index, shard_path in enumerate(shard_paths):
        with shard_path.open(encoding="utf-8") as fh:
            for line_no, line in enumerate(fh):
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if shard_index == 0 and line_no == 0:
                    if "schema" not in rec:
                        raise ValidationError(
                            f"{shard_path} is missing the schema header line"
                        )
                    header = rec
                    continue
                samples.append(sample_from_record(rec))
    assert header is not None
    return header, samples
