"""Plain-text case file parsing, reduction to the series-impedance model,
and serialization.

The accepted format is the de-facto standard matrix-block layout used by
published transmission test cases: named ``mpc.<table> = [ ... ];`` blocks
with semicolon/newline-terminated whitespace-separated rows. Only the
``bus``, ``gen`` and ``branch`` tables are read; any other table (costs,
areas, ...) is ignored.

Column positions (0-indexed) taken from each table:

    bus     0 id, 1 kind (1=PQ, 2=PV, 3=slack), 2 Pd [MW], 3 Qd [MVAr],
            7 Vm [p.u.]
    gen     0 bus id, 1 Pg [MW], 2 Qg [MVAr], 5 Vg [p.u.], 7 status
    branch  0 from id, 1 to id, 2 r [p.u.], 3 x [p.u.], 4 b charging
            [p.u.], 8 tap ratio, 10 status

Reduction to a :class:`~gridmae.network.Grid` keeps the series impedance
z = r + jx only: line charging, taps and shunts are dropped, demands and
generation are converted to per-unit on the system base and netted into a
single injection per bus (injection = generation - demand).
"""

from __future__ import annotations

import importlib.resources
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import (
    DanglingReference,
    MalformedTable,
    NoSlack,
    SerializationError,
    ZeroImpedance,
)
from .network import Branch, Bus, BusType, Grid

_PQ, _PV, _SLACK = 1, 2, 3


@dataclass(frozen=True)
class BusRecord:
    id: int
    kind: int
    p_demand: float  # MW
    q_demand: float  # MVAr
    v_set: float  # p.u.


@dataclass(frozen=True)
class GenRecord:
    bus_id: int
    p_gen: float  # MW
    q_gen: float  # MVAr
    v_set: float  # p.u.
    status: int


@dataclass(frozen=True)
class BranchRecord:
    from_bus: int
    to_bus: int
    r: float  # p.u.
    x: float  # p.u.
    b_charging: float  # p.u.
    tap: float
    status: int


@dataclass(frozen=True)
class RawCase:
    """Verbatim image of the three parsed tables, before reduction."""

    name: str
    base_mva: float
    buses: tuple[BusRecord, ...]
    gens: tuple[GenRecord, ...]
    branches: tuple[BranchRecord, ...]


_SECTION_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\];", re.DOTALL)
_NAME_RE = re.compile(r"function\s+mpc\s*=\s*(\w+)")
_BASE_RE = re.compile(r"mpc\.baseMVA\s*=\s*([^;]+);")


def _split_rows(block: str, table: str) -> list[list[float]]:
    rows: list[list[float]] = []
    for raw_line in block.split("\n"):
        line = re.sub(r"%.*$", "", raw_line).strip().rstrip(";").strip()
        if not line:
            continue
        try:
            rows.append([float(tok) for tok in line.split()])
        except ValueError as exc:
            raise MalformedTable(f"unparseable {table} row: {line!r}") from exc
    return rows


def parse_case(text: str) -> RawCase:
    """Parse case text into a :class:`RawCase`.

    Out-of-service rows (status 0) are retained with their status flag;
    they are dropped only at reduction.
    """
    name_m = _NAME_RE.search(text)
    name = name_m.group(1) if name_m else "unnamed"

    base_m = _BASE_RE.search(text)
    if base_m is None:
        raise MalformedTable("missing baseMVA declaration")
    try:
        base_mva = float(base_m.group(1))
    except ValueError as exc:
        raise MalformedTable(f"bad baseMVA: {base_m.group(1)!r}") from exc
    if base_mva <= 0:
        raise MalformedTable(f"baseMVA must be > 0, got {base_mva}")

    sections = {m.group(1): m.group(2) for m in _SECTION_RE.finditer(text)}
    for required in ("bus", "gen", "branch"):
        if required not in sections:
            raise MalformedTable(f"missing mpc.{required} table")

    buses: list[BusRecord] = []
    for row in _split_rows(sections["bus"], "bus"):
        if len(row) < 8:
            raise MalformedTable(f"bus row has {len(row)} columns, need >= 8")
        kind = int(row[1])
        if kind not in (_PQ, _PV, _SLACK):
            raise MalformedTable(f"bus {int(row[0])} has unknown kind {kind}")
        buses.append(
            BusRecord(
                id=int(row[0]),
                kind=kind,
                p_demand=row[2],
                q_demand=row[3],
                v_set=row[7],
            )
        )

    known_ids = {b.id for b in buses}
    if len(known_ids) != len(buses):
        raise MalformedTable("duplicate bus ids")

    gens: list[GenRecord] = []
    for row in _split_rows(sections["gen"], "gen"):
        if len(row) < 8:
            raise MalformedTable(f"gen row has {len(row)} columns, need >= 8")
        bus_id = int(row[0])
        if bus_id not in known_ids:
            raise DanglingReference(f"gen references unknown bus {bus_id}")
        gens.append(
            GenRecord(
                bus_id=bus_id,
                p_gen=row[1],
                q_gen=row[2],
                v_set=row[5],
                status=1 if row[7] > 0 else 0,
            )
        )

    branches: list[BranchRecord] = []
    for row in _split_rows(sections["branch"], "branch"):
        if len(row) < 11:
            raise MalformedTable(
                f"branch row has {len(row)} columns, need >= 11"
            )
        frm, to = int(row[0]), int(row[1])
        for bus_id in (frm, to):
            if bus_id not in known_ids:
                raise DanglingReference(
                    f"branch references unknown bus {bus_id}"
                )
        status = 1 if row[10] > 0 else 0
        if status and row[2] == 0.0 and row[3] == 0.0:
            raise ZeroImpedance(
                f"in-service branch {frm}->{to} has r = x = 0"
            )
        branches.append(
            BranchRecord(
                from_bus=frm,
                to_bus=to,
                r=row[2],
                x=row[3],
                b_charging=row[4],
                tap=row[8],
                status=status,
            )
        )

    if not any(b.kind == _SLACK for b in buses):
        raise NoSlack(f"case '{name}' has no slack bus")

    return RawCase(
        name=name,
        base_mva=base_mva,
        buses=tuple(buses),
        gens=tuple(gens),
        branches=tuple(branches),
    )


def reduce_case(case: RawCase) -> Grid:
    """Reduce a raw case to the series-impedance grid model.

    Sums co-located in-service generation, nets it against demand, and
    converts to per-unit on the system base. Out-of-service branches are
    dropped; charging susceptance and tap ratios are discarded. Voltage
    setpoints for generator/slack buses come from the first in-service
    generator at the bus, falling back to the bus table value.
    """
    index_of = {b.id: i for i, b in enumerate(case.buses)}

    p_gen = [0.0] * len(case.buses)
    q_gen = [0.0] * len(case.buses)
    v_gen: dict[int, float] = {}
    for g in case.gens:
        if not g.status:
            continue
        i = index_of[g.bus_id]
        p_gen[i] += g.p_gen
        q_gen[i] += g.q_gen
        v_gen.setdefault(i, g.v_set)

    buses: list[Bus] = []
    for i, rec in enumerate(case.buses):
        kind = BusType(rec.kind)
        v_set = v_gen.get(i, rec.v_set) if kind is not BusType.LOAD else rec.v_set
        buses.append(
            Bus(
                type=kind,
                p_set=(p_gen[i] - rec.p_demand) / case.base_mva,
                q_set=(q_gen[i] - rec.q_demand) / case.base_mva,
                v_set=v_set if v_set > 0 else 1.0,
                delta_set=0.0,
            )
        )

    branches = tuple(
        Branch(
            from_bus=index_of[rec.from_bus],
            to_bus=index_of[rec.to_bus],
            z=complex(rec.r, rec.x),
        )
        for rec in case.branches
        if rec.status
    )

    # Grid construction enforces the one-slack and connectivity invariants.
    return Grid(name=case.name, buses=tuple(buses), branches=branches)


def _fmt(value: float) -> str:
    if not math.isfinite(value):
        raise SerializationError(f"non-finite field value: {value!r}")
    return repr(value)


def serialize_case(case: RawCase) -> str:
    """Render a RawCase as case text; parse_case round-trips it exactly.

    Columns not modelled by :class:`RawCase` are written as neutral
    defaults (zero shunts, unit voltage limits, unlimited ratings).
    """
    lines = [f"function mpc = {case.name}", f"mpc.baseMVA = {_fmt(case.base_mva)};", ""]

    lines.append("mpc.bus = [")
    for b in case.buses:
        lines.append(
            f"\t{b.id}\t{b.kind}\t{_fmt(b.p_demand)}\t{_fmt(b.q_demand)}"
            f"\t0\t0\t1\t{_fmt(b.v_set)}\t0\t0\t1\t1.1\t0.9;"
        )
    lines.append("];")
    lines.append("")

    lines.append("mpc.gen = [")
    for g in case.gens:
        lines.append(
            f"\t{g.bus_id}\t{_fmt(g.p_gen)}\t{_fmt(g.q_gen)}\t0\t0"
            f"\t{_fmt(g.v_set)}\t{_fmt(case.base_mva)}\t{g.status}\t0\t0;"
        )
    lines.append("];")
    lines.append("")

    lines.append("mpc.branch = [")
    for br in case.branches:
        lines.append(
            f"\t{br.from_bus}\t{br.to_bus}\t{_fmt(br.r)}\t{_fmt(br.x)}"
            f"\t{_fmt(br.b_charging)}\t0\t0\t0\t{_fmt(br.tap)}\t0"
            f"\t{br.status}\t-360\t360;"
        )
    lines.append("];")
    lines.append("")
    return "\n".join(lines)


def load_case_file(path: str | Path) -> RawCase:
    """Parse a case from a file path."""
    return parse_case(Path(path).read_text(encoding="utf-8"))


def builtin_case_names() -> list[str]:
    """Names of the case fixtures shipped with the package."""
    root = importlib.resources.files(__package__) / "data"
    return sorted(p.name[: -len(".m")] for p in root.iterdir() if p.name.endswith(".m"))


def builtin_case(name: str) -> RawCase:
    """Load a shipped case fixture by name (e.g. ``case14``)."""
    resource = importlib.resources.files(__package__) / "data" / f"{name}.m"
    try:
        text = resource.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise FileNotFoundError(
            f"no builtin case '{name}'; available: {builtin_case_names()}"
        ) from exc
    return parse_case(text)


def rename(case: RawCase, name: str) -> RawCase:
    """Copy of the case under a different name."""
    return replace(case, name=name)
