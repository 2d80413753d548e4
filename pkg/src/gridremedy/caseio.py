"""Parsing of matrix-style case files and line-delimited persistence.

Covers the `baseMVA`, `bus`, `gen` and `branch` sections of the standard
MATPOWER-style case grammar; every other section is ignored with a warning.
Snapshot archives and remedial databases are stored one JSON object per
line with an explicit schema version so they stream in constant memory and
diff cleanly.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Optional

from .model import (
    Change,
    Generator,
    Grid,
    GridError,
    Line,
    LineStatus,
    Load,
    Reassign,
    Snapshot,
    Substation,
    TopologyAction,
)

log = logging.getLogger(__name__)

ARCHIVE_VERSION = 1
REMEDIAL_VERSION = 1


class CaseSyntaxError(GridError):
    def __init__(self, message: str, line: int, col: int = 0):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class SemanticError(GridError):
    pass


class MalformedRecord(GridError):
    def __init__(self, index: int, message: str):
        super().__init__(f"record {index}: {message}")
        self.index = index


class NonMonotoneTimestamp(GridError):
    def __init__(self, index: int, timestamp: str):
        super().__init__(f"record {index}: timestamp {timestamp} not increasing")
        self.index = index


# ---------------------------------------------------------------------------
# Case file parsing

_NUM = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")

_KNOWN_SECTIONS = ("bus", "gen", "branch")


def _parse_matrix(lines: list[str], start: int, name: str) -> tuple[list[list[float]], int]:
    """Parse rows until the closing `];`, starting after the `mpc.X = [` line."""
    rows: list[list[float]] = []
    width: Optional[int] = None
    i = start
    while i < len(lines):
        raw = lines[i]
        text = raw.split("%")[0].strip()
        i += 1
        if not text:
            continue
        if text.startswith("]"):
            return rows, i
        text = text.rstrip(";").strip()
        if not text:
            continue
        row = []
        for col, tok in enumerate(text.split()):
            if not _NUM.match(tok):
                raise CaseSyntaxError(f"{name}: bad number {tok!r}", i, col + 1)
            row.append(float(tok))
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise CaseSyntaxError(
                f"{name}: ragged row, expected {width} columns, got {len(row)}", i
            )
        rows.append(row)
    raise CaseSyntaxError(f"{name}: unterminated matrix", len(lines))


def parse_case(text: str) -> Grid:
    """Parse a case file into a Grid.

    Each bus becomes a 2-busbar substation with every element on busbar 1.
    Branch impedances are taken as given in per unit on the file's baseMVA;
    a rating of 0 in the source means "unlimited" and is kept as infinity
    (see ensure_ratings for replacing it with a synthetic limit).
    """
    lines = text.splitlines()
    base_mva: Optional[float] = None
    matrices: dict[str, list[list[float]]] = {}
    i = 0
    while i < len(lines):
        stripped = lines[i].split("%")[0].strip()
        m = re.match(r"mpc\.baseMVA\s*=\s*([^;]+);", stripped)
        if m:
            tok = m.group(1).strip()
            if not _NUM.match(tok):
                raise CaseSyntaxError(f"bad baseMVA {tok!r}", i + 1)
            base_mva = float(tok)
            i += 1
            continue
        m = re.match(r"mpc\.(\w+)\s*=\s*\[", stripped)
        if m:
            name = m.group(1)
            rows, i = _parse_matrix(lines, i + 1, name)
            if name in _KNOWN_SECTIONS:
                matrices[name] = rows
            else:
                log.warning("ignoring unsupported case section %r", name)
            i += 0
            continue
        i += 1

    if base_mva is None:
        raise SemanticError("missing baseMVA")
    if base_mva <= 0:
        raise SemanticError("baseMVA must be positive")
    for section in _KNOWN_SECTIONS:
        if section not in matrices:
            raise SemanticError(f"missing {section} matrix")

    bus_rows = matrices["bus"]
    gen_rows = matrices["gen"]
    branch_rows = matrices["branch"]

    bus_ids = [int(r[0]) for r in bus_rows]
    if len(bus_ids) != len(set(bus_ids)):
        raise SemanticError("duplicate bus id")
    bus_set = set(bus_ids)
    bus_type = {int(r[0]): int(r[1]) for r in bus_rows}

    substations = tuple(
        Substation(id=f"B{int(r[0])}", base_kv=(r[9] if len(r) > 9 and r[9] > 0 else 135.0))
        for r in bus_rows
    )

    loads = []
    for r in bus_rows:
        pd, qd = r[2], r[3]
        if pd != 0.0 or qd != 0.0:
            loads.append(Load(id=f"C{int(r[0])}", substation=f"B{int(r[0])}", p=pd, q=qd))

    slack_buses = [b for b, t in bus_type.items() if t == 3]
    if len(slack_buses) != 1:
        raise SemanticError(f"expected one slack bus (type 3), got {len(slack_buses)}")

    gens = []
    seen_gen_bus: dict[int, int] = {}
    slack_assigned = False
    for r in gen_rows:
        bus = int(r[0])
        if bus not in bus_set:
            raise SemanticError(f"generator references missing bus {bus}")
        seen_gen_bus[bus] = seen_gen_bus.get(bus, 0) + 1
        suffix = "" if seen_gen_bus[bus] == 1 else f"_{seen_gen_bus[bus]}"
        is_slack = bus == slack_buses[0] and not slack_assigned
        slack_assigned = slack_assigned or is_slack
        gens.append(
            Generator(
                id=f"G{bus}{suffix}",
                substation=f"B{bus}",
                p_set=r[1],
                v_set=r[5] if len(r) > 5 and r[5] > 0 else 1.0,
                q_min=r[4],
                q_max=r[3],
                p_max=r[8] if len(r) > 8 else max(r[1], 0.0),
                slack=is_slack,
                in_service=(len(r) <= 7 or r[7] > 0),
            )
        )
    if not slack_assigned:
        raise SemanticError("no generator at the slack bus")

    branches = []
    for idx, r in enumerate(branch_rows, start=1):
        fbus, tbus = int(r[0]), int(r[1])
        if fbus not in bus_set or tbus not in bus_set:
            raise SemanticError(f"branch {idx} references missing bus")
        if r[3] == 0.0:
            raise SemanticError(f"branch {idx}: zero reactance")
        rate = r[5] if len(r) > 5 else 0.0
        branches.append(
            Line(
                id=f"L{idx}",
                from_sub=f"B{fbus}",
                to_sub=f"B{tbus}",
                r=r[2],
                x=r[3],
                b=r[4],
                rating=(rate if rate > 0 else float("inf")),
                in_service=(len(r) <= 10 or r[10] > 0),
            )
        )

    return Grid(
        substations=substations,
        lines=tuple(branches),
        generators=tuple(gens),
        loads=tuple(loads),
        base_mva=base_mva,
    )


def ensure_ratings(grid: Grid, factor: float = 1.3, floor_mva: float = 5.0) -> Grid:
    """Replace unlimited (infinite) ratings by factor x base-case apparent flow."""
    from dataclasses import replace

    from .powerflow import solve_ac

    if all(l.rating != float("inf") for l in grid.lines):
        return grid
    sol = solve_ac(grid)
    if not sol.converged:
        raise GridError("cannot synthesize ratings: base case does not converge")
    lines = tuple(
        replace(
            l,
            rating=max(factor * sol.apparent_mva.get(l.id, 0.0), floor_mva),
        )
        if l.rating == float("inf")
        else l
        for l in grid.lines
    )
    return replace(grid, lines=lines)


def builtin_case_text(name: str) -> str:
    """Raw text of a case file shipped with the package (case30, case118)."""
    from importlib.resources import files

    return (files("gridremedy") / "data" / f"{name}.m").read_text()


def load_builtin_case(name: str) -> Grid:
    return parse_case(builtin_case_text(name))


# ---------------------------------------------------------------------------
# Action JSON codec (shared wire format with the HTTP service)


def change_to_json(c: Change) -> dict:
    if isinstance(c, LineStatus):
        return {"kind": "line_status", "line": c.line, "in_service": c.in_service}
    return {"kind": "reassign", "sub": c.sub, "elem": c.elem, "busbar": c.busbar}


def change_from_json(d: dict) -> Change:
    try:
        if d["kind"] == "line_status":
            return LineStatus(d["line"], bool(d["in_service"]))
        if d["kind"] == "reassign":
            return Reassign(d["sub"], d["elem"], int(d["busbar"]))
    except KeyError as exc:
        raise GridError(f"change missing field {exc}") from exc
    raise GridError(f"unknown change kind {d.get('kind')!r}")


def action_to_json(action: TopologyAction) -> dict:
    return {"changes": [change_to_json(c) for c in action.sorted_changes()]}


def action_from_json(d: dict) -> TopologyAction:
    if "changes" not in d:
        raise GridError("action missing 'changes'")
    return TopologyAction([change_from_json(c) for c in d["changes"]])


# ---------------------------------------------------------------------------
# Snapshot archives


def snapshot_to_record(snap: Snapshot) -> dict:
    g = snap.grid
    assignments = []
    for s in sorted(g.substations, key=lambda s: s.id):
        for elem in sorted(s.element_assignment):
            bb = s.element_assignment[elem]
            if bb != 1:
                assignments.append({"sub": s.id, "elem": elem, "busbar": bb})
    return {
        "version": ARCHIVE_VERSION,
        "timestamp": snap.timestamp,
        "injections": {
            "loads": [
                {"id": l.id, "p": l.p, "q": l.q}
                for l in sorted(g.loads, key=lambda l: l.id)
            ],
            "gens": [
                {
                    "id": gn.id,
                    "p_set": gn.p_set,
                    "v_set": gn.v_set,
                    "in_service": gn.in_service,
                }
                for gn in sorted(g.generators, key=lambda gn: gn.id)
            ],
        },
        "topology": {
            "lines": [
                {"id": l.id, "in_service": l.in_service}
                for l in sorted(g.lines, key=lambda l: l.id)
            ],
            "assignments": assignments,
        },
    }


def snapshot_from_record(rec: dict, base: Grid) -> Snapshot:
    """Materialize a snapshot by overlaying a record onto the base grid."""
    from dataclasses import replace

    loads_by_id = {d["id"]: d for d in rec["injections"]["loads"]}
    gens_by_id = {d["id"]: d for d in rec["injections"]["gens"]}
    lines_by_id = {d["id"]: d for d in rec["topology"]["lines"]}

    loads = tuple(
        replace(l, p=loads_by_id[l.id]["p"], q=loads_by_id[l.id]["q"])
        if l.id in loads_by_id
        else l
        for l in base.loads
    )
    gens = tuple(
        replace(
            g,
            p_set=gens_by_id[g.id]["p_set"],
            v_set=gens_by_id[g.id]["v_set"],
            in_service=gens_by_id[g.id]["in_service"],
        )
        if g.id in gens_by_id
        else g
        for g in base.generators
    )
    lines = tuple(
        replace(l, in_service=lines_by_id[l.id]["in_service"])
        if l.id in lines_by_id
        else l
        for l in base.lines
    )
    assign: dict[str, dict[str, int]] = {}
    for a in rec["topology"].get("assignments", []):
        assign.setdefault(a["sub"], {})[a["elem"]] = a["busbar"]
    subs = tuple(
        replace(s, element_assignment=assign.get(s.id, {})) for s in base.substations
    )
    grid = replace(base, loads=loads, generators=gens, lines=lines, substations=subs)
    return Snapshot(timestamp=rec["timestamp"], grid=grid)


def write_archive(snapshots: Iterable[Snapshot], stream: IO[str]) -> int:
    n = 0
    for snap in snapshots:
        stream.write(json.dumps(snapshot_to_record(snap), separators=(",", ":")))
        stream.write("\n")
        n += 1
    return n


def read_archive(stream: IO[str], base: Grid) -> Iterator[Snapshot]:
    """Stream snapshots from a line-delimited archive; constant memory."""
    last_ts: Optional[str] = None
    for idx, line in enumerate(stream):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(idx, str(exc)) from exc
        if rec.get("version") != ARCHIVE_VERSION:
            raise MalformedRecord(idx, f"unsupported version {rec.get('version')!r}")
        ts = rec.get("timestamp")
        if not isinstance(ts, str):
            raise MalformedRecord(idx, "missing timestamp")
        if last_ts is not None and ts <= last_ts:
            raise NonMonotoneTimestamp(idx, ts)
        last_ts = ts
        try:
            yield snapshot_from_record(rec, base)
        except (KeyError, TypeError) as exc:
            raise MalformedRecord(idx, f"bad record shape: {exc}") from exc
