"""Electrical network data model, nodal topology and switching actions.

Substations follow the double-busbar abstraction: every connected element
(line endpoint, generator, load) sits on busbar 1 or 2, and the electrical
nodes of the network are the (substation, busbar) pairs that carry at least
one in-service element.  All values are immutable; operations return new
grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Union

import networkx as nx

__all__ = [
    "GridError",
    "UnknownElement",
    "ConflictingChanges",
    "MismatchedGrids",
    "Line",
    "Generator",
    "Load",
    "Substation",
    "Grid",
    "Snapshot",
    "LineStatus",
    "Reassign",
    "Change",
    "TopologyAction",
    "NodalGraph",
    "apply_action",
    "inverse_action",
    "topo_diff",
    "electrical_nodes",
    "topology_fingerprint",
]


class GridError(Exception):
    """Base class for network-model errors."""


class UnknownElement(GridError):
    """A change or lookup references an element the grid does not contain."""


class ConflictingChanges(GridError):
    """Two changes in one action target the same element."""


class MismatchedGrids(GridError):
    """Two grids do not share the same element sets."""


@dataclass(frozen=True)
class Line:
    id: str
    from_sub: str
    to_sub: str
    r: float  # pu
    x: float  # pu
    b: float  # pu total line charging
    rating: float  # MVA
    in_service: bool = True

    def __post_init__(self):
        if self.x == 0.0:
            raise GridError(f"line {self.id}: zero reactance")


@dataclass(frozen=True)
class Generator:
    id: str
    substation: str
    p_set: float  # MW
    v_set: float  # pu
    q_min: float  # MVar
    q_max: float  # MVar
    p_max: float  # MW
    slack: bool = False
    in_service: bool = True

    def __post_init__(self):
        if self.q_min > self.q_max:
            raise GridError(f"generator {self.id}: q_min > q_max")


@dataclass(frozen=True)
class Load:
    id: str
    substation: str
    p: float  # MW
    q: float  # MVar

    def __post_init__(self):
        if not (math.isfinite(self.p) and math.isfinite(self.q)):
            raise GridError(f"load {self.id}: non-finite injection")


@dataclass(frozen=True)
class Substation:
    """A station with two busbars; element_assignment maps element id -> 1|2."""

    id: str
    base_kv: float = 135.0
    element_assignment: Mapping[str, int] = field(default_factory=dict)

    def busbar_of(self, elem_id: str) -> int:
        return self.element_assignment.get(elem_id, 1)


@dataclass(frozen=True)
class Grid:
    substations: tuple[Substation, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]
    base_mva: float = 100.0

    def __post_init__(self):
        if self.base_mva <= 0:
            raise GridError("base_mva must be positive")
        subs = {s.id for s in self.substations}
        if len(subs) != len(self.substations):
            raise GridError("duplicate substation id")
        for ln in self.lines:
            if ln.from_sub not in subs or ln.to_sub not in subs:
                raise GridError(f"line {ln.id}: dangling endpoint")
        for g in self.generators:
            if g.substation not in subs:
                raise GridError(f"generator {g.id}: dangling substation")
        for ld in self.loads:
            if ld.substation not in subs:
                raise GridError(f"load {ld.id}: dangling substation")
        n_slack = sum(1 for g in self.generators if g.slack)
        if self.generators and n_slack != 1:
            raise GridError(f"expected exactly one slack generator, got {n_slack}")
        ids = (
            [ln.id for ln in self.lines]
            + [g.id for g in self.generators]
            + [ld.id for ld in self.loads]
        )
        if len(ids) != len(set(ids)):
            raise GridError("duplicate element id")

    # -- indexed access -------------------------------------------------

    def sub(self, sub_id: str) -> Substation:
        for s in self.substations:
            if s.id == sub_id:
                return s
        raise UnknownElement(f"substation {sub_id}")

    def line(self, line_id: str) -> Line:
        for ln in self.lines:
            if ln.id == line_id:
                return ln
        raise UnknownElement(f"line {line_id}")

    def element_ids(self) -> frozenset[str]:
        return frozenset(
            [ln.id for ln in self.lines]
            + [g.id for g in self.generators]
            + [ld.id for ld in self.loads]
        )

    def slack(self) -> Generator:
        for g in self.generators:
            if g.slack:
                return g
        raise GridError("grid has no slack generator")

    def subs_of_element(self, elem_id: str) -> tuple[str, ...]:
        """Substations where the element can be switched."""
        for ln in self.lines:
            if ln.id == elem_id:
                return (ln.from_sub, ln.to_sub)
        for g in self.generators:
            if g.id == elem_id:
                return (g.substation,)
        for ld in self.loads:
            if ld.id == elem_id:
                return (ld.substation,)
        raise UnknownElement(elem_id)


@dataclass(frozen=True)
class Snapshot:
    timestamp: str  # ISO-8601 UTC, 5-minute cadence
    grid: Grid


# ---------------------------------------------------------------------------
# Switching actions


@dataclass(frozen=True)
class LineStatus:
    line: str
    in_service: bool

    @property
    def element(self) -> str:
        return self.line


@dataclass(frozen=True)
class Reassign:
    sub: str
    elem: str
    busbar: int

    def __post_init__(self):
        if self.busbar not in (1, 2):
            raise GridError(f"busbar must be 1 or 2, got {self.busbar}")

    @property
    def element(self) -> str:
        return self.elem


Change = Union[LineStatus, Reassign]


def _change_sort_key(c: Change) -> tuple:
    if isinstance(c, LineStatus):
        return ("line_status", c.line, "")
    return ("reassign", c.elem, c.sub)


@dataclass(frozen=True)
class TopologyAction:
    changes: frozenset[Change]

    def __init__(self, changes: Iterable[Change]):
        changes = frozenset(changes)
        if not changes:
            raise GridError("empty action")
        targets = [(c.element, c.sub if isinstance(c, Reassign) else None) for c in changes]
        if len(targets) != len(set(targets)):
            raise ConflictingChanges("two changes target the same element")
        object.__setattr__(self, "changes", changes)

    def sorted_changes(self) -> list[Change]:
        return sorted(self.changes, key=_change_sort_key)

    def fingerprint(self) -> tuple:
        """Canonical hashable identity of the nodal change this action makes."""
        out = []
        for c in self.sorted_changes():
            if isinstance(c, LineStatus):
                out.append(("line_status", c.line, c.in_service))
            else:
                out.append(("reassign", c.sub, c.elem, c.busbar))
        return tuple(out)

    def substations(self, grid: Grid) -> tuple[str, ...]:
        """Substations this action operates breakers in, sorted."""
        subs: set[str] = set()
        for c in self.changes:
            if isinstance(c, LineStatus):
                subs.update(grid.subs_of_element(c.line))
            else:
                subs.add(c.sub)
        return tuple(sorted(subs))

    def __len__(self) -> int:
        return len(self.changes)


# ---------------------------------------------------------------------------
# Operations


def apply_action(grid: Grid, action: TopologyAction) -> Grid:
    """Return a new grid with the action's switching changes applied."""
    elem_ids = grid.element_ids()
    line_ids = {ln.id for ln in grid.lines}
    for c in action.changes:
        if isinstance(c, LineStatus):
            if c.line not in line_ids:
                raise UnknownElement(f"line {c.line}")
        else:
            sub = grid.sub(c.sub)  # raises UnknownElement
            if c.elem not in elem_ids:
                raise UnknownElement(f"element {c.elem}")
            if c.sub not in grid.subs_of_element(c.elem):
                raise UnknownElement(
                    f"element {c.elem} is not connected at substation {c.sub}"
                )
            del sub

    new_status = {
        c.line: c.in_service for c in action.changes if isinstance(c, LineStatus)
    }
    lines = tuple(
        replace(ln, in_service=new_status[ln.id]) if ln.id in new_status else ln
        for ln in grid.lines
    )

    moves: dict[str, dict[str, int]] = {}
    for c in action.changes:
        if isinstance(c, Reassign):
            moves.setdefault(c.sub, {})[c.elem] = c.busbar
    substations = []
    for s in grid.substations:
        if s.id in moves:
            assign = dict(s.element_assignment)
            assign.update(moves[s.id])
            substations.append(replace(s, element_assignment=assign))
        else:
            substations.append(s)

    return replace(grid, substations=tuple(substations), lines=lines)


def inverse_action(grid: Grid, action: TopologyAction) -> TopologyAction:
    """Action undoing `action` when applied to apply_action(grid, action)."""
    inv: list[Change] = []
    for c in action.changes:
        if isinstance(c, LineStatus):
            inv.append(LineStatus(c.line, grid.line(c.line).in_service))
        else:
            inv.append(Reassign(c.sub, c.elem, grid.sub(c.sub).busbar_of(c.elem)))
    return TopologyAction(inv)


def topo_diff(g_a: Grid, g_b: Grid) -> Optional[TopologyAction]:
    """Switching changes turning g_a's topology into g_b's; None if identical."""
    if g_a.element_ids() != g_b.element_ids() or {s.id for s in g_a.substations} != {
        s.id for s in g_b.substations
    }:
        raise MismatchedGrids("grids do not share the same element sets")
    changes: list[Change] = []
    b_lines = {ln.id: ln for ln in g_b.lines}
    for ln in g_a.lines:
        if b_lines[ln.id].in_service != ln.in_service:
            changes.append(LineStatus(ln.id, b_lines[ln.id].in_service))
    b_subs = {s.id: s for s in g_b.substations}
    for s in g_a.substations:
        sb = b_subs[s.id]
        for elem in set(s.element_assignment) | set(sb.element_assignment):
            if s.busbar_of(elem) != sb.busbar_of(elem):
                changes.append(Reassign(s.id, elem, sb.busbar_of(elem)))
    if not changes:
        return None
    return TopologyAction(changes)


def topology_fingerprint(grid: Grid) -> tuple:
    """Hashable identity of the grid's switching state."""
    lines = tuple((ln.id, ln.in_service) for ln in sorted(grid.lines, key=lambda l: l.id))
    assigns = []
    for s in sorted(grid.substations, key=lambda s: s.id):
        for elem in sorted(s.element_assignment):
            bb = s.element_assignment[elem]
            if bb != 1:
                assigns.append((s.id, elem, bb))
    return (lines, tuple(assigns))


# ---------------------------------------------------------------------------
# Nodal graph


@dataclass(frozen=True)
class NodalGraph:
    """Electrical nodes (substation, busbar) with in-service lines as edges."""

    nodes: tuple[tuple[str, int], ...]
    node_of_element: Mapping[str, tuple[str, int]]
    line_edges: Mapping[str, tuple[tuple[str, int], tuple[str, int]]]
    islands: tuple[frozenset[tuple[str, int]], ...]

    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(self.nodes)
        for line_id, (a, b) in self.line_edges.items():
            g.add_edge(a, b, line=line_id)
        return g


def electrical_nodes(grid: Grid) -> NodalGraph:
    """Resolve the (substation, busbar) nodes implied by busbar assignments."""
    subs = {s.id: s for s in grid.substations}
    node_of: dict[str, tuple[str, int]] = {}
    nodes: set[tuple[str, int]] = set()

    def attach(elem_id: str, sub_id: str) -> tuple[str, int]:
        node = (sub_id, subs[sub_id].busbar_of(elem_id))
        nodes.add(node)
        return node

    for ld in grid.loads:
        node_of[ld.id] = attach(ld.id, ld.substation)
    for g in grid.generators:
        if g.in_service:
            node_of[g.id] = attach(g.id, g.substation)
    line_edges: dict[str, tuple[tuple[str, int], tuple[str, int]]] = {}
    for ln in grid.lines:
        if ln.in_service:
            a = attach(ln.id, ln.from_sub)
            b = attach(ln.id, ln.to_sub)
            node_of[ln.id] = a
            line_edges[ln.id] = (a, b)

    g = nx.Graph()
    g.add_nodes_from(nodes)
    for a, b in line_edges.values():
        g.add_edge(a, b)
    islands = tuple(
        frozenset(c) for c in sorted(nx.connected_components(g), key=lambda c: sorted(c))
    )
    return NodalGraph(
        nodes=tuple(sorted(nodes)),
        node_of_element=node_of,
        line_edges=line_edges,
        islands=islands,
    )
