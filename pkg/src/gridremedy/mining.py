"""Counterfactual mining of remedial switchings from a snapshot archive.

First pass: replay every (t, t+h) pair with the topology frozen at t and
the injections observed at t+h; security violations on these counterfactual
grids mark windows where a switching acted as a preventive remedial action.
Second pass: test the single-element subsets of the topology delta over
the window and keep those that remove the violation.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from typing import IO, Iterable, Optional, Sequence

from .caseio import action_from_json, action_to_json
from .model import Grid, GridError, Snapshot, TopologyAction, apply_action, topo_diff
from .powerflow import (
    SecurityCriterion,
    SecurityIssue,
    Solver,
    issue_keys,
    security_check,
    solve_ac,
)

REMEDIAL_DB_VERSION = 1
TS_FMT = "%Y-%m-%dT%H:%M:%SZ"

# the default replay window offsets, in minutes
DEFAULT_WINDOW_MINUTES = (
    5, 10, 15, 30, 45, 60, 90, 120, 150, 180, 210, 240, 270, 300, 330, 360,
    420, 480, 540, 600, 660, 720, 1380, 1410, 1425, 1440,
)

H_MAX_MINUTES = 24 * 60


def _window_label(minutes: int) -> str:
    if minutes < 60:
        return f"{minutes} min"
    h, m = divmod(minutes, 60)
    if m == 0:
        return f"{h}h"
    return f"{h}h{m:02d}"


@dataclass(frozen=True)
class WindowSet:
    minutes: tuple[int, ...]

    def __post_init__(self):
        m = self.minutes
        if any(b <= a for a, b in zip(m, m[1:])):
            raise GridError("window offsets must be strictly increasing")
        if m and m[-1] > H_MAX_MINUTES:
            raise GridError("window offsets must not exceed 24h")
        if any(v < 0 for v in m):
            raise GridError("window offsets must be non-negative")

    @classmethod
    def default(cls) -> "WindowSet":
        return cls(DEFAULT_WINDOW_MINUTES)

    def labels(self) -> list[str]:
        return [_window_label(m) for m in self.minutes]


@dataclass(frozen=True)
class UnsafeCase:
    t: str
    h: int  # minutes
    issue: SecurityIssue
    counterfactual_grid: Grid


@dataclass(frozen=True)
class RemedialRecord:
    issue: SecurityIssue
    action: TopologyAction
    context_grid: Optional[Grid]  # counterfactual state the cure was tested on
    source: tuple[str, int]  # (t, h minutes)
    post_issues: tuple[tuple[str, Optional[str]], ...]  # issue keys after the action
    substations: tuple[str, ...]

    def dedup_key(self) -> tuple:
        return (self.issue.line_id, self.substations, self.action.fingerprint())


@dataclass
class MiningStats:
    """Six headline counters of a mining run, plus bookkeeping."""

    counterfactuals_computed: int = 0
    counterfactuals_unsafe: int = 0
    unsafe_with_curative_action: int = 0
    distinct_curative_actions: int = 0
    lines_stressed: int = 0
    lines_stressed_with_cure: int = 0
    archive_gaps: int = 0
    nonconvergent: int = 0
    rejected_candidates: int = 0
    merged_duplicates: int = 0

    def rows(self) -> list[tuple[str, int]]:
        return [
            ("counterfactual grids computed", self.counterfactuals_computed),
            ("counterfactual grids unsafe", self.counterfactuals_unsafe),
            ("unsafe grids with one curative action", self.unsafe_with_curative_action),
            ("different curative actions", self.distinct_curative_actions),
            ("lines stressed", self.lines_stressed),
            ("lines stressed with a curative action", self.lines_stressed_with_cure),
        ]


@dataclass
class RemedialDB:
    records: list[RemedialRecord] = field(default_factory=list)
    stats: MiningStats = field(default_factory=MiningStats)

    def __len__(self):
        return len(self.records)

    def for_line(self, line_id: str) -> list[RemedialRecord]:
        return [r for r in self.records if r.issue.line_id == line_id]

    def keys(self) -> set[tuple]:
        return {r.dedup_key() for r in self.records}


def _parse_ts(ts: str) -> datetime:
    return datetime.strptime(ts, TS_FMT)


def counterfactual(topology_of: Grid, injections_of: Grid) -> Grid:
    """Topology of one snapshot with the injections of another.

    Loads and generators are matched by id; generator service status travels
    with the injections.  Elements present only on the injection side are
    dropped (element churn)."""
    inj_loads = {l.id: l for l in injections_of.loads}
    inj_gens = {g.id: g for g in injections_of.generators}
    loads = tuple(
        replace(l, p=inj_loads[l.id].p, q=inj_loads[l.id].q) if l.id in inj_loads else l
        for l in topology_of.loads
    )
    gens = tuple(
        replace(
            g,
            p_set=inj_gens[g.id].p_set,
            v_set=inj_gens[g.id].v_set,
            in_service=inj_gens[g.id].in_service,
        )
        if g.id in inj_gens
        else g
        for g in topology_of.generators
    )
    return replace(topology_of, loads=loads, generators=gens)


def find_unsafe(
    archive: Sequence[Snapshot],
    windows: WindowSet,
    criterion: SecurityCriterion = SecurityCriterion(),
    solver: Solver = solve_ac,
    stats: Optional[MiningStats] = None,
) -> list[UnsafeCase]:
    """Replay each snapshot's topology against later injections and collect
    the security issues of the counterfactual grids."""
    stats = stats if stats is not None else MiningStats()
    by_ts = {s.timestamp: s for s in archive}
    out: list[UnsafeCase] = []
    for snap in archive:
        t0 = _parse_ts(snap.timestamp)
        for h in windows.minutes:
            ts_h = (t0 + timedelta(minutes=h)).strftime(TS_FMT)
            later = by_ts.get(ts_h)
            if later is None:
                stats.archive_gaps += 1
                continue
            g = counterfactual(snap.grid, later.grid) if h else snap.grid
            sol = solver(g)
            stats.counterfactuals_computed += 1
            issues = security_check(g, criterion, sol)
            if issues:
                stats.counterfactuals_unsafe += 1
                if not sol.converged:
                    stats.nonconvergent += 1
                for s in issues:
                    out.append(UnsafeCase(snap.timestamp, h, s, g))
    return out


def _subsets(action: TopologyAction, max_cardinality: int):
    changes = action.sorted_changes()
    for k in range(1, max_cardinality + 1):
        for combo in itertools.combinations(changes, k):
            yield TopologyAction(combo)


def extract_remedials(
    unsafe_cases: Iterable[UnsafeCase],
    archive: Sequence[Snapshot],
    criterion: SecurityCriterion = SecurityCriterion(),
    solver: Solver = solve_ac,
    max_cardinality: int = 1,
    stats: Optional[MiningStats] = None,
) -> RemedialDB:
    """For each unsafe counterfactual, test the small subsets of the topology
    changes observed over its window and keep every one that removes the
    violation; deduplicate and attach run statistics."""
    stats = stats if stats is not None else MiningStats()
    by_ts = {s.timestamp: s for s in archive}
    records: list[RemedialRecord] = []
    stressed: set[str] = set()
    cured_lines: set[str] = set()
    cured_cases: set[tuple[str, int]] = set()  # grids (t, h) with >=1 cure

    for case in sorted(unsafe_cases,
                       key=lambda c: (c.t, c.h, str(c.issue.line_id))):
        if case.issue.kind == "nonconvergence":
            continue
        stressed.add(case.issue.line_id)
        t0 = _parse_ts(case.t)
        later = by_ts.get((t0 + timedelta(minutes=case.h)).strftime(TS_FMT))
        here = by_ts.get(case.t)
        if later is None or here is None:
            stats.archive_gaps += 1
            continue
        gamma = topo_diff(here.grid, later.grid)
        if gamma is None:
            continue
        for tau in _subsets(gamma, max_cardinality):
            fixed = apply_action(case.counterfactual_grid, tau)
            sol = solver(fixed)
            if not sol.converged:
                stats.rejected_candidates += 1
                continue
            post = security_check(fixed, criterion, sol)
            if case.issue.key in issue_keys(post):
                continue
            records.append(
                RemedialRecord(
                    issue=case.issue,
                    action=tau,
                    context_grid=case.counterfactual_grid,
                    source=(case.t, case.h),
                    post_issues=tuple(sorted(issue_keys(post),
                                             key=lambda k: (k[0], str(k[1])))),
                    substations=tau.substations(case.counterfactual_grid),
                )
            )
            cured_lines.add(case.issue.line_id)
            cured_cases.add((case.t, case.h))

    stats.unsafe_with_curative_action = len(cured_cases)
    stats.lines_stressed = len(stressed)
    stats.lines_stressed_with_cure = len(cured_lines)
    db = dedup(records, stats=stats)
    return db


def dedup(records: Iterable[RemedialRecord],
          stats: Optional[MiningStats] = None) -> RemedialDB:
    """One record per (stressed line, substations acted on, nodal-change
    fingerprint); the earliest source wins."""
    stats = stats if stats is not None else MiningStats()
    best: dict[tuple, RemedialRecord] = {}
    merged = 0
    for r in records:
        key = r.dedup_key()
        prev = best.get(key)
        if prev is None:
            best[key] = r
        else:
            merged += 1
            if r.source < prev.source:
                best[key] = r
    stats.merged_duplicates = merged
    stats.distinct_curative_actions = len(best)
    out = [best[k] for k in sorted(best, key=lambda k: (str(k[0]), k[1], str(k[2])))]
    return RemedialDB(records=out, stats=stats)


def verify_db(db: RemedialDB, criterion: SecurityCriterion,
              solver: Solver = solve_ac) -> bool:
    """Independent soundness pass: every stored cure still removes its issue."""
    for r in db.records:
        if r.context_grid is None:
            raise GridError("record has no context grid to verify against")
        fixed = apply_action(r.context_grid, r.action)
        post = security_check(fixed, criterion, solver(fixed))
        if r.issue.key in issue_keys(post):
            return False
    return True


def mine(
    archive: Sequence[Snapshot],
    windows: Optional[WindowSet] = None,
    criterion: SecurityCriterion = SecurityCriterion(),
    solver: Solver = solve_ac,
    max_cardinality: int = 1,
) -> RemedialDB:
    """Full pipeline: unsafe detection then remedial extraction."""
    windows = windows or WindowSet.default()
    stats = MiningStats()
    unsafe = find_unsafe(archive, windows, criterion, solver, stats=stats)
    return extract_remedials(unsafe, archive, criterion, solver,
                             max_cardinality, stats=stats)


# ---------------------------------------------------------------------------
# Persistence (line-delimited, versioned)


def _record_to_json(r: RemedialRecord) -> dict:
    return {
        "version": REMEDIAL_DB_VERSION,
        "issue": {
            "line": r.issue.line_id,
            "flow": r.issue.flow_mva,
            "limit": r.issue.limit_mva,
            "ratio": r.issue.ratio,
        },
        "action": action_to_json(r.action)["changes"],
        "source": {"t": r.source[0], "h": r.source[1]},
        "post_issues": [list(k) for k in r.post_issues],
        "substations": list(r.substations),
        "fingerprint": [list(c) for c in r.action.fingerprint()],
    }


def _record_from_json(d: dict) -> RemedialRecord:
    issue = SecurityIssue(
        line_id=d["issue"]["line"],
        flow_mva=d["issue"]["flow"],
        limit_mva=d["issue"]["limit"],
        ratio=d["issue"]["ratio"],
    )
    action = action_from_json({"changes": d["action"]})
    return RemedialRecord(
        issue=issue,
        action=action,
        context_grid=None,
        source=(d["source"]["t"], d["source"]["h"]),
        post_issues=tuple(tuple(k) for k in d["post_issues"]),
        substations=tuple(d["substations"]),
    )


def write_remedial_db(db: RemedialDB, stream: IO[str]) -> None:
    header = {"version": REMEDIAL_DB_VERSION, "kind": "remedial_db",
              "stats": vars(db.stats)}
    stream.write(json.dumps(header, separators=(",", ":")) + "\n")
    for r in db.records:
        stream.write(json.dumps(_record_to_json(r), separators=(",", ":")) + "\n")


def read_remedial_db(stream: IO[str]) -> RemedialDB:
    lines = [ln for ln in (l.strip() for l in stream) if ln]
    if not lines:
        return RemedialDB()
    header = json.loads(lines[0])
    if header.get("version") != REMEDIAL_DB_VERSION:
        raise GridError(f"unsupported remedial db version {header.get('version')!r}")
    stats = MiningStats(**header.get("stats", {}))
    records = [_record_from_json(json.loads(ln)) for ln in lines[1:]]
    return RemedialDB(records=records, stats=stats)
