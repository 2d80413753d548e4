"""Dispatcher advisor.

Pipeline: assess security with the reference solver, rank substations from
the mined remedial database (falling back to electrical distance), enumerate
every single-breaker action there, screen the candidates with the fast
surrogate, validate the survivors with a full AC solve, and rank the cures by
switching cost.  The search is budgeted in reference-solver calls and reports
every action it tested, so an operator can take over at any point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import networkx as nx

from .mining import RemedialDB
from .model import (
    Grid,
    GridError,
    LineStatus,
    Reassign,
    TopologyAction,
    UnknownElement,
    apply_action,
    electrical_nodes,
)
from .powerflow import (
    SecurityCriterion,
    SecurityIssue,
    Solver,
    issue_keys,
    security_check,
    solve_ac,
    solve_dc,
)
from .surrogate import MultipleOutages, SurrogateModel, fast_screen


class NoSuchSubstation(GridError):
    pass


# ---------------------------------------------------------------------------
# Cost model


@dataclass(frozen=True)
class CostModel:
    """Additive switching cost: each change costs t_switch, optionally scaled
    by a per-substation multiplier (line toggles count their sending end)."""

    t_switch: float = 1.0
    multipliers: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.t_switch < 0 or any(m < 0 for _, m in self.multipliers):
            raise GridError("switching costs must be >= 0")

    def cost(self, action: TopologyAction, grid: Grid) -> float:
        mult = dict(self.multipliers)
        lines = {l.id: l for l in grid.lines}
        total = 0.0
        for c in action.sorted_changes():
            sub = lines[c.line].from_sub if isinstance(c, LineStatus) else c.sub
            total += self.t_switch * mult.get(sub, 1.0)
        return total


# ---------------------------------------------------------------------------
# Substation ranking


def _distance_ranking(grid: Grid, issue: SecurityIssue) -> list[str]:
    """Substations by hop distance from the stressed line's endpoints."""
    g = nx.Graph()
    g.add_nodes_from(s.id for s in grid.substations)
    for ln in grid.lines:
        if ln.in_service:
            g.add_edge(ln.from_sub, ln.to_sub)
    sources = []
    for ln in grid.lines:
        if ln.id == issue.line_id:
            sources = [ln.from_sub, ln.to_sub]
    dist = {s: 0 for s in sources}
    for s in sources:
        for node, d in nx.single_source_shortest_path_length(g, s).items():
            if node not in dist or d < dist[node]:
                dist[node] = d
    ranked = sorted(dist, key=lambda s: (dist[s], s))
    rest = sorted(set(n for n in g.nodes) - set(ranked))
    return ranked + rest


def rank_substations(db: RemedialDB, issue: SecurityIssue, grid: Grid,
                     k: int) -> list[str]:
    """Substations worth acting in for this issue: by descending count of
    mined cures for the same line, then electrically nearest first."""
    if k < 1:
        raise GridError("k must be >= 1")
    counts: dict[str, int] = {}
    for rec in db.for_line(issue.line_id):
        for sub in rec.substations:
            counts[sub] = counts.get(sub, 0) + 1
    by_count = sorted(counts, key=lambda s: (-counts[s], s))
    out = list(by_count)
    for sub in _distance_ranking(grid, issue):
        if sub not in counts:
            out.append(sub)
    return out[:k]


# ---------------------------------------------------------------------------
# Candidate enumeration


def _other_busbar(busbar: int) -> int:
    return 2 if busbar == 1 else 1


def enumerate_actions(grid: Grid, substation: str,
                      available: Optional[frozenset[str]] = None
                      ) -> list[TopologyAction]:
    """All single-change actions at one substation: move each attached
    element to the other busbar, toggle each incident line; stable order."""
    subs = {s.id: s for s in grid.substations}
    if substation not in subs:
        raise NoSuchSubstation(substation)
    sub = subs[substation]

    elems = []
    for ln in grid.lines:
        if substation in (ln.from_sub, ln.to_sub):
            elems.append(ln.id)
    incident_lines = sorted(elems)
    for g in grid.generators:
        if g.substation == substation:
            elems.append(g.id)
    for l in grid.loads:
        if l.substation == substation:
            elems.append(l.id)

    def ok(elem):
        return available is None or elem in available

    actions = []
    for elem in sorted(elems):
        if ok(elem):
            actions.append(TopologyAction(
                [Reassign(substation, elem, _other_busbar(sub.busbar_of(elem)))]))
    lines = {l.id: l for l in grid.lines}
    for lid in incident_lines:
        if ok(lid):
            actions.append(TopologyAction(
                [LineStatus(lid, not lines[lid].in_service)]))
    return actions


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Verdict:
    status: str  # "validated" | "rejected"
    reason: str
    post_issues: tuple[SecurityIssue, ...]
    max_loading: float  # post-action max apparent/rating, inf when unknown
    solver_calls: int = 1


def _slack_island_elements(grid: Grid) -> frozenset[str]:
    net = electrical_nodes(grid)
    slack_node = net.node_of_element[grid.slack().id]
    island = next(isl for isl in net.islands if slack_node in isl)
    return frozenset(e for e, nd in net.node_of_element.items() if nd in island)


def validate_action(grid: Grid, action: TopologyAction, issue: SecurityIssue,
                    criterion: SecurityCriterion = SecurityCriterion(),
                    solver: Solver = solve_ac,
                    check_n_minus_1: bool = False,
                    pre_issues=None) -> Verdict:
    """Reference check of one candidate: the issue must vanish, no new issue
    may appear, and no supplied or consuming element may be disconnected."""
    calls = 0
    if pre_issues is None:
        pre_issues = security_check(grid, criterion, solver(grid))
        calls += 1
    pre_keys = issue_keys(pre_issues)
    fixed = apply_action(grid, action)

    supply = {l.id for l in grid.loads} | {g.id for g in grid.generators}
    before = _slack_island_elements(grid) & supply
    after = _slack_island_elements(fixed) & supply
    if before - after:
        return Verdict("rejected", "disconnects elements", (), float("inf"),
                       calls)

    sol = solver(fixed)
    calls += 1
    if not sol.converged:
        return Verdict("rejected", "non-convergent", (), float("inf"), calls)
    post = security_check(fixed, criterion, sol)
    post_keys = issue_keys(post)
    loading = max(
        (sol.apparent_mva[l.id] / l.rating for l in fixed.lines
         if l.in_service and l.id in sol.apparent_mva),
        default=0.0,
    )
    if issue.key in post_keys:
        return Verdict("rejected", "issue not cured", tuple(post), loading, calls)
    new = post_keys - pre_keys
    if new:
        return Verdict("rejected", "new issues introduced", tuple(post), loading,
                       calls)
    if check_n_minus_1:
        from .powerflow import n_minus_1

        pre_rep = n_minus_1(grid, criterion, solver=solver)
        post_rep = n_minus_1(fixed, criterion, solver=solver)
        calls += 2 * len(fixed.lines)
        pre_n1 = {(lid, k) for lid, iss in pre_rep.issues.items()
                  for k in issue_keys(iss)}
        post_n1 = {(lid, k) for lid, iss in post_rep.issues.items()
                   for k in issue_keys(iss)}
        if post_n1 - pre_n1:
            return Verdict("rejected", "new contingency issues", tuple(post),
                           loading, calls)
    return Verdict("validated", "", tuple(post), loading, calls)


# ---------------------------------------------------------------------------
# Advice


@dataclass(frozen=True)
class AdviseOptions:
    k: int = 3
    budget: int = 50  # reference-solver calls
    validate_n_minus_1: bool = False
    screen_margin: float = 0.0
    available: Optional[frozenset[str]] = None


@dataclass(frozen=True)
class Recommendation:
    action: TopologyAction
    substation: str
    predicted_issues: tuple[SecurityIssue, ...]
    validated_issues: tuple[SecurityIssue, ...]
    cost: float
    rank: int
    max_loading: float


@dataclass(frozen=True)
class TestedAction:
    action: TopologyAction
    substation: str
    outcome: str  # "validated" | rejection reason


@dataclass
class AdviceResult:
    secure: bool
    recommendations: list[Recommendation] = field(default_factory=list)
    tested: list[TestedAction] = field(default_factory=list)
    budget_exhausted: bool = False
    stopped: bool = False
    issues: tuple[SecurityIssue, ...] = ()


def _predicted_issues(model: Optional[SurrogateModel], grid: Grid,
                      criterion: SecurityCriterion,
                      margin: float) -> list[SecurityIssue]:
    """Fast post-action issue estimate: the surrogate when the state is
    encodable, otherwise a linear solve (reassignments and multi-outage
    states are outside the surrogate's input space)."""
    if model is not None:
        try:
            return fast_screen(model, grid, criterion, margin=margin)
        except (MultipleOutages, UnknownElement):
            pass
    try:
        sol = solve_dc(grid)
    except GridError:
        return [SecurityIssue(line_id=None, flow_mva=0.0, limit_mva=0.0,
                              ratio=0.0, kind="nonconvergence")]
    crit = SecurityCriterion(
        kind=criterion.kind,
        threshold=max(criterion.threshold - margin, 1e-9),
    ) if margin else criterion
    return security_check(grid, crit, sol)


def advise(grid: Grid,
           criterion: SecurityCriterion = SecurityCriterion(),
           model: Optional[SurrogateModel] = None,
           db: Optional[RemedialDB] = None,
           cost_model: CostModel = CostModel(),
           opts: AdviseOptions = AdviseOptions(),
           solver: Solver = solve_ac,
           on_validated=None,
           should_stop=None) -> AdviceResult:
    """Ranked, validated topology actions curing the grid's current issues.

    `on_validated(action, substation, verdict)` fires as each cure survives
    the reference check; `should_stop()` is polled between candidates and
    halts the search cooperatively (the partial result is still returned)."""
    db = db if db is not None else RemedialDB()
    sol = solver(grid)
    issues = security_check(grid, criterion, sol)
    result = AdviceResult(secure=not issues, issues=tuple(issues))
    if not issues:
        return result

    pre_keys = issue_keys(issues)
    budget = opts.budget
    validated: dict[tuple, tuple] = {}

    for issue in sorted(issues, key=lambda s: (-s.ratio, str(s.line_id))):
        if issue.kind == "nonconvergence":
            continue
        seen: set[tuple] = set()  # per issue: an action may cure another one
        for sub in rank_substations(db, issue, grid, opts.k):
            for action in enumerate_actions(grid, sub, opts.available):
                if should_stop is not None and should_stop():
                    result.stopped = True
                    break
                key = action.fingerprint()
                if key in seen or key in validated:
                    continue
                seen.add(key)
                try:
                    fixed = apply_action(grid, action)
                except GridError:
                    continue
                predicted = _predicted_issues(model, fixed, criterion,
                                              opts.screen_margin)
                pred_keys = issue_keys(predicted)
                if issue.key in pred_keys or (pred_keys - pre_keys):
                    continue  # screened out, no reference solve spent
                worst = 1 + (2 * len(grid.lines) if opts.validate_n_minus_1
                             else 0)
                if budget < worst:
                    result.budget_exhausted = True
                    break
                verdict = validate_action(grid, action, issue, criterion,
                                          solver, opts.validate_n_minus_1,
                                          pre_issues=issues)
                budget -= verdict.solver_calls
                result.tested.append(TestedAction(
                    action, sub, verdict.status if verdict.status == "validated"
                    else verdict.reason))
                if verdict.status == "validated":
                    validated[key] = (action, sub, tuple(predicted), verdict)
                    if on_validated is not None:
                        on_validated(action, sub, verdict)
            if result.budget_exhausted or result.stopped:
                break
        if result.budget_exhausted or result.stopped:
            break

    ranked = sorted(
        validated.values(),
        key=lambda v: (cost_model.cost(v[0], grid), v[3].max_loading,
                       v[0].fingerprint()),
    )
    for rank, (action, sub, predicted, verdict) in enumerate(ranked, start=1):
        result.recommendations.append(Recommendation(
            action=action, substation=sub, predicted_issues=predicted,
            validated_issues=verdict.post_issues,
            cost=cost_model.cost(action, grid), rank=rank,
            max_loading=verdict.max_loading,
        ))
    return result
