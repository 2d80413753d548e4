"""DC and AC load-flow solvers, the security function and N-1 analysis.

AC is a full Newton-Raphson on the polar power-flow equations with
PV->PQ switching on generator reactive limits.  Divergence is data, not
failure: an unconverged solve returns a FlowSolution with converged=False
and every consumer must handle the distinguished non-convergence issue.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .model import Grid, GridError, LineStatus, TopologyAction, apply_action, electrical_nodes

__all__ = [
    "SingularSystem",
    "FlowSolution",
    "SecurityIssue",
    "SecurityCriterion",
    "ContingencyReport",
    "solve_dc",
    "solve_ac",
    "security_check",
    "issue_keys",
    "n_minus_1",
]

SQRT3 = math.sqrt(3.0)


class SingularSystem(GridError):
    """The network equations are singular (isolated slack, degenerate island)."""


@dataclass(frozen=True)
class SecurityIssue:
    """One violated constraint; identity is (kind, line_id), not the values."""

    line_id: Optional[str]
    flow_mva: float
    limit_mva: float
    ratio: float
    kind: str = "thermal"  # "thermal" | "nonconvergence"

    @property
    def key(self) -> tuple[str, Optional[str]]:
        return (self.kind, self.line_id)


def issue_keys(issues) -> frozenset:
    return frozenset(i.key for i in issues)


NONCONVERGENCE = SecurityIssue(
    line_id=None, flow_mva=float("nan"), limit_mva=float("nan"), ratio=float("inf"),
    kind="nonconvergence",
)


@dataclass(frozen=True)
class SecurityCriterion:
    kind: str = "thermal_only"  # "thermal_only" | "n_minus_1"
    threshold: float = 0.95

    def __post_init__(self):
        if not (0.0 < self.threshold <= 1.0):
            raise GridError(f"threshold must be in (0, 1], got {self.threshold}")


@dataclass
class FlowSolution:
    converged: bool
    iterations: int
    method: str  # "ac" | "dc"
    node_vm: Mapping[tuple[str, int], float] = field(default_factory=dict)
    node_va: Mapping[tuple[str, int], float] = field(default_factory=dict)
    load_v: Mapping[str, float] = field(default_factory=dict)  # pu, per load (c_v)
    gen_q: Mapping[str, float] = field(default_factory=dict)  # MVar, per generator
    f_mw: Mapping[str, float] = field(default_factory=dict)  # sending-end active MW
    apparent_mva: Mapping[str, float] = field(default_factory=dict)  # max of both ends
    f_a: Mapping[str, float] = field(default_factory=dict)  # amps at sending end
    slack_injection_mw: float = 0.0
    max_mismatch: float = float("inf")
    islanded: tuple[str, ...] = ()
    note: str = ""


# ---------------------------------------------------------------------------
# Network compilation


class _Compiled:
    """Index arrays for the slack island of a grid."""

    def __init__(self, grid: Grid):
        self.grid = grid
        nodal = electrical_nodes(grid)
        self.nodal = nodal
        slack_gen = grid.slack()
        if not slack_gen.in_service:
            raise SingularSystem("slack generator out of service")
        slack_node = nodal.node_of_element[slack_gen.id]
        island = None
        for isl in nodal.islands:
            if slack_node in isl:
                island = isl
                break
        if island is None:
            raise SingularSystem("slack node is isolated")
        self.nodes = sorted(island)
        self.index = {n: i for i, n in enumerate(self.nodes)}
        self.slack_idx = self.index[slack_node]
        n = len(self.nodes)

        subs = {s.id: s for s in grid.substations}
        self.base_kv = np.array([subs[nd[0]].base_kv for nd in self.nodes])

        # injections
        self.p_load = np.zeros(n)
        self.q_load = np.zeros(n)
        islanded = []
        self.loads_on = []  # (load, node index)
        for ld in grid.loads:
            node = nodal.node_of_element[ld.id]
            if node in self.index:
                i = self.index[node]
                self.p_load[i] += ld.p
                self.q_load[i] += ld.q
                self.loads_on.append((ld, i))
            else:
                islanded.append(ld.id)
        self.p_gen = np.zeros(n)
        self.gens_on = []  # (gen, node index)
        for g in grid.generators:
            if not g.in_service:
                continue
            node = nodal.node_of_element[g.id]
            if node in self.index:
                self.gens_on.append((g, self.index[node]))
                if not g.slack:
                    self.p_gen[self.index[node]] += g.p_set
            else:
                islanded.append(g.id)
        self.islanded = tuple(sorted(islanded))

        # node typing
        self.vset = np.ones(n)
        gen_nodes = set()
        for g, i in sorted(self.gens_on, key=lambda t: t[0].id, reverse=True):
            self.vset[i] = g.v_set
            gen_nodes.add(i)
        self.pv = sorted(i for i in gen_nodes if i != self.slack_idx)
        self.pq = sorted(i for i in range(n) if i not in gen_nodes)

        # reactive capability per node
        self.qmin = np.zeros(n)
        self.qmax = np.zeros(n)
        for g, i in self.gens_on:
            self.qmin[i] += g.q_min
            self.qmax[i] += g.q_max

        # branches inside the island
        self.branches = []  # (line, fi, ti)
        self.dead_lines = []
        for ln in grid.lines:
            if not ln.in_service:
                continue
            a, b = nodal.line_edges[ln.id]
            if a in self.index and b in self.index:
                self.branches.append((ln, self.index[a], self.index[b]))
            else:
                self.dead_lines.append(ln.id)

    def ybus(self) -> np.ndarray:
        n = len(self.nodes)
        Y = np.zeros((n, n), dtype=complex)
        for ln, f, t in self.branches:
            ys = 1.0 / complex(ln.r, ln.x)
            bc = 1j * ln.b / 2.0
            Y[f, f] += ys + bc
            Y[t, t] += ys + bc
            Y[f, t] -= ys
            Y[t, f] -= ys
        return Y


# ---------------------------------------------------------------------------
# DC solve


def solve_dc(grid: Grid) -> FlowSolution:
    """Linear load flow: angles solve B.theta = P, flows (ti - tj)/x."""
    net = _Compiled(grid)
    n = len(net.nodes)
    B = np.zeros((n, n))
    for ln, f, t in net.branches:
        w = 1.0 / ln.x
        B[f, f] += w
        B[t, t] += w
        B[f, t] -= w
        B[t, f] -= w
    p = (net.p_gen - net.p_load) / grid.base_mva
    keep = [i for i in range(n) if i != net.slack_idx]
    theta = np.zeros(n)
    if keep:
        try:
            theta[keep] = np.linalg.solve(B[np.ix_(keep, keep)], p[keep])
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(str(exc)) from exc

    f_mw, apparent, f_a = {}, {}, {}
    for ln, f, t in net.branches:
        flow = (theta[f] - theta[t]) / ln.x * grid.base_mva
        f_mw[ln.id] = flow
        apparent[ln.id] = abs(flow)
        f_a[ln.id] = abs(flow) / (SQRT3 * net.base_kv[f]) * 1000.0
    for lid in net.dead_lines:
        f_mw[lid] = 0.0
        apparent[lid] = 0.0
        f_a[lid] = 0.0

    # slack absorbs the island imbalance exactly (zero losses in DC)
    slack_p = float(net.p_load.sum() - net.p_gen.sum())

    return FlowSolution(
        converged=True,
        iterations=1,
        method="dc",
        node_vm={nd: 1.0 for nd in net.nodes},
        node_va={nd: float(theta[i]) for nd, i in net.index.items()},
        load_v={ld.id: 1.0 for ld, _ in net.loads_on},
        gen_q={g.id: 0.0 for g, _ in net.gens_on},
        f_mw=f_mw,
        apparent_mva=apparent,
        f_a=f_a,
        slack_injection_mw=slack_p,
        max_mismatch=0.0,
        islanded=net.islanded,
    )


# ---------------------------------------------------------------------------
# AC solve


def _mismatch(Y, V, p_sched, q_sched, pvpq, pq):
    """Power mismatch vector f = [dP(pvpq); dQ(pq)] in pu."""
    S = V * np.conj(Y @ V)
    dp = S.real - p_sched
    dq = S.imag - q_sched
    return np.concatenate([dp[pvpq], dq[pq]])


def _jacobian(Y, V, pvpq, pq):
    """Analytic Jacobian of the mismatch w.r.t. [theta(pvpq); vm(pq)]."""
    Ibus = Y @ V
    diagV = np.diag(V)
    diagI = np.diag(Ibus)
    diagVnorm = np.diag(V / np.abs(V))
    dS_dVa = 1j * diagV @ np.conj(diagI - Y @ diagV)
    dS_dVm = diagV @ np.conj(Y @ diagVnorm) + np.conj(diagI) @ diagVnorm
    J11 = dS_dVa[np.ix_(pvpq, pvpq)].real
    J12 = dS_dVm[np.ix_(pvpq, pq)].real
    J21 = dS_dVa[np.ix_(pq, pvpq)].imag
    J22 = dS_dVm[np.ix_(pq, pq)].imag
    return np.block([[J11, J12], [J21, J22]])


def solve_ac(grid: Grid, tol: float = 1e-8, max_iter: int = 20) -> FlowSolution:
    """Newton-Raphson AC load flow with reactive-limit PV->PQ switching."""
    net = _Compiled(grid)
    n = len(net.nodes)
    Y = net.ybus()
    base = grid.base_mva

    p_sched = (net.p_gen - net.p_load) / base
    q_sched_load = -net.q_load / base

    pv = list(net.pv)
    pq = list(net.pq)
    q_fixed = {}  # node -> clamped gen Q (pu) for limit-switched PV nodes
    slack = net.slack_idx

    vm = np.ones(n)
    va = np.zeros(n)
    for i in pv + [slack]:
        vm[i] = net.vset[i]

    total_iter = 0
    converged = False
    note = ""
    for round_ in range(6):
        pvpq = sorted(pv + pq)
        pq_s = sorted(pq)
        q_sched = q_sched_load.copy()
        for i, qg in q_fixed.items():
            q_sched[i] += qg
        V = vm * np.exp(1j * va)
        f = _mismatch(Y, V, p_sched, q_sched, pvpq, pq_s)
        it = 0
        ok = np.max(np.abs(f)) < tol if f.size else True
        while not ok and it < max_iter:
            J = _jacobian(Y, V, pvpq, pq_s)
            try:
                dx = np.linalg.solve(J, f)
            except np.linalg.LinAlgError:
                note = "singular_jacobian"
                break
            va[pvpq] -= dx[: len(pvpq)]
            vm[pq_s] -= dx[len(pvpq):]
            if np.any(vm < 0.05) or np.any(vm > 3.0) or not np.all(np.isfinite(vm)):
                note = "voltage_collapse"
                break
            V = vm * np.exp(1j * va)
            f = _mismatch(Y, V, p_sched, q_sched, pvpq, pq_s)
            it += 1
            ok = np.max(np.abs(f)) < tol
        total_iter += it
        if not ok:
            break

        # enforce generator reactive limits at PV nodes
        S = V * np.conj(Y @ V)
        switched = False
        for i in list(pv):
            qg = (S.imag[i] + net.q_load[i] / base) * base  # MVar produced at node
            if qg > net.qmax[i] + 1e-6:
                q_fixed[i] = net.qmax[i] / base
                pv.remove(i)
                pq.append(i)
                switched = True
            elif qg < net.qmin[i] - 1e-6:
                q_fixed[i] = net.qmin[i] / base
                pv.remove(i)
                pq.append(i)
                switched = True
        # hysteresis: a clamped node returns to PV only if its voltage crossed
        # back over the setpoint in the direction that relieves the limit
        for i in list(q_fixed):
            if i in pq:
                at_max = q_fixed[i] * base >= net.qmax[i] - 1e-9
                if (at_max and vm[i] > net.vset[i] + 1e-9) or (
                    not at_max and vm[i] < net.vset[i] - 1e-9
                ):
                    del q_fixed[i]
                    pq.remove(i)
                    pv.append(i)
                    vm[i] = net.vset[i]
                    switched = True
        if not switched:
            converged = True
            break

    V = vm * np.exp(1j * va)
    S = V * np.conj(Y @ V)
    max_mis = float(np.max(np.abs(_mismatch(
        Y, V, p_sched,
        q_sched_load + np.array([q_fixed.get(i, 0.0) for i in range(n)]),
        sorted(pv + pq), sorted(pq)))) ) if n > 1 else 0.0

    # per-generator outputs
    gen_q: dict[str, float] = {}
    by_node: dict[int, list] = {}
    for g, i in net.gens_on:
        by_node.setdefault(i, []).append(g)
    for i, gens in by_node.items():
        q_node = (S.imag[i] + net.q_load[i] / base) * base
        ranges = [max(g.q_max - g.q_min, 1e-9) for g in gens]
        tot = sum(ranges)
        for g, r in zip(gens, ranges):
            gen_q[g.id] = q_node * r / tot

    slack_p = float((S.real[slack] + net.p_load[slack] / base) * base)
    other_at_slack = sum(
        g.p_set for g, i in net.gens_on if i == slack and not g.slack
    )
    slack_p -= other_at_slack

    f_mw, apparent, f_a = {}, {}, {}
    for ln, fi, ti in net.branches:
        ys = 1.0 / complex(ln.r, ln.x)
        bc = 1j * ln.b / 2.0
        Vf, Vt = V[fi], V[ti]
        If = ys * (Vf - Vt) + bc * Vf
        It = ys * (Vt - Vf) + bc * Vt
        Sf = Vf * np.conj(If) * base
        St = Vt * np.conj(It) * base
        f_mw[ln.id] = float(Sf.real)
        apparent[ln.id] = float(max(abs(Sf), abs(St)))
        f_a[ln.id] = float(abs(Sf) / (SQRT3 * net.base_kv[fi] * abs(Vf)) * 1000.0)
    for lid in net.dead_lines:
        f_mw[lid] = 0.0
        apparent[lid] = 0.0
        f_a[lid] = 0.0

    return FlowSolution(
        converged=converged,
        iterations=total_iter,
        method="ac",
        node_vm={nd: float(vm[i]) for nd, i in net.index.items()},
        node_va={nd: float(va[i]) for nd, i in net.index.items()},
        load_v={ld.id: float(vm[i]) for ld, i in net.loads_on},
        gen_q=gen_q,
        f_mw=f_mw,
        apparent_mva=apparent,
        f_a=f_a,
        slack_injection_mw=slack_p,
        max_mismatch=max_mis,
        islanded=net.islanded,
        note=note,
    )


# ---------------------------------------------------------------------------
# Security function and N-1


def security_check(
    grid: Grid, criterion: SecurityCriterion, solution: FlowSolution
) -> list[SecurityIssue]:
    """Thermal overload issues; the empty list means the grid is secure."""
    if not solution.converged:
        return [NONCONVERGENCE]
    issues = []
    for ln in grid.lines:
        if not ln.in_service or ln.id not in solution.apparent_mva:
            continue
        flow = solution.apparent_mva[ln.id]
        if flow > criterion.threshold * ln.rating:
            issues.append(
                SecurityIssue(
                    line_id=ln.id,
                    flow_mva=flow,
                    limit_mva=ln.rating,
                    ratio=flow / ln.rating,
                )
            )
    issues.sort(key=lambda i: (-i.ratio, i.line_id))
    return issues


Solver = Callable[[Grid], FlowSolution]


@dataclass
class ContingencyReport:
    base_issues: tuple[SecurityIssue, ...]
    issues: Mapping[str, tuple[SecurityIssue, ...]]  # contingency line -> issues
    islanding: frozenset[str]

    def insecure_contingencies(self) -> list[str]:
        return sorted(k for k, v in self.issues.items() if v)


def n_minus_1(
    grid: Grid,
    criterion: SecurityCriterion,
    solver: Solver = solve_ac,
) -> ContingencyReport:
    """Outage each in-service line in turn and collect the security issues."""
    base_sol = solver(grid)
    base_issues = tuple(security_check(grid, criterion, base_sol))
    base_islanded = set(base_sol.islanded)

    issues: dict[str, tuple[SecurityIssue, ...]] = {}
    islanding = set()
    for ln in sorted(grid.lines, key=lambda l: l.id):
        if not ln.in_service:
            continue
        g_k = apply_action(grid, TopologyAction([LineStatus(ln.id, False)]))
        try:
            sol = solver(g_k)
        except SingularSystem:
            issues[ln.id] = (NONCONVERGENCE,)
            islanding.add(ln.id)
            continue
        if set(sol.islanded) - base_islanded:
            islanding.add(ln.id)
        issues[ln.id] = tuple(security_check(g_k, criterion, sol))
    return ContingencyReport(
        base_issues=base_issues, issues=issues, islanding=frozenset(islanding)
    )
