from dataclasses import replace

import pytest

from gridremedy.advisor import (
    AdviseOptions,
    CostModel,
    NoSuchSubstation,
    advise,
    enumerate_actions,
    rank_substations,
    validate_action,
)
from gridremedy.mining import RemedialDB, RemedialRecord, WindowSet, mine
from gridremedy.model import (
    Generator,
    Grid,
    GridError,
    Line,
    LineStatus,
    Load,
    Reassign,
    Substation,
    TopologyAction,
)
from gridremedy.powerflow import SecurityCriterion, SecurityIssue, solve_ac, solve_dc
from gridremedy.scenarios import corridor_grid, mining_fixture


def heavy(grid, k):
    return replace(grid, loads=tuple(replace(l, p=l.p * k, q=l.q * k)
                                     for l in grid.loads))


def _issue(line_id, ratio=1.0):
    return SecurityIssue(line_id=line_id, flow_mva=ratio * 60, limit_mva=60,
                         ratio=ratio)


def _rec(line, action, grid, t="2012-01-02T08:00:00Z"):
    return RemedialRecord(issue=_issue(line), action=action, context_grid=grid,
                          source=(t, 30), post_issues=(),
                          substations=action.substations(grid))


def two_tie_grid():
    """One stressed corridor, two alternative ties from different ends."""
    subs = (Substation("S0", base_kv=135.0), Substation("A1", base_kv=135.0))
    lines = (
        Line("M1", "S0", "A1", r=0.01, x=0.10, b=0.0, rating=60.0),
        Line("Ta", "S0", "A1", r=0.01, x=0.10, b=0.0, rating=60.0,
             in_service=False),
        Line("Tb", "A1", "S0", r=0.01, x=0.10, b=0.0, rating=60.0,
             in_service=False),
    )
    gens = (Generator("G0", "S0", p_set=0.0, v_set=1.02, q_min=-500.0,
                      q_max=500.0, p_max=1000.0, slack=True),)
    loads = (Load("CA1", "A1", p=58.0, q=11.0),)
    return Grid(substations=subs, lines=lines, generators=gens, loads=loads)


# ---------------------------------------------------------------------------
# cost model


def test_cost_additive():
    grid = corridor_grid()
    cm = CostModel()
    one = TopologyAction([LineStatus("T1", True)])
    two = TopologyAction([LineStatus("T1", True), Reassign("B1", "R1b", 2)])
    assert cm.cost(one, grid) == 1.0
    assert cm.cost(two, grid) == 2.0


def test_cost_multipliers():
    grid = corridor_grid()
    cm = CostModel(t_switch=2.0, multipliers=(("B1", 3.0),))
    assert cm.cost(TopologyAction([Reassign("B1", "R1b", 2)]), grid) == 6.0
    assert cm.cost(TopologyAction([LineStatus("T1", True)]), grid) == 2.0


def test_cost_rejects_negative():
    with pytest.raises(GridError):
        CostModel(t_switch=-1.0)
    with pytest.raises(GridError):
        CostModel(multipliers=(("S0", -2.0),))


# ---------------------------------------------------------------------------
# substation ranking


def test_rank_by_db_frequency():
    grid = corridor_grid()
    close = TopologyAction([LineStatus("T1", True)])
    move = TopologyAction([Reassign("B1", "R1b", 2)])
    records = [_rec("M1", close, grid) for _ in range(5)]
    records += [_rec("M1", move, grid), _rec("M1", move, grid)]
    db = RemedialDB(records=records)
    ranked = rank_substations(db, _issue("M1"), grid, k=3)
    # close T1 touches A1 and S0 (5 each), the reassign touches B1 (2)
    assert ranked == ["A1", "S0", "B1"]


def test_rank_empty_db_endpoints_first():
    grid = corridor_grid()
    ranked = rank_substations(RemedialDB(), _issue("M2"), grid, k=2)
    assert set(ranked) == {"S0", "A2"}
    assert ranked == sorted(ranked, key=lambda s: (s != "A2", s))


def test_rank_k_prefix_property():
    grid = corridor_grid()
    db = RemedialDB(records=[_rec("M1", TopologyAction([LineStatus("T1", True)]),
                                  grid)])
    full = rank_substations(db, _issue("M1"), grid, k=10)
    for k in range(1, 6):
        assert rank_substations(db, _issue("M1"), grid, k=k) == full[:k]


def test_rank_requires_positive_k():
    with pytest.raises(GridError):
        rank_substations(RemedialDB(), _issue("M1"), corridor_grid(), k=0)


# ---------------------------------------------------------------------------
# enumeration


def test_enumerate_three_lines_one_load():
    subs = tuple(Substation(s, base_kv=135.0) for s in ("X", "P", "Q", "R"))
    lines = tuple(Line(f"L{i}", "X", e, r=0.01, x=0.1, b=0.0, rating=50.0)
                  for i, e in enumerate(("P", "Q", "R")))
    gens = (Generator("G", "P", p_set=0.0, v_set=1.0, q_min=-50, q_max=50,
                      p_max=100, slack=True),)
    grid = Grid(substations=subs, lines=lines, generators=gens,
                loads=(Load("C", "X", p=10.0, q=2.0),))
    actions = enumerate_actions(grid, "X")
    assert len(actions) == 7  # 4 reassignments + 3 line toggles
    reassigns = [a for a in actions if isinstance(next(iter(a.changes)), Reassign)]
    toggles = [a for a in actions if isinstance(next(iter(a.changes)), LineStatus)]
    assert len(reassigns) == 4 and len(toggles) == 3
    assert actions == enumerate_actions(grid, "X")  # deterministic


def test_enumerate_split_substation_same_count():
    grid = corridor_grid()
    base = enumerate_actions(grid, "B1")
    from gridremedy.model import apply_action

    split = apply_action(grid, TopologyAction([Reassign("B1", "R1b", 2)]))
    assert len(enumerate_actions(split, "B1")) == len(base)


def test_enumerate_case30_counts(case30):
    for sub in ("B6", "B12", "B27"):
        d = sum(1 for l in case30.lines if sub in (l.from_sub, l.to_sub))
        g = sum(1 for x in case30.generators if x.substation == sub)
        g += sum(1 for x in case30.loads if x.substation == sub)
        assert len(enumerate_actions(case30, sub)) == d + (d + g)


def test_enumerate_availability_mask():
    grid = corridor_grid()
    all_actions = enumerate_actions(grid, "B1")
    masked = enumerate_actions(grid, "B1", available=frozenset({"R1a"}))
    assert len(masked) < len(all_actions)
    for a in masked:
        for c in a.changes:
            assert (c.line if isinstance(c, LineStatus) else c.elem) == "R1a"


def test_enumerate_unknown_substation():
    with pytest.raises(NoSuchSubstation):
        enumerate_actions(corridor_grid(), "nope")


# ---------------------------------------------------------------------------
# validation


def test_validate_planted_cure():
    grid = heavy(corridor_grid(), 1.28)
    v = validate_action(grid, TopologyAction([LineStatus("T1", True)]),
                        _issue("M1"))
    assert v.status == "validated"
    assert all(i.line_id != "M1" for i in v.post_issues)
    # the untouched parallel corridor M2 stays stressed; only M1 is cured
    assert {i.line_id for i in v.post_issues} == {"M2"}


def test_validate_rejects_islanding_cure():
    # opening the overloaded line trivially removes the issue but cuts supply
    grid = heavy(corridor_grid(), 1.28)
    v = validate_action(grid, TopologyAction([LineStatus("M1", False)]),
                        _issue("M1"))
    assert v.status == "rejected"
    assert v.reason == "disconnects elements"


def test_validate_rejects_uncured():
    grid = heavy(corridor_grid(), 1.28)
    v = validate_action(grid, TopologyAction([Reassign("B1", "R1b", 2)]),
                        _issue("M1"))
    assert v.status == "rejected"
    assert v.reason == "issue not cured"


def test_validate_rejects_new_overload():
    # curing M by shifting everything onto a weaker parallel line
    subs = (Substation("S0", base_kv=135.0), Substation("A1", base_kv=135.0))
    lines = (
        Line("M", "S0", "A1", r=0.01, x=0.10, b=0.0, rating=60.0),
        Line("W", "S0", "A1", r=0.01, x=0.05, b=0.0, rating=30.0,
             in_service=False),
    )
    gens = (Generator("G0", "S0", p_set=0.0, v_set=1.02, q_min=-500,
                      q_max=500, p_max=1000, slack=True),)
    grid = Grid(substations=subs, lines=lines, generators=gens,
                loads=(Load("C", "A1", p=58.0, q=11.0),))
    v = validate_action(grid, TopologyAction([LineStatus("W", True)]),
                        _issue("M"))
    assert v.status == "rejected"
    assert v.reason == "new issues introduced"
    assert any(i.line_id == "W" for i in v.post_issues)


def test_validate_no_op_keeps_issue_set():
    grid = heavy(corridor_grid(), 1.28)
    # toggling an out-of-service maintenance circuit barely changes flows
    v = validate_action(grid, TopologyAction([LineStatus("R1b", False)]),
                        _issue("M1"))
    assert v.status == "rejected"
    assert v.reason == "issue not cured"


def test_validate_optional_n_minus_1():
    grid = heavy(corridor_grid(), 1.28)
    v = validate_action(grid, TopologyAction([LineStatus("T1", True)]),
                        _issue("M1"), check_n_minus_1=True, solver=solve_dc)
    assert v.solver_calls > 1


# ---------------------------------------------------------------------------
# advise


def test_advise_secure_grid():
    res = advise(heavy(corridor_grid(), 0.6))
    assert res.secure
    assert res.recommendations == [] and res.tested == []


def test_advise_finds_planted_cures():
    grid, snaps, truths = mining_fixture(days=1, solver=solve_dc)
    db = mine(snaps, WindowSet((60, 240)), solver=solve_dc)
    stressed = heavy(grid, 1.28)
    res = advise(stressed, db=db, opts=AdviseOptions(k=2, budget=60))
    assert not res.secure
    actions = {r.action.fingerprint() for r in res.recommendations}
    planted = {t.event.action.fingerprint() for t in truths
               if t.event.kind == "protective"}
    assert planted <= actions
    assert res.recommendations[0].rank == 1
    assert res.recommendations[0].cost == 1.0


def test_advise_cost_order_and_scaling():
    grid = two_tie_grid()
    cm = CostModel(multipliers=(("A1", 2.0),))
    opts = AdviseOptions(k=2, budget=40)
    res = advise(grid, cost_model=cm, opts=opts)
    acts = [r.action for r in res.recommendations]
    assert TopologyAction([LineStatus("Ta", True)]) in acts
    assert TopologyAction([LineStatus("Tb", True)]) in acts
    assert res.recommendations[0].action == TopologyAction([LineStatus("Ta", True)])
    assert res.recommendations[0].cost < res.recommendations[1].cost
    scaled = advise(grid, cost_model=CostModel(t_switch=7.0,
                                               multipliers=(("A1", 2.0),)),
                    opts=opts)
    assert [r.action for r in scaled.recommendations] == acts


def test_advise_deterministic():
    grid = two_tie_grid()
    opts = AdviseOptions(k=2, budget=40)
    r1, r2 = advise(grid, opts=opts), advise(grid, opts=opts)
    assert [x.action for x in r1.recommendations] == \
           [x.action for x in r2.recommendations]
    assert [t.action for t in r1.tested] == [t.action for t in r2.tested]


def test_advise_monotone_k():
    grid = two_tie_grid()
    per_k = {}
    for k in (1, 2, 3):
        res = advise(grid, opts=AdviseOptions(k=k, budget=100))
        per_k[k] = {r.action.fingerprint() for r in res.recommendations}
    assert per_k[1] <= per_k[2] <= per_k[3]


def test_advise_budget_exhaustion():
    grid = heavy(corridor_grid(), 1.28)
    res = advise(grid, opts=AdviseOptions(k=2, budget=1))
    assert res.budget_exhausted
    # island rejections are graph checks and free; at most one solve is spent
    spent = [t for t in res.tested if t.outcome != "disconnects elements"]
    assert len(spent) <= 1


def test_advise_no_candidate_branch():
    # stressed grid whose only relief actions are masked as unavailable
    grid = two_tie_grid()
    res = advise(grid, opts=AdviseOptions(k=2, budget=40,
                                          available=frozenset({"CA1"})))
    assert not res.secure
    assert res.recommendations == []
    assert not res.budget_exhausted


def test_advise_revalidation_invariant():
    grid = two_tie_grid()
    res = advise(grid, opts=AdviseOptions(k=2, budget=40))
    crit = SecurityCriterion()
    from gridremedy.model import apply_action
    from gridremedy.powerflow import issue_keys, security_check

    pre = issue_keys(res.issues)
    for rec in res.recommendations:
        fixed = apply_action(grid, rec.action)
        sol = solve_ac(fixed)
        post = issue_keys(security_check(fixed, crit, sol))
        assert ("thermal", "M1") not in post
        assert post <= pre
