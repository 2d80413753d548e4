"""Synthetic data factory.

Two producers:

- the load/production sampling workflow that labels grid states with a
  reference AC solve, for surrogate training;
- synthetic snapshot archives with planted protective and maintenance
  switchings, used as a ground-truth oracle for the history miner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from typing import Optional, Sequence

import numpy as np

from .model import (
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
    apply_action,
)
from .powerflow import SecurityCriterion, Solver, security_check, solve_ac

DATASET_VERSION = 1
TS_FMT = "%Y-%m-%dT%H:%M:%SZ"


class AllGeneratorsOut(GridError):
    pass


class DegenerateConfig(GridError):
    pass


class UnplantableEvent(GridError):
    pass


@dataclass(frozen=True)
class SamplingConfig:
    n_s: int = 10  # samples per outage configuration
    pq_ratio_mean: float = 0.2
    pq_ratio_sd: float = 0.05
    pq_ratio_bounds: tuple[float, float] = (0.0, 0.5)
    gen_outage_prob: float = 0.05
    noise_rel: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_s < 1:
            raise GridError("n_s must be >= 1")
        if not (0.0 <= self.gen_outage_prob < 1.0):
            raise GridError("gen_outage_prob must be in [0, 1)")
        if self.noise_rel < 0:
            raise GridError("noise_rel must be >= 0")


def load_profile(hour: float, weekday: int) -> float:
    """Relative demand over the day: morning and evening peaks, quieter weekends."""
    morning = 0.78 * math.exp(-(((hour - 8.5) / 2.0) ** 2))
    evening = 0.80 * math.exp(-(((hour - 18.5) / 2.2) ** 2))
    shape = 0.50 + morning + evening
    if weekday >= 5:
        shape *= 0.85
    return shape


def profile_at(ts: datetime) -> float:
    return load_profile(ts.hour + ts.minute / 60.0, ts.weekday())


def _truncated_normal(rng, mean, sd, lo, hi, size):
    out = rng.normal(mean, sd, size=size)
    for _ in range(100):
        bad = (out < lo) | (out > hi)
        if not bad.any():
            break
        out[bad] = rng.normal(mean, sd, size=int(bad.sum()))
    return np.clip(out, lo, hi)


def _dispatch(gens: Sequence[Generator], alive: np.ndarray, total_mw: float,
              noise: np.ndarray) -> np.ndarray:
    """Proportional-to-Pmax dispatch of the surviving units, noise then clip,
    renormalized so the dispatched total still covers the load."""
    pmax = np.array([g.p_max for g in gens])
    p = np.zeros(len(gens))
    cap = pmax * alive
    if cap.sum() <= 0:
        raise AllGeneratorsOut("no surviving capacity")
    p[alive] = total_mw * (pmax[alive] / cap.sum()) * (1.0 + noise[alive])
    p = np.clip(p, 0.0, pmax)
    for _ in range(5):
        deficit = total_mw - p[alive].sum()
        if abs(deficit) < 1e-9:
            break
        headroom = (pmax - p) * alive if deficit > 0 else (p * alive)
        room = headroom.sum()
        if room <= 0:
            break
        p += headroom * (deficit / room)
        p = np.clip(p, 0.0, pmax)
    return p


def sample_case(grid: Grid, outage: Optional[int], config: SamplingConfig,
                rng: np.random.Generator) -> Grid:
    """One plausible grid state: random demand level, reactive ratios and
    unit commitment; production voltage setpoints are left untouched."""
    if outage is not None:
        if not (0 <= outage < len(grid.lines)):
            raise GridError(f"outage index {outage} out of range")
        grid = apply_action(
            grid, TopologyAction([LineStatus(grid.lines[outage].id, False)])
        )

    hour = rng.uniform(0.0, 24.0)
    weekday = int(rng.integers(0, 7))
    level = load_profile(hour, weekday)
    n_load = len(grid.loads)
    p_noise = np.exp(rng.normal(0.0, config.noise_rel, size=n_load))
    ratios = _truncated_normal(
        rng, config.pq_ratio_mean, config.pq_ratio_sd,
        *config.pq_ratio_bounds, size=n_load,
    )
    loads = tuple(
        replace(l, p=l.p * level * p_noise[i], q=l.p * level * p_noise[i] * ratios[i])
        for i, l in enumerate(grid.loads)
    )
    total = sum(l.p for l in loads)

    gens = grid.generators
    for _ in range(50):
        alive = rng.random(len(gens)) >= config.gen_outage_prob
        for i, g in enumerate(gens):
            if g.slack:
                alive[i] = True  # the slack always survives
        if (np.array([g.p_max for g in gens]) * alive).sum() >= 1e-9:
            break
    else:
        raise AllGeneratorsOut("could not sample a surviving commitment")

    g_noise = rng.normal(0.0, config.noise_rel, size=len(gens))
    p = _dispatch(gens, alive, total, g_noise)
    new_gens = tuple(
        replace(g, p_set=float(p[i]), in_service=bool(alive[i]))
        for i, g in enumerate(gens)
    )
    return replace(grid, loads=loads, generators=new_gens)


# ---------------------------------------------------------------------------
# Labeled dataset


@dataclass
class Dataset:
    """Column-blocked table of labeled cases; ids fix the column order."""

    load_ids: tuple[str, ...]
    gen_ids: tuple[str, ...]
    line_ids: tuple[str, ...]
    load_p: np.ndarray  # (n, n_load) MW
    load_q: np.ndarray
    gen_p: np.ndarray  # (n, n_gen) MW, 0 when out
    gen_v: np.ndarray  # pu setpoints
    gen_on: np.ndarray  # bool
    outage_index: np.ndarray  # (n,) int, 0 = intact, k = line_ids[k-1] out
    gen_q: np.ndarray  # targets
    load_v: np.ndarray
    f_mw: np.ndarray
    f_a: np.ndarray
    split: np.ndarray  # (n,) int8: 0 train, 1 valid, 2 test
    divergent: int = 0

    def __len__(self):
        return len(self.outage_index)

    def rows(self, split: Optional[int] = None) -> np.ndarray:
        if split is None:
            return np.arange(len(self))
        return np.flatnonzero(self.split == split)


def save_dataset(ds: Dataset, path) -> None:
    np.savez_compressed(
        path,
        version=DATASET_VERSION,
        load_ids=np.array(ds.load_ids),
        gen_ids=np.array(ds.gen_ids),
        line_ids=np.array(ds.line_ids),
        load_p=ds.load_p, load_q=ds.load_q, gen_p=ds.gen_p, gen_v=ds.gen_v,
        gen_on=ds.gen_on, outage_index=ds.outage_index,
        gen_q=ds.gen_q, load_v=ds.load_v, f_mw=ds.f_mw, f_a=ds.f_a,
        split=ds.split, divergent=ds.divergent,
    )


def load_dataset(path) -> Dataset:
    with np.load(path, allow_pickle=False) as z:
        if int(z["version"]) != DATASET_VERSION:
            raise GridError(f"unsupported dataset version {z['version']}")
        return Dataset(
            load_ids=tuple(str(s) for s in z["load_ids"]),
            gen_ids=tuple(str(s) for s in z["gen_ids"]),
            line_ids=tuple(str(s) for s in z["line_ids"]),
            load_p=z["load_p"], load_q=z["load_q"], gen_p=z["gen_p"],
            gen_v=z["gen_v"], gen_on=z["gen_on"],
            outage_index=z["outage_index"],
            gen_q=z["gen_q"], load_v=z["load_v"], f_mw=z["f_mw"], f_a=z["f_a"],
            split=z["split"], divergent=int(z["divergent"]),
        )


def build_dataset(grid: Grid, config: SamplingConfig,
                  solver: Solver = solve_ac) -> Dataset:
    """One intact configuration plus one per line outage, n_s samples each;
    only converged solves are kept as labeled cases."""
    load_ids = tuple(sorted(l.id for l in grid.loads))
    gen_ids = tuple(sorted(g.id for g in grid.generators))
    line_ids = tuple(sorted((l.id for l in grid.lines),
                            key=lambda s: (len(s), s)))
    line_pos = {lid: k for k, lid in enumerate(line_ids)}
    outages = [None] + [i for i in range(len(grid.lines))]

    rows = {k: [] for k in ("load_p", "load_q", "gen_p", "gen_v", "gen_on",
                            "outage_index", "gen_q", "load_v", "f_mw", "f_a")}
    divergent = 0
    for cfg_idx, outage in enumerate(outages):
        cfg_div = 0
        for s in range(config.n_s):
            rng = np.random.default_rng([config.seed, cfg_idx, s])
            case = sample_case(grid, outage, config, rng)
            sol = solver(case)
            if not sol.converged:
                cfg_div += 1
                divergent += 1
                continue
            loads = {l.id: l for l in case.loads}
            gens = {g.id: g for g in case.generators}
            rows["load_p"].append([loads[i].p for i in load_ids])
            rows["load_q"].append([loads[i].q for i in load_ids])
            rows["gen_p"].append([gens[i].p_set if gens[i].in_service else 0.0
                                  for i in gen_ids])
            rows["gen_v"].append([gens[i].v_set for i in gen_ids])
            rows["gen_on"].append([gens[i].in_service for i in gen_ids])
            rows["outage_index"].append(
                0 if outage is None else line_pos[grid.lines[outage].id] + 1)
            rows["gen_q"].append([sol.gen_q.get(i, 0.0) for i in gen_ids])
            rows["load_v"].append([sol.load_v.get(i, 0.0) for i in load_ids])
            rows["f_mw"].append([sol.f_mw.get(i, 0.0) for i in line_ids])
            rows["f_a"].append([sol.f_a.get(i, 0.0) for i in line_ids])
        if cfg_div > config.n_s // 2:
            raise DegenerateConfig(
                f"outage {outage}: {cfg_div}/{config.n_s} samples diverged")

    n = len(rows["outage_index"])
    order = np.random.default_rng([config.seed, 999_983]).permutation(n)
    split = np.empty(n, dtype=np.int8)
    n_train = round(n * 0.5)
    n_valid = round(n * 0.25)
    split[order[:n_train]] = 0
    split[order[n_train:n_train + n_valid]] = 1
    split[order[n_train + n_valid:]] = 2

    return Dataset(
        load_ids=load_ids, gen_ids=gen_ids, line_ids=line_ids,
        load_p=np.array(rows["load_p"]), load_q=np.array(rows["load_q"]),
        gen_p=np.array(rows["gen_p"]), gen_v=np.array(rows["gen_v"]),
        gen_on=np.array(rows["gen_on"], dtype=bool),
        outage_index=np.array(rows["outage_index"], dtype=np.int64),
        gen_q=np.array(rows["gen_q"]), load_v=np.array(rows["load_v"]),
        f_mw=np.array(rows["f_mw"]), f_a=np.array(rows["f_a"]),
        split=split, divergent=divergent,
    )


# ---------------------------------------------------------------------------
# Synthetic histories with planted events


@dataclass(frozen=True)
class PlantedEvent:
    time: str  # ISO timestamp, on the 5-minute raster
    action: TopologyAction
    kind: str  # "protective" | "maintenance"


@dataclass(frozen=True)
class PlantedTruth:
    event: PlantedEvent
    cured_line: Optional[str]  # line whose overload the action prevents
    overload_time: Optional[str]


def synth_history(
    grid: Grid,
    days: int,
    planted_events: Sequence[PlantedEvent],
    seed: int = 0,
    start: datetime = datetime(2012, 1, 2),  # a Monday
    criterion: SecurityCriterion = SecurityCriterion(),
    solver: Solver = solve_ac,
    noise_rel: float = 0.01,
) -> tuple[list[Snapshot], list[PlantedTruth]]:
    """5-minute snapshots over `days` with a smooth daily demand shape and the
    given switchings applied at their times.  Every protective event is
    verified to prevent a future overload; otherwise UnplantableEvent."""
    events = sorted(planted_events, key=lambda e: e.time)
    n = days * 24 * 12
    stamps = [start + i * timedelta(minutes=5) for i in range(n)]

    def injections_at(i: int) -> Grid:
        ts = stamps[i]
        level = profile_at(ts)
        wiggle = np.exp(np.random.default_rng([seed, i]).normal(
            0.0, noise_rel, size=len(grid.loads)))
        loads = tuple(
            replace(l, p=l.p * level * wiggle[k], q=l.q * level * wiggle[k])
            for k, l in enumerate(grid.loads)
        )
        total = sum(l.p for l in loads)
        pmax_sum = sum(g.p_max for g in grid.generators)
        gens = tuple(replace(g, p_set=total * g.p_max / pmax_sum)
                     for g in grid.generators)
        return replace(grid, loads=loads, generators=gens)

    # topology timeline
    topo = grid
    topo_at: list[Grid] = []
    ev_i = 0
    topo_before_event: dict[int, Grid] = {}
    for i, ts in enumerate(stamps):
        label = ts.strftime(TS_FMT)
        while ev_i < len(events) and events[ev_i].time <= label:
            topo_before_event[ev_i] = topo
            topo = apply_action(topo, events[ev_i].action)
            ev_i += 1
        topo_at.append(topo)

    snapshots = []
    for i in range(n):
        inj = injections_at(i)
        g = replace(
            topo_at[i],
            loads=inj.loads,
            generators=tuple(
                replace(g0, p_set=g1.p_set)
                for g0, g1 in zip(topo_at[i].generators, inj.generators)
            ),
        )
        snapshots.append(Snapshot(timestamp=stamps[i].strftime(TS_FMT), grid=g))

    # verify protective events against the worst load within the next day
    truths = []
    for k, ev in enumerate(events):
        if ev.kind != "protective":
            truths.append(PlantedTruth(ev, None, None))
            continue
        before = topo_before_event.get(k, grid)
        ev_dt = datetime.strptime(ev.time, TS_FMT)
        horizon = [i for i, ts in enumerate(stamps)
                   if ev_dt < ts <= ev_dt + timedelta(hours=24)]
        cured = None
        when = None
        for i in sorted(horizon, key=lambda i: -profile_at(stamps[i]))[:12]:
            inj = injections_at(i)
            counterfactual = replace(before, loads=inj.loads,
                                     generators=inj.generators)
            issues = security_check(counterfactual, criterion,
                                    solver(counterfactual))
            if not issues:
                continue
            fixed = apply_action(counterfactual, ev.action)
            after = {s.key for s in
                     security_check(fixed, criterion, solver(fixed))}
            for s in issues:
                if s.key not in after:
                    cured = s.line_id
                    when = stamps[i].strftime(TS_FMT)
                    break
            if cured:
                break
        if cured is None:
            raise UnplantableEvent(
                f"protective event at {ev.time} cures no future overload")
        truths.append(PlantedTruth(ev, cured, when))
    return snapshots, truths


# ---------------------------------------------------------------------------
# Ready-made mining fixture


def corridor_grid(n_corridors: int = 2, n_maintenance: int = 1) -> Grid:
    """Star grid: per corridor a limited main line plus a normally-open tie,
    and redundant double-circuit maintenance areas that never stress."""
    subs = [Substation("S0", base_kv=135.0)]
    lines: list[Line] = []
    loads: list[Load] = []
    for i in range(1, n_corridors + 1):
        subs.append(Substation(f"A{i}", base_kv=135.0))
        lines.append(Line(f"M{i}", "S0", f"A{i}", r=0.01, x=0.10, b=0.0,
                          rating=60.0))
        lines.append(Line(f"T{i}", "S0", f"A{i}", r=0.01, x=0.10, b=0.0,
                          rating=60.0, in_service=False))
        loads.append(Load(f"CA{i}", f"A{i}", p=45.0, q=9.0))
    for j in range(1, n_maintenance + 1):
        subs.append(Substation(f"B{j}", base_kv=135.0))
        lines.append(Line(f"R{j}a", "S0", f"B{j}", r=0.01, x=0.08, b=0.0,
                          rating=100.0))
        lines.append(Line(f"R{j}b", "S0", f"B{j}", r=0.01, x=0.08, b=0.0,
                          rating=100.0))
        loads.append(Load(f"CB{j}", f"B{j}", p=10.0, q=2.0))
    gens = (Generator("G0", "S0", p_set=0.0, v_set=1.02, q_min=-500.0,
                      q_max=500.0, p_max=1000.0, slack=True),)
    return Grid(substations=tuple(subs), lines=tuple(lines), generators=gens,
                loads=tuple(loads))


def plan_week_events(grid: Grid, days: int = 7,
                     start: datetime = datetime(2012, 1, 2)) -> list[PlantedEvent]:
    """Tie closures ahead of each weekday peak (protective), reopenings after,
    and daily benign switchings in the maintenance areas."""
    corridors = sorted({l.id[1:] for l in grid.lines if l.id.startswith("M")})
    areas = sorted({l.id[1:-1] for l in grid.lines if l.id.startswith("R")})
    events: list[PlantedEvent] = []

    def at(day, hh, mm):
        return (start + timedelta(days=day, hours=hh, minutes=mm)).strftime(TS_FMT)

    for day in range(days):
        weekend = (start + timedelta(days=day)).weekday() >= 5
        for c in corridors:
            if not weekend:
                # close the tie before each peak, reopen once demand falls off
                events.append(PlantedEvent(at(day, 7, 0),
                                           TopologyAction([LineStatus(f"T{c}", True)]),
                                           "protective"))
                events.append(PlantedEvent(at(day, 11, 30),
                                           TopologyAction([LineStatus(f"T{c}", False)]),
                                           "restoration"))
                events.append(PlantedEvent(at(day, 16, 30),
                                           TopologyAction([LineStatus(f"T{c}", True)]),
                                           "protective"))
                events.append(PlantedEvent(at(day, 22, 30),
                                           TopologyAction([LineStatus(f"T{c}", False)]),
                                           "restoration"))
        for a in areas:
            events.append(PlantedEvent(at(day, 2, 0),
                                       TopologyAction([LineStatus(f"R{a}b", False)]),
                                       "maintenance"))
            events.append(PlantedEvent(at(day, 5, 0),
                                       TopologyAction([LineStatus(f"R{a}b", True)]),
                                       "maintenance"))
            events.append(PlantedEvent(
                at(day, 13, 0),
                TopologyAction([Reassign(f"B{a}", f"R{a}b", 2 if day % 2 == 0 else 1)]),
                "maintenance"))
    return events


def mining_fixture(days: int = 7, seed: int = 0, n_corridors: int = 2,
                   solver: Solver = solve_ac):
    """Grid + synthetic archive + ground truth for miner recall checks."""
    grid = corridor_grid(n_corridors=n_corridors)
    events = plan_week_events(grid, days=days)
    snapshots, truths = synth_history(grid, days, events, seed=seed, solver=solver)
    return grid, snapshots, truths
