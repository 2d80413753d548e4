"""Command-line entry points for the full pipeline.

Every stage is one subcommand with explicit input/output paths; shared
defaults (criterion, windows, sampler, training, costs) come from an
optional YAML config, and --seed pins every random stream.  Data problems
exit 1 with one JSON error record on stderr; usage problems exit 2.
"""

from __future__ import annotations

import functools
import json
import sys
import time
from pathlib import Path

import click
import yaml

from .advisor import AdviseOptions, CostModel, advise
from .caseio import (
    action_to_json,
    ensure_ratings,
    load_builtin_case,
    parse_case,
    read_archive,
    write_archive,
)
from .mining import WindowSet, mine, write_remedial_db
from .model import GridError
from .powerflow import SecurityCriterion, n_minus_1, solve_ac, solve_dc
from .scenarios import (
    SamplingConfig,
    build_dataset,
    corridor_grid,
    load_dataset,
    mining_fixture,
    save_dataset,
)
from .surrogate import (
    TrainConfig,
    evaluate,
    fast_n_minus_1,
    load_model,
    save_model,
    train as train_model,
)

BUILTINS = ("case30", "case118", "corridor")
SPLITS = {"train": 0, "valid": 1, "test": 2}


def _fail(exc: Exception) -> None:
    record = {"error": type(exc).__name__, "message": str(exc)}
    click.echo(json.dumps(record), err=True)
    sys.exit(1)


def data_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (GridError, OSError, ValueError, KeyError) as exc:
            _fail(exc)
    return wrapper


def _load_config(path):
    if path is None:
        return {}
    cfg = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(cfg, dict):
        raise GridError("config file must hold a key-value mapping")
    return cfg


def _criterion(cfg) -> SecurityCriterion:
    c = cfg.get("criterion", {})
    return SecurityCriterion(threshold=float(c.get("threshold", 0.95)))


def _windows(cfg, spec: str) -> WindowSet:
    if spec != "default":
        return WindowSet(tuple(int(v) for v in spec.split(",")))
    if "windows" in cfg:
        return WindowSet(tuple(int(v) for v in cfg["windows"]))
    return WindowSet.default()


def _sampler(cfg, seed, n_s) -> SamplingConfig:
    s = dict(cfg.get("sampler", {}))
    if n_s is not None:
        s["n_s"] = n_s
    s.setdefault("seed", seed)
    return SamplingConfig(**s)


def _trainer(cfg, seed) -> TrainConfig:
    t = dict(cfg.get("training", {}))
    if "hidden_sizes" in t:
        t["hidden_sizes"] = tuple(int(v) for v in t["hidden_sizes"])
    t.setdefault("seed", seed)
    return TrainConfig(**t)


def _costs(cfg) -> CostModel:
    c = cfg.get("cost", {})
    return CostModel(
        t_switch=float(c.get("t_switch", 1.0)),
        multipliers=tuple(sorted((str(k), float(v))
                                 for k, v in c.get("multipliers", {}).items())),
    )


def _load_grid(case, builtin):
    if (case is None) == (builtin is None):
        raise click.UsageError("provide exactly one of --case or --builtin")
    if case is not None:
        grid = parse_case(Path(case).read_text())
    elif builtin == "corridor":
        grid = corridor_grid()
    else:
        grid = load_builtin_case(builtin)
    return ensure_ratings(grid)


def grid_options(fn):
    fn = click.option("--case", type=click.Path(exists=True),
                      help="MATPOWER case file")(fn)
    fn = click.option("--builtin", type=click.Choice(BUILTINS),
                      help="bundled grid")(fn)
    return fn


@click.group()
@click.option("--seed", type=int, default=0, show_default=True,
              help="seed for every random stream")
@click.option("--config", type=click.Path(exists=True),
              help="YAML file with shared defaults")
@click.pass_context
def main(ctx, seed, config):
    """Remedial-action toolkit: solvers, mining, surrogate, advisor."""
    ctx.ensure_object(dict)
    ctx.obj["seed"] = seed
    try:
        ctx.obj["cfg"] = _load_config(config)
    except (GridError, OSError, yaml.YAMLError) as exc:
        _fail(exc)


@main.command()
@click.argument("case_path", type=click.Path(exists=True))
@data_errors
def parse(case_path):
    """Parse a case file and print a summary."""
    grid = parse_case(Path(case_path).read_text())
    click.echo(f"{len(grid.substations)} buses, {len(grid.lines)} lines, "
               f"{len(grid.generators)} generators, {len(grid.loads)} loads, "
               f"base {grid.base_mva:g} MVA")


@main.command("synth-history")
@click.argument("out", type=click.Path())
@click.option("--days", type=int, default=7, show_default=True)
@click.option("--corridors", type=int, default=2, show_default=True)
@click.option("--truths", type=click.Path(), help="write ground truth JSON here")
@click.option("--dc", is_flag=True, help="verify events with the linear solver")
@click.pass_context
@data_errors
def synth_history_cmd(ctx, out, days, corridors, truths, dc):
    """Generate a synthetic snapshot archive with planted switchings."""
    solver = solve_dc if dc else solve_ac
    _, snaps, truth = mining_fixture(days=days, seed=ctx.obj["seed"],
                                     n_corridors=corridors, solver=solver)
    with open(out, "w") as fh:
        write_archive(snaps, fh)
    if truths:
        payload = [
            {"time": t.event.time, "kind": t.event.kind,
             "action": action_to_json(t.event.action),
             "cured_line": t.cured_line, "overload_time": t.overload_time}
            for t in truth
        ]
        Path(truths).write_text(json.dumps(payload, indent=2))
    click.echo(f"{len(snaps)} snapshots, {len(truth)} events -> {out}")


@main.command("mine")
@click.argument("archive", type=click.Path(exists=True))
@click.option("-o", "--out", type=click.Path(), required=True)
@grid_options
@click.option("--windows", default="default", show_default=True,
              help="'default' or comma-separated minute offsets")
@click.option("--dc", is_flag=True, help="replay with the linear solver")
@click.pass_context
@data_errors
def mine_cmd(ctx, archive, out, case, builtin, windows, dc):
    """Mine curative switchings from a snapshot archive."""
    cfg = ctx.obj["cfg"]
    grid = _load_grid(case, builtin)
    with open(archive) as fh:
        snaps = list(read_archive(fh, grid))
    db = mine(snaps, _windows(cfg, windows), _criterion(cfg),
              solver=solve_dc if dc else solve_ac)
    with open(out, "w") as fh:
        write_remedial_db(db, fh)
    width = max(len(label) for label, _ in db.stats.rows())
    for label, count in db.stats.rows():
        click.echo(f"{label:<{width}}  {count}")
    click.echo(f"{len(db)} records -> {out}")


@main.command("gen-dataset")
@click.option("-o", "--out", type=click.Path(), required=True)
@grid_options
@click.option("--n-s", type=int, default=None,
              help="samples per outage configuration")
@click.option("--dc", is_flag=True, help="label with the linear solver")
@click.pass_context
@data_errors
def gen_dataset(ctx, out, case, builtin, n_s, dc):
    """Sample grid states and label them with the reference solver."""
    cfg = ctx.obj["cfg"]
    grid = _load_grid(case, builtin)
    ds = build_dataset(grid, _sampler(cfg, ctx.obj["seed"], n_s),
                       solver=solve_dc if dc else solve_ac)
    save_dataset(ds, out)
    click.echo(f"{len(ds)} labeled cases ({ds.divergent} divergent) -> {out}")


@main.command("train")
@click.argument("dataset", type=click.Path(exists=True))
@click.option("-o", "--out", type=click.Path(), required=True)
@click.pass_context
@data_errors
def train_cmd(ctx, dataset, out):
    """Train the load-flow surrogate on a labeled dataset."""
    ds = load_dataset(dataset)
    model = train_model(ds, _trainer(ctx.obj["cfg"], ctx.obj["seed"]))
    save_model(model, out)
    click.echo(f"trained {model.meta['epochs']} epochs, "
               f"best validation loss {model.meta['val_loss']:.3e} -> {out}")


BLOCK_LABELS = (("load_v", "c_V"), ("gen_q", "p_q"),
                ("f_a", "f_A"), ("f_mw", "f_MW"))


@main.command("eval")
@click.argument("model_path", type=click.Path(exists=True))
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--split", type=click.Choice(sorted(SPLITS)), default="test",
              show_default=True)
@data_errors
def eval_cmd(model_path, dataset, split):
    """Report per-variable MAE and MAPE of a model on one dataset split."""
    model = load_model(model_path)
    report = evaluate(model, load_dataset(dataset), split=SPLITS[split])
    click.echo(f"{'variable':<10}{'MAE':>12}{'MAPE':>10}{'excluded':>10}")
    for key, label in BLOCK_LABELS:
        r = report[key]
        click.echo(f"{label:<10}{r['mae']:>12.4f}{r['mape']:>9.2%}"
                   f"{r['mape_excluded']:>10}")


@main.command("screen")
@click.argument("model_path", type=click.Path(exists=True))
@grid_options
@click.option("--margin", type=float, default=0.05, show_default=True)
@click.pass_context
@data_errors
def screen_cmd(ctx, model_path, case, builtin, margin):
    """Fast surrogate screening of every single-line outage."""
    grid = _load_grid(case, builtin)
    model = load_model(model_path)
    rep = fast_n_minus_1(model, grid, _criterion(ctx.obj["cfg"]), margin=margin)
    click.echo(json.dumps({
        "base_issues": [i.line_id for i in rep.base_issues],
        "flagged": {lid: [i.line_id for i in issues]
                    for lid, issues in sorted(rep.flagged.items())},
    }))


@main.command("advise")
@grid_options
@click.option("--model", "model_path", type=click.Path(exists=True))
@click.option("--db", "db_path", type=click.Path(exists=True))
@click.option("--k", type=int, default=3, show_default=True)
@click.option("--budget", type=int, default=50, show_default=True)
@click.pass_context
@data_errors
def advise_cmd(ctx, case, builtin, model_path, db_path, k, budget):
    """Propose validated topology actions for the grid's current issues."""
    from .mining import RemedialDB, read_remedial_db

    cfg = ctx.obj["cfg"]
    grid = _load_grid(case, builtin)
    model = load_model(model_path) if model_path else None
    if db_path:
        with open(db_path) as fh:
            db = read_remedial_db(fh)
    else:
        db = RemedialDB()
    a = dict(cfg.get("advise", {}))
    res = advise(grid, _criterion(cfg), model, db, _costs(cfg),
                 AdviseOptions(k=k, budget=budget,
                               validate_n_minus_1=bool(
                                   a.get("validate_n_minus_1", False))))
    for rec in res.recommendations:
        click.echo(json.dumps({
            "rank": rec.rank, "substation": rec.substation, "cost": rec.cost,
            "max_loading": rec.max_loading,
            "action": action_to_json(rec.action),
        }))
    click.echo(json.dumps({
        "secure": res.secure, "recommendations": len(res.recommendations),
        "tested": len(res.tested), "budget_exhausted": res.budget_exhausted,
    }))


@main.command("bench")
@click.argument("model_path", type=click.Path(exists=True))
@grid_options
@click.pass_context
@data_errors
def bench_cmd(ctx, model_path, case, builtin):
    """Compare full AC contingency analysis with the surrogate screen."""
    grid = _load_grid(case, builtin)
    model = load_model(model_path)
    criterion = _criterion(ctx.obj["cfg"])
    fast_n_minus_1(model, grid, criterion)  # warm up
    t0 = time.perf_counter()
    n_minus_1(grid, criterion, solver=solve_ac)
    t_ref = time.perf_counter() - t0
    t0 = time.perf_counter()
    fast_n_minus_1(model, grid, criterion)
    t_fast = time.perf_counter() - t0
    click.echo(json.dumps({
        "reference_s": round(t_ref, 4), "surrogate_s": round(t_fast, 4),
        "speedup": round(t_ref / t_fast, 1),
    }))


@main.command("serve")
@grid_options
@click.option("--model", "model_path", type=click.Path(exists=True))
@click.option("--db", "db_path", type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.pass_context
@data_errors
def serve_cmd(ctx, case, builtin, model_path, db_path, host, port):
    """Run the operator HTTP service on one grid session."""
    import uvicorn

    from .mining import RemedialDB, read_remedial_db
    from .service import Session, create_app

    cfg = ctx.obj["cfg"]
    grid = _load_grid(case, builtin)
    model = load_model(model_path) if model_path else None
    if db_path:
        with open(db_path) as fh:
            db = read_remedial_db(fh)
    else:
        db = RemedialDB()
    session = Session(base_grid=grid, criterion=_criterion(cfg), model=model,
                      db=db, cost_model=_costs(cfg))
    uvicorn.run(create_app(session), host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
