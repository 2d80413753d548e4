"""JSON-over-HTTP operator service.

One session per process: a base grid, an optional surrogate model and mined
remedial database, plus a reversible stack of applied topology actions.
What-if exploration answers from the fast path and never mutates the session;
applying an action always runs the reference AC solve.  Advice streams one
record per validated candidate and can be stopped mid-search.
"""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass, field
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse

from . import __version__
from .advisor import AdviseOptions, CostModel, advise
from .caseio import ARCHIVE_VERSION, action_from_json, action_to_json
from .mining import REMEDIAL_DB_VERSION, RemedialDB
from .model import (
    Grid,
    GridError,
    TopologyAction,
    apply_action,
    topology_fingerprint,
)
from .powerflow import (
    SecurityCriterion,
    Solver,
    n_minus_1,
    security_check,
    solve_ac,
    solve_dc,
)
from .scenarios import DATASET_VERSION
from .surrogate import (
    MODEL_VERSION,
    MultipleOutages,
    SurrogateModel,
    fast_n_minus_1,
    predict_grid,
)


@dataclass
class Session:
    base_grid: Grid
    criterion: SecurityCriterion = SecurityCriterion()
    model: Optional[SurrogateModel] = None
    db: RemedialDB = field(default_factory=RemedialDB)
    cost_model: CostModel = CostModel()
    solver: Solver = solve_ac
    overlay: list[TopologyAction] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)
    advise_active: bool = False
    stop_event: threading.Event = field(default_factory=threading.Event)
    advise_runs: int = 0

    def grid(self) -> Grid:
        g = self.base_grid
        for action in self.overlay:
            g = apply_action(g, action)
        return g


def _issue_json(i) -> dict:
    return {"kind": i.kind, "line": i.line_id, "flow_mva": i.flow_mva,
            "limit_mva": i.limit_mva, "ratio": i.ratio}


def _flows_json(grid: Grid, sol) -> dict:
    return {
        l.id: {"f_mw": sol.f_mw.get(l.id), "apparent_mva": sol.apparent_mva.get(l.id),
               "loading": (sol.apparent_mva.get(l.id, 0.0) / l.rating
                           if l.rating else None)}
        for l in grid.lines if l.in_service
    }


def _parse_action(body) -> TopologyAction:
    if not isinstance(body, dict) or "changes" not in body:
        raise GridError("body must be an action object with 'changes'")
    return action_from_json(body)


def _error(status: int, kind: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error": kind, "message": message})


def _fast_prediction(session: Session, grid: Grid) -> tuple[dict, list, str]:
    """Predicted flows and issues without a reference solve."""
    if session.model is not None:
        try:
            pred = predict_grid(session.model, grid)
            lines = {l.id: l for l in grid.lines}
            flows, issues = {}, []
            for lid, f in pred.f_mw.items():
                if not lines[lid].in_service:
                    continue
                apparent = abs(f)
                flows[lid] = {"f_mw": f, "apparent_mva": apparent,
                              "loading": apparent / lines[lid].rating}
                if apparent / lines[lid].rating > session.criterion.threshold:
                    issues.append({"kind": "thermal", "line": lid,
                                   "flow_mva": apparent,
                                   "limit_mva": lines[lid].rating,
                                   "ratio": apparent / lines[lid].rating})
            return flows, issues, "surrogate"
        except (MultipleOutages, GridError):
            pass
    sol = solve_dc(grid)
    issues = [_issue_json(i)
              for i in security_check(grid, session.criterion, sol)]
    return _flows_json(grid, sol), issues, "dc"


def create_app(session: Session) -> FastAPI:
    app = FastAPI(title="gridremedy", version=__version__)

    @app.get("/version")
    def version():
        return {
            "service": __version__,
            "schemas": {"archive": ARCHIVE_VERSION,
                        "remedial_db": REMEDIAL_DB_VERSION,
                        "dataset": DATASET_VERSION,
                        "model": MODEL_VERSION},
        }

    @app.get("/grid")
    def grid():
        g = session.grid()
        sol = session.solver(g)
        return {
            "substations": [s.id for s in g.substations],
            "lines": [
                {"id": l.id, "from": l.from_sub, "to": l.to_sub,
                 "in_service": l.in_service, "rating": l.rating}
                for l in g.lines
            ],
            "generators": [
                {"id": x.id, "substation": x.substation, "p_set": x.p_set,
                 "in_service": x.in_service} for x in g.generators
            ],
            "loads": [
                {"id": x.id, "substation": x.substation, "p": x.p, "q": x.q}
                for x in g.loads
            ],
            "overlay_depth": len(session.overlay),
            "fingerprint": [list(e) for e in topology_fingerprint(g)],
            "converged": sol.converged,
            "flows": _flows_json(g, sol) if sol.converged else {},
        }

    @app.get("/security")
    def security():
        g = session.grid()
        sol = session.solver(g)
        issues = security_check(g, session.criterion, sol)
        return {"converged": sol.converged,
                "issues": [_issue_json(i) for i in issues]}

    @app.get("/screen")
    def screen(margin: float = 0.05):
        g = session.grid()
        if session.model is not None:
            try:
                rep = fast_n_minus_1(session.model, g, session.criterion,
                                     margin=margin)
                return {
                    "method": "surrogate",
                    "base_issues": [_issue_json(i) for i in rep.base_issues],
                    "flagged": {lid: [_issue_json(i) for i in issues]
                                for lid, issues in sorted(rep.flagged.items())},
                }
            except (MultipleOutages, GridError):
                pass
        rep = n_minus_1(g, session.criterion, solver=solve_dc)
        return {
            "method": "dc",
            "base_issues": [_issue_json(i) for i in rep.base_issues],
            "flagged": {lid: [_issue_json(i) for i in issues]
                        for lid, issues in sorted(rep.issues.items()) if issues},
        }

    @app.post("/whatif")
    async def whatif(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _error(400, "malformed", "body is not valid JSON")
        try:
            action = _parse_action(body)
            g = apply_action(session.grid(), action)
        except GridError as exc:
            return _error(400, "malformed_action", str(exc))
        try:
            flows, issues, method = _fast_prediction(session, g)
        except GridError as exc:
            return _error(422, "divergence", str(exc))
        return {"predicted": True, "method": method,
                "flows": flows, "issues": issues}

    @app.post("/apply")
    async def apply(request: Request):
        if session.advise_active:
            return _error(409, "advise_running",
                          "stop the advice search before mutating the session")
        try:
            body = await request.json()
        except Exception:
            return _error(400, "malformed", "body is not valid JSON")
        with session.lock:
            try:
                action = _parse_action(body)
                g = apply_action(session.grid(), action)
            except GridError as exc:
                return _error(400, "malformed_action", str(exc))
            sol = session.solver(g)
            if not sol.converged:
                return _error(422, "divergence",
                              f"load flow diverged after {sol.iterations} "
                              f"iterations (max mismatch {sol.max_mismatch})")
            session.overlay.append(action)
            issues = security_check(g, session.criterion, sol)
            return {"applied": action_to_json(action),
                    "overlay_depth": len(session.overlay),
                    "issues": [_issue_json(i) for i in issues],
                    "flows": _flows_json(g, sol)}

    @app.post("/revert")
    def revert():
        if session.advise_active:
            return _error(409, "advise_running",
                          "stop the advice search before mutating the session")
        with session.lock:
            if not session.overlay:
                return _error(400, "empty_overlay", "nothing to revert")
            reverted = session.overlay.pop()
            g = session.grid()
            return {"reverted": action_to_json(reverted),
                    "overlay_depth": len(session.overlay),
                    "fingerprint": [list(e) for e in topology_fingerprint(g)]}

    @app.get("/advise")
    def advise_stream(k: int = 3, budget: int = 50):
        if session.advise_active:
            return _error(409, "advise_running",
                          "an advice search is already running")
        session.advise_active = True
        session.stop_event.clear()
        session.advise_runs += 1
        run = session.advise_runs
        g = session.grid()
        q: queue.Queue = queue.Queue()

        def on_validated(action, sub, verdict):
            q.put({"kind": "candidate", "status": "validated",
                   "action": action_to_json(action), "substation": sub,
                   "cost": session.cost_model.cost(action, g),
                   "max_loading": verdict.max_loading,
                   "validated_issues": [_issue_json(i)
                                        for i in verdict.post_issues]})

        def work():
            try:
                result = advise(
                    g, session.criterion, session.model, session.db,
                    session.cost_model,
                    AdviseOptions(k=k, budget=budget),
                    solver=session.solver,
                    on_validated=on_validated,
                    should_stop=session.stop_event.is_set,
                )
                for t in result.tested:
                    session.log.append({"run": run,
                                        "action": action_to_json(t.action),
                                        "substation": t.substation,
                                        "outcome": t.outcome})
                q.put({"kind": "done", "secure": result.secure,
                       "stopped": result.stopped,
                       "budget_exhausted": result.budget_exhausted,
                       "recommendations": len(result.recommendations),
                       "ranking": [action_to_json(r.action)
                                   for r in result.recommendations]})
            except Exception as exc:  # report instead of hanging the stream
                q.put({"kind": "error", "message": str(exc)})
            finally:
                q.put(None)

        thread = threading.Thread(target=work, daemon=True)
        thread.start()

        def stream():
            try:
                while True:
                    item = q.get()
                    if item is None:
                        break
                    yield json.dumps(item) + "\n"
            finally:
                session.stop_event.set()
                thread.join(timeout=30)
                session.advise_active = False

        return StreamingResponse(stream(), media_type="application/x-ndjson")

    @app.post("/advise/stop")
    def advise_stop():
        session.stop_event.set()
        return {"stopping": session.advise_active,
                "tested": [e for e in session.log
                           if e["run"] == session.advise_runs]}

    @app.get("/log")
    def log():
        return {"tested": session.log}

    return app
