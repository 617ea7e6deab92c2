"""Session-oriented HTTP service: the interactive interface to the game.

Sessions persist as append-only move logs plus a small JSON manifest; replaying
the log reproduces the exact program, so state survives restarts and exports
are portable. One writer per session; long searches run as background jobs
polled for trace rows.
"""

from __future__ import annotations

import difflib
import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path as FsPath

from fastapi import FastAPI, HTTPException
from fastapi.responses import HTMLResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import codegen, search as search_mod
from .cost import cost
from .ir import IrError, Leaf, Node, Program, Scope
from .kernels import kernel_names, load_kernel, presets
from .machine import DEFAULT_MACHINE, MachineConfig
from .passes import greedy_pass, heuristic_pass, naive_pass
from .text import format_extent, format_operation, print_program
from .transforms import History, Move, apply_move, enumerate_moves, replay

_PASSES = {"naive": naive_pass, "greedy": greedy_pass, "heuristic": heuristic_pass}


def tree_json(nodes: tuple[Node, ...]) -> list[dict]:
    out = []
    for n in nodes:
        if isinstance(n, Scope):
            out.append({
                "kind": "scope",
                "extent": format_extent(n.extent),
                "suffix": n.suffix,
                "children": tree_json(n.children),
            })
        else:
            assert isinstance(n, Leaf)
            out.append({"kind": "op", "text": format_operation(n.op)})
    return out


@dataclass
class SearchJob:
    id: str
    done: bool = False
    error: str | None = None
    rows: list[dict] = field(default_factory=list)
    best_moves: list[str] = field(default_factory=list)


@dataclass
class Session:
    id: str
    kernel: str
    preset: str
    history: History
    programs: list[Program]
    created: float
    updated: float
    lock: threading.Lock = field(default_factory=threading.Lock)
    jobs: dict[str, SearchJob] = field(default_factory=dict)


class SessionStore:
    def __init__(self, directory: str, machine: MachineConfig):
        self.dir = FsPath(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.machine = machine
        self.sessions: dict[str, Session] = {}
        self._load_existing()

    # -- persistence --------------------------------------------------------- #

    def _manifest_path(self, sid: str) -> FsPath:
        return self.dir / f"{sid}.json"

    def _log_path(self, sid: str) -> FsPath:
        return self.dir / f"{sid}.log"

    def _load_existing(self):
        for mf in sorted(self.dir.glob("*.json")):
            try:
                meta = json.loads(mf.read_text())
                sid = meta["id"]
                moves = self._read_log(sid)
                bundle = load_kernel(meta["kernel"], meta["preset"])
                programs = replay(bundle.program, moves, self.machine)
                self.sessions[sid] = Session(
                    id=sid, kernel=meta["kernel"], preset=meta["preset"],
                    history=History(bundle.program, tuple(moves)),
                    programs=programs,
                    created=meta.get("created", 0.0), updated=meta.get("updated", 0.0),
                )
            except Exception as e:  # noqa: BLE001
                print(f"warning: could not restore session from {mf}: {e}")

    def _read_log(self, sid: str) -> list[Move]:
        moves: list[Move] = []
        path = self._log_path(sid)
        if not path.exists():
            return moves
        for line in path.read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("undo"):
                    k = int(body.split()[1])
                    moves = moves[: len(moves) - k]
                continue
            moves.append(Move.parse(line))
        return moves

    def _append_log(self, sid: str, text: str):
        with open(self._log_path(sid), "a") as f:
            f.write(text + "\n")

    def _write_manifest(self, s: Session):
        self._manifest_path(s.id).write_text(json.dumps({
            "id": s.id, "kernel": s.kernel, "preset": s.preset,
            "created": s.created, "updated": s.updated,
        }, indent=2))

    # -- operations ------------------------------------------------------------ #

    def create(self, kernel: str, preset: str, moves: list[Move] | None = None) -> Session:
        bundle = load_kernel(kernel, preset)
        sid = uuid.uuid4().hex[:12]
        programs = replay(bundle.program, moves or [], self.machine)
        now = time.time()
        s = Session(sid, kernel, preset, History(bundle.program, tuple(moves or [])),
                    programs, now, now)
        self.sessions[sid] = s
        self._log_path(sid).write_text("".join(m.line() + "\n" for m in (moves or [])))
        self._write_manifest(s)
        return s

    def get(self, sid: str) -> Session:
        s = self.sessions.get(sid)
        if s is None:
            raise HTTPException(404, f"unknown session {sid}")
        return s

    def apply(self, s: Session, move: Move) -> Program:
        program = apply_move(s.programs[-1], move, self.machine)
        s.history = s.history.extended(move)
        s.programs.append(program)
        s.updated = time.time()
        self._append_log(s.id, move.line())
        self._write_manifest(s)
        return program

    def undo(self, s: Session, count: int):
        count = min(count, len(s.history.moves))
        if count <= 0:
            return
        s.history = s.history.truncated(len(s.history.moves) - count)
        s.programs = s.programs[: len(s.history.moves) + 1]
        s.updated = time.time()
        self._append_log(s.id, f"# undo {count}")
        self._write_manifest(s)


class CreateRequest(BaseModel):
    kernel: str
    preset: str = "desk"


class MoveRequest(BaseModel):
    move: str


class UndoRequest(BaseModel):
    count: int = 1


class PassRequest(BaseModel):
    name: str


class SearchRequest(BaseModel):
    method: str = "anneal"
    space: str = "heuristic"
    budget: int = 100
    seed: int = 0


class ImportRequest(BaseModel):
    kernel: str
    preset: str = "desk"
    log: str


def create_app(sessions_dir: str = "./sessions", ui_dir: str | None = None,
               machine: MachineConfig = DEFAULT_MACHINE) -> FastAPI:
    app = FastAPI(title="loopgym session service")
    store = SessionStore(sessions_dir, machine)

    def cost_row(p: Program) -> dict:
        r = cost(p, machine=machine)
        return {
            "scalar_ops": r.scalar_ops, "memory_traffic": r.memory_traffic,
            "loop_overhead": r.loop_overhead, "modeled_cost": r.modeled_cost,
        }

    def moves_json(p: Program) -> list[dict]:
        return [
            {"transform": m.transform, "site": m.site.text(),
             "params": list(m.params), "move": m.line()}
            for m in enumerate_moves(p, machine)
        ]

    def state_json(s: Session, with_moves: bool = True) -> dict:
        p = s.programs[-1]
        data = {
            "id": s.id, "kernel": s.kernel, "preset": s.preset,
            "moves_applied": [m.line() for m in s.history.moves],
            "program_text": print_program(p),
            "tree": tree_json(p.body),
            "costs": [cost_row(pr) for pr in s.programs],
            "created": s.created, "updated": s.updated,
        }
        if with_moves:
            data["applicable_moves"] = moves_json(p)
        return data

    @app.get("/api/kernels")
    def api_kernels():
        return [{"name": n, "presets": presets(n)} for n in kernel_names()]

    @app.get("/api/sessions")
    def api_sessions():
        return [
            {"id": s.id, "kernel": s.kernel, "preset": s.preset,
             "moves": len(s.history.moves), "updated": s.updated}
            for s in store.sessions.values()
        ]

    @app.post("/api/sessions")
    def api_create(req: CreateRequest):
        try:
            s = store.create(req.kernel, req.preset)
        except IrError as e:
            raise HTTPException(422, str(e)) from e
        return state_json(s)

    @app.get("/api/sessions/{sid}")
    def api_get(sid: str):
        return state_json(store.get(sid))

    @app.get("/api/sessions/{sid}/moves")
    def api_moves(sid: str):
        s = store.get(sid)
        return moves_json(s.programs[-1])

    @app.post("/api/sessions/{sid}/moves")
    def api_apply(sid: str, req: MoveRequest):
        s = store.get(sid)
        with s.lock:
            before = print_program(s.programs[-1])
            try:
                move = Move.parse(req.move)
                program = store.apply(s, move)
            except IrError as e:
                raise HTTPException(409, detail={
                    "error": str(e),
                    "alternatives": moves_json(s.programs[-1]),
                }) from e
            after = print_program(program)
            diff = "".join(difflib.unified_diff(
                before.splitlines(keepends=True), after.splitlines(keepends=True),
                fromfile="before", tofile="after",
            ))
            data = state_json(s)
            data["diff"] = diff
            return data

    @app.post("/api/sessions/{sid}/undo")
    def api_undo(sid: str, req: UndoRequest):
        s = store.get(sid)
        with s.lock:
            store.undo(s, req.count)
            return state_json(s)

    @app.post("/api/sessions/{sid}/pass")
    def api_pass(sid: str, req: PassRequest):
        s = store.get(sid)
        if req.name not in _PASSES:
            raise HTTPException(422, f"unknown pass {req.name!r}")
        with s.lock:
            h = _PASSES[req.name](s.programs[-1], machine)
            for m in h.moves:
                store.apply(s, m)
            return state_json(s)

    @app.post("/api/sessions/{sid}/search")
    def api_search(sid: str, req: SearchRequest):
        s = store.get(sid)
        if req.method not in ("sample", "anneal"):
            raise HTTPException(422, f"unknown method {req.method!r}")
        if req.space not in ("edges", "heuristic"):
            raise HTTPException(422, f"unknown space {req.space!r}")
        job = SearchJob(id=uuid.uuid4().hex[:8])
        s.jobs[job.id] = job
        program = s.programs[-1]

        def run():
            try:
                fn = (search_mod.sample_search if req.method == "sample"
                      else search_mod.anneal_search)
                result = fn(program, req.budget, seed=req.seed, space=req.space,
                            machine=machine)
                job.rows = [
                    {"evaluation": r.index, "cost": r.cost, "best": r.best,
                     "moves": r.moves}
                    for r in result.trace
                ]
                job.best_moves = [m.line() for m in result.best.history.moves]
            except Exception as e:  # noqa: BLE001
                job.error = str(e)
            finally:
                job.done = True

        threading.Thread(target=run, daemon=True).start()
        return {"job": job.id}

    @app.get("/api/sessions/{sid}/search/{job_id}")
    def api_search_poll(sid: str, job_id: str):
        s = store.get(sid)
        job = s.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id}")
        return {"done": job.done, "error": job.error, "rows": job.rows,
                "best_moves": job.best_moves}

    @app.get("/api/sessions/{sid}/code")
    def api_code(sid: str):
        s = store.get(sid)
        try:
            res = codegen.emit(s.programs[-1])
        except codegen.UnsupportedBackendError as e:
            raise HTTPException(400, str(e)) from e
        return {"source": res.source, "signature": res.signature}

    @app.get("/api/sessions/{sid}/export", response_class=PlainTextResponse)
    def api_export(sid: str):
        s = store.get(sid)
        header = f"# kernel: {s.kernel}\n# preset: {s.preset}\n"
        return header + "".join(m.line() + "\n" for m in s.history.moves)

    @app.post("/api/sessions/import")
    def api_import(req: ImportRequest):
        moves = [
            Move.parse(line.strip())
            for line in req.log.splitlines()
            if line.strip() and not line.strip().startswith("#")
        ]
        try:
            s = store.create(req.kernel, req.preset, moves)
        except IrError as e:
            raise HTTPException(409, str(e)) from e
        return state_json(s)

    if ui_dir and FsPath(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    else:
        @app.get("/", response_class=HTMLResponse)
        def index():
            return "<h1>loopgym session service</h1><p>API under /api; no UI bundle configured.</p>"

    return app
