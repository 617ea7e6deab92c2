"""Batch command-line entry points.

Every subcommand accepts --seed and prints it, so any randomized run can be
reproduced exactly. Exit code 0 means no invariant violations. Machine-readable
output via --format csv|json.
"""

from __future__ import annotations

import json
import sys

import click
import numpy as np

from . import codegen, fuzz as fuzz_mod, interp, kernels, search as search_mod
from .agent import AgentConfig, train_kernel
from .cost import cost
from .ir import validate as validate_program
from .machine import DEFAULT_MACHINE, MachineConfig
from .passes import greedy_pass, heuristic_pass, naive_pass
from .text import print_program
from .transforms import Move, replay

_PASSES = {"naive": naive_pass, "greedy": greedy_pass, "heuristic": heuristic_pass}


def _machine(path: str | None) -> MachineConfig:
    return MachineConfig.load(path) if path else DEFAULT_MACHINE


def _echo_seed(seed: int):
    click.echo(f"seed: {seed}")


def _emit_rows(rows: list[dict], fmt: str, header: list[str]):
    if fmt == "json":
        click.echo(json.dumps(rows, indent=2))
    else:
        click.echo(",".join(header))
        for r in rows:
            click.echo(",".join(str(r[h]) for h in header))


@click.group()
def main():
    """Loop-nest optimization toolkit."""


@main.command()
@click.option("--kernels", "names", default="all", help="comma list or 'all'")
@click.option("--preset", default="desk")
@click.option("--seed", default=0, type=int)
@click.option("--format", "fmt", default="csv", type=click.Choice(["csv", "json"]))
def validate(names, preset, seed, fmt):
    """Validate corpus programs and their oracles."""
    _echo_seed(seed)
    rows = []
    failed = False
    for name in _kernel_list(names):
        bundle = kernels.load_kernel(name, preset)
        problems = validate_program(bundle.program)
        try:
            err = kernels.check_oracle(bundle, trials=2, seed=seed)
            oracle = "ok"
        except AssertionError as e:
            oracle, err = f"fail: {e}", float("nan")
            failed = True
        if problems:
            failed = True
        rows.append({
            "kernel": name, "violations": len(problems),
            "oracle": oracle, "max_err": f"{err:.3e}",
        })
    _emit_rows(rows, fmt, ["kernel", "violations", "oracle", "max_err"])
    sys.exit(1 if failed else 0)


@main.command()
@click.option("--kernels", "names", default="all")
@click.option("--sequences", default=200, type=int)
@click.option("--max-len", default=20, type=int)
@click.option("--trials", default=3, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--per-step", is_flag=True, help="check equivalence after every move")
@click.option("--preset", default="desk")
@click.option("--machine", "machine_path", default=None, type=click.Path(exists=True))
def fuzz(names, sequences, max_len, trials, seed, per_step, preset, machine_path):
    """Random move sequences; zero equivalence failures required."""
    _echo_seed(seed)
    report = fuzz_mod.fuzz_corpus(
        kernels=_kernel_list(names), sequences=sequences, max_len=max_len,
        trials=trials, seed=seed, machine=_machine(machine_path),
        per_step=per_step, preset=preset,
        progress=lambda n, r: click.echo(
            f"  {n}: sequences={r.sequences} moves={r.moves_applied} "
            f"violations={len(r.violations)}"),
    )
    click.echo(report.summary())
    for v in report.violations:
        click.echo(f"VIOLATION {v.kernel} seq {v.sequence}: {v.detail}")
        for line in v.moves:
            click.echo(f"  {line}")
    sys.exit(0 if report.ok else 1)


@main.command()
@click.argument("kernel")
@click.option("--pass", "pass_name", default="heuristic",
              type=click.Choice(sorted(_PASSES)))
@click.option("--preset", default="desk")
@click.option("--seed", default=0, type=int)
@click.option("--format", "fmt", default="csv", type=click.Choice(["csv", "json"]))
@click.option("--machine", "machine_path", default=None, type=click.Path(exists=True))
@click.option("--out", default=None, type=click.Path(), help="write the move log here")
def optimize(kernel, pass_name, preset, seed, fmt, machine_path, out):
    """Run a one-shot pass and report the move log and cost delta."""
    _echo_seed(seed)
    machine = _machine(machine_path)
    bundle = kernels.load_kernel(kernel, preset)
    h = _PASSES[pass_name](bundle.program, machine)
    programs = replay(h.root, h.moves, machine)
    before = cost(programs[0], machine=machine).modeled_cost
    after = cost(programs[-1], machine=machine).modeled_cost
    rows = [{"move": m.line(), "cost": cost(programs[i + 1], machine=machine).modeled_cost}
            for i, m in enumerate(h.moves)]
    _emit_rows(rows, fmt, ["move", "cost"])
    click.echo(f"modeled cost: {before:.1f} -> {after:.1f} "
               f"({(1 - after / before) * 100:.1f}% lower)" if before else "empty")
    if out:
        with open(out, "w") as f:
            f.writelines(m.line() + "\n" for m in h.moves)
        click.echo(f"move log written to {out}")


@main.command()
@click.argument("kernel")
@click.option("--method", default="anneal", type=click.Choice(["sample", "anneal"]))
@click.option("--space", default="heuristic", type=click.Choice(["edges", "heuristic"]))
@click.option("--budget", default=200, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--preset", default="desk")
@click.option("--format", "fmt", default="csv", type=click.Choice(["csv", "json"]))
@click.option("--machine", "machine_path", default=None, type=click.Path(exists=True))
@click.option("--trace-out", default=None, type=click.Path())
def search(kernel, method, space, budget, seed, preset, fmt, machine_path, trace_out):
    """Iterative search; emits the evaluation trace for convergence plots."""
    _echo_seed(seed)
    machine = _machine(machine_path)
    bundle = kernels.load_kernel(kernel, preset)
    fn = search_mod.sample_search if method == "sample" else search_mod.anneal_search
    result = fn(bundle.program, budget, seed=seed, space=space, machine=machine)
    rows = [{"evaluation": r.index, "cost": r.cost, "best": r.best, "moves": r.moves}
            for r in result.trace]
    if trace_out:
        with open(trace_out, "w") as f:
            f.write("evaluation,cost,best,moves\n")
            f.writelines(r.csv() + "\n" for r in result.trace)
        click.echo(f"trace written to {trace_out}")
    else:
        _emit_rows(rows, fmt, ["evaluation", "cost", "best", "moves"])
    click.echo(f"best cost {result.best.cost:.1f} after {result.evaluations} evaluations")
    for m in result.best.history.moves:
        click.echo(f"  {m.line()}")


@main.command()
@click.argument("kernel")
@click.option("--episodes", default=200, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--preset", default="desk")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--machine", "machine_path", default=None, type=click.Path(exists=True))
@click.option("--curve-out", default=None, type=click.Path())
@click.option("--checkpoint", default=None, type=click.Path())
@click.option("--max-moves", default=30, type=int)
def train(kernel, episodes, seed, preset, config_path, machine_path, curve_out,
          checkpoint, max_moves):
    """Train the Max-Q agent on one kernel; writes the learning curve."""
    _echo_seed(seed)
    machine = _machine(machine_path)
    cfg = AgentConfig(seed=seed)
    if config_path:
        with open(config_path) as f:
            raw = json.load(f)
        raw.setdefault("seed", seed)
        cfg = AgentConfig.from_dict(raw)
    bundle = kernels.load_kernel(kernel, preset)
    result = train_kernel(bundle.program, episodes=episodes, config=cfg,
                          machine=machine, max_moves=max_moves)
    root_cost = cost(bundle.program, machine=machine).modeled_cost
    click.echo(f"best cost {result.best_cost:.1f} (root {root_cost:.1f}) "
               f"after {result.episodes} episodes")
    for m in result.best_history.moves:
        click.echo(f"  {m.line()}")
    if curve_out:
        with open(curve_out, "w") as f:
            f.write("episode,best_cost\n")
            f.writelines(f"{i},{c}\n" for i, c in enumerate(result.curve))
        click.echo(f"curve written to {curve_out}")
    if checkpoint:
        result.agent.policy.save(checkpoint)
        click.echo(f"checkpoint written to {checkpoint}")


@main.command()
@click.argument("kernel")
@click.option("--moves", "moves_path", default=None, type=click.Path(exists=True),
              help="move log to apply before emitting")
@click.option("--out", default=None, type=click.Path())
@click.option("--preset", default="desk")
@click.option("--seed", default=0, type=int)
def emit(kernel, moves_path, out, preset, seed):
    """Emit C99 source for a kernel (optionally after a move log)."""
    _echo_seed(seed)
    bundle = kernels.load_kernel(kernel, preset)
    program = bundle.program
    if moves_path:
        moves = _read_moves(moves_path)
        program = replay(program, moves)[-1]
    res = codegen.emit(program)
    if out:
        with open(out, "w") as f:
            f.write(res.source)
        click.echo(f"wrote {out} ({res.signature})")
    else:
        click.echo(res.source)


@main.command()
@click.argument("kernel")
@click.option("--preset", default="desk")
@click.option("--seed", default=0, type=int)
@click.option("--compare-backends", is_flag=True,
              help="time the compiled vs pure-Python executors")
@click.option("--native", is_flag=True, help="compile and time the emitted C")
@click.option("--moves", "moves_path", default=None, type=click.Path(exists=True))
@click.option("--repetitions", default=5, type=int)
@click.option("--warmups", default=2, type=int)
@click.option("--timeout", default=30.0, type=float)
@click.option("--compiler", default="cc")
def bench(kernel, preset, seed, compare_backends, native, moves_path,
          repetitions, warmups, timeout, compiler):
    """Measure interpreter backends and, optionally, the native path."""
    import time

    _echo_seed(seed)
    bundle = kernels.load_kernel(kernel, preset)
    program = bundle.program
    if moves_path:
        program = replay(program, _read_moves(moves_path))[-1]
    rng = np.random.default_rng(seed)
    env = bundle.env_gen(rng)

    if compare_backends or not native:
        from .lower import lower

        low = lower(program, env.dims)
        for name in interp.available_backends():
            times = []
            for _ in range(max(repetitions, 1)):
                t0 = time.perf_counter()
                interp.interpret(program, env, backend=name, lowered=low)
                times.append(time.perf_counter() - t0)
            click.echo(f"interpreter[{name}]: median {np.median(times) * 1e3:.3f} ms")
        if len(interp.available_backends()) == 2:
            a = interp.interpret(program, env, backend="python")
            b = interp.interpret(program, env, backend="compiled")
            same = all(np.allclose(a[k], b[k], rtol=1e-6, atol=1e-7) for k in a)
            click.echo(f"backends agree: {same}")

    if native:
        res = codegen.compile_and_run(program, env, compiler=compiler,
                                      repetitions=repetitions, warmups=warmups,
                                      timeout=timeout)
        ref = interp.interpret(program, env)
        worst = max(float(np.abs(res.outputs[k].astype(np.float64)
                                  - ref[k].astype(np.float64)).max()) for k in ref)
        click.echo(f"native: median {res.seconds * 1e3:.3f} ms, "
                   f"max |native - interpreter| = {worst:.3e}")


@main.command()
@click.argument("kernel")
@click.argument("moves_path", type=click.Path(exists=True))
@click.option("--preset", default="desk")
@click.option("--seed", default=0, type=int)
@click.option("--format", "fmt", default="csv", type=click.Choice(["csv", "json"]))
@click.option("--machine", "machine_path", default=None, type=click.Path(exists=True))
@click.option("--show-program/--no-show-program", default=True)
def replay_log(kernel, moves_path, preset, seed, fmt, machine_path, show_program):
    """Replay a move log; prints the final program and the cost timeline."""
    _echo_seed(seed)
    machine = _machine(machine_path)
    bundle = kernels.load_kernel(kernel, preset)
    moves = _read_moves(moves_path)
    programs = replay(bundle.program, moves, machine)
    rows = [{"step": i,
             "move": moves[i - 1].line() if i else "",
             "cost": cost(pr, machine=machine).modeled_cost}
            for i, pr in enumerate(programs)]
    _emit_rows(rows, fmt, ["step", "move", "cost"])
    if show_program:
        click.echo(print_program(programs[-1]), nl=False)


@main.command()
@click.option("--port", default=8000, type=int)
@click.option("--host", default="127.0.0.1")
@click.option("--sessions-dir", default="./sessions", type=click.Path())
@click.option("--ui-dir", default=None, type=click.Path())
@click.option("--provider", default="cost", type=click.Choice(["cost"]))
@click.option("--seed", default=0, type=int)
@click.option("--machine", "machine_path", default=None, type=click.Path(exists=True))
def serve(port, host, sessions_dir, ui_dir, provider, seed, machine_path):
    """Serve the interactive session API (and the UI bundle when present)."""
    import uvicorn

    from .service import create_app

    _echo_seed(seed)
    app = create_app(sessions_dir=sessions_dir, ui_dir=ui_dir,
                     machine=_machine(machine_path))
    uvicorn.run(app, host=host, port=port, log_level="warning")


main.add_command(replay_log, name="replay")


def _kernel_list(names: str) -> list[str]:
    if names == "all":
        return kernels.kernel_names()
    return [n.strip() for n in names.split(",") if n.strip()]


def _read_moves(path: str) -> list[Move]:
    moves = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line and not line.startswith("#"):
                moves.append(Move.parse(line))
    return moves


if __name__ == "__main__":
    main()
