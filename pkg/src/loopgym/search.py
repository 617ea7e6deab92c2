"""Iterative search over transformation sequences.

Two graph structures: `edges` grows a history one enumerated move at a time;
`heuristic` starts from the heuristic pass's complete sequence and rewrites
moves in place (parameter changes, suffix toggles, insertions, removals,
truncations). Two methods: cost-weighted global sampling, where a sequence's
cost is its parent's runtime, and simulated annealing on the program's own
runtime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cost import ModeledRuntime, RuntimeProvider
from .ir import Program
from .machine import DEFAULT_MACHINE, MachineConfig
from .passes import heuristic_pass
from .transforms import History, enumerate_moves, try_replay

_PARAM_DOMAINS = {"split_scope", "pad_dim", "set_suffix"}


@dataclass
class SearchNode:
    history: History
    program: Program
    cost: float
    parent_cost: float


@dataclass
class TraceRow:
    index: int
    cost: float
    best: float
    moves: int

    def csv(self) -> str:
        return f"{self.index},{self.cost},{self.best},{self.moves}"


@dataclass
class SearchResult:
    best: SearchNode
    trace: list[TraceRow]
    seed: int
    evaluations: int

    def evals_to_reach(self, threshold: float) -> int | None:
        for row in self.trace:
            if row.best <= threshold:
                return row.index + 1
        return None


class SearchSpace:
    mode = "abstract"

    def initial_candidates(self, p: Program) -> list[History]:
        return [History(p)]

    def neighbor(self, node: SearchNode, rng: np.random.Generator) -> History | None:
        raise NotImplementedError


class EdgesSpace(SearchSpace):
    """Neighbors are single-move extensions: the transformation graph's edges."""

    mode = "edges"

    def __init__(self, machine: MachineConfig = DEFAULT_MACHINE):
        self.machine = machine

    def neighbor(self, node, rng):
        moves = enumerate_moves(node.program, self.machine)
        if not moves:
            return None
        return node.history.extended(moves[rng.integers(len(moves))])


class HeuristicSpace(SearchSpace):
    """Neighbors rewrite a complete candidate sequence in place."""

    mode = "heuristic"

    def __init__(self, machine: MachineConfig = DEFAULT_MACHINE, attempts: int = 8):
        self.machine = machine
        self.attempts = attempts

    def initial_candidates(self, p):
        return [History(p), heuristic_pass(p, self.machine)]

    def neighbor(self, node, rng):
        for _ in range(self.attempts):
            h = self._mutate(node, rng)
            if h is None:
                continue
            programs, conflict = try_replay(h.root, h.moves, self.machine)
            if conflict is None:
                return h
        # Fall back to growing by one move so progress never stalls.
        return EdgesSpace(self.machine).neighbor(node, rng)

    def _mutate(self, node: SearchNode, rng) -> History | None:
        h = node.history
        kind = rng.integers(5)
        if kind == 0 and h.moves:  # change one move's parameter within its domain
            idx = [i for i, m in enumerate(h.moves) if m.transform in _PARAM_DOMAINS]
            if not idx:
                return None
            i = idx[rng.integers(len(idx))]
            programs, conflict = try_replay(h.root, h.moves[:i], self.machine)
            if conflict is not None:
                return None
            options = [
                m for m in enumerate_moves(programs[-1], self.machine)
                if m.transform == h.moves[i].transform and m.site == h.moves[i].site
                and m != h.moves[i]
            ]
            if not options:
                return None
            moves = list(h.moves)
            moves[i] = options[rng.integers(len(options))]
            return History(h.root, tuple(moves))
        if kind == 1 and h.moves:  # remove one move
            i = int(rng.integers(len(h.moves)))
            return History(h.root, h.moves[:i] + h.moves[i + 1:])
        if kind == 2 and h.moves:  # truncate the tail
            i = int(rng.integers(len(h.moves)))
            return History(h.root, h.moves[:i])
        if kind == 3:  # insert one hardware move at the end
            moves = enumerate_moves(node.program, self.machine)
            hw = [m for m in moves if self._is_hardware(m)]
            if not hw:
                return None
            return h.extended(hw[rng.integers(len(hw))])
        moves = enumerate_moves(node.program, self.machine)  # append any move
        if not moves:
            return None
        return h.extended(moves[rng.integers(len(moves))])

    def _is_hardware(self, m) -> bool:
        if m.transform == "set_suffix":
            return True
        spec = f"{m.transform}:{m.params[0]}" if m.params else m.transform
        return spec in self.machine.hardware_moves


def make_space(mode: str, machine: MachineConfig = DEFAULT_MACHINE) -> SearchSpace:
    if mode == "edges":
        return EdgesSpace(machine)
    if mode == "heuristic":
        return HeuristicSpace(machine)
    raise ValueError(f"unknown search space {mode!r}")


def _evaluate(h: History, machine, provider) -> SearchNode | None:
    programs, conflict = try_replay(h.root, h.moves, machine)
    if conflict is not None:
        return None
    program = programs[-1]
    return SearchNode(h, program, provider.runtime(program), 0.0)


def sample_search(
    p: Program,
    budget: int,
    seed: int = 0,
    space: str | SearchSpace = "edges",
    machine: MachineConfig = DEFAULT_MACHINE,
    provider: RuntimeProvider | None = None,
    beta: float = 1.0,
) -> SearchResult:
    """Global random sampling over all encountered programs, selection
    probability proportional to 1/parent-runtime."""
    provider = provider or ModeledRuntime(machine)
    sp = make_space(space, machine) if isinstance(space, str) else space
    rng = np.random.default_rng(seed)

    nodes: list[SearchNode] = []
    trace: list[TraceRow] = []
    best: SearchNode | None = None

    def record(node: SearchNode):
        nonlocal best
        if best is None or node.cost < best.cost:
            best = node
        nodes.append(node)
        trace.append(TraceRow(len(trace), node.cost, best.cost, len(node.history.moves)))

    for h in sp.initial_candidates(p):
        if len(trace) >= budget:
            break
        node = _evaluate(h, machine, provider)
        if node is not None:
            node.parent_cost = node.cost if not nodes else nodes[0].cost
            record(node)

    while len(trace) < budget and nodes:
        weights = np.array([(1.0 / n.parent_cost) ** beta for n in nodes])
        probs = weights / weights.sum()
        parent = nodes[rng.choice(len(nodes), p=probs)]
        h = sp.neighbor(parent, rng)
        if h is None:
            continue
        node = _evaluate(h, machine, provider)
        if node is None:
            continue
        node.parent_cost = parent.cost
        record(node)

    assert best is not None
    return SearchResult(best, trace, seed, len(trace))


@dataclass(frozen=True)
class AnnealSchedule:
    initial_fraction: float = 0.10  # T0 as a fraction of the root cost
    decay: float = 0.98             # geometric, per evaluation


def anneal_search(
    p: Program,
    budget: int,
    seed: int = 0,
    schedule: AnnealSchedule = AnnealSchedule(),
    space: str | SearchSpace = "heuristic",
    machine: MachineConfig = DEFAULT_MACHINE,
    provider: RuntimeProvider | None = None,
) -> SearchResult:
    """Simulated annealing with Metropolis acceptance on the program's runtime."""
    provider = provider or ModeledRuntime(machine)
    sp = make_space(space, machine) if isinstance(space, str) else space
    rng = np.random.default_rng(seed)

    trace: list[TraceRow] = []
    best: SearchNode | None = None
    current: SearchNode | None = None

    def record(node: SearchNode):
        nonlocal best
        if best is None or node.cost < best.cost:
            best = node
        trace.append(TraceRow(len(trace), node.cost, best.cost, len(node.history.moves)))

    for h in sp.initial_candidates(p):
        if len(trace) >= budget:
            break
        node = _evaluate(h, machine, provider)
        if node is not None:
            node.parent_cost = node.cost
            record(node)
            if current is None or node.cost < current.cost:
                current = node

    assert current is not None, "root program failed to evaluate"
    temperature = schedule.initial_fraction * trace[0].cost

    while len(trace) < budget:
        h = sp.neighbor(current, rng)
        if h is None:
            break
        node = _evaluate(h, machine, provider)
        if node is None:
            continue
        node.parent_cost = current.cost
        record(node)
        delta = node.cost - current.cost
        if delta <= 0 or (temperature > 0 and rng.random() < math.exp(-delta / temperature)):
            current = node
        temperature *= schedule.decay

    assert best is not None
    return SearchResult(best, trace, seed, len(trace))


def accept_probability(delta: float, temperature: float) -> float:
    """Metropolis rule: certain for improvements, exp(-delta/T) otherwise."""
    if delta <= 0:
        return 1.0
    if temperature <= 0:
        return 0.0
    return math.exp(-delta / temperature)
