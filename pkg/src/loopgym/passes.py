"""One-shot optimization passes: naive, greedy, and the tile-by-4 heuristic.

naive fuses scopes and reuses buffer dims until exhaustion. greedy follows it
with exhaustive application of the machine's hardware move set. heuristic
additionally tiles the outermost loop of each nest by 4, sinks the tile
innermost, and unrolls it.
"""

from __future__ import annotations

from .ir import Program, Scope, node_at
from .machine import DEFAULT_MACHINE, MachineConfig
from .transforms import (
    History, InapplicableMoveError, Move, apply_move, enumerate_moves,
    site_for_node,
)

_PASS_CAP = 1000  # safety valve for exhaustive loops


def _fixpoint(p: Program, machine: MachineConfig, pick) -> History:
    h = History(p)
    cur = p
    for _ in range(_PASS_CAP):
        move = pick(enumerate_moves(cur, machine))
        if move is None:
            return h
        cur = apply_move(cur, move, machine)
        h = h.extended(move)
    raise RuntimeError("pass did not reach a fixed point")


def naive_pass(p: Program, machine: MachineConfig = DEFAULT_MACHINE) -> History:
    """Merge scopes and reuse buffers as much as possible."""

    def pick(moves):
        for wanted in ("join_scopes", "reuse_dims"):
            for m in moves:
                if m.transform == wanted:
                    return m
        return None

    return _fixpoint(p, machine, pick)


def hardware_move(moves, machine: MachineConfig) -> Move | None:
    for spec in machine.hardware_moves:
        tid, _, param = spec.partition(":")
        for m in moves:
            if m.transform == tid and (not param or (m.params and m.params[0] == param)):
                return m
    return None


def _exhaust_hardware(h: History, cur: Program, machine: MachineConfig):
    for _ in range(_PASS_CAP):
        move = hardware_move(enumerate_moves(cur, machine), machine)
        if move is None:
            return h, cur
        cur = apply_move(cur, move, machine)
        h = h.extended(move)
    raise RuntimeError("hardware move set did not reach a fixed point")


def greedy_pass(p: Program, machine: MachineConfig = DEFAULT_MACHINE) -> History:
    """naive, then the configured hardware moves applied exhaustively."""
    h = naive_pass(p, machine)
    cur = _last(p, h, machine)
    h, _ = _exhaust_hardware(h, cur, machine)
    return h


def heuristic_pass(p: Program, machine: MachineConfig = DEFAULT_MACHINE, tile: int = 4) -> History:
    """Tile the outermost loop of each nest by 4, sink it innermost, unroll it.

    Runs after naive fusion; finishes with the greedy hardware moves. Nests
    whose outermost extent does not divide by the tile are left untouched.
    """
    h = naive_pass(p, machine)
    cur = _last(p, h, machine)
    dims = cur.dims()

    for root in range(len(cur.body)):
        nest = cur.body[root]
        if not isinstance(nest, Scope) or nest.suffix is not None:
            continue
        v = nest.extent.maybe_value(dims)
        if v is None or v <= tile or v % tile != 0:
            continue
        site = site_for_node(cur, (root,))
        if site is None:
            continue
        move = Move("split_scope", site, (str(tile),))
        try:
            cur = apply_move(cur, move, machine)
        except InapplicableMoveError:
            continue
        h = h.extended(move)
        tile_path = (root, 0)
        while True:
            node = node_at(cur, tile_path)
            assert isinstance(node, Scope)
            if len(node.children) != 1 or not isinstance(node.children[0], Scope):
                break
            site = site_for_node(cur, tile_path)
            move = Move("reorder_scopes", site, ())
            try:
                cur = apply_move(cur, move, machine)
            except InapplicableMoveError:
                break
            h = h.extended(move)
            tile_path = tile_path + (0,)
        site = site_for_node(cur, tile_path)
        move = Move("set_suffix", site, ("u",))
        try:
            cur = apply_move(cur, move, machine)
            h = h.extended(move)
        except InapplicableMoveError:
            pass

    h, _ = _exhaust_hardware(h, cur, machine)
    return h


def _last(root: Program, h: History, machine: MachineConfig) -> Program:
    from .transforms import replay

    return replay(root, h.moves, machine)[-1]
