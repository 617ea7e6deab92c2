"""Lowering: bind dimension symbols and flatten the tree into an execution tape.

The tape is a flat int64 instruction stream over one float64 storage block, the
single input format of both executor backends (compiled and pure Python).
Non-materialized buffer dims get stride 0, which is exactly their collapse to
extent 1. Accumulation outputs are zero-initialized by synthesized assignments
inserted before their reduction nest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import analysis
from .ir import (
    Access, Affine, FloatVal, IrError, Leaf, Node, Operation, Path, Program,
    Scope, iter_leaves,
)

OP_LOOP, OP_END, OP_EXEC = 1, 2, 3

FN_CODES = {
    None: 0, "add": 1, "sub": 2, "mul": 3, "div": 4, "max": 5, "min": 6,
    "exp": 7, "log": 8, "sqrt": 9, "abs": 10,
}
IN_MEM, IN_IMM, IN_IDX = 0, 1, 2
ROUND_NONE, ROUND_F32, ROUND_I32 = 0, 1, 2
_ROUND_OF_DTYPE = {"f64": ROUND_NONE, "f32": ROUND_F32, "i32": ROUND_I32}


@dataclass(frozen=True)
class BufInfo:
    name: str
    dtype: str
    offset: int
    size: int
    shape: tuple[int, ...]      # materialized extents (1 where collapsed)
    strides: tuple[int, ...]    # element strides; 0 on non-materialized dims
    arrays: tuple[str, ...]


@dataclass(frozen=True)
class LoopInfo:
    pos: int
    slot: int
    extent: int
    suffix: str | None
    path: Path


@dataclass(frozen=True)
class ExecInfo:
    pos: int
    implicit: bool
    leaf_path: Path | None


@dataclass
class Lowered:
    code: np.ndarray
    aff: np.ndarray
    aff_ptr: np.ndarray
    consts: np.ndarray
    n_slots: int
    storage_size: int
    buffers: list[BufInfo]
    buffer_index: dict[str, int]      # buffer name -> index
    array_buffer: dict[str, int]      # array name -> buffer index
    loops: list[LoopInfo] = field(default_factory=list)
    execs: list[ExecInfo] = field(default_factory=list)
    binding: dict[str, int] = field(default_factory=dict)

    def buffer_for_array(self, array: str) -> BufInfo:
        return self.buffers[self.array_buffer[array]]


def _buffer_layout(p: Program, dims: dict[str, int]):
    buffers: list[BufInfo] = []
    array_buffer: dict[str, int] = {}
    offset = 0
    for b in p.buffers:
        shape = []
        for d in b.dims:
            shape.append(d.extent.value(dims) if d.materialized else 1)
        strides = [0] * len(shape)
        acc = 1
        for k in range(len(shape) - 1, -1, -1):
            if b.dims[k].materialized:
                strides[k] = acc
                acc *= shape[k]
            else:
                strides[k] = 0
        size = acc
        info = BufInfo(b.name, b.dtype, offset, size, tuple(shape), tuple(strides), b.array_names())
        for a in info.arrays:
            array_buffer[a] = len(buffers)
        buffers.append(info)
        offset += size
    return buffers, array_buffer, offset


class _Lowerer:
    def __init__(self, p: Program, dims: dict[str, int]):
        self.p = p
        self.dims = dims
        self.code: list[int] = []
        self.aff: list[int] = []
        self.aff_ptr: list[int] = []
        self.aff_ids: dict[tuple, int] = {}
        self.consts: list[float] = []
        self.const_ids: dict[float, int] = {}
        self.loops: list[LoopInfo] = []
        self.execs: list[ExecInfo] = []
        self.n_slots = 0
        self.buffers, self.array_buffer, self.storage = _buffer_layout(p, dims)
        self.buffer_index = {b.name: i for i, b in enumerate(self.buffers)}
        self.zero_inserts = self._plan_zero_inserts()

    def _plan_zero_inserts(self) -> dict[Path, list[Operation]]:
        out: dict[Path, list[Operation]] = {}
        for leaf_path, leaf in iter_leaves(self.p):
            if not leaf.op.acc:
                continue
            top = analysis.reduction_chain_top(self.p, leaf_path)
            key = top if top is not None else leaf_path
            avail = len(key) - 1
            guards = tuple(
                g for g in leaf.op.guards if all(r < avail for r in g.expr.refs)
            )
            zero = Operation(leaf.op.output, False, None, (FloatVal(0.0),), guards)
            out.setdefault(key, []).append(zero)
        return out

    # -- affine folding ---------------------------------------------------- #

    def _fold(self, a: Affine, slots: list[int]) -> tuple[int, dict[int, int]]:
        base = 0
        coefs: dict[int, int] = {}
        for t in a.terms:
            w = t.coef
            for s in t.syms:
                if s not in self.dims:
                    raise IrError(f"unbound dimension symbol {s}", "unbound-dim")
                w *= self.dims[s]
            if t.ref is None:
                base += w
            else:
                slot = slots[t.ref]
                coefs[slot] = coefs.get(slot, 0) + w
        return base, {k: v for k, v in coefs.items() if v}

    def _aff_id(self, base: int, coefs: dict[int, int]) -> int:
        key = (base, tuple(sorted(coefs.items())))
        if key in self.aff_ids:
            return self.aff_ids[key]
        idx = len(self.aff_ptr)
        self.aff_ptr.append(len(self.aff))
        self.aff.append(base)
        self.aff.append(len(coefs))
        for slot, coef in sorted(coefs.items()):
            self.aff.extend((slot, coef))
        self.aff_ids[key] = idx
        return idx

    def _access_aff(self, access: Access, slots: list[int]) -> tuple[int, int]:
        bi = self.array_buffer.get(access.array)
        if bi is None:
            raise IrError(f"array {access.array} has no buffer", "unresolved-array")
        buf = self.buffers[bi]
        base = buf.offset
        coefs: dict[int, int] = {}
        for k, ix in enumerate(access.indices):
            stride = buf.strides[k]
            if stride == 0:
                continue
            b2, c2 = self._fold(ix, slots)
            base += stride * b2
            for slot, coef in c2.items():
                coefs[slot] = coefs.get(slot, 0) + stride * coef
        return bi, self._aff_id(base, {k: v for k, v in coefs.items() if v})

    def _const_id(self, v: float) -> int:
        if v not in self.const_ids:
            self.const_ids[v] = len(self.consts)
            self.consts.append(v)
        return self.const_ids[v]

    # -- emission ----------------------------------------------------------- #

    def emit_exec(self, op: Operation, slots: list[int], implicit: bool, leaf_path: Path | None):
        pos = len(self.code)
        out_bi, out_aff = self._access_aff(op.output, slots)
        round_mode = _ROUND_OF_DTYPE[self.buffers[out_bi].dtype]
        words = [OP_EXEC, 0, FN_CODES[op.fn], 1 if op.acc else 0, round_mode, out_bi, out_aff]
        words.append(len(op.guards))
        for g in op.guards:
            base, coefs = self._fold(g.expr, slots)
            bound = g.bound.evaluate(self.dims)
            words.extend((self._aff_id(base, coefs), bound))
        words.append(len(op.inputs))
        for v in op.inputs:
            if isinstance(v, Access):
                bi, aff = self._access_aff(v, slots)
                words.extend((IN_MEM, bi, aff))
            elif isinstance(v, FloatVal):
                words.extend((IN_IMM, self._const_id(v.value), 0))
            else:
                base, coefs = self._fold(v, slots)
                words.extend((IN_IDX, self._aff_id(base, coefs), 0))
        words[1] = pos + len(words)
        self.code.extend(words)
        self.execs.append(ExecInfo(pos, implicit, leaf_path))

    def emit_nodes(self, nodes: tuple[Node, ...], prefix: Path, slots: list[int]):
        for i, n in enumerate(nodes):
            path = prefix + (i,)
            for zero in self.zero_inserts.get(path, []):
                self.emit_exec(zero, slots, True, None)
            if isinstance(n, Leaf):
                self.emit_exec(n.op, slots, False, path)
                continue
            slot = self.n_slots
            self.n_slots += 1
            extent = n.extent.value(self.dims)
            pos = len(self.code)
            self.code.extend((OP_LOOP, slot, extent, 0))
            self.loops.append(LoopInfo(pos, slot, extent, n.suffix, path))
            self.emit_nodes(n.children, path, slots + [slot])
            end = len(self.code)
            self.code.extend((OP_END, slot, extent, pos + 4))
            self.code[pos + 3] = end

    def finish(self) -> Lowered:
        return Lowered(
            code=np.asarray(self.code, dtype=np.int64),
            aff=np.asarray(self.aff or [0], dtype=np.int64),
            aff_ptr=np.asarray(self.aff_ptr or [0], dtype=np.int64),
            consts=np.asarray(self.consts or [0.0], dtype=np.float64),
            n_slots=self.n_slots,
            storage_size=self.storage,
            buffers=self.buffers,
            buffer_index=self.buffer_index,
            array_buffer=self.array_buffer,
            loops=self.loops,
            execs=self.execs,
            binding=dict(self.dims),
        )


def lower(p: Program, dims: dict[str, int] | None = None) -> Lowered:
    binding = p.dims()
    if dims:
        binding.update(dims)
    lw = _Lowerer(p, binding)
    lw.emit_nodes(p.body, (), [])
    return lw.finish()
