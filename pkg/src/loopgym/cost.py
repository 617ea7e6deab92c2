"""Deterministic abstract-machine cost model.

Stands in for wall time so search and learning are testable without hardware;
the native measurement path plugs into the same RuntimeProvider interface.
Charges one unit per scalar statement execution, bytes for the unique elements
each statement touches (materialized dims only), and loop-header executions.
Suffix effects: `:v` divides the wrapped statement's ops and traffic by the
vector width, `:u` erases the scope's header cost, `:p` divides its subtree's
modeled cost by the core count. Implicit reduction-init writes are not charged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .ir import DTYPES, Access, IrError, Leaf, Node, Program
from .machine import DEFAULT_MACHINE, MachineConfig


@dataclass(frozen=True)
class CostReport:
    scalar_ops: float
    memory_traffic: float  # bytes
    loop_overhead: float   # loop-header executions
    modeled_cost: float
    measured_seconds: float | None = None


def _unique_elems(p: Program, access: Access, extents: list[int]) -> float:
    buf = p.buffer_of(access.array)
    if buf is None:
        raise IrError(f"array {access.array} has no buffer", "unresolved-array")
    used: set[int] = set()
    for k, ix in enumerate(access.indices):
        if k < len(buf.dims) and buf.dims[k].materialized:
            used |= ix.refs
    n = 1.0
    for r in used:
        n *= extents[r]
    return n


def cost(p: Program, dims: dict[str, int] | None = None,
         machine: MachineConfig = DEFAULT_MACHINE) -> CostReport:
    binding = p.dims()
    if dims:
        binding.update(dims)

    totals = {"ops": 0.0, "traffic": 0.0, "overhead": 0.0}

    def leaf_exec_cost(leaf: Leaf, extents: list[int], vectorized: bool) -> float:
        """Weighted cost of one execution; also accrues raw totals."""
        iters = 1.0
        for e in extents:
            iters *= e
        fac = 1.0 / machine.vector_width if vectorized else 1.0
        op = leaf.op
        elem = DTYPES[p.buffer_of(op.output.array).dtype]
        bytes_total = 0.0
        for access, _w in op.accesses():
            b = p.buffer_of(access.array)
            bytes_total += _unique_elems(p, access, extents) * DTYPES[b.dtype]
        totals["ops"] += iters * fac
        totals["traffic"] += bytes_total * fac
        per_exec_bytes = bytes_total / iters
        return machine.op_weight * fac + machine.byte_weight * per_exec_bytes * fac

    def visit(node: Node, extents: list[int], parent_vector: bool) -> float:
        """Weighted modeled cost of a single execution of this node."""
        if isinstance(node, Leaf):
            return leaf_exec_cost(node, extents, parent_vector)
        e = node.extent.value(binding)
        iters_here = 1.0
        for x in extents:
            iters_here *= x
        if node.suffix == "u":
            headers = 0.0
        elif node.suffix == "v":
            headers = e / machine.vector_width
        else:
            headers = float(e)
        totals["overhead"] += headers * iters_here
        child_extents = extents + [e]
        sub = machine.loop_weight * headers
        for c in node.children:
            sub += e * visit(c, child_extents, node.suffix == "v")
        if node.suffix in ("p", "g", "b", "w"):
            sub = math.ceil(sub / machine.cores)
        return sub

    modeled = sum(visit(n, [], False) for n in p.body)
    return CostReport(
        scalar_ops=totals["ops"],
        memory_traffic=totals["traffic"],
        loop_overhead=totals["overhead"],
        modeled_cost=modeled,
    )


def footprint_bytes(p: Program, dims: dict[str, int] | None = None) -> dict[str, int]:
    """Allocation accounting: materialized extents times dtype size, per buffer."""
    binding = p.dims()
    if dims:
        binding.update(dims)
    return {b.name: b.footprint_bytes(binding) for b in p.buffers}


class RuntimeProvider:
    """Source of the runtime signal T consumed by search and learning."""

    name = "abstract"

    def runtime(self, p: Program) -> float:
        raise NotImplementedError


class ModeledRuntime(RuntimeProvider):
    name = "cost-model"

    def __init__(self, machine: MachineConfig = DEFAULT_MACHINE):
        self.machine = machine

    def runtime(self, p: Program) -> float:
        return cost(p, machine=self.machine).modeled_cost
