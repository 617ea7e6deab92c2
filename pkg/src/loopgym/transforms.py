"""Atomic program transformations with applicability detection.

Each transformation pairs a site enumerator with an applier. A move is only
enumerated where applying it provably preserves semantics; apply re-runs the
same check, so replaying a logged move on the wrong program raises instead of
silently corrupting. Transformations never mutate their input program.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Iterator

from . import analysis
from .ir import (
    Access, Affine, BufferDecl, Dim, Extent, Guard, IrError, Leaf, Node,
    Operation, Path, Program, Scope, SiteRef, Term,
    anchor_for_leaf, iter_leaves, iter_scopes, node_at, resolve_site, validate,
    walk, SUFFIXES,
)
from .machine import DEFAULT_MACHINE, MachineConfig


class InapplicableMoveError(IrError):
    code = "inapplicable-move"


class ParamDomainError(IrError):
    code = "param-out-of-domain"


@dataclass(frozen=True)
class Move:
    """One game action: a transformation at a unique site with parameters."""

    transform: str
    site: SiteRef
    params: tuple[str, ...] = ()

    def line(self) -> str:
        parts = [self.transform, self.site.text(), *self.params]
        return " ".join(parts)

    @staticmethod
    def parse(line: str) -> "Move":
        parts = line.split()
        if len(parts) < 2:
            raise IrError(f"malformed move line {line!r}", "bad-move")
        return Move(parts[0], SiteRef.parse(parts[1]), tuple(parts[2:]))


# --------------------------------------------------------------------------- #
# Tree-rewriting helpers

def _children_at(p: Program, parent: Path) -> tuple[Node, ...]:
    if not parent:
        return p.body
    node = node_at(p, parent)
    assert isinstance(node, Scope)
    return node.children


def _with_children(p: Program, parent: Path, children: tuple[Node, ...]) -> Program:
    if not parent:
        return replace(p, body=children)
    scope = node_at(p, parent)
    assert isinstance(scope, Scope)
    return _splice(p, parent, (replace(scope, children=children),))


def _splice(p: Program, path: Path, new_nodes: tuple[Node, ...]) -> Program:
    def rebuild(nodes: tuple[Node, ...], rel: Path) -> tuple[Node, ...]:
        i = rel[0]
        if len(rel) == 1:
            return nodes[:i] + new_nodes + nodes[i + 1:]
        scope = nodes[i]
        assert isinstance(scope, Scope)
        return nodes[:i] + (replace(scope, children=rebuild(scope.children, rel[1:])),) + nodes[i + 1:]

    return replace(p, body=rebuild(p.body, path))


def _map_affines(op: Operation, f: Callable[[Affine], Affine]) -> Operation:
    def fix_access(a: Access) -> Access:
        return Access(a.array, tuple(f(ix) for ix in a.indices))

    inputs = tuple(
        fix_access(v) if isinstance(v, Access) else f(v) if isinstance(v, Affine) else v
        for v in op.inputs
    )
    guards = tuple(Guard(f(g.expr), g.bound) for g in op.guards)
    return replace(op, output=fix_access(op.output), inputs=inputs, guards=guards)


def _map_ops(node: Node, f: Callable[[Operation], Operation]) -> Node:
    if isinstance(node, Leaf):
        return Leaf(f(node.op))
    return replace(node, children=tuple(_map_ops(c, f) for c in node.children))


def _scope_site(p: Program, scope_path: Path) -> SiteRef | None:
    """Reference a scope via the first operation below it and the scope's depth."""
    for path, _leaf in iter_leaves(p):
        if path[: len(scope_path)] == scope_path:
            return SiteRef("scope", anchor_for_leaf(p, path), len(scope_path) - 1)
    return None


def site_for_node(p: Program, path: Path) -> SiteRef | None:
    """Site reference for an arbitrary tree node (scope or leaf)."""
    node = node_at(p, path)
    if isinstance(node, Leaf):
        return SiteRef("op", anchor_for_leaf(p, path))
    return _scope_site(p, path)


def _resolve_node(p: Program, site: SiteRef) -> Path:
    handle = resolve_site(p, site)
    if site.kind in ("scope", "op"):
        return handle[0]
    raise InapplicableMoveError(f"site {site.text()} does not name a tree node")


# --------------------------------------------------------------------------- #
# Transformation definitions

class Transformation:
    id: str = ""

    def candidates(self, p: Program, machine: MachineConfig) -> Iterator[Move]:
        raise NotImplementedError

    def check(self, p: Program, move: Move, machine: MachineConfig) -> str | None:
        """None when applicable, otherwise a human-readable reason."""
        raise NotImplementedError

    def apply(self, p: Program, move: Move) -> Program:
        raise NotImplementedError


class JoinScopes(Transformation):
    """Fuse a scope with the sibling scope that immediately follows it."""

    id = "join_scopes"

    def candidates(self, p, machine):
        for path, node in walk(p):
            if isinstance(node, Scope):
                site = _scope_site(p, path)
                if site is not None:
                    yield Move(self.id, site)

    def check(self, p, move, machine):
        path = _resolve_node(p, move.site)
        if not isinstance(node_at(p, path), Scope):
            return "site is not a scope"
        if not analysis.can_fuse(p, path):
            return "fusion would reorder a dependence or extents differ"
        return None

    def apply(self, p, move):
        path = _resolve_node(p, move.site)
        s = node_at(p, path)
        r = node_at(p, path[:-1] + (path[-1] + 1,))
        assert isinstance(s, Scope) and isinstance(r, Scope)
        fused = Scope(s.extent, None, s.children + r.children)
        siblings = _children_at(p, path[:-1])
        i = path[-1]
        return _with_children(p, path[:-1], siblings[:i] + (fused,) + siblings[i + 2:])


class SplitScope(Transformation):
    """Tile one scope into [extent/k, k] iterating the same points in order."""

    id = "split_scope"

    def candidates(self, p, machine):
        dims = p.dims()
        for path, node in iter_scopes(p):
            if node.suffix is not None:
                continue
            v = node.extent.maybe_value(dims)
            if v is None:
                continue
            site = _scope_site(p, path)
            if site is None:
                continue
            for k in range(2, v):
                if v % k == 0:
                    yield Move(self.id, site, (str(k),))

    def check(self, p, move, machine):
        path = _resolve_node(p, move.site)
        node = node_at(p, path)
        if not isinstance(node, Scope):
            return "site is not a scope"
        if node.suffix is not None:
            return "scope carries a suffix"
        k = _int_param(move, 0)
        v = node.extent.maybe_value(p.dims())
        if v is None:
            return "extent is not bound to a concrete value"
        if not (1 < k < v) or v % k != 0:
            raise ParamDomainError(f"{k} is not a proper divisor of extent {v}")
        return None

    def apply(self, p, move):
        path = _resolve_node(p, move.site)
        scope = node_at(p, path)
        assert isinstance(scope, Scope)
        k = _int_param(move, 0)
        d = len(path) - 1
        repl = Affine((Term(k, (), d), Term(1, (), d + 1)))

        def fix(op: Operation) -> Operation:
            return _map_affines(
                op, lambda a: a.shift_refs(d + 1, 1).substitute_ref(d, repl)
            )

        inner = Scope(Extent(k), None, tuple(_map_ops(c, fix) for c in scope.children))
        outer = Scope(scope.extent.divided_by(k), None, (inner,))
        return _splice(p, path, (outer,))


class ReorderScopes(Transformation):
    """Interchange a scope with its sole child scope."""

    id = "reorder_scopes"

    def candidates(self, p, machine):
        for path, node in iter_scopes(p):
            if (
                len(node.children) == 1
                and isinstance(node.children[0], Scope)
                and node.suffix is None
                and node.children[0].suffix is None
            ):
                site = _scope_site(p, path)
                if site is not None:
                    yield Move(self.id, site)

    def check(self, p, move, machine):
        path = _resolve_node(p, move.site)
        if not analysis.can_interchange(p, path):
            return "interchange would reorder a dependence"
        return None

    def apply(self, p, move):
        path = _resolve_node(p, move.site)
        outer = node_at(p, path)
        assert isinstance(outer, Scope)
        inner = outer.children[0]
        assert isinstance(inner, Scope)
        d = len(path) - 1

        def fix(op: Operation) -> Operation:
            return _map_affines(op, lambda a: a.swap_refs(d, d + 1))

        new_inner = Scope(outer.extent, None, tuple(_map_ops(c, fix) for c in inner.children))
        new_outer = Scope(inner.extent, None, (new_inner,))
        return _splice(p, path, (new_outer,))


class ReorderInstructions(Transformation):
    """Swap a node with its following sibling when they touch disjoint buffers."""

    id = "reorder_instructions"

    def candidates(self, p, machine):
        for path, _node in walk(p):
            sibling = path[:-1] + (path[-1] + 1,)
            try:
                node_at(p, sibling)
            except Exception:
                continue
            site = site_for_node(p, path)
            if site is not None:
                yield Move(self.id, site)

    def check(self, p, move, machine):
        path = _resolve_node(p, move.site)
        if not analysis.can_swap_siblings(p, path):
            return "siblings share a buffer"
        return None

    def apply(self, p, move):
        path = _resolve_node(p, move.site)
        siblings = _children_at(p, path[:-1])
        i = path[-1]
        swapped = siblings[:i] + (siblings[i + 1], siblings[i]) + siblings[i + 2:]
        return _with_children(p, path[:-1], swapped)


class SetSuffix(Transformation):
    """Annotate a scope for unroll/parallel/vector/GPU execution."""

    id = "set_suffix"

    def candidates(self, p, machine):
        dims = p.dims()
        for path, node in iter_scopes(p):
            if node.suffix is not None:
                continue
            site = _scope_site(p, path)
            if site is None:
                continue
            for sfx in machine.enabled_suffixes:
                if self._ok(p, path, node, sfx, machine, dims):
                    yield Move(self.id, site, (sfx,))

    @staticmethod
    def _ok(p, path, node, sfx, machine, dims) -> bool:
        if sfx == "u":
            v = node.extent.maybe_value(dims)
            return v is not None and 2 <= v <= machine.max_unroll
        if sfx == "v":
            return analysis.vector_site_ok(p, path, machine.vector_width)
        if sfx in ("p", "g", "b", "w"):
            return analysis.can_parallelize(p, path)
        return False

    def check(self, p, move, machine):
        path = _resolve_node(p, move.site)
        node = node_at(p, path)
        if not isinstance(node, Scope):
            return "site is not a scope"
        if node.suffix is not None:
            return "scope already has a suffix"
        sfx = _str_param(move, 0)
        if sfx not in SUFFIXES:
            raise ParamDomainError(f"unknown suffix {sfx!r}")
        if not self._ok(p, path, node, sfx, machine, p.dims()):
            return f"suffix :{sfx} is not applicable here"
        return None

    def apply(self, p, move):
        path = _resolve_node(p, move.site)
        scope = node_at(p, path)
        assert isinstance(scope, Scope)
        return _splice(p, path, (replace(scope, suffix=_str_param(move, 0)),))


class ClearSuffix(Transformation):
    id = "clear_suffix"

    def candidates(self, p, machine):
        for path, node in iter_scopes(p):
            if node.suffix is not None:
                site = _scope_site(p, path)
                if site is not None:
                    yield Move(self.id, site)

    def check(self, p, move, machine):
        path = _resolve_node(p, move.site)
        node = node_at(p, path)
        if not isinstance(node, Scope) or node.suffix is None:
            return "scope has no suffix"
        return None

    def apply(self, p, move):
        path = _resolve_node(p, move.site)
        scope = node_at(p, path)
        assert isinstance(scope, Scope)
        return _splice(p, path, (replace(scope, suffix=None),))


class ReuseDims(Transformation):
    """Stop materializing a buffer dimension whose slices never outlive one
    iteration of the single scope that indexes them."""

    id = "reuse_dims"

    def candidates(self, p, machine):
        for b in p.buffers:
            if p.is_interface(b) or len(b.array_names()) != 1:
                continue
            for k, d in enumerate(b.dims):
                if d.materialized:
                    yield Move(self.id, SiteRef("buffer_dim", b.name, k))

    def check(self, p, move, machine):
        buf, k = _resolve_buffer_dim(p, move.site)
        if p.is_interface(buf):
            return "interface buffers keep their caller-visible layout"
        if not buf.dims[k].materialized:
            return "dim is already non-materialized"
        if not analysis.dim_reuse_consistent(p, buf, k):
            return "dim is used in more than one scope"
        return None

    def apply(self, p, move):
        return _set_dim_materialized(p, move.site, False)


class MaterializeDims(Transformation):
    id = "materialize_dims"

    def candidates(self, p, machine):
        for b in p.buffers:
            for k, d in enumerate(b.dims):
                if not d.materialized:
                    yield Move(self.id, SiteRef("buffer_dim", b.name, k))

    def check(self, p, move, machine):
        buf, k = _resolve_buffer_dim(p, move.site)
        if buf.dims[k].materialized:
            return "dim is already materialized"
        if not analysis.dim_reuse_consistent(p, buf, k):
            return "collapsed dim carries values between scopes"
        return None

    def apply(self, p, move):
        return _set_dim_materialized(p, move.site, True)


class ReorderBufferDims(Transformation):
    """Swap a buffer dimension with the next one, rewriting all subscripts."""

    id = "reorder_buffer_dims"

    def candidates(self, p, machine):
        for b in p.buffers:
            if p.is_interface(b):
                continue
            for k in range(len(b.dims) - 1):
                yield Move(self.id, SiteRef("buffer_dim", b.name, k))

    def check(self, p, move, machine):
        buf, k = _resolve_buffer_dim(p, move.site)
        if p.is_interface(buf):
            return "interface buffers keep their caller-visible layout"
        if k + 1 >= len(buf.dims):
            return "no following dim to swap with"
        return None

    def apply(self, p, move):
        buf, k = _resolve_buffer_dim(p, move.site)
        dims = list(buf.dims)
        dims[k], dims[k + 1] = dims[k + 1], dims[k]
        arrays = set(buf.array_names())

        def fix(op: Operation) -> Operation:
            def fix_access(a: Access) -> Access:
                if a.array not in arrays:
                    return a
                ix = list(a.indices)
                ix[k], ix[k + 1] = ix[k + 1], ix[k]
                return Access(a.array, tuple(ix))

            inputs = tuple(fix_access(v) if isinstance(v, Access) else v for v in op.inputs)
            return replace(op, output=fix_access(op.output), inputs=inputs)

        body = tuple(_map_ops(n, fix) for n in p.body)
        buffers = tuple(
            replace(b, dims=tuple(dims)) if b.name == buf.name else b for b in p.buffers
        )
        return replace(p, body=body, buffers=buffers)


class PadDim(Transformation):
    """Round a scope's extent up to a multiple, masking the new iterations."""

    id = "pad_dim"

    def candidates(self, p, machine):
        dims = p.dims()
        for path, node in iter_scopes(p):
            if node.suffix is not None or node.extent.den != 1:
                continue
            v = node.extent.maybe_value(dims)
            if v is None:
                continue
            site = _scope_site(p, path)
            if site is None:
                continue
            for m in machine.pad_multiples:
                if v % m != 0:
                    yield Move(self.id, site, (str(m),))

    def check(self, p, move, machine):
        path = _resolve_node(p, move.site)
        node = node_at(p, path)
        if not isinstance(node, Scope):
            return "site is not a scope"
        if node.suffix is not None:
            return "scope carries a suffix"
        if node.extent.den != 1:
            return "cannot pad a fractional extent"
        m = _int_param(move, 0)
        v = node.extent.maybe_value(p.dims())
        if v is None:
            return "extent is not bound to a concrete value"
        if m < 2:
            raise ParamDomainError("pad multiple must be at least 2")
        if v % m == 0:
            return f"extent {v} is already a multiple of {m}"
        return None

    def apply(self, p, move):
        path = _resolve_node(p, move.site)
        scope = node_at(p, path)
        assert isinstance(scope, Scope)
        m = _int_param(move, 0)
        v = scope.extent.value(p.dims())
        padded = ((v + m - 1) // m) * m
        d = len(path) - 1
        if scope.extent.syms:
            bound = Affine((Term(scope.extent.num, scope.extent.syms, None),))
        else:
            bound = Affine.const(scope.extent.num)
        guard = Guard(Affine.of_ref(d), bound)

        def fix(op: Operation) -> Operation:
            return replace(op, guards=op.guards + (guard,))

        children = tuple(_map_ops(c, fix) for c in scope.children)
        return _splice(p, path, (Scope(Extent(padded), None, children),))


class SetLocation(Transformation):
    id = "set_location"

    def candidates(self, p, machine):
        dims = p.dims()
        for b in p.buffers:
            if p.is_interface(b):
                continue
            other = "stack" if b.location == "heap" else "heap"
            if other == "stack":
                try:
                    if b.footprint_bytes(dims) > machine.stack_limit_bytes:
                        continue
                except IrError:
                    continue
            yield Move(self.id, SiteRef("buffer", b.name), (other,))

    def check(self, p, move, machine):
        buf = resolve_site(p, move.site)
        assert isinstance(buf, BufferDecl)
        if p.is_interface(buf):
            return "interface buffers are caller-allocated"
        loc = _str_param(move, 0)
        if loc not in ("heap", "stack"):
            raise ParamDomainError(f"unknown location {loc!r}")
        if loc == buf.location:
            return f"buffer already lives on the {loc}"
        if loc == "stack":
            try:
                if buf.footprint_bytes(p.dims()) > machine.stack_limit_bytes:
                    return "buffer exceeds the stack budget"
            except IrError:
                return "footprint is not bound to a concrete value"
        return None

    def apply(self, p, move):
        buf = resolve_site(p, move.site)
        loc = _str_param(move, 0)
        buffers = tuple(
            replace(b, location=loc) if b.name == buf.name else b for b in p.buffers
        )
        return replace(p, buffers=buffers)


class ShareBuffer(Transformation):
    """Move this buffer's arrays into another same-shaped buffer whose usage
    region is disjoint at the root level."""

    id = "share_buffer"

    def candidates(self, p, machine):
        for a in p.buffers:
            if p.is_interface(a):
                continue
            for b in p.buffers:
                if b.name != a.name and self._compatible(p, a, b):
                    yield Move(self.id, SiteRef("buffer", a.name), (b.name,))

    @staticmethod
    def _compatible(p: Program, a: BufferDecl, b: BufferDecl) -> bool:
        if p.is_interface(a) or p.is_interface(b):
            return False
        if a.dtype != b.dtype or a.dims != b.dims or a.location != b.location:
            return False
        return _root_disjoint(p, set(a.array_names()), set(b.array_names()))

    def check(self, p, move, machine):
        src = resolve_site(p, move.site)
        assert isinstance(src, BufferDecl)
        dst = p.buffer_named(_str_param(move, 0))
        if dst is None:
            raise ParamDomainError(f"no buffer named {move.params[0]!r}")
        if dst.name == src.name:
            return "cannot share a buffer with itself"
        if not self._compatible(p, src, dst):
            return "buffers differ in shape or their usage regions overlap"
        return None

    def apply(self, p, move):
        src = resolve_site(p, move.site)
        dst_name = _str_param(move, 0)
        buffers = []
        for b in p.buffers:
            if b.name == src.name:
                continue
            if b.name == dst_name:
                b = replace(b, arrays=b.array_names() + src.array_names())
            buffers.append(b)
        return replace(p, buffers=tuple(buffers))


class UnshareBuffer(Transformation):
    """Give one array of a multi-array buffer its own storage again."""

    id = "unshare_buffer"

    def candidates(self, p, machine):
        for b in p.buffers:
            if len(b.array_names()) < 2:
                continue
            for a in b.array_names():
                if p.buffer_named(a) is None:
                    yield Move(self.id, SiteRef("buffer", b.name), (a,))

    def check(self, p, move, machine):
        buf = resolve_site(p, move.site)
        assert isinstance(buf, BufferDecl)
        array = _str_param(move, 0)
        if array not in buf.array_names():
            raise ParamDomainError(f"{array!r} is not in buffer {buf.name}")
        if len(buf.array_names()) < 2:
            return "buffer holds a single array"
        if p.buffer_named(array) is not None:
            return f"a buffer named {array!r} already exists"
        rest = set(buf.array_names()) - {array}
        if not _root_disjoint(p, {array}, rest):
            return "array usage overlaps the rest of the buffer"
        return None

    def apply(self, p, move):
        buf = resolve_site(p, move.site)
        array = _str_param(move, 0)
        remaining = tuple(a for a in buf.array_names() if a != array)
        new = BufferDecl(array, buf.dtype, buf.dims, buf.location, (array,))
        buffers = tuple(
            replace(b, arrays=remaining) if b.name == buf.name else b for b in p.buffers
        ) + (new,)
        return replace(p, buffers=buffers)


def _root_disjoint(p: Program, arrays_a: set[str], arrays_b: set[str]) -> bool:
    """All uses of one array group finish in earlier root nests than the other's."""

    def root_range(arrays: set[str]) -> tuple[int, int] | None:
        roots = [
            info.leaf_path[0]
            for info in analysis.all_accesses(p)
            if info.access.array in arrays
        ]
        return (min(roots), max(roots)) if roots else None

    ra, rb = root_range(arrays_a), root_range(arrays_b)
    if ra is None or rb is None:
        return True
    return ra[1] < rb[0] or rb[1] < ra[0]


def _resolve_buffer_dim(p: Program, site: SiteRef) -> tuple[BufferDecl, int]:
    handle = resolve_site(p, site)
    if not (isinstance(handle, tuple) and isinstance(handle[0], BufferDecl)):
        raise InapplicableMoveError(f"site {site.text()} does not name a buffer dim")
    return handle


def _set_dim_materialized(p: Program, site: SiteRef, materialized: bool) -> Program:
    buf, k = _resolve_buffer_dim(p, site)
    dims = tuple(
        replace(d, materialized=materialized) if i == k else d
        for i, d in enumerate(buf.dims)
    )
    buffers = tuple(replace(b, dims=dims) if b.name == buf.name else b for b in p.buffers)
    return replace(p, buffers=buffers)


def _int_param(move: Move, i: int) -> int:
    try:
        return int(move.params[i])
    except (IndexError, ValueError):
        raise ParamDomainError(f"move {move.line()!r} needs integer parameter {i}") from None


def _str_param(move: Move, i: int) -> str:
    try:
        return move.params[i]
    except IndexError:
        raise ParamDomainError(f"move {move.line()!r} is missing parameter {i}") from None


# --------------------------------------------------------------------------- #
# Registry

REGISTRY: dict[str, Transformation] = {
    t.id: t
    for t in (
        JoinScopes(), SplitScope(), ReorderScopes(), ReorderInstructions(),
        SetSuffix(), ClearSuffix(), ReuseDims(), MaterializeDims(),
        ReorderBufferDims(), PadDim(), SetLocation(), ShareBuffer(),
        UnshareBuffer(),
    )
}

def register(t: Transformation):
    """Extension point for additional, e.g. target-specific, transformations."""
    REGISTRY[t.id] = t


# Structural rewrites can invalidate the consistency of non-materialized dims;
# when any exist, gate these moves on a full post-apply validation.
_GATED = {"join_scopes", "split_scope", "reorder_scopes", "pad_dim"}


def _needs_gate(p: Program, transform: str) -> bool:
    if transform not in _GATED:
        return False
    return any(not d.materialized for b in p.buffers for d in b.dims)


def enumerate_moves(p: Program, machine: MachineConfig = DEFAULT_MACHINE) -> list[Move]:
    """All currently applicable moves, deterministically ordered."""
    return [m for m, _applied in enumerate_applied(p, machine, apply_all=False)]


def enumerate_applied(
    p: Program, machine: MachineConfig = DEFAULT_MACHINE, apply_all: bool = True,
) -> list[tuple[Move, Program | None]]:
    """Applicable moves with (when apply_all) their resulting programs.

    Shares the application work with the validation gate; the move order is
    identical to enumerate_moves.
    """
    out: list[tuple[Move, Program | None]] = []
    for tid in sorted(REGISTRY):
        t = REGISTRY[tid]
        seen: set[Move] = set()
        gated = _needs_gate(p, tid)
        for move in t.candidates(p, machine):
            if move in seen:
                continue
            seen.add(move)
            try:
                if t.check(p, move, machine) is not None:
                    continue
            except IrError:
                continue
            applied: Program | None = None
            if gated or apply_all:
                try:
                    applied = t.apply(p, move)
                except IrError:
                    continue
                if gated and validate(applied):
                    continue
            out.append((move, applied))
    out.sort(key=lambda item: (item[0].transform, item[0].site.text(), item[0].params))
    return out


def apply_move(p: Program, move: Move, machine: MachineConfig = DEFAULT_MACHINE) -> Program:
    """Apply a move after re-checking applicability; raises when not enumerated."""
    t = REGISTRY.get(move.transform)
    if t is None:
        raise InapplicableMoveError(f"unknown transformation {move.transform!r}")
    reason = t.check(p, move, machine)
    if reason is not None:
        raise InapplicableMoveError(f"{move.line()}: {reason}")
    result = t.apply(p, move)
    if _needs_gate(p, move.transform):
        problems = validate(result)
        if problems:
            raise InapplicableMoveError(f"{move.line()}: {problems[0]}")
    return result


def apply_unchecked(p: Program, move: Move) -> Program:
    """Test hook: apply without applicability checks. Never use outside tests."""
    return REGISTRY[move.transform].apply(p, move)


# --------------------------------------------------------------------------- #
# Histories

@dataclass(frozen=True)
class Conflict:
    index: int
    move: Move
    reason: str


@dataclass(frozen=True)
class History:
    """A root program plus the move list that produced the current program."""

    root: Program
    moves: tuple[Move, ...] = ()

    def extended(self, move: Move) -> "History":
        return History(self.root, self.moves + (move,))

    def truncated(self, n: int) -> "History":
        return History(self.root, self.moves[:n])


def replay(root: Program, moves, machine: MachineConfig = DEFAULT_MACHINE) -> list[Program]:
    """Programs after each move; element 0 is the root. Raises on conflict."""
    programs = [root]
    for i, m in enumerate(moves):
        try:
            programs.append(apply_move(programs[-1], m, machine))
        except IrError as e:
            raise InapplicableMoveError(f"move {i} ({m.line()}): {e}") from e
    return programs


def try_replay(root: Program, moves, machine: MachineConfig = DEFAULT_MACHINE):
    """(programs, None) on success, (partial programs, Conflict) otherwise."""
    programs = [root]
    for i, m in enumerate(moves):
        try:
            programs.append(apply_move(programs[-1], m, machine))
        except IrError as e:
            return programs, Conflict(i, m, str(e))
    return programs, None


def current(h: History, machine: MachineConfig = DEFAULT_MACHINE) -> Program:
    return replay(h.root, h.moves, machine)[-1]


def undo(h: History, k: int, machine: MachineConfig = DEFAULT_MACHINE) -> Program:
    """Program after dropping the last k moves."""
    if k > len(h.moves):
        raise IrError(f"cannot undo {k} of {len(h.moves)} moves")
    return replay(h.root, h.moves[: len(h.moves) - k], machine)[-1]


def remove_move(h: History, i: int, machine: MachineConfig = DEFAULT_MACHINE):
    """History without move i, or a Conflict naming the first move that breaks."""
    if not (0 <= i < len(h.moves)):
        raise IrError(f"no move {i} in a history of {len(h.moves)}")
    rest = h.moves[:i] + h.moves[i + 1:]
    _, conflict = try_replay(h.root, rest, machine)
    if conflict is not None:
        return Conflict(conflict.index + (1 if conflict.index >= i else 0), conflict.move, conflict.reason)
    return History(h.root, rest)
