"""Access collection and the dependence predicates behind move applicability.

All tests here are exact on single-ref affine subscripts and conservative
otherwise: a predicate returning False may lose a legal move, but True must
never admit a semantics-changing one.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ir import (
    Access, BufferDecl, Guard, Leaf, Node, Operation, Path, Program, Scope,
    ancestor_scopes, iter_leaves, node_at, walk,
)


@dataclass(frozen=True)
class AccessInfo:
    leaf_path: Path
    access: Access
    is_write: bool
    is_acc: bool
    guards: tuple[Guard, ...]


def _leaf_infos(path: Path, op: Operation):
    yield AccessInfo(path, op.output, True, op.acc, op.guards)
    for v in op.inputs:
        if isinstance(v, Access):
            yield AccessInfo(path, v, False, False, op.guards)


# Programs are immutable, so per-program scans are cached by identity. Keys
# hold a strong reference to the program, which makes id() reuse impossible
# while the entry lives.
_CACHE_LIMIT = 16
_access_cache: dict[int, tuple[Program, list[AccessInfo]]] = {}


def all_accesses(p: Program) -> list[AccessInfo]:
    hit = _access_cache.get(id(p))
    if hit is not None and hit[0] is p:
        return hit[1]
    out: list[AccessInfo] = []
    for path, leaf in iter_leaves(p):
        out.extend(_leaf_infos(path, leaf.op))
    if len(_access_cache) >= _CACHE_LIMIT:
        _access_cache.pop(next(iter(_access_cache)))
    _access_cache[id(p)] = (p, out)
    return out


def accesses_under(p: Program, root: Path) -> list[AccessInfo]:
    n = len(root)
    return [info for info in all_accesses(p) if info.leaf_path[:n] == root]


def buffers_of_accesses(p: Program, infos: list[AccessInfo], writes_only: bool = False) -> set[str]:
    names = set()
    for info in infos:
        if writes_only and not info.is_write:
            continue
        buf = p.buffer_of(info.access.array)
        if buf is not None:
            names.add(buf.name)
    return names


def buffers_written_under(p: Program, root: Path) -> set[str]:
    return buffers_of_accesses(p, accesses_under(p, root), writes_only=True)


def buffers_accessed_under(p: Program, root: Path) -> set[str]:
    return buffers_of_accesses(p, accesses_under(p, root))


def _buffer_infos(infos: list[AccessInfo], buf: BufferDecl) -> list[AccessInfo]:
    arrays = set(buf.array_names())
    return [i for i in infos if i.access.array in arrays]


# --------------------------------------------------------------------------- #
# Reuse consistency (non-materialized buffer dims)

def dim_reuse_consistent(p: Program, buf: BufferDecl, k: int) -> bool:
    """True when collapsing dim k of `buf` to extent 1 cannot change results.

    Requires every access to the buffer to subscript dim k with the counter of
    one single scope, identical guards everywhere, and the first accessing leaf
    per iteration to (re)initialize before anything reads.
    """
    infos = _buffer_infos(all_accesses(p), buf)
    if not infos:
        return True
    target_scope: Path | None = None
    for info in infos:
        if k >= len(info.access.indices):
            return False
        ix = info.access.indices[k]
        if not ix.is_single_ref():
            return False
        depth = next(iter(ix.refs))
        if depth >= len(info.leaf_path) - 1:
            return False
        scope_path = info.leaf_path[: depth + 1]
        if target_scope is None:
            target_scope = scope_path
        elif target_scope != scope_path:
            return False
    if len({i.guards for i in infos}) > 1:
        return False
    first_leaf = min(i.leaf_path for i in infos)
    leaf = node_at(p, first_leaf)
    assert isinstance(leaf, Leaf)
    op = leaf.op
    arrays = set(buf.array_names())
    if op.output.array not in arrays:
        return False  # first touch is a read from another statement's input
    if op.acc:
        return True  # the implicit zero write precedes the accumulation
    return not any(isinstance(v, Access) and v.array in arrays for v in op.inputs)


# --------------------------------------------------------------------------- #
# Fusion

def can_fuse(p: Program, s_path: Path) -> bool:
    """Can the scope at s_path absorb its immediately following sibling scope?"""
    s = node_at(p, s_path)
    sibling = s_path[:-1] + (s_path[-1] + 1,)
    try:
        r = node_at(p, sibling)
    except Exception:
        return False
    if not (isinstance(s, Scope) and isinstance(r, Scope)):
        return False
    if s.suffix is not None or r.suffix is not None:
        return False
    if s.extent.normalized() != r.extent.normalized():
        return False
    d = len(s_path) - 1
    left = accesses_under(p, s_path)
    right = accesses_under(p, sibling)
    shared = (
        buffers_of_accesses(p, left, True) & buffers_of_accesses(p, right)
    ) | (
        buffers_of_accesses(p, left) & buffers_of_accesses(p, right, True)
    )
    for name in shared:
        buf = p.buffer_named(name)
        assert buf is not None
        pair = _buffer_infos(left, buf) + _buffer_infos(right, buf)
        if not _common_standalone_dim(pair, d):
            return False
    return True


def _common_standalone_dim(infos: list[AccessInfo], depth: int) -> bool:
    """Some dim position is subscripted exactly {depth} in every access."""
    ranks = {len(i.access.indices) for i in infos}
    if len(ranks) != 1:
        return False
    for k in range(next(iter(ranks))):
        if all(
            i.access.indices[k].is_single_ref()
            and next(iter(i.access.indices[k].refs)) == depth
            for i in infos
        ):
            return True
    return False


# --------------------------------------------------------------------------- #
# Interchange / parallelization

def _uniform_written_buffers(p: Program, root: Path):
    """For each buffer written under root: the shared (array, indices, guards)
    signature of all its accesses, or None when accesses diverge."""
    infos = accesses_under(p, root)
    out: dict[str, tuple | None] = {}
    for name in buffers_of_accesses(p, infos, writes_only=True):
        buf = p.buffer_named(name)
        assert buf is not None
        mine = _buffer_infos(infos, buf)
        sigs = {(i.access.array, i.access.indices, i.guards) for i in mine}
        has_acc = any(i.is_acc and i.is_write for i in mine)
        out[name] = (next(iter(sigs)), has_acc) if len(sigs) == 1 else None
    return out


def can_interchange(p: Program, outer_path: Path) -> bool:
    """Swap a scope with its sole child scope without reordering dependences."""
    outer = node_at(p, outer_path)
    if not isinstance(outer, Scope) or len(outer.children) != 1:
        return False
    inner = outer.children[0]
    if not isinstance(inner, Scope):
        return False
    if outer.suffix is not None or inner.suffix is not None:
        return False
    d = len(outer_path) - 1
    for name, sig in _uniform_written_buffers(p, outer_path).items():
        if sig is None:
            return False
        (_, indices, _), has_acc = sig
        refs = frozenset().union(*[ix.refs for ix in indices]) if indices else frozenset()
        absent = {d, d + 1} - refs
        if len(absent) == 2:
            return False  # both loops reduce into the same cells: reassociation
        if has_acc and absent:
            return False  # would move the accumulator's implicit zero point
    return True


def can_parallelize(p: Program, scope_path: Path) -> bool:
    """No loop-carried dependence: every written buffer is sliced by this scope."""
    scope = node_at(p, scope_path)
    if not isinstance(scope, Scope):
        return False
    d = len(scope_path) - 1
    for name, sig in _uniform_written_buffers(p, scope_path).items():
        if sig is None:
            return False
        (_, indices, _), _ = sig
        refs = frozenset().union(*[ix.refs for ix in indices]) if indices else frozenset()
        if d not in refs:
            return False
    return True


# --------------------------------------------------------------------------- #
# Statement reordering

def can_swap_siblings(p: Program, path: Path) -> bool:
    sibling = path[:-1] + (path[-1] + 1,)
    try:
        node_at(p, sibling)
    except Exception:
        return False
    a_w = buffers_written_under(p, path)
    a_r = buffers_accessed_under(p, path)
    b_w = buffers_written_under(p, sibling)
    b_r = buffers_accessed_under(p, sibling)
    return not (a_w & b_r or a_r & b_w)


# --------------------------------------------------------------------------- #
# Accumulation structure

def reduction_chain_top(p: Program, leaf_path: Path) -> Path | None:
    """Topmost contiguous ancestor scope whose counter the output ignores.

    The implicit zero write for an accumulate statement is inserted directly
    before this scope; None means it goes directly before the leaf.
    """
    leaf = node_at(p, leaf_path)
    assert isinstance(leaf, Leaf)
    out_refs = frozenset().union(
        *[ix.refs for ix in leaf.op.output.indices]
    ) if leaf.op.output.indices else frozenset()
    nest = ancestor_scopes(p, leaf_path)
    top: Path | None = None
    for depth in range(len(nest) - 1, -1, -1):
        if depth in out_refs:
            break
        top = nest[depth][0]
    return top


def vector_site_ok(p: Program, scope_path: Path, width: int) -> bool:
    """Extent equals the vector width and the scope wraps a single statement."""
    scope = node_at(p, scope_path)
    if not isinstance(scope, Scope) or scope.suffix is not None:
        return False
    if len(scope.children) != 1 or not isinstance(scope.children[0], Leaf):
        return False
    return scope.extent.maybe_value(p.dims()) == width
