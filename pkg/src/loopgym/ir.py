"""Core loop-nest IR: an ordered tree of iteration scopes and scalar operations.

Internal nodes are single-dimensional iteration scopes, leaves are scalar
statements over multidimensional arrays. Buffer declarations describe the
memory each array lives in. All values are immutable; transformations build
new trees and leave their inputs untouched, so programs are safe to share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterator, Union

DTYPES = {"f32": 4, "f64": 8, "i32": 4}
SUFFIXES = ("u", "p", "v", "g", "b", "w")
LOCATIONS = ("heap", "stack")

BINARY_FNS = ("add", "sub", "mul", "div", "max", "min")
UNARY_FNS = ("exp", "log", "sqrt", "abs")
FNS = BINARY_FNS + UNARY_FNS
INFIX = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


class IrError(Exception):
    """Base for IR-level errors; carries a stable machine-readable code."""

    code = "ir-error"

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ParseError(IrError):
    code = "syntax"

    def __init__(self, message: str, line: int = 0, col: int = 0, code: str | None = None):
        super().__init__(f"line {line}:{col}: {message}" if line else message, code)
        self.line = line
        self.col = col


class SiteError(IrError):
    code = "site-not-found"


class AmbiguousSiteError(SiteError):
    code = "site-ambiguous"

    def __init__(self, message: str, candidates: tuple[str, ...]):
        super().__init__(message)
        self.candidates = candidates


# --------------------------------------------------------------------------- #
# Expressions


@dataclass(frozen=True)
class Term:
    """coef * (product of dim symbols) * (optional loop ref {depth})."""

    coef: int
    syms: tuple[str, ...] = ()
    ref: int | None = None


@dataclass(frozen=True)
class Affine:
    """Sum of terms, linear in loop refs; symbols may appear as coefficients."""

    terms: tuple[Term, ...] = ()

    @staticmethod
    def const(c: int) -> "Affine":
        return Affine((Term(c),)) if c else Affine(())

    @staticmethod
    def of_ref(depth: int, coef: int = 1) -> "Affine":
        return Affine((Term(coef, (), depth),))

    def normalized(self) -> "Affine":
        merged: dict[tuple[tuple[str, ...], int | None], int] = {}
        for t in self.terms:
            key = (tuple(sorted(t.syms)), t.ref)
            merged[key] = merged.get(key, 0) + t.coef
        out = [
            Term(c, syms, ref)
            for (syms, ref), c in merged.items()
            if c != 0
        ]
        out.sort(key=lambda t: (t.ref is None, t.ref if t.ref is not None else -1, t.syms))
        return Affine(tuple(out))

    @property
    def refs(self) -> frozenset[int]:
        return frozenset(t.ref for t in self.terms if t.ref is not None)

    @property
    def syms_used(self) -> frozenset[str]:
        return frozenset(s for t in self.terms for s in t.syms)

    def is_const(self) -> bool:
        return not self.refs and not self.syms_used

    def const_value(self) -> int:
        assert self.is_const()
        return sum(t.coef for t in self.terms)

    def is_single_ref(self) -> bool:
        """True when the expression is exactly one loop ref with coefficient 1."""
        return (
            len(self.terms) == 1
            and self.terms[0].coef == 1
            and not self.terms[0].syms
            and self.terms[0].ref is not None
        )

    def substitute_ref(self, depth: int, repl: "Affine") -> "Affine":
        """Replace {depth} with an affine expression (ref-linear substitution)."""
        out: list[Term] = []
        for t in self.terms:
            if t.ref != depth:
                out.append(t)
                continue
            for r in repl.terms:
                if t.syms and r.syms:
                    raise IrError("nonlinear substitution")
                out.append(Term(t.coef * r.coef, t.syms + r.syms, r.ref))
        return Affine(tuple(out)).normalized()

    def shift_refs(self, at_or_deeper: int, delta: int) -> "Affine":
        out = tuple(
            replace(t, ref=t.ref + delta) if t.ref is not None and t.ref >= at_or_deeper else t
            for t in self.terms
        )
        return Affine(out)

    def swap_refs(self, a: int, b: int) -> "Affine":
        def sw(r):
            return b if r == a else a if r == b else r

        return Affine(tuple(replace(t, ref=sw(t.ref)) if t.ref is not None else t for t in self.terms))

    def evaluate(self, dims: dict[str, int], counters: dict[int, int] | None = None) -> int:
        total = 0
        for t in self.terms:
            v = t.coef
            for s in t.syms:
                if s not in dims:
                    raise IrError(f"unbound dimension symbol {s}", "unbound-dim")
                v *= dims[s]
            if t.ref is not None:
                if counters is None:
                    raise IrError("loop ref in constant context")
                v *= counters[t.ref]
            total += v
        return total


@dataclass(frozen=True)
class Extent:
    """Iteration extent: num * (product of dim symbols) / den."""

    num: int = 1
    syms: tuple[str, ...] = ()
    den: int = 1

    @staticmethod
    def of(value: "int | str | Extent") -> "Extent":
        if isinstance(value, Extent):
            return value
        if isinstance(value, int):
            return Extent(num=value)
        return Extent(syms=(value,))

    def normalized(self) -> "Extent":
        g = math.gcd(self.num, self.den)
        return Extent(self.num // g, tuple(sorted(self.syms)), self.den // g)

    def value(self, dims: dict[str, int]) -> int:
        v = self.num
        for s in self.syms:
            if s not in dims:
                raise IrError(f"unbound dimension symbol {s}", "unbound-dim")
            v *= dims[s]
        if v % self.den != 0:
            raise IrError(f"extent {self} does not divide evenly", "bad-extent")
        return v // self.den

    def maybe_value(self, dims: dict[str, int]) -> int | None:
        try:
            return self.value(dims)
        except IrError:
            return None

    def divided_by(self, k: int) -> "Extent":
        return Extent(self.num, self.syms, self.den * k).normalized()


# --------------------------------------------------------------------------- #
# Statements

@dataclass(frozen=True)
class Access:
    array: str
    indices: tuple[Affine, ...]


@dataclass(frozen=True)
class FloatVal:
    value: float


Value = Union[Access, FloatVal, Affine]


@dataclass(frozen=True)
class Guard:
    """Executes the statement only when expr < bound; bound is ref-free."""

    expr: Affine
    bound: Affine


@dataclass(frozen=True)
class Operation:
    output: Access
    acc: bool = False
    fn: str | None = None
    inputs: tuple[Value, ...] = ()
    guards: tuple[Guard, ...] = ()

    def values(self) -> Iterator[Value]:
        yield from self.inputs

    def accesses(self) -> Iterator[tuple[Access, bool]]:
        """(access, is_write) pairs; the output of an accumulate also reads."""
        yield self.output, True
        for v in self.inputs:
            if isinstance(v, Access):
                yield v, False

    def all_refs(self) -> frozenset[int]:
        refs: set[int] = set()
        for a, _ in self.accesses():
            for ix in a.indices:
                refs |= ix.refs
        for v in self.inputs:
            if isinstance(v, Affine):
                refs |= v.refs
        for g in self.guards:
            refs |= g.expr.refs
        return frozenset(refs)


# --------------------------------------------------------------------------- #
# Tree

@dataclass(frozen=True)
class Leaf:
    op: Operation


@dataclass(frozen=True)
class Scope:
    extent: Extent
    suffix: str | None = None
    children: tuple["Node", ...] = ()


Node = Union[Scope, Leaf]


@dataclass(frozen=True)
class Dim:
    extent: Extent
    materialized: bool = True


@dataclass(frozen=True)
class BufferDecl:
    name: str
    dtype: str
    dims: tuple[Dim, ...]
    location: str = "heap"
    arrays: tuple[str, ...] = ()

    def array_names(self) -> tuple[str, ...]:
        return self.arrays if self.arrays else (self.name,)

    def footprint_elems(self, dims: dict[str, int]) -> int:
        n = 1
        for d in self.dims:
            if d.materialized:
                n *= d.extent.value(dims)
        return n

    def footprint_bytes(self, dims: dict[str, int]) -> int:
        return self.footprint_elems(dims) * DTYPES[self.dtype]


@dataclass(frozen=True)
class Program:
    name: str = "kernel"
    dim_binding: tuple[tuple[str, int], ...] = ()
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    buffers: tuple[BufferDecl, ...] = ()
    body: tuple[Node, ...] = ()

    def dims(self) -> dict[str, int]:
        return dict(self.dim_binding)

    def buffer_of(self, array: str) -> BufferDecl | None:
        for b in self.buffers:
            if array in b.array_names():
                return b
        return None

    def buffer_named(self, name: str) -> BufferDecl | None:
        for b in self.buffers:
            if b.name == name:
                return b
        return None

    def interface_buffers(self) -> tuple[BufferDecl, ...]:
        io = set(self.inputs) | set(self.outputs)
        return tuple(b for b in self.buffers if io & set(b.array_names()))

    def is_interface(self, buffer: BufferDecl) -> bool:
        io = set(self.inputs) | set(self.outputs)
        return bool(io & set(buffer.array_names()))


# --------------------------------------------------------------------------- #
# Tree navigation

Path = tuple[int, ...]


def node_at(p: Program, path: Path) -> Node:
    nodes: tuple[Node, ...] = p.body
    node: Node | None = None
    for i in path:
        node = nodes[i]
        nodes = node.children if isinstance(node, Scope) else ()
    if node is None:
        raise IrError(f"empty path {path}")
    return node


def replace_at(p: Program, path: Path, new_nodes: tuple[Node, ...]) -> Program:
    """Replace the node at path with zero or more nodes (splice)."""

    def rebuild(nodes: tuple[Node, ...], rel: Path) -> tuple[Node, ...]:
        i = rel[0]
        if len(rel) == 1:
            return nodes[:i] + new_nodes + nodes[i + 1:]
        scope = nodes[i]
        assert isinstance(scope, Scope)
        return nodes[:i] + (replace(scope, children=rebuild(scope.children, rel[1:])),) + nodes[i + 1:]

    return replace(p, body=rebuild(p.body, path))


def walk(p: Program) -> Iterator[tuple[Path, Node]]:
    """Pre-order traversal of the whole forest."""
    stack: list[tuple[Path, Node]] = [((i,), n) for i, n in reversed(list(enumerate(p.body)))]
    while stack:
        path, node = stack.pop()
        yield path, node
        if isinstance(node, Scope):
            for i in range(len(node.children) - 1, -1, -1):
                stack.append((path + (i,), node.children[i]))


def iter_leaves(p: Program) -> Iterator[tuple[Path, Leaf]]:
    for path, n in walk(p):
        if isinstance(n, Leaf):
            yield path, n


def iter_scopes(p: Program) -> Iterator[tuple[Path, Scope]]:
    for path, n in walk(p):
        if isinstance(n, Scope):
            yield path, n


def ancestor_scopes(p: Program, leaf_path: Path) -> list[tuple[Path, Scope]]:
    """Enclosing scopes of a node, outermost first; depth d = index in this list."""
    out: list[tuple[Path, Scope]] = []
    nodes: tuple[Node, ...] = p.body
    for k, i in enumerate(leaf_path[:-1]):
        n = nodes[i]
        assert isinstance(n, Scope)
        out.append((leaf_path[: k + 1], n))
        nodes = n.children
    return out


def leaf_depth(leaf_path: Path) -> int:
    return len(leaf_path) - 1


# --------------------------------------------------------------------------- #
# Site references

@dataclass(frozen=True)
class SiteRef:
    """Unique reference to a code location.

    kind "scope": scope at `depth` of the nest enclosing the anchor operation,
    counted from the outermost enclosing scope (depth 0). kind "op": the anchor
    operation leaf itself. kind "buffer_dim"/"buffer": memory declarations.
    The anchor is an output-array name, optionally `name#k` to pick the k-th
    leaf writing that array when several do.
    """

    kind: str  # scope | op | buffer_dim | buffer
    anchor: str
    depth: int = 0

    def text(self) -> str:
        if self.kind == "scope":
            return f"{self.anchor}@{self.depth}"
        if self.kind == "op":
            return f"{self.anchor}@op"
        if self.kind == "buffer_dim":
            return f"{self.anchor}.{self.depth}"
        return f"buf:{self.anchor}"

    @staticmethod
    def parse(text: str) -> "SiteRef":
        if text.startswith("buf:"):
            return SiteRef("buffer", text[4:])
        if "@" in text:
            anchor, _, d = text.rpartition("@")
            if d == "op":
                return SiteRef("op", anchor)
            return SiteRef("scope", anchor, int(d))
        if "." in text:
            anchor, _, d = text.rpartition(".")
            return SiteRef("buffer_dim", anchor, int(d))
        raise SiteError(f"malformed site reference {text!r}")


# Writer-anchor lookup is hot during move enumeration; cache it per program
# identity (the key entry keeps the program alive, so ids cannot be reused).
_ANCHOR_CACHE_LIMIT = 16
_anchor_cache: dict[int, tuple["Program", dict[str, list[Path]]]] = {}


def _writer_map(p: Program) -> dict[str, list[Path]]:
    hit = _anchor_cache.get(id(p))
    if hit is not None and hit[0] is p:
        return hit[1]
    writers: dict[str, list[Path]] = {}
    for path, leaf in iter_leaves(p):
        writers.setdefault(leaf.op.output.array, []).append(path)
    if len(_anchor_cache) >= _ANCHOR_CACHE_LIMIT:
        _anchor_cache.pop(next(iter(_anchor_cache)))
    _anchor_cache[id(p)] = (p, writers)
    return writers


def _anchor_candidates(p: Program, name: str) -> list[Path]:
    return _writer_map(p).get(name, [])


def anchor_leaf(p: Program, anchor: str) -> Path:
    """Resolve `name` or `name#k` to the path of a unique operation leaf."""
    name, _, k = anchor.partition("#")
    cands = _anchor_candidates(p, name)
    if not cands:
        raise SiteError(f"no operation writes array {name!r}", "site-not-found")
    if k:
        idx = int(k)
        if idx >= len(cands):
            raise SiteError(f"only {len(cands)} operations write {name!r}", "site-not-found")
        return cands[idx]
    if len(cands) > 1:
        names = tuple(f"{name}#{i}" for i in range(len(cands)))
        raise AmbiguousSiteError(
            f"{len(cands)} operations write {name!r}: {', '.join(names)}", names
        )
    return cands[0]


def anchor_for_leaf(p: Program, leaf_path: Path) -> str:
    leaf = node_at(p, leaf_path)
    assert isinstance(leaf, Leaf)
    name = leaf.op.output.array
    cands = _anchor_candidates(p, name)
    if len(cands) == 1:
        return name
    return f"{name}#{cands.index(leaf_path)}"


def resolve_site(p: Program, ref: SiteRef):
    """Resolve a site reference to a handle: (path, node) or (buffer, dim index)."""
    if ref.kind in ("scope", "op"):
        leaf_path = anchor_leaf(p, ref.anchor)
        if ref.kind == "op":
            return leaf_path, node_at(p, leaf_path)
        nest = ancestor_scopes(p, leaf_path)
        if ref.depth >= len(nest):
            raise SiteError(
                f"anchor {ref.anchor!r} has {len(nest)} enclosing scopes, "
                f"depth {ref.depth} does not exist"
            )
        return nest[ref.depth]
    buf = p.buffer_named(ref.anchor)
    if buf is None:
        raise SiteError(f"no buffer named {ref.anchor!r}")
    if ref.kind == "buffer":
        return buf
    if ref.depth >= len(buf.dims):
        raise SiteError(f"buffer {ref.anchor!r} has {len(buf.dims)} dims")
    return buf, ref.depth


# --------------------------------------------------------------------------- #
# Validation

@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    where: str = ""

    def __str__(self):
        return f"[{self.code}] {self.message}" + (f" (at {self.where})" if self.where else "")


def validate(p: Program) -> list[Violation]:
    """Structural and semantic invariant checks; empty list means valid."""
    out: list[Violation] = []
    dims = p.dims()

    arrays: dict[str, BufferDecl] = {}
    for b in p.buffers:
        if b.dtype not in DTYPES:
            out.append(Violation("bad-dtype", f"buffer {b.name}: unknown dtype {b.dtype}"))
        if b.location not in LOCATIONS:
            out.append(Violation("bad-location", f"buffer {b.name}: {b.location}"))
        if not b.dims:
            out.append(Violation("bad-shape", f"buffer {b.name}: needs at least one dim"))
        for a in b.array_names():
            if a in arrays:
                out.append(Violation("duplicate-array", f"array {a} declared twice"))
            arrays[a] = b

    for io_name in (*p.inputs, *p.outputs):
        if io_name not in arrays:
            out.append(Violation("unresolved-array", f"io array {io_name} has no buffer"))

    for path, node in walk(p):
        if isinstance(node, Scope):
            if node.suffix is not None and node.suffix not in SUFFIXES:
                out.append(Violation("bad-suffix", f"scope suffix :{node.suffix}", str(path)))
            v = node.extent.maybe_value(dims)
            if v is not None and v <= 0:
                out.append(Violation("bad-extent", f"extent {v} not positive", str(path)))
            continue
        op = node.op
        depth = leaf_depth(path)
        writes_input = op.output.array in p.inputs
        if writes_input:
            out.append(Violation("write-to-input", f"operation writes input {op.output.array}", str(path)))
        for access, is_write in op.accesses():
            buf = arrays.get(access.array)
            if buf is None:
                out.append(Violation("unresolved-array", f"array {access.array} has no buffer", str(path)))
                continue
            if len(access.indices) != len(buf.dims):
                out.append(Violation(
                    "rank-mismatch",
                    f"{access.array} indexed with {len(access.indices)} of {len(buf.dims)} dims",
                    str(path),
                ))
            if not is_write and access.array == op.output.array and access != op.output:
                out.append(Violation(
                    "dependent-iteration",
                    f"{access.array} read at a different index than it is written",
                    str(path),
                ))
        for ix in _leaf_affines(op):
            for r in ix.refs:
                if r >= depth:
                    out.append(Violation(
                        "index-out-of-range",
                        f"index ref {{{r}}} exceeds {depth} enclosing scopes",
                        str(path),
                    ))
        for g in op.guards:
            if g.bound.refs:
                out.append(Violation("bad-guard", "guard bound must be loop-invariant", str(path)))
        if op.fn is not None:
            want = 2 if op.fn in BINARY_FNS else 1
            if op.fn not in FNS:
                out.append(Violation("bad-fn", f"unknown builtin {op.fn}", str(path)))
            elif len(op.inputs) != want:
                out.append(Violation("bad-fn", f"{op.fn} takes {want} inputs", str(path)))
        elif len(op.inputs) != 1:
            out.append(Violation("bad-fn", "plain assignment takes one value", str(path)))

    out.extend(_check_reuse_consistency(p))
    return out


def _leaf_affines(op: Operation) -> Iterator[Affine]:
    for a, _ in op.accesses():
        yield from a.indices
    for v in op.inputs:
        if isinstance(v, Affine):
            yield v
    for g in op.guards:
        yield g.expr


def _check_reuse_consistency(p: Program) -> list[Violation]:
    # Deferred import: analysis builds on this module.
    from . import analysis

    out = []
    for b in p.buffers:
        for k, d in enumerate(b.dims):
            if d.materialized:
                continue
            if not analysis.dim_reuse_consistent(p, b, k):
                out.append(Violation(
                    "reuse-unsafe",
                    f"non-materialized dim {k} of buffer {b.name} is indexed from more "
                    f"than one scope",
                ))
    return out
