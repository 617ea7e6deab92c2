"""Bidirectional textual format for programs.

One node per line; a line's `|` prefix depth gives its parent. Scope chains may
be written inline (`N M z[{0},{1}]=...`) when parsing; the printer always emits
the canonical one-node-per-line form. The buffer section follows the body after
a blank line, one declaration per line:

    buffer_name dtype [dim1,dim2:N] location -> array_names

Headers are `#`-prefixed: `# kernel: name`, `# dims: N=64 M=32`, `# io: x -> z`.
"""

from __future__ import annotations

import re

from .ir import (
    Access, Affine, BufferDecl, Dim, Extent, FloatVal, Guard, Leaf, Operation,
    ParseError, Program, Scope, Term, Node, Value,
    BINARY_FNS, FNS, INFIX, LOCATIONS, DTYPES, SUFFIXES, validate,
)

_NAME = r"[A-Za-z_]\w*"
_SCOPE_RE = re.compile(
    rf"^(?:\d+|{_NAME})(?:\*(?:\d+|{_NAME}))*(?:/\d+)?(?::[a-zA-Z]\w*)?$"
)
_ACCESS_START = re.compile(rf"^({_NAME})\[")
_CONTROL_KEYWORDS = {"while", "for", "do", "if", "else"}
_FLOAT_RE = re.compile(r"^-?(?:\d+\.\d*|\.\d+|\d+\.?\d*[eE][-+]?\d+|inf)$")


class _Cursor:
    """Character scanner for one statement; tracks position for errors."""

    def __init__(self, text: str, line: int):
        self.text = text
        self.pos = 0
        self.line = line

    def error(self, message: str, code: str | None = None) -> ParseError:
        return ParseError(message, self.line, self.pos + 1, code)

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self, n: int = 1) -> str:
        s = self.text[self.pos:self.pos + n]
        self.pos += n
        return s

    def skip_ws(self):
        while self.peek() in (" ", "\t"):
            self.pos += 1

    def expect(self, ch: str):
        if self.take() != ch:
            self.pos -= 1
            raise self.error(f"expected {ch!r}")

    def at_end(self) -> bool:
        self.skip_ws()
        return self.pos >= len(self.text)

    def match_name(self) -> str | None:
        m = re.match(_NAME, self.text[self.pos:])
        if not m:
            return None
        self.pos += m.end()
        return m.group(0)

    def match_int(self) -> int | None:
        m = re.match(r"\d+", self.text[self.pos:])
        if not m:
            return None
        self.pos += m.end()
        return int(m.group(0))


def _split_top_level(text: str, sep: str, line: int) -> list[str]:
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch in "[{(":
            depth += 1
        elif ch in "]})":
            depth -= 1
            if depth < 0:
                raise ParseError("unbalanced brackets", line, i + 1)
        elif ch == sep and depth == 0:
            parts.append(text[start:i])
            start = i + 1
    parts.append(text[start:])
    return parts


def _find_top_operators(text: str, line: int) -> list[int]:
    """Positions of binary +-*/ at bracket depth 0, skipping signs and exponents."""
    ops, depth = [], 0
    prev_meaningful = ""
    i = 0
    while i < len(text):
        ch = text[i]
        if ch in "[{(":
            depth += 1
        elif ch in "]})":
            depth -= 1
        elif depth == 0 and ch in "+-*/":
            is_sign = ch in "+-" and (
                prev_meaningful == "" or prev_meaningful in "+-*/(,"
                or (prev_meaningful in "eE" and i >= 2 and (text[i - 2].isdigit() or text[i - 2] == "."))
            )
            if not is_sign:
                ops.append(i)
        if not ch.isspace():
            prev_meaningful = ch
        i += 1
    return ops


# --------------------------------------------------------------------------- #
# Expression parsing

def _parse_affine(text: str, line: int) -> Affine:
    if "[" in text:
        raise ParseError(
            "array access inside an index expression (indirection is not supported)",
            line, 1, "excluded-indirection",
        )
    cur = _Cursor(text.strip(), line)
    terms: list[Term] = []
    sign = 1
    cur.skip_ws()
    if cur.peek() == "-":
        cur.take()
        sign = -1
    elif cur.peek() == "+":
        cur.take()
    while True:
        terms.append(_parse_term(cur, sign))
        cur.skip_ws()
        if cur.at_end():
            break
        ch = cur.take()
        if ch == "+":
            sign = 1
        elif ch == "-":
            sign = -1
        else:
            raise cur.error(f"unexpected {ch!r} in index expression")
    return Affine(tuple(terms)).normalized()


def _parse_term(cur: _Cursor, sign: int) -> Term:
    coef = sign
    syms: list[str] = []
    ref: int | None = None
    saw_factor = False
    while True:
        cur.skip_ws()
        if cur.peek() == "{":
            cur.take()
            d = cur.match_int()
            if d is None:
                raise cur.error("expected scope depth inside {}")
            cur.expect("}")
            if ref is not None:
                raise cur.error("index expressions must be linear in loop refs")
            ref = d
        elif cur.peek().isdigit():
            coef *= cur.match_int()
        else:
            name = cur.match_name()
            if name is None:
                raise cur.error("expected index term")
            syms.append(name)
        saw_factor = True
        cur.skip_ws()
        if cur.peek() == "*":
            cur.take()
            continue
        break
    if not saw_factor:
        raise cur.error("empty index term")
    return Term(coef, tuple(syms), ref)


def _parse_extent(token: str, line: int) -> Extent:
    num, den, syms = 1, 1, []
    head, _, tail = token.partition("/")
    if not head:
        raise ParseError(f"malformed extent {token!r}", line)
    if tail:
        if not tail.isdigit():
            raise ParseError(f"extent divisor must be an integer in {token!r}", line)
        den = int(tail)
    for factor in head.split("*"):
        if factor.isdigit():
            num *= int(factor)
        elif re.fullmatch(_NAME, factor):
            syms.append(factor)
        else:
            raise ParseError(f"malformed extent {token!r}", line)
    return Extent(num, tuple(syms), den).normalized()


def _parse_access(text: str, line: int) -> Access:
    m = _ACCESS_START.match(text.strip())
    if not m:
        raise ParseError(f"expected array access, got {text.strip()!r}", line)
    body = text.strip()
    if not body.endswith("]"):
        raise ParseError("unterminated array access", line)
    inner = body[m.end():-1]
    indices = []
    for part in _split_top_level(inner, ",", line):
        indices.append(_parse_affine(part, line))
    return Access(m.group(1), tuple(indices))


def _parse_value(text: str, line: int) -> Value:
    s = text.strip()
    while s.startswith("(") and s.endswith(")") and _balanced(s[1:-1]):
        s = s[1:-1].strip()
    if not s:
        raise ParseError("empty value", line)
    if _ACCESS_START.match(s):
        return _parse_access(s, line)
    if _FLOAT_RE.match(s):
        return FloatVal(float(s))
    return _parse_affine(s, line)


def _balanced(s: str) -> bool:
    depth = 0
    for ch in s:
        if ch in "[{(":
            depth += 1
        elif ch in "]})":
            depth -= 1
            if depth < 0:
                return False
    return depth == 0


def _parse_statement(text: str, line: int) -> Operation:
    stmt = text.strip()
    guards: list[Guard] = []
    if " if " in stmt:
        stmt, _, guard_text = stmt.partition(" if ")
        for clause in guard_text.split(" and "):
            lhs, sep, rhs = clause.partition("<")
            if not sep:
                raise ParseError(f"guard must be of the form expr<bound: {clause!r}", line)
            guards.append(Guard(_parse_affine(lhs, line), _parse_affine(rhs, line)))
    acc = False
    if "+=" in stmt:
        out_text, _, rhs_text = stmt.partition("+=")
        acc = True
    elif "=" in stmt:
        out_text, _, rhs_text = stmt.partition("=")
    else:
        raise ParseError(f"statement has no assignment: {stmt!r}", line)
    output = _parse_access(out_text, line)
    fn, inputs = _parse_rhs(rhs_text.strip(), line)
    op = Operation(output, acc, fn, tuple(inputs), tuple(guards))
    for v in op.inputs:
        if isinstance(v, Access) and v.array == output.array and v != output:
            raise ParseError(
                f"{output.array} is read at a different index than it is written "
                f"(dependent iteration is not supported)",
                line, 1, "excluded-dependent-iteration",
            )
    return op


def _parse_rhs(rhs: str, line: int) -> tuple[str | None, list[Value]]:
    if not rhs:
        raise ParseError("empty right-hand side", line)
    m = re.match(rf"^({_NAME})\(", rhs)
    if m and m.group(1) in FNS and rhs.endswith(")"):
        fn = m.group(1)
        args = [_parse_value(a, line) for a in _split_top_level(rhs[m.end():-1], ",", line)]
        return fn, args
    ops = _find_top_operators(rhs, line)
    if len(ops) == 1:
        i = ops[0]
        fn = {"+": "add", "-": "sub", "*": "mul", "/": "div"}[rhs[i]]
        return fn, [_parse_value(rhs[:i], line), _parse_value(rhs[i + 1:], line)]
    if len(ops) > 1:
        if "[" not in rhs and not _FLOAT_RE.match(rhs):
            return None, [_parse_affine(rhs, line)]
        raise ParseError(
            f"one builtin per statement; split {rhs!r} into separate operations", line
        )
    return None, [_parse_value(rhs, line)]


# --------------------------------------------------------------------------- #
# Program parsing

def _bar_depth(line: str) -> tuple[int, str]:
    d = 0
    while d < len(line) and line[d] == "|":
        d += 1
    return d, line[d:].strip()


def _parse_body_line(content: str, line_no: int) -> tuple[list[Scope], Operation | None]:
    """A body line is zero or more inline scopes, optionally ending in a statement."""
    scopes: list[Scope] = []
    rest = content
    while rest:
        token, _, tail = rest.partition(" ")
        if token in _CONTROL_KEYWORDS:
            raise ParseError(
                f"{token!r} loops are not supported (general control flow is excluded)",
                line_no, 1, "excluded-control-flow",
            )
        if _SCOPE_RE.match(token) and "=" not in token:
            name, _, suffix = token.partition(":")
            if suffix and suffix not in SUFFIXES:
                raise ParseError(f"unknown scope suffix :{suffix}", line_no)
            scopes.append(Scope(_parse_extent(name, line_no), suffix or None))
            rest = tail.strip()
            continue
        if "[" in token and "=" not in token and "=" in tail:
            if tail.lstrip().startswith(("=", "+=")):
                raise ParseError(
                    "no spaces around assignment operators", line_no
                )
            raise ParseError(
                f"scope extent {token!r} depends on an index "
                f"(data-dependent ranges are not supported)",
                line_no, 1, "excluded-data-dependent-range",
            )
        return scopes, _parse_statement(rest, line_no)
    return scopes, None


def _parse_buffer_line(content: str, line_no: int) -> BufferDecl:
    m = re.match(
        rf"^({_NAME})\s+(\w+)\s+\[([^\]]*)\]\s+(\w+)(?:\s*->\s*(.*))?$", content
    )
    if not m:
        raise ParseError(f"malformed buffer declaration: {content!r}", line_no)
    name, dtype, dims_text, location, arrays_text = m.groups()
    if dtype not in DTYPES:
        raise ParseError(f"unknown dtype {dtype!r}", line_no)
    if location not in LOCATIONS:
        raise ParseError(f"unknown location {location!r}", line_no)
    dims = []
    for part in dims_text.split(","):
        part = part.strip()
        if not part:
            raise ParseError("empty buffer dimension", line_no)
        materialized = True
        if part.endswith(":N"):
            materialized = False
            part = part[:-2]
        dims.append(Dim(_parse_extent(part, line_no), materialized))
    arrays = ()
    if arrays_text:
        arrays = tuple(a.strip() for a in arrays_text.split(",") if a.strip())
    return BufferDecl(name, dtype, tuple(dims), location, arrays)


def parse_program(text: str, name: str = "kernel", check: bool = True) -> Program:
    """Parse the textual form; raises ParseError with a stable code on rejection."""
    dim_binding: list[tuple[str, int]] = []
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    prog_name = name

    root: list[Node] = []
    # Stack of (bar_depth, children_list) for open scopes.
    stack: list[tuple[int, list[Node]]] = []
    buffers: list[BufferDecl] = []
    in_buffers = False
    saw_body = False

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        if not line.strip():
            if saw_body:
                in_buffers = True
            continue
        if line.lstrip().startswith("#"):
            body = line.lstrip()[1:].strip()
            if body.startswith("kernel:"):
                prog_name = body[len("kernel:"):].strip()
            elif body.startswith("dims:"):
                for pair in body[len("dims:"):].split():
                    k, _, v = pair.partition("=")
                    if not v or not re.fullmatch(_NAME, k):
                        raise ParseError(f"malformed dims binding {pair!r}", line_no)
                    dim_binding.append((k, int(v)))
            elif body.startswith("io:"):
                ins, _, outs = body[len("io:"):].partition("->")
                inputs = tuple(a.strip() for a in ins.split(",") if a.strip())
                outputs = tuple(a.strip() for a in outs.split(",") if a.strip())
            continue

        depth, content = _bar_depth(line)
        if in_buffers or (not saw_body and depth == 0 and re.match(
                rf"^{_NAME}\s+\w+\s+\[", content)):
            in_buffers = True
            buffers.append(_parse_buffer_line(content, line_no))
            continue

        saw_body = True
        scopes, op = _parse_body_line(content, line_no)
        while stack and stack[-1][0] >= depth:
            stack.pop()
        if stack and depth > stack[-1][0] + 1:
            raise ParseError(f"child at bar depth {depth} has no parent", line_no)
        if not stack and depth > 0:
            raise ParseError(f"child at bar depth {depth} has no parent", line_no)

        siblings = stack[-1][1] if stack else root
        new_nodes: list[Node] = []
        chain = siblings
        for s in scopes:
            node_children: list[Node] = []
            fresh = Scope(s.extent, s.suffix, ())
            chain.append((fresh, node_children))  # type: ignore[arg-type]
            chain = node_children
            new_nodes.append(fresh)
        if op is not None:
            chain.append(Leaf(op))  # type: ignore[arg-type]
        if scopes:
            stack.append((depth, chain))

    program = Program(
        name=prog_name,
        dim_binding=tuple(dim_binding),
        inputs=inputs,
        outputs=outputs,
        buffers=tuple(buffers),
        body=_freeze(root),
    )
    if check:
        problems = validate(program)
        if problems:
            v = problems[0]
            raise ParseError(v.message, 0, 0, v.code)
    return program


def _freeze(nodes: list) -> tuple[Node, ...]:
    out = []
    for n in nodes:
        if isinstance(n, tuple):
            scope, children = n
            out.append(Scope(scope.extent, scope.suffix, _freeze(children)))
        else:
            out.append(n)
    return tuple(out)


# --------------------------------------------------------------------------- #
# Printing

def format_affine(a: Affine) -> str:
    if not a.terms:
        return "0"
    parts = []
    for i, t in enumerate(a.terms):
        factors = []
        coef = abs(t.coef)
        if coef != 1 or (not t.syms and t.ref is None):
            factors.append(str(coef))
        factors.extend(t.syms)
        if t.ref is not None:
            factors.append(f"{{{t.ref}}}")
        body = "*".join(factors)
        if i == 0:
            parts.append(("-" if t.coef < 0 else "") + body)
        else:
            parts.append(("-" if t.coef < 0 else "+") + body)
    return "".join(parts)


def format_extent(e: Extent) -> str:
    parts = []
    if e.num != 1 or not e.syms:
        parts.append(str(e.num))
    parts.extend(e.syms)
    text = "*".join(parts)
    if e.den != 1:
        text += f"/{e.den}"
    return text


def format_value(v: Value) -> str:
    if isinstance(v, Access):
        return f"{v.array}[{','.join(format_affine(ix) for ix in v.indices)}]"
    if isinstance(v, FloatVal):
        return repr(v.value)
    return format_affine(v)


def _format_operand(v: Value) -> str:
    text = format_value(v)
    if isinstance(v, Affine) and (
        len(v.terms) > 1 or any(len(t.syms) + (t.ref is not None) + (abs(t.coef) != 1) > 1 for t in v.terms)
    ):
        return f"({text})"
    return text


def format_operation(op: Operation) -> str:
    if op.fn is None:
        rhs = format_value(op.inputs[0])
    elif op.fn in INFIX:
        rhs = f"{_format_operand(op.inputs[0])}{INFIX[op.fn]}{_format_operand(op.inputs[1])}"
    else:
        rhs = f"{op.fn}({','.join(format_value(v) for v in op.inputs)})"
    text = f"{format_value(op.output)}{'+=' if op.acc else '='}{rhs}"
    if op.guards:
        clauses = " and ".join(
            f"{format_affine(g.expr)}<{format_affine(g.bound)}" for g in op.guards
        )
        text += f" if {clauses}"
    return text


def format_buffer(b: BufferDecl) -> str:
    dims = ",".join(
        format_extent(d.extent) + ("" if d.materialized else ":N") for d in b.dims
    )
    text = f"{b.name} {b.dtype} [{dims}] {b.location}"
    if b.arrays and b.arrays != (b.name,):
        text += " -> " + ",".join(b.arrays)
    return text


def print_program(p: Program) -> str:
    """Canonical text: headers, one node per line, blank line, buffer section."""
    lines = [f"# kernel: {p.name}"]
    if p.dim_binding:
        lines.append("# dims: " + " ".join(f"{k}={v}" for k, v in p.dim_binding))
    if p.inputs or p.outputs:
        lines.append(f"# io: {', '.join(p.inputs)} -> {', '.join(p.outputs)}")

    def emit(nodes: tuple[Node, ...], depth: int):
        for n in nodes:
            if isinstance(n, Scope):
                suffix = f":{n.suffix}" if n.suffix else ""
                lines.append("|" * depth + format_extent(n.extent) + suffix)
                emit(n.children, depth + 1)
            else:
                lines.append("|" * depth + format_operation(n.op))

    emit(p.body, 0)
    lines.append("")
    for b in p.buffers:
        lines.append(format_buffer(b))
    return "\n".join(lines) + "\n"
