"""C99 code generation and the optional native measurement harness.

Code is emitted from the lowered tape, so loops, masked statements, and
implicit reduction-init writes match the reference interpreter exactly.
Arithmetic is performed in double and stores cast to the buffer dtype, which
keeps native outputs within tolerance of interpreted ones.

ABI: the entry point takes one pointer per interface buffer, in declaration
order, inputs first qualified const. The kernel zeroes its outputs on entry.
"""

from __future__ import annotations

import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np

from .ir import IrError, Program, iter_scopes
from .lower import (
    IN_IDX, IN_IMM, IN_MEM, Lowered, OP_END, OP_EXEC, OP_LOOP, lower,
)

_C_TYPE = {"f32": "float", "f64": "double", "i32": "int32_t"}
_NP_TYPE = {"f32": np.float32, "f64": np.float64, "i32": np.int32}


class UnsupportedBackendError(IrError):
    code = "unsupported-backend"


class CompileError(IrError):
    code = "compile-failure"


class RunTimeout(IrError):
    code = "timeout"


@dataclass(frozen=True)
class EmitResult:
    source: str
    entry: str
    signature: str
    interface: tuple[str, ...]  # interface buffer names, declaration order


def _fmt_double(v: float) -> str:
    return repr(float(v))


def _aff_expr(low: Lowered, aff_id: int, base_shift: int = 0) -> str:
    o = int(low.aff_ptr[aff_id])
    base = int(low.aff[o]) + base_shift
    n = int(low.aff[o + 1])
    parts = []
    if base or n == 0:
        parts.append(str(base))
    for i in range(n):
        slot = int(low.aff[o + 2 + 2 * i])
        coef = int(low.aff[o + 3 + 2 * i])
        parts.append(f"i{slot}" if coef == 1 else f"{coef}*i{slot}")
    return " + ".join(parts) if parts else "0"


_FN_C = {
    1: "({0} + {1})", 2: "({0} - {1})", 3: "({0} * {1})", 4: "({0} / {1})",
    5: "fmax({0}, {1})", 6: "fmin({0}, {1})", 7: "exp({0})", 8: "log({0})",
    9: "sqrt({0})", 10: "fabs({0})",
}

_PRAGMAS = {"u": "#pragma GCC unroll {extent}", "p": "#pragma omp parallel for", "v": "#pragma omp simd"}


def emit(p: Program, dims: dict[str, int] | None = None, harness: bool = False) -> EmitResult:
    """Deterministic C99 source for a fully bound program."""
    gpu = [s.suffix for _, s in iter_scopes(p) if s.suffix in ("g", "b", "w")]
    if gpu:
        raise UnsupportedBackendError(
            f"GPU scope suffixes ({', '.join(':' + s for s in sorted(set(gpu)))}) have no C backend"
        )
    low = lower(p, dims)
    interface = [b for b in low.buffers if p.is_interface(p.buffer_named(b.name))]
    temps = [b for b in low.buffers if not p.is_interface(p.buffer_named(b.name))]
    input_bufs = {low.buffer_for_array(a).name for a in p.inputs}
    loop_suffix = {l.pos: (l.suffix, l.extent) for l in low.loops}

    params = []
    for b in interface:
        qual = "const " if b.name in input_bufs else ""
        params.append(f"{qual}{_C_TYPE[b.dtype]}* {b.name}")
    entry = f"kernel_{p.name}"
    signature = f"void {entry}({', '.join(params)})"

    lines: list[str] = [
        "/* generated by loopgym */",
        "#define _POSIX_C_SOURCE 199309L",
        "#include <math.h>",
        "#include <stdint.h>",
        "#include <stdlib.h>",
        "#include <string.h>",
        "",
        f"{signature} {{",
    ]
    indent = 1

    def w(s: str):
        lines.append("    " * indent + s)

    for b in interface:
        if b.name not in input_bufs:
            w(f"memset({b.name}, 0, {b.size} * sizeof({_C_TYPE[b.dtype]}));")
    for b in temps:
        decl = p.buffer_named(b.name)
        if decl.location == "stack":
            w(f"{_C_TYPE[b.dtype]} {b.name}[{b.size}];")
            w(f"memset({b.name}, 0, sizeof({b.name}));")
        else:
            w(f"{_C_TYPE[b.dtype]}* {b.name} = calloc({b.size}, sizeof({_C_TYPE[b.dtype]}));")

    code = low.code.tolist()

    def value_expr(kind: int, a: int, b: int) -> str:
        if kind == IN_MEM:
            buf = low.buffers[a]
            return f"(double){buf.name}[{_aff_expr(low, b, -buf.offset)}]"
        if kind == IN_IMM:
            return _fmt_double(low.consts[a])
        return f"(double)({_aff_expr(low, a)})"

    pc = 0
    while pc < len(code):
        op = code[pc]
        if op == OP_LOOP:
            slot, extent = code[pc + 1], code[pc + 2]
            suffix, _ = loop_suffix.get(pc, (None, None))
            if suffix in _PRAGMAS:
                w(_PRAGMAS[suffix].format(extent=extent))
            w(f"for (long i{slot} = 0; i{slot} < {extent}; ++i{slot}) {{")
            indent += 1
            pc += 4
        elif op == OP_END:
            indent -= 1
            w("}")
            pc += 4
        else:  # OP_EXEC
            fn, acc, out_bi, out_aff = code[pc + 2], code[pc + 3], code[pc + 5], code[pc + 6]
            i = pc + 7
            n_guard = code[i]
            i += 1
            guards = []
            for _ in range(n_guard):
                guards.append(f"{_aff_expr(low, code[i])} < {code[i + 1]}")
                i += 2
            n_in = code[i]
            i += 1
            vals = []
            for _ in range(n_in):
                vals.append(value_expr(code[i], code[i + 1], code[i + 2]))
                i += 3
            expr = vals[0] if fn == 0 else _FN_C[fn].format(*vals)
            out = low.buffers[out_bi]
            target = f"{out.name}[{_aff_expr(low, out_aff, -out.offset)}]"
            if acc:
                expr = f"(double){target} + {expr}"
            ctype = _C_TYPE[out.dtype]
            cast = f"({ctype})rint({expr})" if out.dtype == "i32" else f"({ctype})({expr})"
            stmt = f"{target} = {cast};"
            if guards:
                stmt = f"if ({' && '.join(guards)}) {{ {stmt} }}"
            w(stmt)
            pc = code[pc + 1]

    for b in temps:
        if p.buffer_named(b.name).location != "stack":
            w(f"free({b.name});")
    indent -= 1
    lines.append("}")
    source = "\n".join(lines) + "\n"
    if harness:
        source += _harness(p, low, interface, input_bufs, entry)
    return EmitResult(source, entry, signature, tuple(b.name for b in interface))


def _harness(p: Program, low: Lowered, interface, input_bufs, entry: str) -> str:
    """main() reading inputs from <dir>/<buffer>.bin, printing the median time."""
    l: list[str] = [
        "",
        "#include <stdio.h>",
        "#include <time.h>",
        "",
        "static double now_sec(void) {",
        "    struct timespec ts;",
        "    clock_gettime(CLOCK_MONOTONIC, &ts);",
        "    return ts.tv_sec + 1e-9 * ts.tv_nsec;",
        "}",
        "",
        "static int cmp_double(const void* a, const void* b) {",
        "    double x = *(const double*)a, y = *(const double*)b;",
        "    return (x > y) - (x < y);",
        "}",
        "",
        "int main(int argc, char** argv) {",
        '    if (argc < 4) { fprintf(stderr, "usage: %s datadir warmups reps\\n", argv[0]); return 2; }',
        "    const char* dir = argv[1];",
        "    int warmups = atoi(argv[2]);",
        "    int reps = atoi(argv[3]);",
        "    char path[4096];",
    ]
    for b in interface:
        ctype = _C_TYPE[b.dtype]
        l.append(f"    {ctype}* {b.name} = malloc({b.size} * sizeof({ctype}));")
        if b.name in input_bufs:
            l += [
                f'    snprintf(path, sizeof path, "%s/{b.name}.bin", dir);',
                "    {",
                '        FILE* f = fopen(path, "rb");',
                '        if (!f) { fprintf(stderr, "missing %s\\n", path); return 2; }',
                f"        if (fread({b.name}, sizeof({ctype}), {b.size}, f) != {b.size}) return 2;",
                "        fclose(f);",
                "    }",
            ]
    args = ", ".join(b.name for b in interface)
    l += [
        f"    for (int i = 0; i < warmups; ++i) {entry}({args});",
        "    double* times = malloc(reps * sizeof(double));",
        "    for (int i = 0; i < reps; ++i) {",
        "        double t0 = now_sec();",
        f"        {entry}({args});",
        "        times[i] = now_sec() - t0;",
        "    }",
        "    qsort(times, reps, sizeof(double), cmp_double);",
        '    printf("TIME %.9e\\n", times[reps / 2]);',
    ]
    for b in interface:
        if b.name not in input_bufs:
            ctype = _C_TYPE[b.dtype]
            l += [
                f'    snprintf(path, sizeof path, "%s/{b.name}.out.bin", dir);',
                "    {",
                '        FILE* f = fopen(path, "wb");',
                '        if (!f) return 2;',
                f"        fwrite({b.name}, sizeof({ctype}), {b.size}, f);",
                "        fclose(f);",
                "    }",
            ]
    l += ["    return 0;", "}"]
    return "\n".join(l) + "\n"


def native_available(compiler: str = "cc") -> bool:
    return shutil.which(compiler) is not None


@dataclass
class NativeResult:
    outputs: dict[str, np.ndarray]
    seconds: float
    source: str


def compile_and_run(
    p: Program,
    env,
    compiler: str = "cc",
    repetitions: int = 5,
    warmups: int = 2,
    timeout: float = 30.0,
    extra_flags: tuple[str, ...] = (),
    keep_dir: str | None = None,
) -> NativeResult:
    """Compile the emitted kernel with its harness, run it, read back outputs."""
    if not native_available(compiler):
        raise CompileError(f"compiler {compiler!r} not found")
    res = emit(p, getattr(env, "dims", None), harness=True)
    low = lower(p, getattr(env, "dims", None))
    workdir = FsPath(keep_dir) if keep_dir else FsPath(tempfile.mkdtemp(prefix="loopgym-native-"))
    workdir.mkdir(parents=True, exist_ok=True)
    src = workdir / "kernel.c"
    binary = workdir / "kernel"
    src.write_text(res.source)
    proc = subprocess.run(
        [compiler, "-O2", "-std=c99", str(src), "-o", str(binary), "-lm", *extra_flags],
        capture_output=True, text=True,
    )
    if proc.returncode != 0:
        raise CompileError(f"{compiler} failed:\n{proc.stderr}")

    for name in p.inputs:
        buf = low.buffer_for_array(name)
        data = np.asarray(env.arrays[name]).astype(_NP_TYPE[buf.dtype])
        (workdir / f"{buf.name}.bin").write_bytes(data.tobytes())

    try:
        run = subprocess.run(
            [str(binary), str(workdir), str(warmups), str(repetitions)],
            capture_output=True, text=True, timeout=timeout,
        )
    except subprocess.TimeoutExpired as e:
        raise RunTimeout(f"native run exceeded {timeout}s") from e
    if run.returncode != 0:
        raise CompileError(f"native run failed (exit {run.returncode}): {run.stderr}")
    seconds = None
    for line in run.stdout.splitlines():
        if line.startswith("TIME "):
            seconds = float(line.split()[1])
    if seconds is None:
        raise CompileError(f"no timing line in output: {run.stdout!r}")

    outputs: dict[str, np.ndarray] = {}
    for name in p.outputs:
        buf = low.buffer_for_array(name)
        raw = (workdir / f"{buf.name}.out.bin").read_bytes()
        arr = np.frombuffer(raw, dtype=_NP_TYPE[buf.dtype]).reshape(buf.shape)
        outputs[name] = arr.copy()
    return NativeResult(outputs, seconds, res.source)
