"""Reference executor: runs programs on concrete inputs.

This is the numerical-equivalence oracle behind every transformation's
correctness claim, not the measurement path. The hot loop lives in the
compiled extension when available (set LOOPGYM_EXEC=python to force the
fallback).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .ir import IrError, Program
from .lower import Lowered, lower

_BACKENDS: dict[str, object] = {}
from . import _exec_py as _py_backend  # noqa: E402

_BACKENDS["python"] = _py_backend
try:
    from . import _exec as _c_backend  # compiled extension, optional

    _BACKENDS["compiled"] = _c_backend
except ImportError:
    _c_backend = None

_DEFAULT = os.environ.get("LOOPGYM_EXEC", "compiled" if _c_backend else "python")
if _DEFAULT not in _BACKENDS:
    _DEFAULT = "python"


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def backend_name() -> str:
    return _DEFAULT


def set_backend(name: str):
    global _DEFAULT
    if name not in _BACKENDS:
        raise IrError(f"unknown executor backend {name!r}; have {available_backends()}")
    _DEFAULT = name


_NP_DTYPE = {"f32": np.float32, "f64": np.float64, "i32": np.int32}

TOLERANCES = {"f32": (1e-5, 1e-5), "f64": (1e-9, 1e-9), "i32": (0.0, 0.0)}


@dataclass
class TensorEnv:
    """Concrete bindings: dimension symbols to ints, input arrays to tensors."""

    dims: dict[str, int] = field(default_factory=dict)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


def _array_shape(low: Lowered, array: str) -> tuple[int, ...]:
    return low.buffer_for_array(array).shape


def interpret(
    p: Program,
    env: TensorEnv | None = None,
    backend: str | None = None,
    lowered: Lowered | None = None,
) -> dict[str, np.ndarray]:
    """Execute and return the output arrays named in the program's io header."""
    env = env or TensorEnv()
    low = lowered if lowered is not None else lower(p, env.dims)
    storage = np.zeros(low.storage_size, dtype=np.float64)
    for name in p.inputs:
        if name not in env.arrays:
            raise IrError(f"input array {name} not bound", "unbound-array")
        buf = low.buffer_for_array(name)
        data = np.asarray(env.arrays[name])
        if data.shape != buf.shape:
            raise IrError(
                f"input {name}: shape {data.shape} does not match {buf.shape}",
                "shape-mismatch",
            )
        flat = data.astype(_NP_DTYPE[buf.dtype]).astype(np.float64).ravel()
        storage[buf.offset:buf.offset + buf.size] = flat

    impl = _BACKENDS[backend or _DEFAULT]
    impl.run(low.code, low.aff_ptr, low.aff, low.consts, storage, low.n_slots)

    out: dict[str, np.ndarray] = {}
    for name in p.outputs:
        buf = low.buffer_for_array(name)
        data = storage[buf.offset:buf.offset + buf.size].reshape(buf.shape)
        out[name] = data.astype(_NP_DTYPE[buf.dtype])
    return out


def uses_exp(p: Program) -> bool:
    from .ir import iter_leaves

    return any(leaf.op.fn == "exp" for _, leaf in iter_leaves(p))


def default_env(p: Program, rng: np.random.Generator) -> TensorEnv:
    """Random inputs, uniform in [-1, 1]; [-4, 0] for exp-containing kernels."""
    lo, hi = (-4.0, 0.0) if uses_exp(p) else (-1.0, 1.0)
    low = lower(p)
    env = TensorEnv(dims=p.dims())
    for name in p.inputs:
        shape = _array_shape(low, name)
        env.arrays[name] = rng.uniform(lo, hi, size=shape)
    return env


@dataclass
class EquivalenceReport:
    equal: bool
    max_abs_err: float
    trials: int
    failures: list[str] = field(default_factory=list)

    def __bool__(self):
        return self.equal


def interface_signature(p: Program):
    """(name, dtype, instantiated shape) tuples for inputs and outputs."""
    try:
        low = lower(p)
    except IrError:
        low = None

    def sig(names):
        out = []
        for n in names:
            b = p.buffer_of(n)
            shape = low.buffer_for_array(n).shape if low else None
            out.append((n, b.dtype if b else None, shape))
        return tuple(out)

    return sig(p.inputs), sig(p.outputs)


def equivalent(
    p: Program,
    q: Program,
    trials: int = 3,
    seed: int = 0,
    env_gen=None,
    backend: str | None = None,
) -> EquivalenceReport:
    """Numerically compare outputs of two programs on random inputs.

    Tolerances are per output dtype: |a - b| <= atol + rtol * |b| elementwise.
    """
    if interface_signature(p) != interface_signature(q):
        raise IrError("programs expose different buffer interfaces", "interface-mismatch")
    rng = np.random.default_rng(seed)
    low_p, low_q = lower(p), lower(q)
    max_err = 0.0
    failures: list[str] = []
    for t in range(trials):
        env = env_gen(rng) if env_gen else default_env(p, rng)
        out_p = interpret(p, env, backend=backend, lowered=low_p)
        out_q = interpret(q, env, backend=backend, lowered=low_q)
        for name in p.outputs:
            a = out_p[name].astype(np.float64)
            b = out_q[name].astype(np.float64)
            atol, rtol = TOLERANCES[p.buffer_of(name).dtype]
            err = np.abs(a - b)
            max_err = max(max_err, float(err.max(initial=0.0)))
            bad = err > atol + rtol * np.abs(b)
            if bad.any():
                failures.append(
                    f"trial {t}: {name} differs at {int(bad.sum())} of {bad.size} "
                    f"elements (max abs err {float(err.max()):.3e})"
                )
    return EquivalenceReport(not failures, max_err, trials, failures)
