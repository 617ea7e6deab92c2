"""Kernel corpus: ML operators in the textual IR plus closed-form oracles.

Each kernel ships a desk-sized preset (interpreter runs well under a second)
and a full-sized one for the optional native path. Oracles are independent
numpy formulations; they agree with the interpreter within ORACLE_RTOL, which
is looser than the transformation-equivalence tolerance because the oracle
computes in float64 while f32 kernels round every intermediate store.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from typing import Callable

import numpy as np

from .interp import TensorEnv, default_env, lower
from .ir import IrError, Program
from .text import parse_program

ORACLE_ATOL = 1e-5
ORACLE_RTOL = 1e-4

# Input ranges that keep divisions well away from zero.
_RANGES: dict[str, tuple[float, float]] = {"rownorm": (0.5, 1.5)}


class UnknownKernelError(IrError):
    code = "unknown-kernel"


@dataclass(frozen=True)
class KernelBundle:
    name: str
    preset: str
    program: Program
    env_gen: Callable[[np.random.Generator], TensorEnv]
    oracle: Callable[[TensorEnv], dict[str, np.ndarray]]


def _manifest() -> dict:
    data = resources.files("loopgym").joinpath("corpus/manifest.json").read_text()
    return json.loads(data)


def kernel_names() -> list[str]:
    return sorted(_manifest()["kernels"])


def presets(name: str) -> list[str]:
    entry = _manifest()["kernels"].get(name)
    if entry is None:
        raise UnknownKernelError(f"unknown kernel {name!r}")
    return sorted(entry["presets"])


def kernel_source(name: str) -> str:
    entry = _manifest()["kernels"].get(name)
    if entry is None:
        raise UnknownKernelError(f"unknown kernel {name!r}")
    return resources.files("loopgym").joinpath(f"corpus/{entry['file']}").read_text()


def load_kernel(name: str, preset: str = "desk") -> KernelBundle:
    entry = _manifest()["kernels"].get(name)
    if entry is None:
        raise UnknownKernelError(f"unknown kernel {name!r}; have {', '.join(kernel_names())}")
    if preset not in entry["presets"]:
        raise UnknownKernelError(f"kernel {name!r} has no preset {preset!r}")
    program = parse_program(kernel_source(name), name=name)
    binding = tuple((k, int(v)) for k, v in entry["presets"][preset].items())
    program = replace(program, dim_binding=binding)

    def env_gen(rng: np.random.Generator) -> TensorEnv:
        if name in _RANGES:
            lo, hi = _RANGES[name]
            low = lower(program)
            env = TensorEnv(dims=program.dims())
            for arr in program.inputs:
                shape = low.buffer_for_array(arr).shape
                env.arrays[arr] = rng.uniform(lo, hi, size=shape)
            return env
        return default_env(program, rng)

    return KernelBundle(name, preset, program, env_gen, _ORACLES[name])


def check_oracle(bundle: KernelBundle, trials: int = 2, seed: int = 0) -> float:
    """Max elementwise error of interpret vs oracle over random trials."""
    from .interp import interpret

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        env = bundle.env_gen(rng)
        got = interpret(bundle.program, env)
        want = bundle.oracle(env)
        for k, expect in want.items():
            a = got[k].astype(np.float64)
            b = np.asarray(expect, dtype=np.float64)
            err = np.abs(a - b)
            worst = max(worst, float(err.max(initial=0.0)))
            if (err > ORACLE_ATOL + ORACLE_RTOL * np.abs(b)).any():
                raise AssertionError(
                    f"{bundle.name}: output {k} disagrees with the oracle "
                    f"(max err {err.max():.3e})"
                )
    return worst


# --------------------------------------------------------------------------- #
# Oracles (all computed in float64 on the f32-rounded inputs)

def _f64(env: TensorEnv, name: str) -> np.ndarray:
    return np.asarray(env.arrays[name], dtype=np.float32).astype(np.float64)


def _o_add(env):
    return {"z": _f64(env, "x") + _f64(env, "y")}


def _o_mul(env):
    return {"z": _f64(env, "x") * _f64(env, "y")}


def _o_relu(env):
    return {"z": np.maximum(_f64(env, "x"), 0.0)}


def _o_softmax(env):
    x = _f64(env, "x")
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return {"z": e / e.sum(axis=1, keepdims=True)}


def _o_layernorm(env):
    x = _f64(env, "x")
    mu = x.mean(axis=1, keepdims=True)
    d = x - mu
    var = (d * d).mean(axis=1, keepdims=True)
    return {"z": d / np.sqrt(var + 1e-5)}


def _o_rmsnorm(env):
    x = _f64(env, "x")
    ms = (x * x).mean(axis=1, keepdims=True)
    return {"z": x / np.sqrt(ms + 1e-6)}


def _o_reducemean(env):
    return {"z": _f64(env, "x").mean(axis=1)}


def _o_batchnorm(env):
    x = _f64(env, "x")  # [B, C, H, W]
    mu = x.mean(axis=(0, 2, 3), keepdims=True)
    d = x - mu
    var = (d * d).mean(axis=(0, 2, 3), keepdims=True)
    return {"z": d / np.sqrt(var + 1e-5)}


def _o_bmm(env):
    return {"z": np.matmul(_f64(env, "x"), _f64(env, "y"))}


def _o_matmul(env):
    return {"z": _f64(env, "x") @ _f64(env, "y")}


def _o_swiglu(env):
    a, b = _f64(env, "a"), _f64(env, "b")
    return {"z": a / (1.0 + np.exp(-a)) * b}


def _o_relu_ffn(env):
    x, w, c = _f64(env, "x"), _f64(env, "w"), _f64(env, "c")
    return {"z": np.maximum(x @ w + c, 0.0)}


def _o_conv(env):
    x, w = _f64(env, "x"), _f64(env, "w")  # [CI,IH,IW], [CO,CI,KH,KW]
    co, ci, kh, kw = w.shape
    oh = x.shape[1] - kh + 1
    ow = x.shape[2] - kw + 1
    z = np.zeros((co, oh, ow))
    for i in range(kh):
        for j in range(kw):
            patch = x[:, i:i + oh, j:j + ow]
            z += np.einsum("oc,cij->oij", w[:, :, i, j], patch)
    return {"z": z}


def _o_rownorm(env):
    x = _f64(env, "x")
    return {"y": x / x.sum(axis=1, keepdims=True)}


_ORACLES = {
    "add": _o_add, "mul": _o_mul, "relu": _o_relu, "softmax": _o_softmax,
    "layernorm": _o_layernorm, "rmsnorm": _o_rmsnorm, "reducemean": _o_reducemean,
    "batchnorm": _o_batchnorm, "bmm": _o_bmm, "matmul": _o_matmul,
    "swiglu": _o_swiglu, "relu_ffn": _o_relu_ffn, "conv": _o_conv,
    "rownorm": _o_rownorm,
}
