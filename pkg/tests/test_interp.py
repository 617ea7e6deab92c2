"""Reference interpreter: semantics, determinism, equivalence checking."""

import numpy as np
import pytest

from loopgym.interp import (
    TensorEnv, available_backends, equivalent, interpret,
)
from loopgym.ir import IrError
from loopgym.text import parse_program

BACKENDS = available_backends()

TINY_SOFTMAX = """\
# kernel: softmax
# dims: N=2 M=3
# io: x -> z
N
|m[{0}]=-1e30
N
|M
||m[{0}]=max(m[{0}],x[{0},{1}])
N
|M
||d[{0},{1}]=x[{0},{1}]-m[{0}]
N
|M
||e[{0},{1}]=exp(d[{0},{1}])
N
|M
||s[{0}]+=e[{0},{1}]
N
|M
||z[{0},{1}]=e[{0},{1}]/s[{0}]

x f32 [N,M] heap
m f32 [N] heap
d f32 [N,M] heap
e f32 [N,M] heap
s f32 [N] heap
z f32 [N,M] heap
"""


@pytest.mark.parametrize("backend", BACKENDS)
class TestExamples:
    def test_softmax_matches_closed_form(self, backend):
        p = parse_program(TINY_SOFTMAX)
        rng = np.random.default_rng(0)
        x = rng.uniform(-4, 0, size=(2, 3)).astype(np.float32)
        out = interpret(p, TensorEnv(dims=p.dims(), arrays={"x": x}), backend=backend)
        e = np.exp(x.astype(np.float64) - x.astype(np.float64).max(axis=1, keepdims=True))
        ref = e / e.sum(axis=1, keepdims=True)
        rel = np.abs(out["z"].astype(np.float64) - ref) / np.abs(ref)
        assert rel.max() < 1e-6

    def test_multiply_by_zero(self, backend):
        src = """\
# dims: N=4 M=5
# io: x, y -> z
N
|M
||z[{0},{1}]=x[{0},{1}]*y[{0},{1}]

x f32 [N,M] heap
y f32 [N,M] heap
z f32 [N,M] heap
"""
        p = parse_program(src)
        env = TensorEnv(dims=p.dims(), arrays={
            "x": np.random.default_rng(1).uniform(-1, 1, (4, 5)),
            "y": np.zeros((4, 5)),
        })
        assert np.all(interpret(p, env, backend=backend)["z"] == 0.0)

    def test_reduction_counts(self, backend):
        src = """\
# dims: N=2 M=5
# io: x -> z
N
|M
||z[{0}]+=x[{0},{1}]

x f32 [N,M] heap
z f32 [N] heap
"""
        p = parse_program(src)
        env = TensorEnv(dims=p.dims(), arrays={"x": np.ones((2, 5))})
        out = interpret(p, env, backend=backend)
        assert np.array_equal(out["z"], np.array([5.0, 5.0], dtype=np.float32))


class TestDeterminism:
    def test_bitwise_repeatable(self, softmax_bundle):
        rng = np.random.default_rng(5)
        env = softmax_bundle.env_gen(rng)
        a = interpret(softmax_bundle.program, env)
        b = interpret(softmax_bundle.program, env)
        assert all(np.array_equal(a[k], b[k]) for k in a)

    @pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled executor unavailable")
    def test_backends_bitwise_identical(self, softmax_bundle):
        rng = np.random.default_rng(6)
        env = softmax_bundle.env_gen(rng)
        a = interpret(softmax_bundle.program, env, backend="python")
        b = interpret(softmax_bundle.program, env, backend="compiled")
        assert all(np.array_equal(a[k], b[k]) for k in a)


class TestErrors:
    def test_unbound_input(self, fig5):
        with pytest.raises(IrError):
            interpret(fig5, TensorEnv(dims=fig5.dims()))

    def test_shape_mismatch(self, fig5):
        env = TensorEnv(dims=fig5.dims(), arrays={"x": np.zeros((2, 2))})
        with pytest.raises(IrError) as e:
            interpret(fig5, env)
        assert e.value.code == "shape-mismatch"

    def test_interface_mismatch(self, fig5, softmax):
        with pytest.raises(IrError) as e:
            equivalent(fig5, softmax)
        assert e.value.code == "interface-mismatch"


class TestEquivalent:
    def test_reflexive_with_zero_error(self, softmax_bundle):
        rep = equivalent(softmax_bundle.program, softmax_bundle.program,
                         trials=2, seed=1, env_gen=softmax_bundle.env_gen)
        assert rep.equal and rep.max_abs_err == 0.0

    def test_detects_difference(self, fig5):
        src = FIG5_VARIANT
        q = parse_program(src)
        rep = equivalent(fig5, q, trials=2, seed=2)
        assert not rep.equal


FIG5_VARIANT = """\
# kernel: rownorm
# dims: N=6 M=8
# io: x -> y
N
|M
||t[{0}]+=x[{0},{1}]
N
|M
||y[{0},{1}]=x[{0},{1}]*t[{0}]

x f32 [N,M] heap
t f32 [N] heap
y f32 [N,M] heap
"""


class TestDtypes:
    def test_f64_buffers_keep_precision(self):
        src = """\
# dims: N=4
# io: x -> z
N
|z[{0}]=x[{0}]*3

x f64 [N] heap
z f64 [N] heap
"""
        p = parse_program(src)
        x = np.array([1e-12, 0.1, 1.0, 7.0], dtype=np.float64)
        out = interpret(p, TensorEnv(dims=p.dims(), arrays={"x": x}))
        assert out["z"].dtype == np.float64
        assert np.array_equal(out["z"], x * 3)

    def test_i32_stores_round_to_nearest(self):
        src = """\
# dims: N=4
# io: x -> z
N
|z[{0}]=x[{0}]*1.0

x f64 [N] heap
z i32 [N] heap
"""
        p = parse_program(src)
        x = np.array([0.4, 0.5, 1.5, -2.5])
        out = interpret(p, TensorEnv(dims=p.dims(), arrays={"x": x}))
        assert out["z"].dtype == np.int32
        assert list(out["z"]) == [0, 0, 2, -2]  # round half to even


class TestSuffixErasure:
    def test_all_suffixes_cleared_is_bitwise_identical(self, softmax_bundle):
        from dataclasses import replace as dc_replace

        from loopgym.ir import Scope as S
        from loopgym.machine import MachineConfig
        from loopgym.transforms import enumerate_moves, apply_move

        machine = MachineConfig(enabled_suffixes=("u", "p", "v", "g", "b", "w"))
        p = softmax_bundle.program
        rng = np.random.default_rng(9)
        applied = 0
        for _ in range(6):
            suffix_moves = [m for m in enumerate_moves(p, machine)
                            if m.transform == "set_suffix"]
            if not suffix_moves:
                break
            p = apply_move(p, suffix_moves[int(rng.integers(len(suffix_moves)))], machine)
            applied += 1
        assert applied > 0

        def strip(node):
            if isinstance(node, S):
                return S(node.extent, None, tuple(strip(c) for c in node.children))
            return node

        bare = dc_replace(p, body=tuple(strip(n) for n in p.body))
        env = softmax_bundle.env_gen(np.random.default_rng(10))
        a = interpret(p, env)
        b = interpret(bare, env)
        assert all(np.array_equal(a[k], b[k]) for k in a)


class TestZeroInit:
    def test_accumulator_rezeroed_per_outer_iteration(self):
        # after fusion + reuse, the row sum must reset between rows
        from loopgym.ir import SiteRef
        from loopgym.transforms import Move, apply_move

        p = parse_program("""\
# dims: N=3 M=4
# io: x -> y
N
|M
||t[{0}]+=x[{0},{1}]
N
|M
||y[{0},{1}]=x[{0},{1}]/t[{0}]

x f32 [N,M] heap
t f32 [N] heap
y f32 [N,M] heap
""")
        q = apply_move(p, Move("join_scopes", SiteRef.parse("t@0")))
        q = apply_move(q, Move("reuse_dims", SiteRef.parse("t.0")))
        x = np.arange(1, 13, dtype=np.float32).reshape(3, 4)
        env = TensorEnv(dims=p.dims(), arrays={"x": x})
        want = x / x.sum(axis=1, keepdims=True)
        got = interpret(q, env)["y"]
        assert np.allclose(got, want, atol=1e-6)
