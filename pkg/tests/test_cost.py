"""Abstract cost model: arithmetic, suffix effects, monotonicity."""

from loopgym.cost import ModeledRuntime, cost, footprint_bytes
from loopgym.ir import SiteRef
from loopgym.machine import MachineConfig
from loopgym.text import parse_program
from loopgym.transforms import Move, apply_move, enumerate_moves

ELEMWISE8 = """\
# dims: N=8
# io: x, y -> z
N
|z[{0}]=x[{0}]*y[{0}]

x f32 [N] heap
y f32 [N] heap
z f32 [N] heap
"""


class TestArithmetic:
    def test_elementwise_op_count(self):
        p = parse_program(ELEMWISE8)
        r = cost(p)
        assert r.scalar_ops == 8
        assert r.loop_overhead == 8
        # 3 accesses of 8 unique f32 elements each
        assert r.memory_traffic == 3 * 8 * 4

    def test_vector_divides_ops(self):
        p = parse_program(ELEMWISE8)
        p = apply_move(p, Move("split_scope", SiteRef.parse("z@0"), ("4",)))
        plain = cost(p)
        v = apply_move(p, Move("set_suffix", SiteRef.parse("z@1"), ("v",)))
        r = cost(v)
        # 2 tile rows of 4 lanes become 1 op-unit each
        assert r.scalar_ops == plain.scalar_ops / 4 == 2
        assert r.memory_traffic == plain.memory_traffic / 4

    def test_unroll_removes_loop_overhead(self):
        p = parse_program(ELEMWISE8)
        u = apply_move(p, Move("set_suffix", SiteRef.parse("z@0"), ("u",)))
        assert cost(u).loop_overhead == 0
        assert cost(u).scalar_ops == cost(p).scalar_ops

    def test_parallel_divides_subtree_cost(self):
        p = parse_program(ELEMWISE8)
        q = apply_move(p, Move("set_suffix", SiteRef.parse("z@0"), ("p",)))
        import math
        assert cost(q).modeled_cost == math.ceil(cost(p).modeled_cost / 4)

    def test_weights_configurable(self):
        p = parse_program(ELEMWISE8)
        m = MachineConfig(op_weight=2.0, byte_weight=0.0, loop_weight=0.0)
        assert cost(p, machine=m).modeled_cost == 16


class TestProperties:
    def test_deterministic(self, softmax):
        assert cost(softmax) == cost(softmax)

    def test_reuse_strictly_lowers_traffic(self, fig5):
        fused = apply_move(fig5, Move("join_scopes", SiteRef.parse("t@0")))
        reused = apply_move(fused, Move("reuse_dims", SiteRef.parse("t.0")))
        assert cost(reused).memory_traffic < cost(fig5).memory_traffic

    def test_invariant_under_reorder_instructions(self):
        src = """\
# dims: N=4
# io: x -> z, w
N
|z[{0}]=x[{0}]*2.0
|w[{0}]=x[{0}]+1.0

x f32 [N] heap
z f32 [N] heap
w f32 [N] heap
"""
        p = parse_program(src)
        m = next(m for m in enumerate_moves(p) if m.transform == "reorder_instructions")
        assert cost(apply_move(p, m)) == cost(p)

    def test_monotone_on_corpus_reuse_moves(self):
        from loopgym.kernels import kernel_names, load_kernel
        from loopgym.passes import naive_pass
        from loopgym.transforms import replay

        for name in kernel_names():
            p = load_kernel(name).program
            h = naive_pass(p)
            programs = replay(h.root, h.moves)
            for before, after, move in zip(programs, programs[1:], h.moves):
                if move.transform == "reuse_dims":
                    assert cost(after).memory_traffic < cost(before).memory_traffic

    def test_positive_for_nonempty(self, softmax):
        assert cost(softmax).modeled_cost > 0


class TestFootprint:
    def test_accounting(self, fig5):
        fp = footprint_bytes(fig5)
        assert fp["x"] == 6 * 8 * 4
        assert fp["t"] == 6 * 4

    def test_reuse_shrinks_footprint_to_scalar(self, fig5):
        fused = apply_move(fig5, Move("join_scopes", SiteRef.parse("t@0")))
        reused = apply_move(fused, Move("reuse_dims", SiteRef.parse("t.0")))
        assert footprint_bytes(reused)["t"] == 4  # one f32


class TestProvider:
    def test_modeled_runtime_matches_cost(self, softmax):
        assert ModeledRuntime().runtime(softmax) == cost(softmax).modeled_cost


class TestMachineConfigFile:
    def test_save_load_round_trip(self, tmp_path):
        m = MachineConfig(vector_width=8, cores=2, op_weight=1.5,
                          hardware_moves=("set_suffix:v", "set_suffix:p"))
        path = str(tmp_path / "machine.json")
        m.save(path)
        assert MachineConfig.load(path) == m

    def test_config_changes_cost(self, softmax, tmp_path):
        m = MachineConfig(loop_weight=0.0)
        assert cost(softmax, machine=m).modeled_cost < cost(softmax).modeled_cost
