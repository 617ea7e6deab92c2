"""IR core: parsing, printing, validation, site resolution."""

import pytest

from loopgym.ir import (
    AmbiguousSiteError, Leaf, ParseError, Scope, SiteRef, resolve_site, validate,
)
from loopgym.text import parse_program, print_program
from util_gen import random_program

TABLE_DECLS = """
x f32 [N,M] heap
y f32 [N,M] heap
z f32 [N,M] heap
"""

SUPPORTED_LINES = [
    "N M z[{0},{1}]=x[{0},{1}]*y[{0},{1}]",          # element-wise
    "N M z[{0},{1}]=x[{0}]",                          # broadcast
    "N M z[{0},{1}]=x[{0},{1}]*C",                    # constant as value
    "N M z[{0},{1}]=x[{0},{1}]*{0}",                  # index as value
    "N M z[{0}]+=x[{0},{1}]",                         # reduction
    "N M z[{0},{1}]=x[{0}*N+{1}]",                    # expression as location
]

EXCLUDED_LINES = [
    ("N z[{0}]=x[y[{0}]]", "excluded-indirection"),
    ("N M[{0}] z[{0},{1}]=x[{0},{1}]", "excluded-data-dependent-range"),
    ("N z[{0}]=z[{0}-1]*y[{0}]", "excluded-dependent-iteration"),
    ("while z[{0}++] z[{0}]=x[{0}]*y[{0}]", "excluded-control-flow"),
]


def _wrap(line: str) -> str:
    decls = {
        "N M z[{0},{1}]=x[{0}]": "x f32 [N] heap\nz f32 [N,M] heap",
        "N M z[{0}]+=x[{0},{1}]": "x f32 [N,M] heap\nz f32 [N] heap",
        "N M z[{0},{1}]=x[{0}*N+{1}]": "x f32 [N*M] heap\nz f32 [N,M] heap",
        "N z[{0}]=x[y[{0}]]": "x f32 [N] heap\ny f32 [N] heap\nz f32 [N] heap",
        "N z[{0}]=z[{0}-1]*y[{0}]": "y f32 [N] heap\nz f32 [N] heap",
        "while z[{0}++] z[{0}]=x[{0}]*y[{0}]": TABLE_DECLS.strip(),
    }
    body = decls.get(line, TABLE_DECLS.strip())
    return f"# dims: N=4 M=6 C=3\n{line}\n\n{body}\n"


class TestSupportedForms:
    @pytest.mark.parametrize("line", SUPPORTED_LINES)
    def test_parses(self, line):
        p = parse_program(_wrap(line))
        assert validate(p) == []

    @pytest.mark.parametrize("line", SUPPORTED_LINES)
    def test_round_trips(self, line):
        p = parse_program(_wrap(line))
        assert parse_program(print_program(p)) == p


class TestExcludedForms:
    @pytest.mark.parametrize("line,code", EXCLUDED_LINES)
    def test_rejected_with_code(self, line, code):
        with pytest.raises(ParseError) as e:
            parse_program(_wrap(line))
        assert e.value.code == code


class TestParseErrors:
    def test_unresolved_array(self):
        with pytest.raises(ParseError) as e:
            parse_program("# dims: N=4\nN\n|z[{0}]=q[{0}]\n\nz f32 [N] heap\n")
        assert e.value.code == "unresolved-array"

    def test_out_of_range_ref(self):
        src = "# dims: N=4 M=4\nN\n|M\n||z[{3}]=x[{0}]\n\nx f32 [N] heap\nz f32 [N] heap\n"
        with pytest.raises(ParseError) as e:
            parse_program(src)
        assert e.value.code == "index-out-of-range"

    def test_syntax_error_has_position(self):
        with pytest.raises(ParseError) as e:
            parse_program("# dims: N=4\nN\n|z[{0}]=\n\nz f32 [N] heap\n")
        assert e.value.line == 3

    def test_inline_chain_equals_bars(self):
        a = parse_program(_wrap("N M z[{0},{1}]=x[{0},{1}]*y[{0},{1}]"))
        b = parse_program(
            "# dims: N=4 M=6 C=3\nN\n|M\n||z[{0},{1}]=x[{0},{1}]*y[{0},{1}]\n\n"
            + TABLE_DECLS.strip() + "\n"
        )
        assert a == b


class TestPrinting:
    def test_canonical_one_node_per_line(self, softmax):
        text = print_program(softmax)
        body = [l for l in text.splitlines() if l and not l.startswith("#")]
        # each body line is a single scope or a single statement
        for line in body:
            if " " in line.strip() and "[" not in line:
                pytest.fail(f"inline chain in canonical output: {line!r}")

    def test_print_is_deterministic(self, softmax):
        assert print_program(softmax) == print_program(softmax)

    def test_print_parse_print_fixpoint(self, softmax):
        once = print_program(softmax)
        assert print_program(parse_program(once)) == once

    def test_empty_body_program(self):
        p = parse_program("# dims: N=4\n\nx f32 [N] heap\n")
        assert p.body == ()
        assert parse_program(print_program(p)) == p


class TestRoundTripFuzz:
    @pytest.mark.parametrize("seed", range(40))
    def test_generated_programs_round_trip(self, seed):
        p = random_program(seed)
        assert validate(p) == [], validate(p)
        assert parse_program(print_program(p)) == p


class TestValidate:
    def test_softmax_clean(self, softmax):
        assert validate(softmax) == []

    def test_corpus_kernels_clean(self):
        from loopgym.kernels import kernel_names, load_kernel

        for name in kernel_names():
            assert validate(load_kernel(name).program) == []

    def test_out_of_range_flagged(self, softmax):
        from dataclasses import replace
        from loopgym.ir import Access, Affine, Operation, Term

        bad_leaf = Leaf(Operation(
            Access("z", (Affine((Term(1, (), 5),)), Affine((Term(1, (), 1),)))),
            False, None, (Access("x", (Affine((Term(1, (), 0),)), Affine((Term(1, (), 1),)))),),
        ))
        scope = softmax.body[0]
        bad = replace(softmax, body=(Scope(scope.extent, None, (Scope(
            softmax.body[1].children[0].extent, None, (bad_leaf,)),)),))
        codes = {v.code for v in validate(bad)}
        assert "index-out-of-range" in codes


class TestResolveSite:
    def test_scope_by_anchor_and_depth(self, fig5):
        path, node = resolve_site(fig5, SiteRef("scope", "t", 0))
        assert isinstance(node, Scope)
        assert path == (0,)  # the first root nest encloses t's statement

    def test_buffer_dim(self, fig5):
        buf, dim = resolve_site(fig5, SiteRef("buffer_dim", "t", 0))
        assert buf.name == "t" and dim == 0

    def test_missing_anchor(self, fig5):
        with pytest.raises(Exception) as e:
            resolve_site(fig5, SiteRef("scope", "zzz", 0))
        assert "zzz" in str(e.value)

    def test_ambiguous_anchor_lists_candidates(self, softmax):
        # softmax writes m twice (init + running max)
        with pytest.raises(AmbiguousSiteError) as e:
            resolve_site(softmax, SiteRef("scope", "m", 0))
        assert set(e.value.candidates) == {"m#0", "m#1"}

    def test_indexed_anchor_disambiguates(self, softmax):
        path, node = resolve_site(softmax, SiteRef("op", "m#0"))
        assert isinstance(node, Leaf)
        assert node.op.fn is None  # the init statement

    def test_depth_out_of_nest(self, fig5):
        with pytest.raises(Exception):
            resolve_site(fig5, SiteRef("scope", "t", 5))

    def test_site_text_round_trip(self):
        for text in ("t@0", "m#1@2", "t.0", "buf:t", "y@op"):
            assert SiteRef.parse(text).text() == text
