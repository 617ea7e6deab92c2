"""Command-line entry points."""

import json

import pytest
from click.testing import CliRunner

from loopgym.cli import main


@pytest.fixture
def runner():
    return CliRunner()


class TestValidate:
    def test_corpus_ok(self, runner):
        r = runner.invoke(main, ["validate", "--kernels", "rownorm,relu", "--seed", "3"])
        assert r.exit_code == 0, r.output
        assert "seed: 3" in r.output


class TestFuzz:
    def test_small_fuzz_clean(self, runner):
        r = runner.invoke(main, [
            "fuzz", "--kernels", "rownorm", "--sequences", "10",
            "--max-len", "6", "--trials", "2", "--seed", "5",
        ])
        assert r.exit_code == 0, r.output
        assert "OK" in r.output and "seed: 5" in r.output


class TestOptimize:
    def test_naive_rownorm(self, runner):
        r = runner.invoke(main, ["optimize", "rownorm", "--pass", "naive"])
        assert r.exit_code == 0, r.output
        assert "join_scopes t@0" in r.output
        assert "reuse_dims t.0" in r.output
        assert "modeled cost" in r.output

    def test_json_format(self, runner):
        r = runner.invoke(main, ["optimize", "rownorm", "--pass", "naive",
                                 "--format", "json"])
        assert r.exit_code == 0
        payload = r.output[r.output.index("["):r.output.rindex("]") + 1]
        rows = json.loads(payload)
        assert rows[0]["move"] == "join_scopes t@0"


class TestSearch:
    def test_trace_csv(self, runner, tmp_path):
        out = tmp_path / "trace.csv"
        r = runner.invoke(main, [
            "search", "rownorm", "--method", "anneal", "--space", "edges",
            "--budget", "8", "--seed", "2", "--trace-out", str(out),
        ])
        assert r.exit_code == 0, r.output
        lines = out.read_text().splitlines()
        assert lines[0] == "evaluation,cost,best,moves"
        assert len(lines) == 9

    def test_seed_reproducible(self, runner):
        args = ["search", "rownorm", "--method", "sample", "--space", "edges",
                "--budget", "10", "--seed", "7"]
        a = runner.invoke(main, args)
        b = runner.invoke(main, args)
        assert a.output == b.output


class TestEmit:
    def test_deterministic_file(self, runner, tmp_path):
        f1, f2 = tmp_path / "a.c", tmp_path / "b.c"
        r1 = runner.invoke(main, ["emit", "softmax", "--out", str(f1)])
        r2 = runner.invoke(main, ["emit", "softmax", "--out", str(f2)])
        assert r1.exit_code == 0 and r2.exit_code == 0
        assert f1.read_bytes() == f2.read_bytes()

    def test_emit_after_moves(self, runner, tmp_path):
        log = tmp_path / "moves.log"
        log.write_text("join_scopes t@0\nreuse_dims t.0\n")
        out = tmp_path / "k.c"
        r = runner.invoke(main, ["emit", "rownorm", "--moves", str(log),
                                 "--out", str(out)])
        assert r.exit_code == 0, r.output
        assert "calloc(1," in out.read_text()


class TestReplay:
    def test_cost_timeline(self, runner, tmp_path):
        log = tmp_path / "moves.log"
        log.write_text("join_scopes t@0\nreuse_dims t.0\n")
        r = runner.invoke(main, ["replay", "rownorm", str(log), "--format", "json",
                                 "--no-show-program"])
        assert r.exit_code == 0, r.output
        payload = r.output[r.output.index("["):r.output.rindex("]") + 1]
        rows = json.loads(payload)
        assert len(rows) == 3  # root + two moves
        assert rows[2]["cost"] < rows[0]["cost"]


class TestTrain:
    def test_short_run_writes_curve(self, runner, tmp_path):
        curve = tmp_path / "curve.csv"
        ckpt = tmp_path / "q.npz"
        r = runner.invoke(main, [
            "train", "rownorm", "--episodes", "3", "--seed", "1",
            "--max-moves", "5", "--curve-out", str(curve),
            "--checkpoint", str(ckpt),
        ])
        assert r.exit_code == 0, r.output
        assert curve.read_text().startswith("episode,best_cost")
        assert ckpt.exists()


class TestBench:
    def test_backend_comparison(self, runner):
        r = runner.invoke(main, ["bench", "rownorm", "--compare-backends",
                                 "--repetitions", "2"])
        assert r.exit_code == 0, r.output
        assert "interpreter[python]" in r.output
