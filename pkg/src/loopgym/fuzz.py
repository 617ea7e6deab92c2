"""Semantic-preservation fuzzing: random move sequences checked by the oracle.

For each kernel, draws move sequences uniformly from the enumerated moves at
every step and verifies the transformed program is numerically equivalent to
the original. Any disagreement is a bug in a transformation's applicability
rule and is reported with the full move list for replay.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .interp import equivalent
from .ir import Program, validate
from .kernels import KernelBundle, kernel_names, load_kernel
from .machine import DEFAULT_MACHINE, MachineConfig
from .transforms import apply_move, enumerate_moves


@dataclass
class FuzzViolation:
    kernel: str
    sequence: int
    moves: list[str]
    detail: str


@dataclass
class FuzzReport:
    seed: int
    sequences: int = 0
    checks: int = 0
    moves_applied: int = 0
    violations: list[FuzzViolation] = field(default_factory=list)
    _hash: "hashlib._Hash" = field(default_factory=lambda: hashlib.sha256(), repr=False)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def digest(self) -> str:
        """Hash over every drawn move; identical seeds must reproduce it."""
        return self._hash.hexdigest()

    def record(self, kernel: str, sequence: int, line: str):
        self._hash.update(f"{kernel}:{sequence}:{line}\n".encode())

    def summary(self) -> str:
        status = "OK" if self.ok else f"{len(self.violations)} VIOLATIONS"
        return (
            f"fuzz: {self.sequences} sequences, {self.moves_applied} moves, "
            f"{self.checks} equivalence checks, seed {self.seed}: {status}"
        )


def fuzz_kernel(
    bundle: KernelBundle,
    sequences: int = 200,
    max_len: int = 20,
    trials: int = 3,
    seed: int = 0,
    machine: MachineConfig = DEFAULT_MACHINE,
    per_step: bool = False,
    report: FuzzReport | None = None,
) -> FuzzReport:
    report = report or FuzzReport(seed=seed)
    root = bundle.program
    rng = np.random.default_rng(seed)
    for s in range(sequences):
        length = int(rng.integers(1, max_len + 1))
        cur = root
        lines: list[str] = []
        for _ in range(length):
            moves = enumerate_moves(cur, machine)
            if not moves:
                break
            move = moves[int(rng.integers(len(moves)))]
            try:
                nxt = apply_move(cur, move, machine)
            except Exception as e:  # enumerated moves must always apply
                report.violations.append(FuzzViolation(
                    bundle.name, s, lines + [move.line()],
                    f"enumerated move failed to apply: {e}",
                ))
                break
            problems = validate(nxt)
            if problems:
                report.violations.append(FuzzViolation(
                    bundle.name, s, lines + [move.line()],
                    f"move produced invalid program: {problems[0]}",
                ))
                break
            cur = nxt
            lines.append(move.line())
            report.record(bundle.name, s, move.line())
            report.moves_applied += 1
            if per_step:
                _check(report, bundle, root, cur, s, lines, trials, seed)
        if not per_step and lines:
            _check(report, bundle, root, cur, s, lines, trials, seed)
        report.sequences += 1
    return report


def _check(report, bundle, root: Program, cur: Program, s: int, lines, trials, seed):
    rep = equivalent(root, cur, trials=trials, seed=seed * 100003 + s, env_gen=bundle.env_gen)
    report.checks += 1
    if not rep.equal:
        report.violations.append(FuzzViolation(
            bundle.name, s, list(lines), "; ".join(rep.failures)
        ))


def fuzz_corpus(
    kernels: list[str] | None = None,
    sequences: int = 200,
    max_len: int = 20,
    trials: int = 3,
    seed: int = 0,
    machine: MachineConfig = DEFAULT_MACHINE,
    per_step: bool = False,
    preset: str = "desk",
    progress=None,
) -> FuzzReport:
    report = FuzzReport(seed=seed)
    for name in kernels or kernel_names():
        bundle = load_kernel(name, preset)
        fuzz_kernel(bundle, sequences, max_len, trials, seed, machine, per_step, report)
        if progress is not None:
            progress(name, report)
    return report
