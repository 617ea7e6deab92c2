"""Target-machine description: the knobs legality checks and the cost model use."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class MachineConfig:
    vector_width: int = 4
    cores: int = 4
    op_weight: float = 1.0
    byte_weight: float = 0.25
    loop_weight: float = 2.0
    max_unroll: int = 8
    pad_multiples: tuple[int, ...] = (4,)
    stack_limit_bytes: int = 16384
    enabled_suffixes: tuple[str, ...] = ("u", "p", "v")
    hardware_moves: tuple[str, ...] = ("set_suffix:v",)

    def save(self, path: str):
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2)

    @staticmethod
    def load(path: str) -> "MachineConfig":
        with open(path) as f:
            raw = json.load(f)
        for key in ("pad_multiples", "enabled_suffixes", "hardware_moves"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return MachineConfig(**raw)


DEFAULT_MACHINE = MachineConfig()
