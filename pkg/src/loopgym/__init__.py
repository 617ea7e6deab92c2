"""loopgym: a loop-nest IR whose checked transformations preserve semantics,
plus search passes, a Max-Q learning agent, and an interactive session service."""

__version__ = "0.1.0"
