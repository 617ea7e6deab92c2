"""Program encoders: map a program to a fixed-size numeric state vector.

The default is a hand-crafted structural feature encoder. Encoders are
pluggable: anything with `dim`, `version`, and `encode(program) -> vector`
works, so an external text-embedding service can be dropped in without
touching the learner.
"""

from __future__ import annotations

import math

import numpy as np

from .ir import FNS, SUFFIXES, Access, Program, Scope, walk

ENCODER_DIM = 64
_MAX_DEPTH_BINS = 8


class FeatureEncoder:
    """Deterministic structural features, zero-padded to a fixed width."""

    dim = ENCODER_DIM
    version = "feat-v1"

    def encode(self, p: Program) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.float64)
        dims = p.dims()
        scopes: list[tuple[int, Scope]] = []
        n_leaves = 0
        max_depth = 0
        n_access = 0
        for path, node in walk(p):
            max_depth = max(max_depth, len(path))
            if isinstance(node, Scope):
                scopes.append((len(path) - 1, node))
                continue
            n_leaves += 1
            op = node.op
            v[18] += 0.0 if op.acc else 1.0
            v[19] += 1.0 if op.acc else 0.0
            if op.fn is not None:
                v[20 + FNS.index(op.fn)] += 1.0
            v[30] += len(op.guards)
            n_access += 1 + sum(1 for val in op.inputs if isinstance(val, Access))

        v[0] = math.log1p(len(scopes))
        v[1] = math.log1p(n_leaves)
        v[2] = max_depth
        v[3] = len(p.body)

        for depth, s in scopes:
            v[4 + min(depth, _MAX_DEPTH_BINS - 1)] += 1.0
            if s.suffix is not None:
                v[12 + SUFFIXES.index(s.suffix)] += 1.0
        v[31] = math.log1p(n_access)

        v[32] = len(p.buffers)
        v[33] = sum(1 for b in p.buffers if b.location == "heap")
        v[34] = sum(1 for b in p.buffers if b.location == "stack")
        v[35] = sum(len(b.array_names()) for b in p.buffers)
        n_dims = sum(len(b.dims) for b in p.buffers)
        n_mat = sum(1 for b in p.buffers for d in b.dims if d.materialized)
        v[36] = n_dims - n_mat
        v[37] = n_mat / n_dims if n_dims else 0.0

        total_bytes = 0
        for b in p.buffers:
            try:
                total_bytes += b.footprint_bytes(dims)
            except Exception:
                pass
        v[38] = math.log1p(total_bytes)

        concrete = [s.extent.maybe_value(dims) for _p, s in scopes]
        known = [c for c in concrete if c is not None]
        v[39] = len(known)
        v[40] = len(concrete) - len(known)
        if known:
            v[41] = float(np.mean([math.log2(c) for c in known if c > 0]))
            v[42] = math.log2(max(known)) if max(known) > 0 else 0.0
        return v


DEFAULT_ENCODER = FeatureEncoder()


def action_embedding(before: np.ndarray, after: np.ndarray) -> np.ndarray:
    """An action is the concatenation of the embeddings before and after it."""
    return np.concatenate([before, after])


def stop_action(state: np.ndarray) -> np.ndarray:
    """The stop action concatenates two identical embeddings: no state change."""
    return action_embedding(state, state)
