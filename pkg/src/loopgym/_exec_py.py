"""Pure-Python tape executor: the fallback for the compiled extension.

Semantics must match loopgym._exec exactly: all arithmetic in float64, stores
rounded per the output buffer's dtype, libm routines for exp/log/sqrt.
"""

from __future__ import annotations

import math

import numpy as np

from .lower import IN_IMM, IN_MEM, OP_END, OP_EXEC, OP_LOOP

NAME = "python"


def run(code, aff_ptr, aff, consts, storage, n_slots) -> None:
    code = code.tolist()
    aff_ptr = aff_ptr.tolist()
    aff = aff.tolist()
    consts = consts.tolist()
    counters = [0] * max(n_slots, 1)
    size = len(storage)

    def aff_eval(aid: int) -> int:
        o = aff_ptr[aid]
        total = aff[o]
        for i in range(aff[o + 1]):
            total += aff[o + 3 + 2 * i] * counters[aff[o + 2 + 2 * i]]
        return total

    pc = 0
    n = len(code)
    while pc < n:
        op = code[pc]
        if op == OP_EXEC:
            next_pc = code[pc + 1]
            fn = code[pc + 2]
            acc = code[pc + 3]
            round_mode = code[pc + 4]
            out_aff = code[pc + 6]
            i = pc + 7
            n_guard = code[i]
            i += 1
            masked = False
            for _ in range(n_guard):
                if aff_eval(code[i]) >= code[i + 1]:
                    masked = True
                    break
                i += 2
            if masked:
                pc = next_pc
                continue
            i = pc + 8 + 2 * n_guard
            n_in = code[i]
            i += 1
            vals = []
            for _ in range(n_in):
                kind = code[i]
                if kind == IN_MEM:
                    addr = aff_eval(code[i + 2])
                    if addr < 0 or addr >= size:
                        raise IndexError(f"address {addr} outside storage of {size}")
                    vals.append(float(storage[addr]))
                elif kind == IN_IMM:
                    vals.append(consts[code[i + 1]])
                else:
                    vals.append(float(aff_eval(code[i + 1])))
                i += 3
            if fn == 0:
                v = vals[0]
            elif fn == 1:
                v = vals[0] + vals[1]
            elif fn == 2:
                v = vals[0] - vals[1]
            elif fn == 3:
                v = vals[0] * vals[1]
            elif fn == 4:
                v = vals[0] / vals[1]
            elif fn == 5:
                v = vals[0] if vals[0] > vals[1] else vals[1]
            elif fn == 6:
                v = vals[0] if vals[0] < vals[1] else vals[1]
            elif fn == 7:
                v = math.exp(vals[0])
            elif fn == 8:
                v = math.log(vals[0])
            elif fn == 9:
                v = math.sqrt(vals[0])
            else:
                v = abs(vals[0])
            addr = aff_eval(out_aff)
            if addr < 0 or addr >= size:
                raise IndexError(f"address {addr} outside storage of {size}")
            if acc:
                v = float(storage[addr]) + v
            if round_mode == 1:
                v = float(np.float32(v))
            elif round_mode == 2:
                v = float(np.rint(v))
            storage[addr] = v
            pc = next_pc
        elif op == OP_LOOP:
            counters[code[pc + 1]] = 0
            pc = code[pc + 3] + 4 if code[pc + 2] <= 0 else pc + 4
        else:  # OP_END
            slot = code[pc + 1]
            counters[slot] += 1
            pc = code[pc + 3] if counters[slot] < code[pc + 2] else pc + 4
