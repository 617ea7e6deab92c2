# cython: language_level=3, boundscheck=True, wraparound=False, cdivision=True
"""Compiled tape executor: semantics identical to loopgym._exec_py.

All arithmetic runs in double; stores round per the output buffer's dtype.
"""

from libc.math cimport exp, fabs, log, rint, sqrt

NAME = "compiled"

DEF OP_LOOP = 1
DEF OP_END = 2
DEF OP_EXEC = 3

DEF IN_MEM = 0
DEF IN_IMM = 1
DEF IN_IDX = 2


cdef inline long aff_eval(long aid, const long[::1] aff_ptr, const long[::1] aff,
                          const long[::1] counters) nogil:
    cdef long o = aff_ptr[aid]
    cdef long total = aff[o]
    cdef long n = aff[o + 1]
    cdef long i
    for i in range(n):
        total += aff[o + 3 + 2 * i] * counters[aff[o + 2 + 2 * i]]
    return total


def run(code_arr, aff_ptr_arr, aff_arr, consts_arr, storage_arr, n_slots):
    import numpy as np
    counters_arr = np.zeros(max(int(n_slots), 1), dtype=np.int64)

    cdef const long[::1] code = code_arr
    cdef const long[::1] aff_ptr = aff_ptr_arr
    cdef const long[::1] aff = aff_arr
    cdef const double[::1] consts = consts_arr
    cdef double[::1] storage = storage_arr
    cdef long[::1] counters = counters_arr

    cdef long pc = 0
    cdef long n = code.shape[0]
    cdef long size = storage.shape[0]
    cdef long op, next_pc, fn, acc, round_mode, out_aff
    cdef long i, k, n_guard, n_in, kind, addr, slot
    cdef bint masked
    cdef double v, v0, v1

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
            for k in range(n_guard):
                if aff_eval(code[i], aff_ptr, aff, counters) >= code[i + 1]:
                    masked = True
                    break
                i += 2
            if masked:
                pc = next_pc
                continue
            i = pc + 8 + 2 * n_guard
            n_in = code[i]
            i += 1
            v0 = 0.0
            v1 = 0.0
            for k in range(n_in):
                kind = code[i]
                if kind == IN_MEM:
                    addr = aff_eval(code[i + 2], aff_ptr, aff, counters)
                    if addr < 0 or addr >= size:
                        raise IndexError(f"address {addr} outside storage of {size}")
                    v = storage[addr]
                elif kind == IN_IMM:
                    v = consts[code[i + 1]]
                else:
                    v = <double> aff_eval(code[i + 1], aff_ptr, aff, counters)
                if k == 0:
                    v0 = v
                else:
                    v1 = v
                i += 3
            if fn == 0:
                v = v0
            elif fn == 1:
                v = v0 + v1
            elif fn == 2:
                v = v0 - v1
            elif fn == 3:
                v = v0 * v1
            elif fn == 4:
                v = v0 / v1
            elif fn == 5:
                v = v0 if v0 > v1 else v1
            elif fn == 6:
                v = v0 if v0 < v1 else v1
            elif fn == 7:
                v = exp(v0)
            elif fn == 8:
                v = log(v0)
            elif fn == 9:
                v = sqrt(v0)
            else:
                v = fabs(v0)
            addr = aff_eval(out_aff, aff_ptr, aff, counters)
            if addr < 0 or addr >= size:
                raise IndexError(f"address {addr} outside storage of {size}")
            if acc:
                v = storage[addr] + v
            if round_mode == 1:
                v = <double> (<float> v)
            elif round_mode == 2:
                v = rint(v)
            storage[addr] = v
            pc = next_pc
        elif op == OP_LOOP:
            counters[code[pc + 1]] = 0
            if code[pc + 2] <= 0:
                pc = code[pc + 3] + 4
            else:
                pc = pc + 4
        else:
            slot = code[pc + 1]
            counters[slot] += 1
            if counters[slot] < code[pc + 2]:
                pc = code[pc + 3]
            else:
                pc = pc + 4
