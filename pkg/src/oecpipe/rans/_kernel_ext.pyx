# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled rANS kernel; contract identical to ``_kernel_py``.

Both loops run without the GIL so coder workers on threads scale.
"""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint8_t, uint32_t, uint64_t, int32_t, int64_t

from .errors import CorruptStreamError, TruncatedStreamError, UncodableSymbolError

cnp.import_array()

DEF RANS_L = 8388608  # 2**23

NAME = "cython"


def encode_indexed(values, tab, cdf, starts, sizes, offsets, int precision, scratch=None):
    """Encode ``values[i]`` under table ``tab[i]``; its index is ``values[i] - offsets[tab[i]]``.

    ``scratch`` is an optional reusable uint8 array of at least ``2 * n + 8``
    bytes; renormalization emits at most two bytes per symbol for
    ``precision <= 16``.
    """
    cdef const int32_t[::1] v_v = np.ascontiguousarray(values, dtype=np.int32).ravel()
    cdef const int32_t[::1] t_v = np.ascontiguousarray(tab, dtype=np.int32).ravel()
    cdef const uint32_t[::1] c_v = np.ascontiguousarray(cdf, dtype=np.uint32)
    cdef const int64_t[::1] st_v = np.ascontiguousarray(starts, dtype=np.int64)
    cdef const int32_t[::1] sz_v = np.ascontiguousarray(sizes, dtype=np.int32)
    cdef const int64_t[::1] off_v = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef Py_ssize_t n = v_v.shape[0]
    if t_v.shape[0] != n:
        raise ValueError("symbol and table-id arrays differ in length")

    cdef Py_ssize_t cap = 2 * n + 8
    if scratch is None or scratch.shape[0] < cap:
        scratch = np.empty(cap, dtype=np.uint8)
    cdef uint8_t[::1] b = scratch
    cdef Py_ssize_t ptr = b.shape[0]
    cdef uint64_t x = RANS_L
    cdef uint64_t xmax_unit = (<uint64_t>RANS_L >> precision) << 8
    cdef uint64_t f, lo
    cdef int64_t s
    cdef int32_t t
    cdef Py_ssize_t i
    cdef Py_ssize_t bad = -1
    cdef int bad_kind = 0

    with nogil:
        for i in range(n - 1, -1, -1):
            t = t_v[i]
            s = v_v[i] - off_v[t]
            if s < 0 or s >= sz_v[t]:
                bad = i
                bad_kind = 1
                break
            lo = c_v[st_v[t] + s]
            f = c_v[st_v[t] + s + 1] - lo
            if f == 0:
                bad = i
                bad_kind = 2
                break
            while x >= xmax_unit * f:
                ptr -= 1
                b[ptr] = <uint8_t>(x & 0xFF)
                x >>= 8
            x = ((x // f) << precision) + (x % f) + lo
        if bad < 0:
            ptr -= 4
            b[ptr] = <uint8_t>(x & 0xFF)
            b[ptr + 1] = <uint8_t>((x >> 8) & 0xFF)
            b[ptr + 2] = <uint8_t>((x >> 16) & 0xFF)
            b[ptr + 3] = <uint8_t>((x >> 24) & 0xFF)

    if bad >= 0:
        raise UncodableSymbolError(
            bad, int(v_v[bad]), "outside alphabet" if bad_kind == 1 else "zero frequency"
        )
    return bytes(b[ptr:])


def decode_indexed(data, tab, cdf, starts, sizes, offsets, int precision):
    """Decode ``len(tab)`` values; returns ``index + offsets[tab[i]]`` per symbol."""
    cdef const uint8_t[::1] d = np.frombuffer(bytes(data), dtype=np.uint8)
    cdef const int32_t[::1] t_v = np.ascontiguousarray(tab, dtype=np.int32).ravel()
    cdef const uint32_t[::1] c_v = np.ascontiguousarray(cdf, dtype=np.uint32)
    cdef const int64_t[::1] st_v = np.ascontiguousarray(starts, dtype=np.int64)
    cdef const int32_t[::1] sz_v = np.ascontiguousarray(sizes, dtype=np.int32)
    cdef const int64_t[::1] off_v = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef Py_ssize_t n = t_v.shape[0]
    cdef Py_ssize_t end = d.shape[0]
    if end < 4:
        raise TruncatedStreamError(f"stream has {end} bytes, state needs 4")
    cdef uint64_t x = (<uint64_t>d[0] | (<uint64_t>d[1] << 8)
                       | (<uint64_t>d[2] << 16) | (<uint64_t>d[3] << 24))
    if not (RANS_L <= x < (<uint64_t>RANS_L << 8)):
        raise CorruptStreamError(f"initial state {x:#x} outside [2^23, 2^31)")

    out = np.empty(n, dtype=np.int32)
    cdef int32_t[::1] o = out
    cdef Py_ssize_t pos = 4
    cdef uint64_t mask = (1 << precision) - 1
    cdef uint64_t slot, c, f
    cdef int64_t start
    cdef int32_t lo_i, hi_i, mid, t
    cdef Py_ssize_t i
    cdef Py_ssize_t truncated_at = -1

    with nogil:
        for i in range(n):
            t = t_v[i]
            start = st_v[t]
            slot = x & mask
            lo_i = 0
            hi_i = sz_v[t]
            while hi_i - lo_i > 1:
                mid = (lo_i + hi_i) >> 1
                if c_v[start + mid] <= slot:
                    lo_i = mid
                else:
                    hi_i = mid
            c = c_v[start + lo_i]
            f = c_v[start + lo_i + 1] - c
            x = f * (x >> precision) + slot - c
            while x < RANS_L:
                if pos >= end:
                    truncated_at = i
                    break
                x = (x << 8) | d[pos]
                pos += 1
            if truncated_at >= 0:
                break
            o[i] = <int32_t>(lo_i + off_v[t])

    if truncated_at >= 0:
        raise TruncatedStreamError(f"stream exhausted after symbol {truncated_at}")
    if x != RANS_L:
        raise CorruptStreamError(f"final state {x:#x} != {RANS_L:#x}")
    if pos != end:
        raise CorruptStreamError(f"{end - pos} trailing bytes left after decoding")
    return out
