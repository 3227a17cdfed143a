"""Pure-Python rANS kernel.

Same contract as the compiled ``_kernel_ext``; used when the extension is not
built or when ``OECPIPE_PURE_PYTHON=1``.

Coder parameters: 32-bit state, byte-wise renormalization, lower bound 2**23.
Symbols are pushed in reverse so that the decoder pops them forward. The
stream is laid out as ``state (4 bytes LE) | renormalization bytes`` in the
order the decoder consumes them.
"""
import numpy as np

from .errors import CorruptStreamError, TruncatedStreamError, UncodableSymbolError

RANS_L = 1 << 23

NAME = "python"


def encode_indexed(values, tab, cdf, starts, sizes, offsets, precision, scratch=None):
    """Encode ``values[i]`` under table ``tab[i]``; its index is ``values[i] - offsets[tab[i]]``."""
    values = np.asarray(values).ravel().tolist()
    offsets = np.asarray(offsets).tolist()
    tab = np.asarray(tab).ravel().tolist()
    cdf = np.asarray(cdf).tolist()
    starts = np.asarray(starts).tolist()
    sizes = np.asarray(sizes).tolist()
    n = len(values)
    if len(tab) != n:
        raise ValueError("symbol and table-id arrays differ in length")

    out = bytearray()
    append = out.append
    x = RANS_L
    xmax_unit = (RANS_L >> precision) << 8
    for i in range(n - 1, -1, -1):
        t = tab[i]
        s = values[i] - offsets[t]
        if s < 0 or s >= sizes[t]:
            raise UncodableSymbolError(i, values[i], "outside alphabet")
        base = starts[t] + s
        lo = cdf[base]
        f = cdf[base + 1] - lo
        if f == 0:
            raise UncodableSymbolError(i, values[i])
        xmax = xmax_unit * f
        while x >= xmax:
            append(x & 0xFF)
            x >>= 8
        q, r = divmod(x, f)
        x = (q << precision) + r + lo
    out.reverse()
    return x.to_bytes(4, "little") + bytes(out)


def decode_indexed(data, tab, cdf, starts, sizes, offsets, precision):
    """Decode ``len(tab)`` values; returns ``index + offsets[tab[i]]`` per symbol."""
    tab = np.asarray(tab).ravel().tolist()
    offsets = np.asarray(offsets).tolist()
    cdf = np.asarray(cdf).tolist()
    starts = np.asarray(starts).tolist()
    sizes = np.asarray(sizes).tolist()
    data = bytes(data)
    n = len(tab)
    if len(data) < 4:
        raise TruncatedStreamError(f"stream has {len(data)} bytes, state needs 4")
    x = int.from_bytes(data[:4], "little")
    if not RANS_L <= x < (RANS_L << 8):
        raise CorruptStreamError(f"initial state {x:#x} outside [2^23, 2^31)")
    pos = 4
    end = len(data)
    mask = (1 << precision) - 1
    out = [0] * n
    for i in range(n):
        start = starts[tab[i]]
        slot = x & mask
        # upper_bound over cdf[start : start + size + 1], minus one
        lo_i, hi_i = 0, sizes[tab[i]]
        while hi_i - lo_i > 1:
            mid = (lo_i + hi_i) >> 1
            if cdf[start + mid] <= slot:
                lo_i = mid
            else:
                hi_i = mid
        s = lo_i
        c = cdf[start + s]
        f = cdf[start + s + 1] - c
        x = f * (x >> precision) + slot - c
        while x < RANS_L:
            if pos >= end:
                raise TruncatedStreamError(f"stream exhausted after symbol {i}")
            x = (x << 8) | data[pos]
            pos += 1
        out[i] = s + offsets[tab[i]]
    if x != RANS_L:
        raise CorruptStreamError(f"final state {x:#x} != {RANS_L:#x}")
    if pos != end:
        raise CorruptStreamError(f"{end - pos} trailing bytes left after decoding")
    return np.asarray(out, dtype=np.int32)
