"""Byte-oriented rANS coding over quantized cumulative-frequency tables.

The hot loops live in a compiled kernel (``_kernel_ext``) with a pure-Python
fallback (``_kernel_py``). The compiled one is used when importable unless
``OECPIPE_PURE_PYTHON=1`` is set; ``BACKEND`` names the active kernel.
"""
import os
import threading
from dataclasses import dataclass

import numpy as np

from . import _kernel_py
from .errors import (
    CorruptStreamError,
    InvalidTableError,
    RansError,
    TruncatedStreamError,
    UncodableSymbolError,
)

if os.environ.get("OECPIPE_PURE_PYTHON"):
    _kernel = _kernel_py
else:
    try:
        from . import _kernel_ext as _kernel
    except ImportError:  # extension not built
        _kernel = _kernel_py

BACKEND = _kernel.NAME
RANS_L = 1 << 23
MIN_PRECISION = 8
MAX_PRECISION = 16

__all__ = [
    "BACKEND",
    "CdfTable",
    "CodedStream",
    "CorruptStreamError",
    "InvalidTableError",
    "PackedTables",
    "RansError",
    "TruncatedStreamError",
    "UncodableSymbolError",
    "decode_indexed",
    "decode_stream",
    "encode_indexed",
    "encode_stream",
    "kernels",
    "validate_cdf",
]


@dataclass(frozen=True, eq=False)
class CdfTable:
    """Cumulative frequencies summing to ``2**precision_bits``.

    ``cum_freq[i + 1] - cum_freq[i]`` is the frequency of symbol index ``i``;
    the symbol's value is ``alphabet_offset + i``.
    """

    precision_bits: int
    cum_freq: np.ndarray
    alphabet_offset: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cum_freq", np.asarray(self.cum_freq, dtype=np.int64))

    @property
    def alphabet_size(self):
        return len(self.cum_freq) - 1

    @property
    def freq(self):
        return np.diff(self.cum_freq)

    def probabilities(self):
        return self.freq / float(1 << self.precision_bits)

    def __eq__(self, other):
        if not isinstance(other, CdfTable):
            return NotImplemented
        return (
            self.precision_bits == other.precision_bits
            and self.alphabet_offset == other.alphabet_offset
            and np.array_equal(self.cum_freq, other.cum_freq)
        )

    def __hash__(self):
        return hash((self.precision_bits, self.alphabet_offset, self.cum_freq.tobytes()))


@dataclass(frozen=True)
class CodedStream:
    data: bytes
    symbol_count: int

    def __len__(self):
        return len(self.data)


def validate_cdf(table):
    """Return ``None`` if ``table`` is usable, else a description of the first problem."""
    p = table.precision_bits
    if not MIN_PRECISION <= p <= MAX_PRECISION:
        return f"precision_bits={p} outside [{MIN_PRECISION}, {MAX_PRECISION}]"
    cf = table.cum_freq
    if cf.ndim != 1 or len(cf) < 2:
        return "cum_freq needs at least two entries"
    if cf[0] != 0:
        return f"cum_freq[0]={cf[0]}, expected 0"
    steps = np.diff(cf)
    if np.any(steps < 0):
        return f"cum_freq decreases at index {int(np.argmax(steps < 0)) + 1}"
    if cf[-1] != 1 << p:
        return f"cum_freq total {cf[-1]} != 2^{p} = {1 << p}"
    return None


def _check(table):
    problem = validate_cdf(table)
    if problem is not None:
        raise InvalidTableError(problem)


class PackedTables:
    """Several tables of equal precision, flattened for indexed coding.

    Each coded symbol picks its own table by id, which is how a Gaussian
    conditional codes every element under its own scale.
    """

    def __init__(self, tables):
        tables = list(tables)
        if not tables:
            raise InvalidTableError("need at least one table")
        for t in tables:
            _check(t)
        precisions = {t.precision_bits for t in tables}
        if len(precisions) != 1:
            raise InvalidTableError(f"mixed precisions {sorted(precisions)}")
        self.tables = tables
        self.precision_bits = precisions.pop()
        self.sizes = np.array([t.alphabet_size for t in tables], dtype=np.int32)
        self.offsets = np.array([t.alphabet_offset for t in tables], dtype=np.int64)
        lengths = self.sizes.astype(np.int64) + 1
        self.starts = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
        self.cdf = np.concatenate([t.cum_freq for t in tables]).astype(np.uint32)

    def __len__(self):
        return len(self.tables)

    def check_ids(self, table_ids):
        table_ids = np.asarray(table_ids)
        if table_ids.size and (table_ids.min() < 0 or table_ids.max() >= len(self.tables)):
            raise ValueError(f"table ids must lie in [0, {len(self.tables)})")
        return table_ids


_scratch = threading.local()


def _scratch_for(n):
    buf = getattr(_scratch, "buf", None)
    need = 2 * n + 8
    if buf is None or buf.shape[0] < need:
        buf = np.empty(max(need, 1 << 16), dtype=np.uint8)
        _scratch.buf = buf
    return buf


def encode_indexed(values, table_ids, packed):
    """Encode symbol values, value ``i`` under ``packed.tables[table_ids[i]]``.

    Values are in symbol space (``alphabet_offset`` included); the kernel
    subtracts each table's offset itself.
    """
    table_ids = packed.check_ids(table_ids)
    values = np.asarray(values)
    data = _kernel.encode_indexed(
        values, table_ids, packed.cdf, packed.starts, packed.sizes, packed.offsets,
        packed.precision_bits, _scratch_for(values.size),
    )
    return CodedStream(data, int(values.size))


def decode_indexed(stream, table_ids, packed):
    """Inverse of :func:`encode_indexed`; returns int32 symbol values."""
    table_ids = packed.check_ids(table_ids)
    if table_ids.size != stream.symbol_count:
        raise ValueError(f"{table_ids.size} table ids for {stream.symbol_count} symbols")
    return _kernel.decode_indexed(
        stream.data, table_ids, packed.cdf, packed.starts, packed.sizes, packed.offsets,
        packed.precision_bits,
    )


def encode_stream(symbols, table):
    """Encode a list of symbol indices (not values) under a single table."""
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    if symbols.size and (symbols.min() < np.iinfo(np.int32).min or symbols.max() > np.iinfo(np.int32).max):
        bad = int(np.argmax((symbols < 0) | (symbols >= table.alphabet_size)))
        raise UncodableSymbolError(bad, int(symbols[bad]), "outside alphabet")
    packed = PackedTables([CdfTable(table.precision_bits, table.cum_freq, 0)])
    return encode_indexed(symbols, np.zeros(symbols.size, dtype=np.int32), packed)


def decode_stream(stream, table, n=None):
    """Invert :func:`encode_stream`; ``n`` defaults to ``stream.symbol_count``."""
    if n is None:
        n = stream.symbol_count
    if n != stream.symbol_count:
        stream = CodedStream(stream.data, n)
    packed = PackedTables([CdfTable(table.precision_bits, table.cum_freq, 0)])
    return decode_indexed(stream, np.zeros(n, dtype=np.int32), packed)


def kernels():
    """All importable kernels, keyed by name (for benchmarks and cross-checks)."""
    found = {_kernel_py.NAME: _kernel_py}
    try:
        from . import _kernel_ext
    except ImportError:
        pass
    else:
        found[_kernel_ext.NAME] = _kernel_ext
    return found
