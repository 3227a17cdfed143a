"""Tiling and the per-tile coded file format.

File layout, all integers little-endian::

    magic "FCF1" | version u8 | model_size u8 (0=S, 1=M, 2=L)
    | tile_row u16 | tile_col u16 | tile_dim u16
    | y_channels u16 | y_h u16 | y_w u16 | z_channels u16 | z_h u16 | z_w u16
    | scale_table_id u32 | factorized_id u32
    | z_len u32 | z_symbol_count u32 | y_len u32 | y_symbol_count u32
    | z bytes | y bytes | crc32 u32

The CRC (IEEE, as in :func:`zlib.crc32`) covers every preceding byte. The
``z`` stream comes first because decoding ``y`` needs the scales derived
from ``z``.
"""
import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .entropy_models import MODEL_SIZES, LatentTile
from .rans import CodedStream, decode_indexed, encode_indexed

MAGIC = b"FCF1"
VERSION = 1
_HEADER = struct.Struct("<4sBBHHHHHHHHHIIIIII")
HEADER_SIZE = _HEADER.size
CRC_SIZE = 4


class CodecError(ValueError):
    pass


class CorruptFileError(CodecError):
    pass


class IncompatibleModelError(CodecError):
    pass


# -- tiling -------------------------------------------------------------------


@dataclass(frozen=True)
class TileGrid:
    image_id: str
    image_width: int
    image_height: int
    tile_dim: int
    rows: int
    cols: int
    pad_right: int
    pad_bottom: int

    @property
    def tile_count(self):
        return self.rows * self.cols


def partition(width, height, tile_dim=512, image_id=""):
    """Cover a ``width x height`` image with square tiles, zero-padding right and bottom."""
    if min(width, height, tile_dim) < 1:
        raise ValueError("width, height and tile_dim must be >= 1")
    rows = math.ceil(height / tile_dim)
    cols = math.ceil(width / tile_dim)
    return TileGrid(
        image_id, width, height, tile_dim, rows, cols,
        cols * tile_dim - width, rows * tile_dim - height,
    )


def tile_order(grid):
    """Row-major tile coordinates."""
    return [(r, c) for r in range(grid.rows) for c in range(grid.cols)]


def extract_tiles(image, tile_dim=512):
    """Split an ``H x W [x C]`` array into zero-padded tiles in partitioning order."""
    image = np.asarray(image)
    grid = partition(image.shape[1], image.shape[0], tile_dim)
    pad = [(0, grid.pad_bottom), (0, grid.pad_right)] + [(0, 0)] * (image.ndim - 2)
    padded = np.pad(image, pad, mode="constant", constant_values=0)
    return grid, [
        padded[r * tile_dim:(r + 1) * tile_dim, c * tile_dim:(c + 1) * tile_dim]
        for r, c in tile_order(grid)
    ]


def bound_file_size(spec, tile_dim=512):
    """Worst-case bytes per tile: every latent element stored at ``element_bits``.

    Dimensional only; no serialization that exploits sparsity.
    """
    y = math.prod(spec.y_shape(tile_dim))
    z = math.prod(spec.z_shape(tile_dim))
    return (y + z) * spec.element_bits // 8


# -- coded files --------------------------------------------------------------


@dataclass(frozen=True)
class CodedFile:
    model_size: str
    tile_row: int
    tile_col: int
    tile_dim: int
    y_shape: tuple
    z_shape: tuple
    scale_table_id: int
    factorized_id: int
    z_stream: CodedStream
    y_stream: CodedStream
    version: int = VERSION

    def header_bytes(self):
        return _HEADER.pack(
            MAGIC, self.version, MODEL_SIZES.index(self.model_size),
            self.tile_row, self.tile_col, self.tile_dim,
            *self.y_shape, *self.z_shape,
            self.scale_table_id, self.factorized_id,
            len(self.z_stream), self.z_stream.symbol_count,
            len(self.y_stream), self.y_stream.symbol_count,
        )

    def to_bytes(self):
        body = self.header_bytes() + self.z_stream.data + self.y_stream.data
        return body + struct.pack("<I", zlib.crc32(body))

    @property
    def size(self):
        return HEADER_SIZE + len(self.z_stream) + len(self.y_stream) + CRC_SIZE

    @property
    def payload_bytes(self):
        return len(self.z_stream) + len(self.y_stream)

    @classmethod
    def from_bytes(cls, blob):
        blob = bytes(blob)
        if len(blob) < HEADER_SIZE + CRC_SIZE:
            raise CorruptFileError(f"file too short ({len(blob)} bytes)")
        if blob[:4] != MAGIC:
            raise CorruptFileError(f"bad magic {blob[:4]!r}")
        (stored,) = struct.unpack_from("<I", blob, len(blob) - CRC_SIZE)
        if zlib.crc32(blob[:-CRC_SIZE]) != stored:
            raise CorruptFileError("CRC mismatch")
        (_, version, size_code, row, col, tile_dim, yc, yh, yw, zc, zh, zw,
         scale_id, fact_id, z_len, z_n, y_len, y_n) = _HEADER.unpack_from(blob)
        if version != VERSION:
            raise CorruptFileError(f"unsupported version {version}")
        if size_code >= len(MODEL_SIZES):
            raise CorruptFileError(f"bad model_size code {size_code}")
        if HEADER_SIZE + z_len + y_len + CRC_SIZE != len(blob):
            raise CorruptFileError("stream lengths disagree with file size")
        z_data = blob[HEADER_SIZE:HEADER_SIZE + z_len]
        y_data = blob[HEADER_SIZE + z_len:HEADER_SIZE + z_len + y_len]
        return cls(
            MODEL_SIZES[size_code], row, col, tile_dim, (yc, yh, yw), (zc, zh, zw),
            scale_id, fact_id, CodedStream(z_data, z_n), CodedStream(y_data, y_n), version,
        )


_channel_ids = {}


def _z_channel_ids(shape):
    shape = tuple(shape)
    ids = _channel_ids.get(shape)
    if ids is None:
        ids = np.ascontiguousarray(
            np.broadcast_to(np.arange(shape[0], dtype=np.int32)[:, None, None], shape).ravel()
        )
        ids.setflags(write=False)
        _channel_ids[shape] = ids
    return ids


def encode_tile(tile, gc, fp):
    """Entropy-code one tile's latents into a :class:`CodedFile`."""
    if tile.z.shape[0] != fp.channels:
        raise IncompatibleModelError(
            f"z has {tile.z.shape[0]} channels, prior has {fp.channels}"
        )
    if tile.scale_idx.shape != tile.y.shape:
        raise CodecError("scale indices and y differ in shape")
    ratio = tile.y.shape[1] // tile.z.shape[1] if tile.z.size else 1
    if not gc.hyper.matches(tile.z, tile.scale_idx, ratio, len(gc)):
        raise CodecError("scale indices are not the ones the decoder derives from z")
    if tile.z.size:
        z_stream = encode_indexed(tile.z, _z_channel_ids(tile.z.shape), fp.packed)
    else:
        z_stream = encode_indexed(np.empty(0, np.int32), np.empty(0, np.int32), gc.packed)
    y_stream = encode_indexed(tile.y, tile.scale_idx, gc.packed)
    return CodedFile(
        tile.model_size, tile.row, tile.col, tile.tile_dim,
        tuple(tile.y.shape), tuple(tile.z.shape),
        gc.model_id, fp.model_id, z_stream, y_stream,
    )


def decode_tile(coded, gc, fp, spec):
    """Rebuild the :class:`LatentTile`; scales are re-derived from the decoded ``z``."""
    if coded.scale_table_id != gc.model_id:
        raise IncompatibleModelError(
            f"file coded with scale table {coded.scale_table_id:#x}, have {gc.model_id:#x}"
        )
    if coded.factorized_id != fp.model_id:
        raise IncompatibleModelError(
            f"file coded with prior {coded.factorized_id:#x}, have {fp.model_id:#x}"
        )
    if coded.model_size != spec.model_size:
        raise IncompatibleModelError(f"file is model {coded.model_size}, spec is {spec.model_size}")
    if (coded.y_shape != spec.y_shape(coded.tile_dim)
            or coded.z_shape != spec.z_shape(coded.tile_dim)):
        raise IncompatibleModelError("latent shapes disagree with the latent spec")
    if coded.z_stream.symbol_count != math.prod(coded.z_shape) or (
        coded.y_stream.symbol_count != math.prod(coded.y_shape)
    ):
        raise CorruptFileError("symbol counts disagree with latent shapes")

    if coded.z_stream.symbol_count:
        z = decode_indexed(coded.z_stream, _z_channel_ids(coded.z_shape), fp.packed)
        z = z.reshape(coded.z_shape)
    else:
        decode_indexed(coded.z_stream, np.empty(0, np.int32), gc.packed)
        z = np.zeros(coded.z_shape, dtype=np.int32)
    scale_idx = gc.scale_indices(z, spec, coded.tile_dim)
    y = decode_indexed(coded.y_stream, scale_idx, gc.packed).reshape(coded.y_shape)
    return LatentTile(coded.tile_row, coded.tile_col, coded.tile_dim, coded.model_size, y, z, scale_idx)


def write_coded_file(path, coded):
    with open(path, "wb") as fh:
        fh.write(coded.to_bytes())


def read_coded_file(path):
    with open(path, "rb") as fh:
        return CodedFile.from_bytes(fh.read())
