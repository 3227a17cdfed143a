"""Entropy models for the two latent tensors of a tile.

The main latent ``y`` is coded under a Gaussian conditional: each element has
its own scale, quantized onto a fixed table of levels, and every level owns a
precomputed CDF table. The hyper-latent ``z`` is coded under a factorized
prior, one histogram table per channel.

Latents are handled as integer symbols after mean-subtracted rounding,
``round(y - mu)``; the means are added back after decoding.

Synthetic latents stand in for a neural encoder. They reproduce the parts the
coder cares about: sparsity, per-element scales derived from ``z``, and
symbol ranges that the tables can code.
"""
import math
import zlib
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .rans import CdfTable, PackedTables, validate_cdf

DEFAULT_PRECISION = 16
DEFAULT_TAIL_MASS = 2.0**-9
MODEL_SIZES = ("S", "M", "L")


class ZeroProbabilityError(ValueError):
    """A symbol has zero probability under its model, i.e. infinite cost."""


# -- frequency quantization ---------------------------------------------------


def quantize_pmf(pmf, precision_bits):
    """Integer frequencies summing to ``2**precision_bits``.

    Every symbol with positive probability gets frequency >= 1; zero
    probabilities stay zero. Rounding error is absorbed by the most probable
    symbols first, which keeps symmetric pmfs symmetric to within one count.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    total = 1 << precision_bits
    if pmf.ndim != 1 or pmf.size == 0:
        raise ValueError("pmf must be a non-empty vector")
    if np.any(pmf < 0) or not np.isfinite(pmf).all():
        raise ValueError("pmf must be finite and non-negative")
    pmf = pmf / pmf.sum()
    live = pmf > 0
    if live.sum() > total:
        raise ValueError(f"{int(live.sum())} live symbols do not fit in 2^{precision_bits}")
    freq = np.where(live, np.maximum(np.rint(pmf * total), 1), 0).astype(np.int64)
    diff = total - int(freq.sum())
    if diff:
        # stable sort so ties resolve in index order; the remainder moves one
        # count per bin per pass, so mirrored bins end within one count
        order = np.argsort(-freq, kind="stable")
        live_order = order[freq[order] > 0]
        while diff > 0:
            step = live_order[:diff]
            freq[step] += 1
            diff -= step.size
        while diff < 0:
            spare = order[freq[order] > 1][:-diff]
            freq[spare] -= 1
            diff += spare.size
    return freq


def table_from_pmf(pmf, precision_bits, offset):
    freq = quantize_pmf(pmf, precision_bits)
    return CdfTable(precision_bits, np.concatenate([[0], np.cumsum(freq)]), offset)


def _table_id(*parts):
    crc = 0
    for part in parts:
        crc = zlib.crc32(np.ascontiguousarray(part).tobytes(), crc)
    return crc


# -- Gaussian conditional -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScaleTable:
    levels: np.ndarray

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=np.float64)
        if levels.ndim != 1 or levels.size < 2:
            raise ValueError("scale table needs at least two levels")
        if levels[0] <= 0:
            raise ValueError("scale levels must be positive")
        if np.any(np.diff(levels) <= 0):
            raise ValueError("scale levels must be strictly increasing")
        object.__setattr__(self, "levels", levels)

    def __len__(self):
        return len(self.levels)

    @classmethod
    def log_spaced(cls, lo=0.11, hi=256.0, n=64):
        return cls(np.exp(np.linspace(math.log(lo), math.log(hi), n)))


def quantize_scale(sigma, table):
    """Smallest index ``i`` with ``levels[i] >= sigma``, clamped to the last index.

    Accepts scalars or arrays.
    """
    idx = np.searchsorted(table.levels, sigma, side="left")
    idx = np.minimum(idx, len(table.levels) - 1)
    return int(idx) if np.ndim(idx) == 0 else idx.astype(np.int32)


def gaussian_support(sigma, tail_mass):
    """Smallest ``L >= 0`` with two-sided mass beyond ``L + 0.5`` below ``tail_mass``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    z = -ndtri(tail_mass / 2)
    L = max(0, math.ceil(sigma * z - 0.5))
    while 2 * ndtr(-(L + 0.5) / sigma) >= tail_mass:
        L += 1
    while L > 0 and 2 * ndtr(-(L - 0.5) / sigma) < tail_mass:
        L -= 1
    return L


def gaussian_pmf(sigma, tail_mass):
    """Discretized zero-mean Gaussian on ``[-L, L]``.

    Interior bins hold ``Phi((s + .5)/sigma) - Phi((s - .5)/sigma)``; the two
    edge bins also absorb the tail beyond them, so the pmf sums to one and
    out-of-range values have a well-defined home after clamping.
    """
    L = gaussian_support(sigma, tail_mass)
    k = np.arange(L + 1, dtype=np.float64)
    # upper tails Q(x) = Phi(-x) stay accurate far from the mode
    upper = ndtr(-(k + 0.5) / sigma)
    lower = ndtr(-(k - 0.5) / sigma)
    half = lower - upper
    half[0] = 1.0 - 2.0 * upper[0]
    if L > 0:
        half[L] = lower[L]
    else:
        half[0] = 1.0
    return np.concatenate([half[:0:-1], half]), L


def build_gaussian_cdf(sigma, precision_bits=DEFAULT_PRECISION, tail_mass=DEFAULT_TAIL_MASS):
    pmf, L = gaussian_pmf(sigma, tail_mass)
    return table_from_pmf(pmf, precision_bits, -L)


@dataclass(frozen=True)
class HyperSynthesis:
    """Deterministic map from ``z`` to per-element scale indices of ``y``.

    Stands in for the hyper-decoder: element ``(c, i, j)`` of ``y`` takes
    ``base_index + step * |z[c % z_channels, i // r, j // r]|`` (clamped),
    where ``r = z_stride // y_stride``. Encoder and decoder both derive the
    scales from ``z`` this way, so scales never travel in the file.
    """

    base_index: int = 10
    step: int = 6

    def block_indices(self, z, y_channels, n_levels):
        """Scale index per ``(y channel, z row, z col)`` block."""
        if z.shape[0] == 0:
            return np.full((y_channels, 1, 1), min(self.base_index, n_levels - 1), dtype=np.int32)
        zc = np.abs(z.astype(np.int64))[np.arange(y_channels) % z.shape[0]]
        return np.clip(self.base_index + self.step * zc, 0, n_levels - 1).astype(np.int32)

    def scale_indices(self, z, y_shape, ratio, n_levels):
        c, h, w = y_shape
        blocks = self.block_indices(z, c, n_levels)
        if z.shape[0] == 0:
            return np.broadcast_to(blocks, y_shape).copy()
        return np.repeat(np.repeat(blocks, ratio, axis=1), ratio, axis=2)[:, :h, :w].copy()

    def matches(self, z, scale_idx, ratio, n_levels):
        """True if ``scale_idx`` is what :meth:`scale_indices` derives from ``z``."""
        c, h, w = scale_idx.shape
        blocks = self.block_indices(z, c, n_levels)
        if z.shape[0] == 0:
            return bool((scale_idx == blocks.flat[0]).all())
        zh, zw = z.shape[1:]
        if zh * ratio != h or zw * ratio != w:
            return False
        view = scale_idx.reshape(c, zh, ratio, zw, ratio)
        return bool((view == blocks[:, :, None, :, None]).all())


class GaussianConditional:
    """Per-scale CDF tables for the main latent."""

    def __init__(
        self,
        scale_table=None,
        precision_bits=DEFAULT_PRECISION,
        tail_mass=DEFAULT_TAIL_MASS,
        hyper=None,
    ):
        if not 0 < tail_mass <= 0.01:
            raise ValueError(f"tail_mass must lie in (0, 0.01], got {tail_mass}")
        self.scale_table = scale_table if scale_table is not None else ScaleTable.log_spaced()
        self.precision_bits = precision_bits
        self.tail_mass = tail_mass
        self.hyper = hyper if hyper is not None else HyperSynthesis()
        self.tables = [
            build_gaussian_cdf(s, precision_bits, tail_mass) for s in self.scale_table.levels
        ]
        for t in self.tables:
            assert validate_cdf(t) is None
        self.packed = PackedTables(self.tables)
        self.model_id = _table_id(
            self.scale_table.levels,
            np.array([precision_bits, self.hyper.base_index, self.hyper.step]),
            np.array([tail_mass]),
        )

    def __len__(self):
        return len(self.tables)

    def support(self, scale_idx):
        """Lowest and highest codable value for each scale index."""
        lo = self.packed.offsets[scale_idx]
        return lo, lo + self.packed.sizes[scale_idx] - 1

    def scale_indices(self, z, spec, tile_dim):
        return self.hyper.scale_indices(
            z, spec.y_shape(tile_dim), spec.z_stride // spec.y_stride, len(self)
        )

    @staticmethod
    def quantize(y, means=None):
        """Mean-subtracted rounding: the integer symbols that get coded."""
        y = np.asarray(y, dtype=np.float64)
        if means is not None:
            y = y - means
        return np.rint(y).astype(np.int32)

    @staticmethod
    def dequantize(symbols, means=None):
        out = np.asarray(symbols, dtype=np.float64)
        return out if means is None else out + means


# -- factorized prior ---------------------------------------------------------


class FactorizedPrior:
    """One smoothed-histogram table per channel of the hyper-latent."""

    def __init__(self, pmfs, offsets, pseudo_count, precision_bits=DEFAULT_PRECISION):
        self.pmfs = [np.asarray(p, dtype=np.float64) for p in pmfs]
        self.offsets = [int(o) for o in offsets]
        self.pseudo_count = pseudo_count
        self.precision_bits = precision_bits
        self.tables = [
            table_from_pmf(p, precision_bits, o) for p, o in zip(self.pmfs, self.offsets)
        ]
        self.packed = PackedTables(self.tables) if self.tables else None
        self.model_id = _table_id(
            np.array(self.offsets, dtype=np.int64),
            np.array([precision_bits]),
            *[t.cum_freq for t in self.tables],
        )

    @property
    def channels(self):
        return len(self.tables)


def fit_factorized(samples, pseudo_count=1.0, precision_bits=DEFAULT_PRECISION, support=None):
    """Fit a per-channel histogram prior with Laplace smoothing.

    ``samples`` holds one integer sequence per channel. Each channel's
    support is ``[min - 1, max + 1]`` of its samples, widened to include
    ``support=(lo, hi)`` if given; ``p(v)`` is proportional to
    ``count(v) + pseudo_count``.
    """
    if pseudo_count < 0:
        raise ValueError("pseudo_count must be non-negative")
    pmfs, offsets = [], []
    for ch, values in enumerate(samples):
        values = np.asarray(values, dtype=np.int64).ravel()
        if values.size == 0:
            raise ValueError(f"channel {ch} has no samples")
        lo, hi = int(values.min()) - 1, int(values.max()) + 1
        if support is not None:
            lo, hi = min(lo, support[0]), max(hi, support[1])
        counts = np.bincount(values - lo, minlength=hi - lo + 1).astype(np.float64)
        weights = counts + pseudo_count
        pmfs.append(weights / weights.sum())
        offsets.append(lo)
    return FactorizedPrior(pmfs, offsets, pseudo_count, precision_bits)


# -- latent shapes and synthetic latents --------------------------------------


@dataclass(frozen=True)
class LatentSpec:
    model_size: str
    y_channels: int
    z_channels: int
    y_stride: int = 16
    z_stride: int = 64
    element_bits: int = 16

    def __post_init__(self):
        if self.model_size not in MODEL_SIZES:
            raise ValueError(f"model_size must be one of {MODEL_SIZES}")
        for stride in (self.y_stride, self.z_stride):
            if stride < 1 or stride & (stride - 1):
                raise ValueError(f"stride {stride} is not a power of two")
        if self.z_stride % self.y_stride:
            raise ValueError("z_stride must be a multiple of y_stride")
        if self.y_channels < 1 or self.z_channels < 0:
            raise ValueError("channel counts must be positive")

    @classmethod
    def for_size(cls, model_size, **overrides):
        y, z = {"S": (128, 64), "M": (192, 96), "L": (256, 128)}[model_size]
        return cls(model_size, overrides.pop("y_channels", y), overrides.pop("z_channels", z), **overrides)

    def check_tile_dim(self, tile_dim):
        if tile_dim % self.y_stride or tile_dim % self.z_stride:
            raise ValueError(
                f"tile_dim {tile_dim} not divisible by strides {self.y_stride}/{self.z_stride}"
            )

    def y_shape(self, tile_dim):
        self.check_tile_dim(tile_dim)
        side = tile_dim // self.y_stride
        return (self.y_channels, side, side)

    def z_shape(self, tile_dim):
        self.check_tile_dim(tile_dim)
        side = tile_dim // self.z_stride
        return (self.z_channels, side, side)


@dataclass(eq=False)
class LatentTile:
    """Quantized latent pair for one tile, plus the scale indices ``y`` is coded with."""

    row: int
    col: int
    tile_dim: int
    model_size: str
    y: np.ndarray
    z: np.ndarray
    scale_idx: np.ndarray

    @property
    def symbol_count(self):
        return int(self.y.size + self.z.size)

    @property
    def pixels(self):
        return self.tile_dim * self.tile_dim

    def __eq__(self, other):
        if not isinstance(other, LatentTile):
            return NotImplemented
        return (
            (self.row, self.col, self.tile_dim, self.model_size)
            == (other.row, other.col, other.tile_dim, other.model_size)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.z, other.z)
            and np.array_equal(self.scale_idx, other.scale_idx)
        )


@dataclass(frozen=True)
class SyntheticLatentConfig:
    """Statistics of the synthetic latents.

    ``sparsity`` is the probability that an element is exactly zero. Non-zero
    draws of ``z`` are discretized ``N(0, z_sigma)`` clamped to
    ``[-z_clip, z_clip]``; non-zero draws of ``y`` are discretized
    ``N(0, y_scale * sigma)`` with ``sigma`` the element's coding scale, so
    ``y_scale=1`` means the model is well matched.
    """

    sparsity: float = 0.7
    z_sigma: float = 0.8
    z_clip: int = 6
    y_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.sparsity < 1.0:
            raise ValueError(f"sparsity must lie in [0, 1), got {self.sparsity}")
        if self.z_sigma < 0 or self.y_scale < 0 or self.z_clip < 0:
            raise ValueError("scale parameters must be non-negative")


def _sparse_gaussian(rng, shape, sigma, sparsity):
    values = np.rint(rng.standard_normal(shape) * sigma)
    if sparsity > 0:
        values[rng.random(shape) < sparsity] = 0
    return values.astype(np.int64)


def generate_synthetic_latent(spec, cfg, tile_id, gc, tile_dim=512, row=0, col=0):
    """Deterministic synthetic latents for ``(cfg.seed, tile_id)``.

    Values are clamped into the support of their table, so every generated
    tile is codable under ``gc`` and :func:`default_factorized_prior`.
    """
    rng = np.random.default_rng([cfg.seed, tile_id])
    z = np.clip(
        _sparse_gaussian(rng, spec.z_shape(tile_dim), cfg.z_sigma, cfg.sparsity),
        -cfg.z_clip,
        cfg.z_clip,
    ).astype(np.int32)
    scale_idx = gc.scale_indices(z, spec, tile_dim)
    sigma = gc.scale_table.levels[scale_idx] * cfg.y_scale
    y = _sparse_gaussian(rng, scale_idx.shape, sigma, cfg.sparsity)
    lo, hi = gc.support(scale_idx)
    y = np.clip(y, lo, hi).astype(np.int32)
    return LatentTile(row, col, tile_dim, spec.model_size, y, z, scale_idx)


def default_factorized_prior(spec, cfg, tile_dim=512, calibration_tiles=16, pseudo_count=1.0):
    """Factorized prior fitted on seeded calibration draws of ``z``.

    The support is widened to the generator's clamp range so any synthetic
    tile is codable.
    """
    shape = spec.z_shape(tile_dim)
    draws = []
    for k in range(calibration_tiles):
        rng = np.random.default_rng([cfg.seed, 2**31 + k])
        draws.append(
            np.clip(_sparse_gaussian(rng, shape, cfg.z_sigma, cfg.sparsity), -cfg.z_clip, cfg.z_clip)
        )
    per_channel = np.stack(draws, axis=1).reshape(shape[0], -1) if shape[0] else []
    return fit_factorized(
        per_channel, pseudo_count, support=(-cfg.z_clip, cfg.z_clip)
    )


# -- rate estimation ----------------------------------------------------------


def _bits_under(values, table_ids, packed):
    values = np.asarray(values, dtype=np.int64).ravel()
    table_ids = np.asarray(table_ids, dtype=np.int64).ravel()
    idx = values - packed.offsets[table_ids]
    if np.any(idx < 0) or np.any(idx >= packed.sizes[table_ids]):
        raise ZeroProbabilityError("value outside its table's support")
    flat = packed.starts[table_ids] + idx
    cdf = packed.cdf.astype(np.int64)
    freq = cdf[flat + 1] - cdf[flat]
    if np.any(freq == 0):
        raise ZeroProbabilityError("value has zero frequency")
    return float(np.sum(packed.precision_bits - np.log2(freq)))


def y_bits(tile, gc):
    return _bits_under(tile.y, tile.scale_idx, gc.packed)


def z_bits(tile, fp):
    if tile.z.size == 0:
        return 0.0
    if fp.channels != tile.z.shape[0]:
        raise ValueError(f"prior has {fp.channels} channels, z has {tile.z.shape[0]}")
    channel = np.broadcast_to(np.arange(tile.z.shape[0])[:, None, None], tile.z.shape)
    return _bits_under(tile.z, channel, fp.packed)


def estimate_bits(tile, gc, fp):
    """Ideal code length in bits, ``sum(-log2 p)`` under the quantized tables."""
    return y_bits(tile, gc) + z_bits(tile, fp)


def bits_per_pixel(bits, tile_dim):
    return bits / (tile_dim * tile_dim)
