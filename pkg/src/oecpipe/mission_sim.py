"""Downlink-bottleneck mission accounting.

All volumes are bytes, rates are bits/s for the link and tiles/s for
processing, times are seconds and energies joules. Floor and boundary
decisions are made in exact rational arithmetic so they do not depend on how
a float product happens to round.
"""
import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction

MODEL_ORDER = {"S": 0, "M": 1, "L": 2}

REPORT_COLUMNS = (
    "mission", "device", "model", "capacity_B", "raw_equiv_B", "tiles",
    "T_double_s", "E_double_J", "E_tx_saved_J", "deadline_met",
)


class NonBeneficialConfig(ValueError):
    """The coded representation is no smaller than the raw pixels."""


class NoFeasibleConfig(ValueError):
    pass


@dataclass(frozen=True)
class MissionSpec:
    mission_id: str
    downlink_rate: float
    pass_duration: float
    passes_per_day: float = 1.0
    orbital_period: float = 5400.0
    raw_volume_per_orbit: float = 0.0
    raw_bpp: float = 24.0

    def __post_init__(self):
        if min(self.downlink_rate, self.pass_duration, self.passes_per_day,
               self.orbital_period, self.raw_bpp) <= 0:
            raise ValueError(f"mission {self.mission_id}: rates and durations must be positive")
        if self.raw_volume_per_orbit < 0:
            raise ValueError(f"mission {self.mission_id}: raw volume must be non-negative")


@dataclass(frozen=True)
class DeviceProfile:
    """Power figures for one device.

    ``power_trace`` optionally replaces ``avg_processing_power`` with a
    piecewise-constant draw: ``(start_s, watts)`` pairs sorted by start,
    the first starting at 0.
    """

    device_id: str
    avg_processing_power: float
    transmit_power: float
    power_cap: float = 15.0
    power_trace: tuple = ()
    candidates: tuple = ()

    def __post_init__(self):
        if min(self.avg_processing_power, self.transmit_power, self.power_cap) <= 0:
            raise ValueError(f"device {self.device_id}: powers must be positive")
        if self.avg_processing_power > self.power_cap:
            raise ValueError(f"device {self.device_id}: average power exceeds the cap")
        if self.power_trace:
            starts = [s for s, _ in self.power_trace]
            if starts[0] != 0 or starts != sorted(starts):
                raise ValueError("power_trace must start at 0 and be sorted")
            if min(w for _, w in self.power_trace) <= 0:
                raise ValueError("power_trace watts must be positive")

    def energy(self, seconds):
        """Joules drawn while processing for ``seconds``."""
        if not self.power_trace:
            return self.avg_processing_power * seconds
        total = 0.0
        bounds = list(self.power_trace) + [(math.inf, 0.0)]
        for (start, watts), (nxt, _) in zip(bounds, bounds[1:]):
            if start >= seconds:
                break
            total += watts * (min(nxt, seconds) - start)
        return total


@dataclass(frozen=True)
class ConfigCandidate:
    model_size: str
    tiles_per_second: float
    bpp: float
    memory_bytes: int = 0
    grouping: tuple = (1, 1)
    device_id: str = ""

    def __post_init__(self):
        if self.model_size not in MODEL_ORDER:
            raise ValueError(f"unknown model size {self.model_size!r}")
        if self.bpp <= 0 or self.tiles_per_second <= 0:
            raise ValueError("bpp and tiles_per_second must be positive")
        if self.memory_bytes < 0:
            raise ValueError("memory_bytes must be non-negative")


def tcr_per_second(c, tile_dim=512, raw_bpp=24.0):
    """Downlink bytes avoided per second of processing under ``c``."""
    if c.bpp >= raw_bpp:
        raise NonBeneficialConfig(f"bpp {c.bpp} is not below raw {raw_bpp}")
    return c.tiles_per_second * tile_dim * tile_dim * (raw_bpp - c.bpp) / 8


def _selection_key(c, tile_dim, raw_bpp):
    # max TCR/s, then less memory, then the smaller model
    return (-tcr_per_second(c, tile_dim, raw_bpp), c.memory_bytes, MODEL_ORDER[c.model_size])


def profiler_select(candidates, memory_budget, tile_dim=512, raw_bpp=24.0):
    """Best TCR/s among candidates that fit in ``memory_budget``.

    Non-beneficial candidates are never feasible. Full ties keep the earlier
    candidate.
    """
    best = None
    best_key = None
    for c in candidates:
        if c.memory_bytes > memory_budget or c.bpp >= raw_bpp:
            continue
        key = _selection_key(c, tile_dim, raw_bpp)
        if best is None or key < best_key:
            best, best_key = c, key
    if best is None:
        raise NoFeasibleConfig(f"no candidate fits {memory_budget} bytes with bpp < {raw_bpp}")
    return best


def compression_ratio(m, bpp):
    if bpp <= 0:
        raise ValueError("bpp must be positive")
    return m.raw_bpp / bpp


def pass_capacity(m):
    return m.downlink_rate * m.pass_duration / 8


def raw_equivalent(m, bpp):
    """Raw bytes whose coded form fills one pass."""
    return pass_capacity(m) * compression_ratio(m, bpp)


def coded_tile_bytes(bpp, tile_dim=512):
    return tile_dim * tile_dim * bpp / 8


def tiles_to_saturation(m, c, tile_dim=512):
    exact = Fraction(m.downlink_rate) * Fraction(m.pass_duration) / (
        Fraction(tile_dim * tile_dim) * Fraction(c.bpp)
    )
    return math.floor(exact)


def raw_processing_rate(c, tile_dim=512, raw_bpp=24.0):
    """Raw bytes per second the configuration consumes."""
    return c.tiles_per_second * tile_dim * tile_dim * raw_bpp / 8


def deadline_check(m, c, tile_dim=512):
    """True when one orbit's raw data is processed within the orbital period."""
    need = Fraction(m.raw_volume_per_orbit) * 8
    rate = Fraction(c.tiles_per_second) * tile_dim * tile_dim * Fraction(m.raw_bpp)
    return need / rate <= Fraction(m.orbital_period)


def double_volume(m):
    """Raw bytes to process before the downlinkable volume has doubled."""
    return 2 * pass_capacity(m)


def energy_to_double(m, d, c, tile_dim=512):
    """``(seconds, joules)`` to process :func:`double_volume` worth of raw data."""
    if compression_ratio(m, c.bpp) <= 1:
        raise NonBeneficialConfig("compression ratio must exceed 1 to double the volume")
    seconds = double_volume(m) / raw_processing_rate(c, tile_dim, m.raw_bpp)
    return seconds, d.energy(seconds)


def transmission_savings(m, d, bpp):
    """Transmit energy saved by sending coded data instead of its raw volume.

    The raw volume would occupy ``ratio`` passes' worth of link time; the
    coded stream occupies exactly one. Negative when ``bpp > raw_bpp``.
    """
    # raw_equivalent * 8 / rate == pass_duration * ratio, without the round trip
    t_raw = m.pass_duration * compression_ratio(m, bpp)
    return d.transmit_power * (t_raw - m.pass_duration)


def frames_per_joule(fps, power):
    if power <= 0:
        raise ValueError("power must be positive")
    return fps / power


# -- step-wise simulation -----------------------------------------------------


@dataclass
class StepwiseResult:
    tiles_to_saturation: int
    seconds_to_double: float
    joules_to_double: float
    tiles_processed: int


def simulate_pass_stepwise(m, d, c, tile_dim=512, max_tiles=50_000_000):
    """Tile-granular accumulation of the same quantities as the closed forms.

    Coded bytes are added one tile at a time until the next tile would
    overflow the pass; raw bytes and energy are added per processed tile
    until the doubling volume is reached. Agrees with the closed forms to
    within one tile.
    """
    capacity = pass_capacity(m)
    per_coded = coded_tile_bytes(c.bpp, tile_dim)
    sent = 0.0
    tiles = 0
    while sent + per_coded <= capacity:
        sent += per_coded
        tiles += 1
        if tiles > max_tiles:
            raise RuntimeError("step limit exceeded")

    target = double_volume(m)
    per_raw = tile_dim * tile_dim * m.raw_bpp / 8
    tick = 1.0 / c.tiles_per_second
    done = 0.0
    t = 0.0
    energy = 0.0
    n = 0
    while done < target:
        done += per_raw
        energy += d.energy(t + tick) - d.energy(t)
        t += tick
        n += 1
        if n > max_tiles:
            raise RuntimeError("step limit exceeded")
    return StepwiseResult(tiles, t, energy, n)


# -- reports ------------------------------------------------------------------


@dataclass
class PassReport:
    mission_id: str
    device_id: str
    model_size: str
    capacity_bytes: float
    raw_equivalent_bytes: float
    tiles_to_saturation: int
    seconds_to_double: float = field(default=math.nan)
    energy_to_double: float = field(default=math.nan)
    transmission_savings: float = 0.0
    deadline_met: bool = True

    def csv_row(self):
        return {
            "mission": self.mission_id, "device": self.device_id, "model": self.model_size,
            "capacity_B": repr(self.capacity_bytes), "raw_equiv_B": repr(self.raw_equivalent_bytes),
            "tiles": self.tiles_to_saturation, "T_double_s": repr(self.seconds_to_double),
            "E_double_J": repr(self.energy_to_double),
            "E_tx_saved_J": repr(self.transmission_savings),
            "deadline_met": int(self.deadline_met),
        }


def mission_report(m, d, c, tile_dim=512):
    """Everything the analytic ops say about one (mission, device, config)."""
    if compression_ratio(m, c.bpp) > 1:
        seconds, joules = energy_to_double(m, d, c, tile_dim)
    else:
        seconds = joules = math.nan
    return PassReport(
        m.mission_id, d.device_id, c.model_size,
        pass_capacity(m), raw_equivalent(m, c.bpp), tiles_to_saturation(m, c, tile_dim),
        seconds, joules, transmission_savings(m, d, c.bpp), deadline_check(m, c, tile_dim),
    )


def write_report_csv(fh, reports):
    writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
    writer.writeheader()
    for r in reports:
        writer.writerow(r.csv_row())
