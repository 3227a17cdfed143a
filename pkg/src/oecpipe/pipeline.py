"""Concurrent compression pipeline: paced producer, bounded queue, coder workers.

The producer stands in for GPU-bound inference, so it paces tile emission to a
throughput trace instead of burning CPU. Coder workers are threads (the rANS
kernel releases the GIL; with the pure-Python fallback they take turns on it).
Stressors are separate processes running arithmetic loops, the worst case for
CPU interference.
"""
import csv
import logging
import multiprocessing as mp
import queue
import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .entropy_models import (
    GaussianConditional,
    LatentSpec,
    SyntheticLatentConfig,
    default_factorized_prior,
    generate_synthetic_latent,
)
from .tile_codec import encode_tile

log = logging.getLogger(__name__)

METRICS_COLUMNS = (
    "run_id", "role", "produced", "consumed", "stalls", "mean_depth", "max_depth",
    "tiles_per_s", "bytes", "tcr_per_s", "wall_s",
)


class PipelineError(RuntimeError):
    def __init__(self, tile_id, cause):
        self.tile_id = tile_id
        super().__init__(f"coder failed on tile {tile_id}: {cause!r}")


@dataclass(frozen=True)
class ThroughputTrace:
    """Inference throughput of one (device, model) configuration.

    ``schedule`` optionally makes the rate piecewise constant: a sequence of
    ``(start_s, tiles_per_second)`` pairs sorted by start time; before the
    first start the base rate applies.
    """

    device_id: str
    model_size: str
    tiles_per_second: float
    memory_bytes: int = 0
    schedule: tuple = ()

    def __post_init__(self):
        rates = [self.tiles_per_second] + [r for _, r in self.schedule]
        if min(rates) <= 0:
            raise ValueError("tiles_per_second must be positive")

    def rate_at(self, t):
        rate = self.tiles_per_second
        for start, r in self.schedule:
            if t >= start:
                rate = r
            else:
                break
        return rate


@dataclass
class PipelineConfig:
    trace: ThroughputTrace
    spec: LatentSpec
    gc: GaussianConditional
    fp: object
    synth: SyntheticLatentConfig = field(default_factory=SyntheticLatentConfig)
    tile_dim: int = 512
    raw_bpp: float = 24.0
    queue_capacity: int = 16
    worker_count: int = 2
    stressor_count: int = 0
    duration: float = 10.0
    seed: int = 0
    pool_size: int = 8

    def __post_init__(self):
        if self.queue_capacity < 1:
            raise ValueError("queue_capacity must be >= 1")
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        if self.stressor_count < 0 or self.duration < 0:
            raise ValueError("stressor_count and duration must be non-negative")

    @classmethod
    def default(cls, trace, synth=None, **kw):
        """Config with freshly built entropy models for the trace's model size."""
        spec = LatentSpec.for_size(trace.model_size)
        synth = synth or SyntheticLatentConfig()
        gc = GaussianConditional()
        fp = default_factorized_prior(spec, synth, kw.get("tile_dim", 512))
        return cls(trace, spec, gc, fp, synth, **kw)


@dataclass
class PipelineMetrics:
    produced: int = 0
    consumed: int = 0
    stalls: int = 0
    mean_depth: float = 0.0
    max_depth: int = 0
    tiles_per_second: float = 0.0
    bytes_coded: int = 0
    bpp: float = 0.0
    tcr_per_second: float = 0.0
    wall_s: float = 0.0
    in_queue_at_shutdown: int = 0
    produced_ids: list = field(default_factory=list, repr=False)
    consumed_ids: list = field(default_factory=list, repr=False)

    def csv_row(self, run_id, role):
        return {
            "run_id": run_id, "role": role, "produced": self.produced,
            "consumed": self.consumed, "stalls": self.stalls,
            "mean_depth": f"{self.mean_depth:.4f}", "max_depth": self.max_depth,
            "tiles_per_s": f"{self.tiles_per_second:.4f}", "bytes": self.bytes_coded,
            "tcr_per_s": f"{self.tcr_per_second:.2f}", "wall_s": f"{self.wall_s:.4f}",
        }


def tile_pool(cfg):
    """Seeded tiles the producer cycles through; tile ``k`` is ``pool[k % len(pool)]``."""
    synth = replace(cfg.synth, seed=cfg.seed)
    return [
        generate_synthetic_latent(cfg.spec, synth, k, cfg.gc, cfg.tile_dim)
        for k in range(cfg.pool_size)
    ]


def measure_solo_rate(cfg, tiles=None, min_seconds=1.0):
    """Single-threaded coder throughput in tiles/s, on an otherwise idle pipeline."""
    tiles = tiles or tile_pool(cfg)
    encode_tile(tiles[0], cfg.gc, cfg.fp).to_bytes()  # warm caches
    n = 0
    start = time.perf_counter()
    while True:
        encode_tile(tiles[n % len(tiles)], cfg.gc, cfg.fp).to_bytes()
        n += 1
        elapsed = time.perf_counter() - start
        if elapsed >= min_seconds and n >= len(tiles):
            return n / elapsed


# -- stressors ----------------------------------------------------------------


def _stress_loop(seed, ready, stop):
    rng = np.random.default_rng(seed)
    data = rng.integers(1, 2**31, size=4096).tolist()
    ready.put(seed)
    acc = 0
    i = 0
    while not stop.is_set():
        for v in data:
            acc = (acc * 6364136223846793005 + v) & 0xFFFFFFFFFFFFFFFF
            acc ^= acc >> 29
        i += 1


class Stressors:
    """Context manager running ``count`` CPU-saturating processes."""

    def __init__(self, count, seed=0):
        self.count = count
        self.seed = seed
        self._procs = []

    def __enter__(self):
        if not self.count:
            return self
        # stressors start before any worker thread exists, so fork is safe
        methods = mp.get_all_start_methods()
        ctx = mp.get_context("fork" if "fork" in methods else "spawn")
        self._stop = ctx.Event()
        ready = ctx.Queue()
        for k in range(self.count):
            p = ctx.Process(
                target=_stress_loop, args=(self.seed + k, ready, self._stop), daemon=True
            )
            p.start()
            self._procs.append(p)
        for _ in range(self.count):
            ready.get(timeout=60)
        return self

    def __exit__(self, *exc):
        if self._procs:
            self._stop.set()
            for p in self._procs:
                p.join(timeout=5)
                if p.is_alive():
                    p.terminate()
            self._procs.clear()
        return False


# -- the pipeline -------------------------------------------------------------


def run_pipeline(cfg, tiles=None):
    """Run producer and coder workers for ``cfg.duration`` seconds, then drain.

    Every emitted tile is coded by exactly one worker. Content is reproducible
    from the seed; timing is not.
    """
    tiles = tiles or tile_pool(cfg)
    q = queue.Queue(maxsize=cfg.queue_capacity)
    abort = threading.Event()
    failure = []
    per_worker = [{"ids": [], "bytes": 0} for _ in range(cfg.worker_count)]
    prod = {"ids": [], "stalls": 0, "depths": []}

    def producer(t0):
        k = 0
        # emit at the end of each interval so a run never exceeds duration x rate
        due = 1.0 / cfg.trace.rate_at(0.0)
        while due < cfg.duration and not abort.is_set():
            delay = t0 + due - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
            elif -delay >= cfg.duration - due:
                # a stalled producer does not emit past the end of the run
                break
            item = (k, tiles[k % len(tiles)])
            try:
                q.put_nowait(item)
            except queue.Full:
                prod["stalls"] += 1
                while not abort.is_set():
                    try:
                        q.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                else:
                    break
            prod["depths"].append(q.qsize())
            prod["ids"].append(k)
            k += 1
            due += 1.0 / cfg.trace.rate_at(due)
        rest = t0 + cfg.duration - time.perf_counter()
        if rest > 0 and not abort.is_set():
            time.sleep(rest)

    def worker(slot):
        mine = per_worker[slot]
        while True:
            item = q.get()
            if item is None:
                return
            tile_id, tile = item
            if abort.is_set():
                continue
            try:
                blob = encode_tile(tile, cfg.gc, cfg.fp).to_bytes()
            except Exception as exc:  # surfaced to the caller as PipelineError
                failure.append((tile_id, exc))
                abort.set()
                continue
            mine["ids"].append(tile_id)
            mine["bytes"] += len(blob)

    workers = [threading.Thread(target=worker, args=(i,), daemon=True) for i in range(cfg.worker_count)]
    with Stressors(cfg.stressor_count, seed=cfg.seed):
        for w in workers:
            w.start()
        t0 = time.perf_counter()
        feeder = threading.Thread(target=producer, args=(t0,), daemon=True)
        feeder.start()
        feeder.join()
        for _ in workers:
            q.put(None)
        for w in workers:
            w.join()
        wall = time.perf_counter() - t0

    if failure:
        tile_id, exc = failure[0]
        raise PipelineError(tile_id, exc) from exc

    consumed_ids = sorted(i for w in per_worker for i in w["ids"])
    m = PipelineMetrics(
        produced=len(prod["ids"]),
        consumed=len(consumed_ids),
        stalls=prod["stalls"],
        mean_depth=float(np.mean(prod["depths"])) if prod["depths"] else 0.0,
        max_depth=max(prod["depths"], default=0),
        bytes_coded=sum(w["bytes"] for w in per_worker),
        wall_s=wall,
        in_queue_at_shutdown=q.qsize(),
        produced_ids=prod["ids"],
        consumed_ids=consumed_ids,
    )
    if m.consumed and wall > 0:
        pixels = cfg.tile_dim * cfg.tile_dim
        m.tiles_per_second = m.consumed / wall
        m.bpp = m.bytes_coded * 8 / (m.consumed * pixels)
        m.tcr_per_second = m.tiles_per_second * pixels * (cfg.raw_bpp - m.bpp) / 8
    log.info("pipeline run: %s", m)
    return m


def run_with_stressors(cfg, tiles=None):
    """Baseline without stressors, then the same run under ``cfg.stressor_count`` stressors.

    Returns ``(baseline, stressed, tcr_decrease_percent)``.
    """
    tiles = tiles or tile_pool(cfg)
    baseline = run_pipeline(replace(cfg, stressor_count=0), tiles)
    stressed = run_pipeline(cfg, tiles)
    if baseline.tcr_per_second > 0:
        decrease = 100.0 * (1.0 - stressed.tcr_per_second / baseline.tcr_per_second)
    else:
        decrease = 0.0
    return baseline, stressed, decrease


def detect_backpressure(metrics):
    return metrics.stalls > 0


def write_metrics_csv(fh, rows):
    """Write ``(run_id, role, PipelineMetrics)`` rows to an open text file."""
    writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
    writer.writeheader()
    for run_id, role, m in rows:
        writer.writerow(m.csv_row(run_id, role))
