"""``oecpipe`` command line: codec, pipeline, profile, mission and schedule.

Every subcommand accepts ``--config PATH`` (a JSON run config), ``--seed N``
and ``--out DIR``. The run config holds one object per subcommand whose keys
mirror the long option names with underscores, e.g.::

    {"mission": {"missions": "missions.json", "devices": "devices.json"},
     "pipeline": {"model": "M", "duration": 10}}

Relative paths in the run config resolve against its own directory. Options
given on the command line win over the config. All reports are CSV files
written to ``--out``; the exit status is 0 iff no error was reported.
"""
import argparse
import csv
import hashlib
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import configio
from .configio import ConfigFileError
from .entropy_models import (
    GaussianConditional,
    LatentSpec,
    SyntheticLatentConfig,
    bits_per_pixel,
    default_factorized_prior,
    estimate_bits,
    generate_synthetic_latent,
)
from .graph_partitioner import (
    GraphError,
    MergeOverflowError,
    PartitionConfig,
    load_graph_file,
    partition_graph,
)
from .mission_sim import (
    ConfigCandidate,
    NoFeasibleConfig,
    NonBeneficialConfig,
    mission_report,
    profiler_select,
    tcr_per_second,
    write_report_csv,
)
from .pipeline import (
    PipelineConfig,
    PipelineError,
    ThroughputTrace,
    measure_solo_rate,
    run_pipeline,
    run_with_stressors,
    tile_pool,
    write_metrics_csv,
)
from .priority_scheduler import (
    SchedulerError,
    plan_stages,
    request_tasks,
    simulate,
    write_schedule_csv,
)
from .rans import RansError
from .tile_codec import (
    CodecError,
    decode_tile,
    encode_tile,
    partition,
    read_coded_file,
    tile_order,
    write_coded_file,
)

log = logging.getLogger("oecpipe")

DEFAULT_SEED = 0
PATH_KEYS = {"missions", "devices", "candidates", "profile", "graph", "workload", "input"}

PROFILE_COLUMNS = ("device", "model", "grouping", "tiles_per_s", "bpp", "memory_B", "tcr_per_s", "selected")
CODEC_COLUMNS = ("tile_id", "row", "col", "model", "symbols", "bytes", "bpp", "estimate_bpp", "latent_sha256")
DECODE_COLUMNS = ("file", "row", "col", "model", "symbols", "latent_sha256", "status")
PARTITION_COLUMNS = ("index", "kind", "processors", "ops")
PROCESSOR_COLUMNS = ("processor", "busy_fraction", "assignments", "max_temperature_at_assign")


class CliError(Exception):
    pass


class Options:
    """Command-line values layered over the run config section."""

    def __init__(self, args, section, base_dir):
        self.args = args
        self.section = section
        self.base_dir = base_dir

    def get(self, name, default=None):
        value = getattr(self.args, name, None)
        if value is not None:
            return value
        if name in self.section:
            value = self.section[name]
            if name in PATH_KEYS and value is not None:
                value = str((self.base_dir / value).resolve()) if not os.path.isabs(value) else value
            return value
        return default

    def require(self, name):
        value = self.get(name)
        if value is None:
            raise CliError(f"--{name.replace('_', '-')} is required")
        return value


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def _latent_digest(tile):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(tile.y, dtype="<i4").tobytes())
    h.update(np.ascontiguousarray(tile.z, dtype="<i4").tobytes())
    return h.hexdigest()


def _codec_models(opts, seed):
    spec = LatentSpec.for_size(opts.get("model", "M"))
    tile_dim = int(opts.get("tile_dim", 512))
    synth = SyntheticLatentConfig(
        sparsity=float(opts.get("sparsity", 0.7)),
        z_sigma=float(opts.get("z_sigma", 0.8)),
        y_scale=float(opts.get("y_scale", 1.0)),
        seed=seed,
    )
    gc = GaussianConditional()
    fp = default_factorized_prior(spec, synth, tile_dim)
    return spec, tile_dim, synth, gc, fp


# -- subcommands --------------------------------------------------------------


def cmd_codec(opts, seed, out):
    spec, tile_dim, synth, gc, fp = _codec_models(opts, seed)
    action = opts.require("action")
    tiles_dir = out / "tiles"
    if action == "encode":
        width = int(opts.get("width", 2 * tile_dim))
        height = int(opts.get("height", 2 * tile_dim))
        grid = partition(width, height, tile_dim)
        tiles_dir.mkdir(parents=True, exist_ok=True)
        rows = []
        for k, (r, c) in enumerate(tile_order(grid)):
            tile = generate_synthetic_latent(spec, synth, k, gc, tile_dim, r, c)
            coded = encode_tile(tile, gc, fp)
            write_coded_file(tiles_dir / f"r{r:03d}_c{c:03d}.fcf", coded)
            rows.append({
                "tile_id": k, "row": r, "col": c, "model": spec.model_size,
                "symbols": tile.symbol_count, "bytes": coded.size,
                "bpp": repr(bits_per_pixel(coded.size * 8, tile_dim)),
                "estimate_bpp": repr(bits_per_pixel(estimate_bits(tile, gc, fp), tile_dim)),
                "latent_sha256": _latent_digest(tile),
            })
        _write_csv(out / "codec_summary.csv", CODEC_COLUMNS, rows)
        print(f"encoded {len(rows)} tiles into {tiles_dir}")
        return 0
    if action == "decode":
        src = Path(opts.get("input") or tiles_dir)
        files = sorted(src.glob("*.fcf"))
        if not files:
            raise CliError(f"no .fcf files in {src}")
        rows = []
        failed = 0
        for f in files:
            try:
                coded = read_coded_file(f)
                tile = decode_tile(coded, gc, fp, spec)
            except (CodecError, RansError) as exc:
                failed += 1
                print(f"error: {f.name}: {exc}", file=sys.stderr)
                rows.append({"file": f.name, "row": "", "col": "", "model": "", "symbols": "",
                             "latent_sha256": "", "status": f"error: {exc}"})
                continue
            rows.append({
                "file": f.name, "row": tile.row, "col": tile.col, "model": tile.model_size,
                "symbols": tile.symbol_count, "latent_sha256": _latent_digest(tile), "status": "ok",
            })
        _write_csv(out / "decode_summary.csv", DECODE_COLUMNS, rows)
        print(f"decoded {len(rows) - failed}/{len(rows)} files")
        return 1 if failed else 0
    raise CliError(f"unknown codec action {action!r}")


def cmd_pipeline(opts, seed, out):
    model = opts.get("model", "M")
    workers = int(opts.get("workers", 2))
    duration = float(opts.get("duration", 10.0))
    stressors = opts.get("stressors")
    if stressors is None:
        stressors = (os.cpu_count() or 1) if opts.get("stress", False) else 0
    synth = SyntheticLatentConfig(sparsity=float(opts.get("sparsity", 0.7)), seed=seed)
    placeholder = ThroughputTrace(opts.get("device", "host"), model, 1.0)
    cfg = PipelineConfig.default(
        placeholder, synth, tile_dim=int(opts.get("tile_dim", 512)),
        queue_capacity=int(opts.get("queue_capacity", 16)), worker_count=workers,
        stressor_count=int(stressors), duration=duration, seed=seed,
    )
    tiles = tile_pool(cfg)
    rate = opts.get("rate")
    if rate is None:
        solo = measure_solo_rate(cfg, tiles)
        rate = float(opts.get("rate_fraction", 0.5)) * solo
        print(f"solo coding rate {solo:.1f} tiles/s; producer rate {rate:.1f} tiles/s")
    cfg.trace = ThroughputTrace(placeholder.device_id, model, float(rate))
    rows = []
    if cfg.stressor_count:
        baseline, stressed, decrease = run_with_stressors(cfg, tiles)
        rows = [(seed, "baseline", baseline), (seed, "stressed", stressed)]
    else:
        baseline = run_pipeline(cfg, tiles)
        decrease = 0.0
        rows = [(seed, "baseline", baseline)]
    with open(out / "pipeline_metrics.csv", "w", newline="") as fh:
        write_metrics_csv(fh, rows)
    print(f"tcr_decrease_percent {decrease:.3f}")
    return 0


def _device_rows(devices):
    rows = []
    for dev, budget in devices:
        if not dev.candidates:
            raise CliError(f"device {dev.device_id} has an empty candidate grid")
        chosen = profiler_select(dev.candidates, math.inf if budget is None else budget)
        for c in dev.candidates:
            try:
                tcr = repr(tcr_per_second(c))
            except NonBeneficialConfig:
                tcr = "0"
            rows.append({
                "device": dev.device_id, "model": c.model_size,
                "grouping": "x".join(map(str, c.grouping)), "tiles_per_s": repr(c.tiles_per_second),
                "bpp": repr(c.bpp), "memory_B": c.memory_bytes, "tcr_per_s": tcr,
                "selected": int(c is chosen),
            })
    return rows


def cmd_profile(opts, seed, out):
    devices = configio.load_devices(opts.require("devices"))
    if not devices:
        raise CliError("device file lists no devices")
    rows = _device_rows(devices)
    _write_csv(out / "profile.csv", PROFILE_COLUMNS, rows)
    for r in rows:
        if r["selected"]:
            print(f"{r['device']}: selected {r['model']} ({r['tcr_per_s']} B/s)")
    return 0


def _selected_from_profile(path):
    picked = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            if int(r["selected"]):
                picked[r["device"]] = ConfigCandidate(
                    r["model"], float(r["tiles_per_s"]), float(r["bpp"]), int(r["memory_B"]),
                    tuple(int(x) for x in r["grouping"].split("x")), r["device"],
                )
    return picked


def cmd_mission(opts, seed, out):
    missions = configio.load_missions(opts.require("missions"))
    devices = configio.load_devices(opts.require("devices"))
    if not missions or not devices:
        raise CliError("need at least one mission and one device")
    tile_dim = int(opts.get("tile_dim", 512))
    profile = opts.get("profile")
    picked = _selected_from_profile(profile) if profile else {}
    bpp = opts.get("bpp")
    reports = []
    for dev, budget in devices:
        c = picked.get(dev.device_id)
        if c is None:
            if not dev.candidates:
                raise CliError(f"device {dev.device_id} has no candidates and no profile row")
            c = profiler_select(dev.candidates, math.inf if budget is None else budget, tile_dim)
        if bpp is not None:
            c = ConfigCandidate(c.model_size, c.tiles_per_second, float(bpp), c.memory_bytes, c.grouping, c.device_id)
        for m in missions:
            reports.append(mission_report(m, dev, c, tile_dim))
    with open(out / "mission_report.csv", "w", newline="") as fh:
        write_report_csv(fh, reports)
    print(f"wrote {len(reports)} pass reports")
    return 0


def cmd_schedule(opts, seed, out):
    graph, table = load_graph_file(opts.require("graph"))
    work = configio.load_workload(opts.require("workload"))
    sched = work["scheduler"]
    lcs = opts.get("loop_call_size")
    if lcs is not None:
        sched = replace(sched, loop_call_size=int(lcs))
    pcfg = PartitionConfig(window_size=int(opts.get("ws", 1)))
    units, merged = partition_graph(graph, table, pcfg)
    procs = work["processors"]
    if not procs:
        raise CliError("workload lists no processors")
    tasks = work["tasks"]
    if not tasks:
        req = work["requests"] or {}
        stages = plan_stages(units, graph.num_ops, work["op_latency_ms"])
        count = int(opts.get("requests", req.get("count", 100)))
        tasks = request_tasks(
            stages, count, seed, float(req.get("arrival_ms", 10.0)),
            tuple(req.get("slo_factor", (1.5, 4.0))),
        )
    horizon = opts.get("horizon")
    report = simulate(tasks, procs, sched, math.inf if horizon is None else float(horizon))

    _write_csv(out / "partition.csv", PARTITION_COLUMNS, [
        {"index": i, "kind": s.kind, "processors": "|".join(sorted(s.processors)),
         "ops": " ".join(map(str, s.ops))}
        for i, s in enumerate(merged)
    ])
    with open(out / "schedule.csv", "w", newline="") as fh:
        write_schedule_csv(fh, report)
    counts = {p.name: 0 for p in procs}
    hottest = {}
    for _, _, name, temp in report.assignments:
        counts[name] += 1
        hottest[name] = max(temp, hottest.get(name, -math.inf))
    _write_csv(out / "processors.csv", PROCESSOR_COLUMNS, [
        {"processor": p.name, "busy_fraction": repr(report.busy_fraction[p.name]),
         "assignments": counts[p.name], "max_temperature_at_assign": repr(hottest[p.name]) if p.name in hottest else ""}
        for p in procs
    ])
    n_units = len(units)
    print(f"{n_units} unit + {len(merged) - n_units} merged subgraphs; "
          f"SLO satisfied {report.slo_percent:.1f}% of {len(tasks)} tasks")
    return 0


COMMANDS = {
    "codec": cmd_codec,
    "pipeline": cmd_pipeline,
    "profile": cmd_profile,
    "mission": cmd_mission,
    "schedule": cmd_schedule,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run config")
    common.add_argument("--seed", type=int, help=f"RNG seed (default {DEFAULT_SEED})")
    common.add_argument("--out", type=Path, help="output directory (default ./out)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="oecpipe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("codec", parents=[common], help="encode or decode synthetic latent tiles")
    p.add_argument("action", nargs="?", choices=("encode", "decode"))
    p.add_argument("--model", choices=("S", "M", "L"))
    p.add_argument("--tile-dim", type=int)
    p.add_argument("--width", type=int, help="image width in pixels")
    p.add_argument("--height", type=int, help="image height in pixels")
    p.add_argument("--sparsity", type=float)
    p.add_argument("--input", help="directory of .fcf files to decode (default OUT/tiles)")

    p = sub.add_parser("pipeline", parents=[common], help="run the concurrent coding pipeline")
    p.add_argument("--device")
    p.add_argument("--model", choices=("S", "M", "L"))
    p.add_argument("--duration", type=float, help="seconds per run")
    p.add_argument("--workers", type=int)
    p.add_argument("--stress", action="store_true", default=None, help="one stressor per CPU")
    p.add_argument("--stressors", type=int, help="explicit stressor count")
    p.add_argument("--rate", type=float, help="producer tiles/s (default: fraction of solo rate)")
    p.add_argument("--rate-fraction", type=float)
    p.add_argument("--queue-capacity", type=int)
    p.add_argument("--tile-dim", type=int)
    p.add_argument("--sparsity", type=float)

    p = sub.add_parser("profile", parents=[common], help="select the best configuration per device")
    p.add_argument("--devices", help="device/candidate JSON file")

    p = sub.add_parser("mission", parents=[common], help="pass capacity and energy reports")
    p.add_argument("--missions", help="mission JSON file")
    p.add_argument("--devices", help="device/candidate JSON file")
    p.add_argument("--profile", help="profile.csv whose selected rows fix the configuration")
    p.add_argument("--bpp", type=float, help="override the coded bits per pixel")
    p.add_argument("--tile-dim", type=int)

    p = sub.add_parser("schedule", parents=[common], help="partition a graph and simulate scheduling")
    p.add_argument("--graph", help="graph JSON file")
    p.add_argument("--workload", help="workload JSON file")
    p.add_argument("--ws", type=int, help="window size")
    p.add_argument("--loop-call-size", type=int)
    p.add_argument("--requests", type=int, help="number of generated requests")
    p.add_argument("--horizon", type=float, help="simulation end in ms")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        section, base = {}, Path.cwd()
        if args.config is not None:
            doc = configio.read_json(args.config)
            section = doc.get(args.command, {})
            base = args.config.resolve().parent
            if args.seed is None and "seed" in doc:
                args.seed = int(doc["seed"])
        opts = Options(args, section, base)
        seed = DEFAULT_SEED if args.seed is None else args.seed
        out = Path(opts.get("out", "out"))
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](opts, seed, out)
    except (CliError, ConfigFileError, CodecError, RansError, GraphError, MergeOverflowError,
            SchedulerError, NoFeasibleConfig, NonBeneficialConfig, PipelineError,
            OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
