"""JSON loaders for mission, device, candidate and workload definitions.

Mission file::

    {"missions": [{"mission_id": "WV3", "downlink_rate": 1.2e9, "pass_duration": 600,
                   "passes_per_day": 4, "orbital_period": 5820,
                   "raw_volume_per_orbit": 1e11, "raw_bpp": 24}]}

Device file::

    {"devices": [{"device_id": "orin", "avg_processing_power": 12.0,
                  "transmit_power": 5.0, "power_cap": 15.0,
                  "power_trace": [[0, 12.0]],
                  "memory_budget": 8000000000,
                  "candidates": [{"model_size": "M", "tiles_per_second": 9.5,
                                  "bpp": 0.31, "memory_bytes": 2.1e9}]}]}

Workload file (scheduler)::

    {"processors": [{"name": "GPU", "b_max": 1, "temperature": 40,
                     "heat_rate": 0.01, "cool_rate": 0.02, "speed": 2.0}],
     "op_latency_ms": 2.0,
     "requests": {"count": 200, "arrival_ms": 30.0, "slo_factor": [1.5, 4.0]},
     "scheduler": {"alpha": 1, "gamma": 1, "delta": 1, "t_avg": 20,
                   "loop_call_size": 8}}

Explicit ``"tasks"`` (each with ``task_id``, ``slo_ms``, ``enqueue_ms``,
``latency_ms``, ``processors`` and optional ``c_remaining``) may replace
``"requests"``.
"""
import json
from pathlib import Path

from .mission_sim import ConfigCandidate, DeviceProfile, MissionSpec
from .priority_scheduler import ProcessorState, SchedulerConfig, TaskDescriptor


class ConfigFileError(ValueError):
    pass


def read_json(path):
    path = Path(path)
    try:
        with path.open() as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigFileError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigFileError(f"{path}: invalid JSON ({exc})") from None


def _build(cls, doc, what):
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigFileError(f"bad {what} entry {doc!r}: {exc}") from None


def candidate_from_dict(doc):
    doc = dict(doc)
    if "grouping" in doc:
        doc["grouping"] = tuple(doc["grouping"])
    if "memory_bytes" in doc:
        doc["memory_bytes"] = int(doc["memory_bytes"])
    return _build(ConfigCandidate, doc, "candidate")


def load_missions(path):
    doc = read_json(path)
    return [_build(MissionSpec, m, "mission") for m in doc.get("missions", [])]


def load_devices(path):
    """Devices and their memory budgets: ``[(DeviceProfile, budget_or_None), ...]``."""
    doc = read_json(path)
    out = []
    for d in doc.get("devices", []):
        d = dict(d)
        budget = d.pop("memory_budget", None)
        d["candidates"] = tuple(
            candidate_from_dict({"device_id": d.get("device_id", ""), **c})
            for c in d.pop("candidates", [])
        )
        d["power_trace"] = tuple(tuple(x) for x in d.get("power_trace", ()))
        out.append((_build(DeviceProfile, d, "device"), budget))
    return out


def load_candidates(path):
    doc = read_json(path)
    return [candidate_from_dict(c) for c in doc.get("candidates", [])]


def load_workload(path):
    doc = read_json(path)
    procs = [_build(ProcessorState, p, "processor") for p in doc.get("processors", [])]
    sched = _build(SchedulerConfig, doc.get("scheduler", {}), "scheduler")
    tasks = [
        TaskDescriptor.single(
            int(t["task_id"]), float(t["slo_ms"]), float(t["latency_ms"]),
            float(t["enqueue_ms"]), t["processors"], float(t.get("c_remaining", 1.0)),
        )
        for t in doc.get("tasks", [])
    ]
    return {
        "processors": procs,
        "scheduler": sched,
        "tasks": tasks,
        "op_latency_ms": float(doc.get("op_latency_ms", 1.0)),
        "requests": doc.get("requests"),
    }
