"""Multi-factor priority scheduling of subgraph tasks over heterogeneous processors.

Lower score means more urgent. The deadline term grows with slack, the wait
term goes negative as a task ages, and the resource term penalises a
processor that is more than half loaded. Times are milliseconds throughout;
``gamma`` and ``delta`` carry whatever units make the three terms comparable.
"""
import csv
import heapq
import math
from dataclasses import dataclass, field, replace

import numpy as np

SCHEDULE_COLUMNS = ("task_id", "enqueue", "start", "finish", "processor", "slo_met")


class SchedulerError(ValueError):
    pass


@dataclass(frozen=True)
class Stage:
    """One subgraph execution: which processors may run it and for how long."""

    processors: frozenset
    latency_ms: float
    ops: tuple = ()

    def __post_init__(self):
        if self.latency_ms <= 0:
            raise SchedulerError("stage latency must be positive")
        if not self.processors:
            raise SchedulerError("stage needs at least one processor")
        object.__setattr__(self, "processors", frozenset(self.processors))


@dataclass(frozen=True)
class TaskDescriptor:
    """A queued request; ``stages[0]`` is what runs next.

    ``latency_ms`` is the estimated remaining execution latency, the sum
    over the remaining stages.
    """

    task_id: int
    slo_ms: float
    enqueue_ms: float
    stages: tuple
    c_remaining: float = 1.0

    def __post_init__(self):
        if self.slo_ms < 0 or self.c_remaining < 0:
            raise SchedulerError(f"task {self.task_id}: slo and c_remaining must be >= 0")
        if not self.stages:
            raise SchedulerError(f"task {self.task_id}: no stages")
        object.__setattr__(self, "stages", tuple(self.stages))

    @classmethod
    def single(cls, task_id, slo_ms, latency_ms, enqueue_ms, processors, c_remaining=1.0):
        return cls(task_id, slo_ms, enqueue_ms, (Stage(frozenset(processors), latency_ms),), c_remaining)

    @property
    def latency_ms(self):
        return sum(s.latency_ms for s in self.stages)

    @property
    def processors(self):
        return self.stages[0].processors

    def advance(self):
        """The task after its head stage finishes, or ``None`` when done."""
        if len(self.stages) == 1:
            return None
        done = len(self.stages)
        return replace(self, stages=self.stages[1:], c_remaining=self.c_remaining * (done - 1) / done)


@dataclass
class ProcessorState:
    """Load, thermal and speed state of one processor.

    Temperature rises at ``heat_rate`` °C/ms while loaded, scaled by the load
    fraction, and falls at ``cool_rate`` °C/ms toward ``ambient`` while idle.
    """

    name: str
    b_max: float = 1.0
    b_current: float = 0.0
    temperature: float = 40.0
    frequency: float = 1000.0
    throttle_threshold: float = 68.0
    heat_rate: float = 0.0
    cool_rate: float = 0.0
    ambient: float = 25.0
    speed: float = 1.0

    def __post_init__(self):
        if self.b_max <= 0:
            raise SchedulerError(f"processor {self.name}: b_max must be positive")
        if self.b_current < 0:
            raise SchedulerError(f"processor {self.name}: b_current must be >= 0")
        if self.speed <= 0:
            raise SchedulerError(f"processor {self.name}: speed must be positive")

    @property
    def throttled(self):
        return self.temperature >= self.throttle_threshold

    @property
    def has_slot(self):
        return self.b_current + 1 <= self.b_max

    def advance_temperature(self, dt):
        if dt <= 0:
            return
        if self.b_current > 0:
            self.temperature += self.heat_rate * dt * self.b_current / self.b_max
        else:
            self.temperature = max(self.ambient, self.temperature - self.cool_rate * dt)


@dataclass(frozen=True)
class SchedulerConfig:
    alpha: float = 1.0
    gamma: float = 1.0
    delta: float = 1.0
    t_avg: float = 1.0
    loop_call_size: int = 8
    cool_hysteresis: float = 1.0

    def __post_init__(self):
        if min(self.alpha, self.gamma, self.delta) < 0:
            raise SchedulerError("weights must be non-negative")
        if self.t_avg <= 0:
            raise SchedulerError("t_avg must be positive")
        if self.loop_call_size < 1:
            raise SchedulerError("loop_call_size must be >= 1")

    def scaled(self, k):
        """Same config with all three weights multiplied by ``k``."""
        return replace(self, alpha=self.alpha * k, gamma=self.gamma * k, delta=self.delta * k)


def score_deadline(t, cfg):
    return cfg.gamma * (t.slo_ms - t.latency_ms)


def score_wait(t, now, cfg):
    if now < t.enqueue_ms:
        raise SchedulerError(f"task {t.task_id} scored before it was enqueued")
    return -cfg.alpha * (now - t.enqueue_ms) / cfg.t_avg


def score_resource(t, p, cfg):
    if p.b_max <= 0:
        raise SchedulerError(f"processor {p.name}: b_max must be positive")
    return cfg.delta * ((2 * p.b_current - p.b_max) / p.b_max) * t.c_remaining


def score_priority(t, p, now, cfg):
    return score_deadline(t, cfg) + score_wait(t, now, cfg) + score_resource(t, p, cfg)


def dispatch(queue, processors, now, cfg):
    """Assign queued tasks to free, unthrottled processors.

    Only the first ``loop_call_size`` tasks are candidates. Processors are
    visited in list order; each takes its lowest-score eligible task per free
    slot, ties going to the earlier enqueue time and then the lower id.
    Chosen tasks are removed from ``queue`` and loads updated in place.
    Returns ``[(task, processor), ...]``.
    """
    window = list(queue[:cfg.loop_call_size])
    taken = set()
    out = []
    for p in processors:
        while p.has_slot and not p.throttled:
            best = None
            best_key = None
            for t in window:
                if t.task_id in taken or p.name not in t.processors:
                    continue
                key = (score_priority(t, p, now, cfg), t.enqueue_ms, t.task_id)
                if best is None or key < best_key:
                    best, best_key = t, key
            if best is None:
                break
            taken.add(best.task_id)
            p.b_current += 1
            out.append((best, p))
    if taken:
        queue[:] = [t for t in queue if t.task_id not in taken]
    return out


# -- simulation ---------------------------------------------------------------


@dataclass
class TaskRecord:
    task_id: int
    enqueue: float
    slo_ms: float
    start: float = math.nan
    finish: float = math.nan
    processors: list = field(default_factory=list)

    @property
    def slo_met(self):
        return not math.isnan(self.finish) and self.finish - self.enqueue <= self.slo_ms

    def csv_row(self):
        return {
            "task_id": self.task_id, "enqueue": repr(float(self.enqueue)),
            "start": "" if math.isnan(self.start) else repr(float(self.start)),
            "finish": "" if math.isnan(self.finish) else repr(float(self.finish)),
            "processor": "|".join(self.processors), "slo_met": int(self.slo_met),
        }


@dataclass
class ScheduleReport:
    records: list
    busy_fraction: dict
    assignments: list
    end_time: float

    @property
    def slo_percent(self):
        if not self.records:
            return 100.0
        return 100.0 * sum(r.slo_met for r in self.records) / len(self.records)

    @property
    def completed(self):
        return sum(not math.isnan(r.finish) for r in self.records)

    def max_wait(self):
        """Longest queueing delay before first start; unstarted tasks count up to the end."""
        waits = [
            (self.end_time if math.isnan(r.start) else r.start) - r.enqueue for r in self.records
        ]
        return max(waits, default=0.0)


_ARRIVE, _FINISH, _WAKE = 0, 1, 2


def simulate(tasks, processors, cfg, horizon=math.inf):
    """Discrete-event run of ``dispatch`` over arrivals and completions.

    Processors are copied, so the inputs are left untouched. A task whose head
    stage finishes goes back to the front of the queue with its remaining
    stages. ``assignments`` records ``(time, task_id, processor, temperature)``
    for every dispatch decision.
    """
    procs = [replace(p) for p in processors]
    by_name = {p.name: p for p in procs}
    for t in tasks:
        for s in t.stages:
            missing = s.processors - by_name.keys()
            if missing == s.processors:
                raise SchedulerError(f"task {t.task_id}: no listed processor can run a stage")

    records = {t.task_id: TaskRecord(t.task_id, t.enqueue_ms, t.slo_ms) for t in tasks}
    if len(records) != len(tasks):
        raise SchedulerError("duplicate task ids")
    events = []
    seq = 0
    for t in sorted(tasks, key=lambda t: (t.enqueue_ms, t.task_id)):
        heapq.heappush(events, (t.enqueue_ms, seq, _ARRIVE, t))
        seq += 1

    queue = []
    busy = {p.name: 0.0 for p in procs}
    last = {p.name: 0.0 for p in procs}
    wake_pending = set()
    assignments = []
    now = 0.0

    def advance(to):
        for p in procs:
            dt = to - last[p.name]
            if dt > 0:
                if p.b_current > 0:
                    busy[p.name] += dt * min(1.0, p.b_current / p.b_max)
                p.advance_temperature(dt)
                last[p.name] = to

    while events:
        when = events[0][0]
        if when > horizon:
            break
        advance(when)
        now = when
        while events and events[0][0] == when:
            _, _, kind, payload = heapq.heappop(events)
            if kind == _ARRIVE:
                queue.append(payload)
            elif kind == _FINISH:
                task, p = payload
                p.b_current -= 1
                nxt = task.advance()
                rec = records[task.task_id]
                if nxt is None:
                    rec.finish = now
                else:
                    queue.insert(0, nxt)
            else:
                wake_pending.discard(payload.name)

        for task, p in dispatch(queue, procs, now, cfg):
            rec = records[task.task_id]
            if math.isnan(rec.start):
                rec.start = now
            rec.processors.append(p.name)
            assignments.append((now, task.task_id, p.name, p.temperature))
            heapq.heappush(events, (now + task.stages[0].latency_ms / p.speed, seq, _FINISH, (task, p)))
            seq += 1

        if queue:
            for p in procs:
                if p.throttled and p.b_current == 0 and p.cool_rate > 0 and p.name not in wake_pending:
                    target = max(p.ambient, p.throttle_threshold - cfg.cool_hysteresis)
                    if target < p.throttle_threshold:
                        heapq.heappush(events, (now + (p.temperature - target) / p.cool_rate, seq, _WAKE, p))
                        seq += 1
                        wake_pending.add(p.name)

    end = now if math.isinf(horizon) else horizon
    if math.isfinite(horizon):
        advance(horizon)
    span = end if end > 0 else 1.0
    return ScheduleReport(
        [records[t.task_id] for t in tasks],
        {name: b / span for name, b in busy.items()},
        assignments,
        end,
    )


def random_workload(n, processor_names, rng, arrival_ms=10.0, latency_ms=(2.0, 20.0),
                    slo_factor=(1.5, 6.0), max_stages=1):
    """Seeded random tasks: exponential arrivals, uniform latencies and SLO slack."""
    rng = np.random.default_rng(rng)
    names = list(processor_names)
    t = 0.0
    tasks = []
    for k in range(n):
        t += float(rng.exponential(arrival_ms))
        stages = []
        for _ in range(int(rng.integers(1, max_stages + 1))):
            size = int(rng.integers(1, len(names) + 1))
            chosen = frozenset(rng.choice(names, size=size, replace=False).tolist())
            stages.append(Stage(chosen, float(rng.uniform(*latency_ms))))
        total = sum(s.latency_ms for s in stages)
        slo = total * float(rng.uniform(*slo_factor))
        tasks.append(TaskDescriptor(k, slo, t, tuple(stages), float(rng.uniform(0.5, 3.0))))
    return tasks


def plan_stages(subgraphs, num_ops, op_latency_ms=1.0):
    """Cover ops ``0..num_ops-1`` in order with contiguous subgraphs, as task stages.

    From each uncovered op the largest subgraph starting there is taken,
    preferring wider processor support on equal size. Stage latency is the
    op count times ``op_latency_ms``; processor speed scales it at run time.
    """
    starting = {}
    for s in subgraphs:
        ops = tuple(s.ops)
        if ops != tuple(range(ops[0], ops[-1] + 1)):
            continue
        starting.setdefault(ops[0], []).append(s)
    stages = []
    cursor = 0
    while cursor < num_ops:
        options = starting.get(cursor)
        if not options:
            raise SchedulerError(f"no subgraph starts at op {cursor}")
        best = max(options, key=lambda s: (len(s.ops), len(s.processors), sorted(s.processors)))
        stages.append(Stage(frozenset(best.processors), len(best.ops) * op_latency_ms, tuple(best.ops)))
        cursor = best.ops[-1] + 1
    return tuple(stages)


def request_tasks(stages, count, rng, arrival_ms=10.0, slo_factor=(1.5, 4.0)):
    """``count`` inference requests over the same stage plan, with seeded arrivals and SLOs."""
    rng = np.random.default_rng(rng)
    total = sum(s.latency_ms for s in stages)
    t = 0.0
    tasks = []
    for k in range(count):
        t += float(rng.exponential(arrival_ms))
        slo = total * float(rng.uniform(*slo_factor))
        tasks.append(TaskDescriptor(k, slo, t, stages, float(len(stages))))
    return tasks


def write_schedule_csv(fh, report):
    writer = csv.DictWriter(fh, fieldnames=SCHEDULE_COLUMNS)
    writer.writeheader()
    for r in report.records:
        writer.writerow(r.csv_row())
