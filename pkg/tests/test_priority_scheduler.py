import io
import math
import statistics
from fractions import Fraction
from types import SimpleNamespace

import numpy as np
import pytest

from oecpipe.graph_partitioner import OpGraph, PartitionConfig, build_support_table, get_unit_subgraphs
from oecpipe.priority_scheduler import (
    SCHEDULE_COLUMNS,
    ProcessorState,
    SchedulerConfig,
    SchedulerError,
    Stage,
    TaskDescriptor,
    dispatch,
    plan_stages,
    random_workload,
    request_tasks,
    score_deadline,
    score_priority,
    score_resource,
    score_wait,
    simulate,
    write_schedule_csv,
)

# (alpha, gamma, delta, t_avg, slo, latency, enqueue, now, b_current, b_max, c_remaining)
VECTORS = [
    (1, 1, 1, 15, 100, 40, 0, 30, 0.5, 1, 3),
    (1, 1, 1, 15, 100, 100, 0, 0, 1, 2, 3),
    (0, 0, 0, 1, 100, 40, 0, 30, 1, 1, 3),
    (2, 1, 1, 15, 100, 40, 10, 40, 2, 4, 1),
    (0.5, 2, 0.25, 8, 64, 16, 4, 36, 3, 4, 2),
    (1, 0.5, 1, 2, 10, 12, 0, 6, 0, 1, 3),
    (4, 1, 2, 16, 32, 8, 8, 8, 1, 1, 1.5),
    (0.125, 4, 8, 0.5, 2.5, 0.5, 1, 3, 0.25, 1, 0.75),
    (3, 3, 3, 3, 9, 3, 0, 3, 1, 3, 3),
    (1, 1, 1, 1, 0, 0, 0, 0, 0, 1, 0),
    (10, 0.1, 0.5, 20, 200, 150, 50, 250, 5, 8, 4),
    (0.75, 1.25, 1.5, 4, 48, 12, 2, 10, 2, 2, 6),
    (1, 1, 0, 10, 30, 10, 0, 100, 7, 8, 9),
    (0, 1, 1, 10, 30, 10, 0, 100, 0, 8, 9),
    (1, 0, 1, 10, 30, 10, 0, 100, 4, 8, 9),
    (2, 2, 2, 64, 1024, 512, 128, 256, 1, 16, 2),
    (1.5, 0.5, 4, 6, 18, 6, 3, 15, 0.5, 2, 0.5),
    (1, 1, 1, 0.25, 1, 2, 0, 1, 3, 2, 1),
    (0.0625, 16, 0.5, 32, 5, 1, 0, 64, 1, 1, 10),
    (7, 5, 3, 2, 11, 13, 17, 19, 24, 32, 31),
]


def fr(x):
    return Fraction(x)


def oracle(v):
    a, g, d, tavg, slo, lat, enq, now, bc, bm, c = map(fr, v)
    dl = g * (slo - lat)
    wt = -a * (now - enq) / tavg
    rs = d * ((2 * bc - bm) / bm) * c
    return dl, wt, rs, dl + wt + rs


def build(v):
    a, g, d, tavg, slo, lat, enq, now, bc, bm, c = v
    cfg = SchedulerConfig(alpha=a, gamma=g, delta=d, t_avg=tavg)
    t = TaskDescriptor.single(1, slo, lat, enq, ["P"], c) if lat > 0 else TaskDescriptor(
        1, slo, enq, (Stage(frozenset({"P"}), 1.0),), c)
    p = ProcessorState("P", b_max=bm, b_current=bc)
    return cfg, t, p, now


def expected_scores(v):
    """Oracle for the task :func:`build` makes; zero latency becomes one 1 ms stage."""
    return oracle(v if v[5] > 0 else v[:5] + (1,) + v[6:])


class TestScores:
    def test_hand_values(self):
        cfg = SchedulerConfig(alpha=1, gamma=1, delta=1, t_avg=15)
        t = TaskDescriptor.single(0, 100, 40, 0, ["P"], 3)
        assert score_deadline(t, cfg) == 60
        assert score_wait(t, 30, cfg) == -2
        assert score_resource(t, ProcessorState("P", b_max=2, b_current=1), cfg) == 0
        assert score_resource(t, ProcessorState("P", b_max=2, b_current=2), cfg) == 3
        assert score_resource(t, ProcessorState("P", b_max=2, b_current=0), cfg) == -3
        assert score_priority(t, ProcessorState("P", b_max=2, b_current=1), 30, cfg) == 58

    def test_degenerate(self):
        t = TaskDescriptor.single(0, 40, 40, 5, ["P"], 3)
        assert score_deadline(t, SchedulerConfig(gamma=5)) == 0
        assert score_deadline(TaskDescriptor.single(0, 100, 40, 0, ["P"]), SchedulerConfig(gamma=0)) == 0
        assert score_wait(t, 5, SchedulerConfig()) == 0
        zero = SchedulerConfig(alpha=0, gamma=0, delta=0)
        assert score_priority(t, ProcessorState("P", b_current=1), 50, zero) == 0

    def test_wait_linear_in_alpha(self):
        t = TaskDescriptor.single(0, 100, 40, 0, ["P"])
        assert score_wait(t, 30, SchedulerConfig(alpha=2, t_avg=15)) == 2 * score_wait(t, 30, SchedulerConfig(alpha=1, t_avg=15))

    @pytest.mark.parametrize("v", VECTORS)
    def test_fixed_vectors_exact(self, v):
        cfg, t, p, now = build(v)
        dl, wt, rs, total = expected_scores(v)
        assert score_deadline(t, cfg) == float(dl)
        assert score_wait(t, now, cfg) == float(wt)
        assert score_resource(t, p, cfg) == float(rs)
        assert score_priority(t, p, now, cfg) == float(total)

    def test_priority_is_sum_random(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            a, g, d = rng.uniform(0, 5, 3)
            cfg = SchedulerConfig(alpha=a, gamma=g, delta=d, t_avg=rng.uniform(0.1, 50))
            enq = rng.uniform(0, 100)
            t = TaskDescriptor.single(0, rng.uniform(0, 200), rng.uniform(0.1, 50), enq, ["P"], rng.uniform(0, 5))
            p = ProcessorState("P", b_max=rng.uniform(0.5, 8), b_current=rng.uniform(0, 8))
            now = enq + rng.uniform(0, 100)
            total = score_deadline(t, cfg) + score_wait(t, now, cfg) + score_resource(t, p, cfg)
            assert score_priority(t, p, now, cfg) == total

    def test_wait_before_enqueue(self):
        t = TaskDescriptor.single(0, 10, 1, 50, ["P"])
        with pytest.raises(SchedulerError):
            score_wait(t, 49, SchedulerConfig())

    def test_resource_needs_capacity(self):
        t = TaskDescriptor.single(0, 10, 1, 0, ["P"])
        with pytest.raises(SchedulerError):
            score_resource(t, SimpleNamespace(name="P", b_max=0, b_current=0), SchedulerConfig())
        with pytest.raises(SchedulerError):
            ProcessorState("P", b_max=0)

    @pytest.mark.parametrize("kw", [{"alpha": -1}, {"t_avg": 0}, {"loop_call_size": 0}])
    def test_config_validation(self, kw):
        with pytest.raises(SchedulerError):
            SchedulerConfig(**kw)


class TestDispatch:
    def test_single_pair(self):
        q = [TaskDescriptor.single(0, 10, 1, 0, ["CPU"])]
        out = dispatch(q, [ProcessorState("CPU")], 0, SchedulerConfig())
        assert [(t.task_id, p.name) for t, p in out] == [(0, "CPU")]
        assert q == []

    @pytest.mark.parametrize("temp, assigned", [(67.99, True), (68.0, False), (90.0, False)])
    def test_throttle(self, temp, assigned):
        q = [TaskDescriptor.single(0, 10, 1, 0, ["GPU"])]
        out = dispatch(q, [ProcessorState("GPU", temperature=temp)], 0, SchedulerConfig())
        assert bool(out) == assigned

    def test_loop_call_size_one_sees_only_head(self):
        q = [TaskDescriptor.single(0, 10, 1, 0, ["GPU"]), TaskDescriptor.single(1, 10, 1, 0, ["CPU"])]
        cpu = ProcessorState("CPU")
        assert dispatch(list(q), [cpu], 0, SchedulerConfig(loop_call_size=1)) == []
        cpu = ProcessorState("CPU")
        assert [t.task_id for t, _ in dispatch(list(q), [cpu], 0, SchedulerConfig(loop_call_size=2))] == [1]

    def test_lowest_score_wins(self):
        q = [TaskDescriptor.single(0, 100, 10, 0, ["CPU"]), TaskDescriptor.single(1, 20, 10, 0, ["CPU"])]
        out = dispatch(q, [ProcessorState("CPU")], 0, SchedulerConfig())
        assert out[0][0].task_id == 1 and [t.task_id for t in q] == [0]

    def test_ties(self):
        same = dict(slo_ms=50, latency_ms=10, processors=["CPU"])
        q = [TaskDescriptor.single(5, enqueue_ms=0, **same), TaskDescriptor.single(2, enqueue_ms=0, **same)]
        out = dispatch(q, [ProcessorState("CPU")], 0, SchedulerConfig(alpha=0))
        assert out[0][0].task_id == 2
        q = [TaskDescriptor.single(1, enqueue_ms=3, **same), TaskDescriptor.single(9, enqueue_ms=1, **same)]
        out = dispatch(q, [ProcessorState("CPU")], 3, SchedulerConfig(alpha=0))
        assert out[0][0].task_id == 9

    def test_slots_fill_and_stop(self):
        q = [TaskDescriptor.single(k, 10, 1, 0, ["CPU"]) for k in range(5)]
        cpu = ProcessorState("CPU", b_max=3)
        out = dispatch(q, [cpu], 0, SchedulerConfig())
        assert len(out) == 3 and cpu.b_current == 3 and len(q) == 2
        assert dispatch(q, [cpu], 0, SchedulerConfig()) == []

    def test_scaling_invariance(self):
        rng = np.random.default_rng(1)
        names = ["CPU", "GPU", "NPU"]
        for _ in range(300):
            tasks = random_workload(int(rng.integers(1, 12)), names, rng)
            now = max(t.enqueue_ms for t in tasks) + float(rng.uniform(0, 50))
            procs = [ProcessorState(n, b_max=float(rng.integers(1, 3)), b_current=float(rng.integers(0, 2)))
                     for n in names]
            cfg = SchedulerConfig(
                alpha=float(rng.uniform(0, 3)), gamma=float(rng.uniform(0, 3)), delta=float(rng.uniform(0, 3)),
                t_avg=float(rng.uniform(1, 20)), loop_call_size=int(rng.integers(1, 10)),
            )

            def pick(c):
                ps = [ProcessorState(p.name, b_max=p.b_max, b_current=p.b_current) for p in procs]
                return [(t.task_id, p.name) for t, p in dispatch(list(tasks), ps, now, c)]

            ref = pick(cfg)
            for k in (0.5, 2.0, 3.7, 1000.0):
                assert pick(cfg.scaled(k)) == ref


class TestSimulate:
    def test_single(self):
        r = simulate([TaskDescriptor.single(0, 100, 40, 5, ["CPU"])], [ProcessorState("CPU")], SchedulerConfig())
        rec = r.records[0]
        assert (rec.start, rec.finish, rec.slo_met) == (5, 45, True)

    def test_two_identical(self):
        tasks = [TaskDescriptor.single(k, 60, 40, 0, ["CPU"]) for k in range(2)]
        r = simulate(tasks, [ProcessorState("CPU")], SchedulerConfig())
        assert sorted(x.finish for x in r.records) == [40, 80]
        assert r.slo_percent == 50.0

    def test_inputs_untouched(self):
        cpu = ProcessorState("CPU", heat_rate=1.0)
        simulate([TaskDescriptor.single(0, 100, 40, 0, ["CPU"])], [cpu], SchedulerConfig())
        assert cpu.b_current == 0 and cpu.temperature == 40.0

    def test_busy_fraction_and_horizon(self):
        tasks = [TaskDescriptor.single(0, 100, 40, 0, ["CPU"]), TaskDescriptor.single(1, 100, 40, 90, ["CPU"])]
        r = simulate(tasks, [ProcessorState("CPU")], SchedulerConfig(), horizon=100)
        assert r.busy_fraction["CPU"] == pytest.approx(0.5)
        assert r.records[1].start == 90 and math.isnan(r.records[1].finish)
        assert not r.records[1].slo_met

    def test_stage_reinserted_at_front(self):
        two = TaskDescriptor(0, 100, 0, (Stage({"CPU"}, 10), Stage({"CPU"}, 10)), 2.0)
        later = [TaskDescriptor.single(k, 1, 5, 1, ["CPU"]) for k in (1, 2)]
        r = simulate([two] + later, [ProcessorState("CPU")], SchedulerConfig(loop_call_size=1))
        assert r.records[0].finish == 20
        assert r.records[0].processors == ["CPU", "CPU"]
        assert [x.start for x in r.records[1:]] == [20, 25]

    def test_stage_moves_between_processors(self):
        t = TaskDescriptor(0, 100, 0, (Stage({"GPU"}, 4), Stage({"CPU"}, 6)), 2.0)
        r = simulate([t], [ProcessorState("CPU"), ProcessorState("GPU", speed=2.0)], SchedulerConfig())
        assert r.records[0].finish == 8 and r.records[0].processors == ["GPU", "CPU"]

    def test_cooldown_wake(self):
        gpu = ProcessorState("GPU", temperature=70.0, cool_rate=0.1)
        r = simulate([TaskDescriptor.single(0, 100, 5, 0, ["GPU"])], [gpu], SchedulerConfig())
        assert r.records[0].start == pytest.approx(30.0)

    def test_permanently_hot_processor_idle(self):
        hot = ProcessorState("GPU", temperature=80.0)
        tasks = [TaskDescriptor.single(k, 100, 5, k, ["GPU", "CPU"]) for k in range(10)]
        r = simulate(tasks, [hot, ProcessorState("CPU")], SchedulerConfig())
        assert r.busy_fraction["GPU"] == 0
        assert all(x.processors == ["CPU"] for x in r.records)

    def test_throttle_safety_randomized(self):
        rng = np.random.default_rng(3)
        for seed in range(20):
            tasks = random_workload(200, ["CPU", "GPU"], seed, arrival_ms=4.0)
            procs = [
                ProcessorState("GPU", temperature=float(rng.uniform(50, 70)), heat_rate=0.2, cool_rate=0.05),
                ProcessorState("CPU", b_max=2, temperature=60.0, heat_rate=0.1, cool_rate=0.1),
            ]
            r = simulate(tasks, procs, SchedulerConfig(t_avg=10))
            assert r.assignments
            assert all(temp < 68.0 for _, _, _, temp in r.assignments)
            assert r.completed == len(tasks)

    def test_fairness_improves_with_alpha(self):
        medians = []
        for alpha in (0.0, 1.0, 5.0):
            waits = []
            for seed in range(3):
                tasks = random_workload(1000, ["CPU", "GPU"], seed, arrival_ms=6.0)
                procs = [ProcessorState("CPU"), ProcessorState("GPU")]
                r = simulate(tasks, procs, SchedulerConfig(alpha=alpha, t_avg=10, loop_call_size=16))
                assert r.completed == 1000
                waits.append(r.max_wait())
            medians.append(statistics.median(waits))
        assert all(math.isfinite(m) for m in medians)
        assert medians[0] > medians[1] > medians[2]

    def test_unrunnable_stage(self):
        with pytest.raises(SchedulerError):
            simulate([TaskDescriptor.single(0, 1, 1, 0, ["TPU"])], [ProcessorState("CPU")], SchedulerConfig())


class TestPlan:
    def test_seven_op_plan(self):
        g = OpGraph.chain(7)
        t = build_support_table(g, {"GPU": {3}}, ["CPU", "GPU"], "CPU")
        stages = plan_stages(get_unit_subgraphs(g, t, PartitionConfig(1)), 7, 2.0)
        assert [(s.ops, sorted(s.processors), s.latency_ms) for s in stages] == [
            ((0, 1, 2), ["CPU", "GPU"], 6.0), ((3,), ["CPU"], 2.0), ((4, 5, 6), ["CPU", "GPU"], 6.0),
        ]
        fallback = plan_stages(get_unit_subgraphs(g, t, PartitionConfig(4)), 7, 2.0)
        assert [(s.ops, sorted(s.processors)) for s in fallback] == [(tuple(range(7)), ["CPU"])]

    def test_requests_deterministic(self):
        stages = (Stage({"CPU"}, 3.0),)
        a = request_tasks(stages, 20, 4)
        b = request_tasks(stages, 20, 4)
        assert a == b and all(x.enqueue_ms < y.enqueue_ms for x, y in zip(a, a[1:]))


class TestCsv:
    def test_columns(self):
        r = simulate([TaskDescriptor.single(0, 100, 40, 0, ["CPU"])], [ProcessorState("CPU")], SchedulerConfig())
        buf = io.StringIO()
        write_schedule_csv(buf, r)
        lines = buf.getvalue().splitlines()
        assert tuple(lines[0].split(",")) == SCHEDULE_COLUMNS
        assert lines[1] == "0,0.0,0.0,40.0,CPU,1"
