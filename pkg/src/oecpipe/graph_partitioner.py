"""Window-size controlled subgraph partitioning over heterogeneous processors.

Ops are indexed in a topological order. For every processor except the
fallback one, maximal runs of consecutively supported ops are candidate
subgraphs; runs shorter than the window size are ignored for that processor
and their ops count as unsupported there. Whatever no kept run covers is
grouped into fallback subgraphs, one per contiguous gap.

Merging then adds every union of dependency-adjacent, disjoint subgraphs
whose processor sets still intersect.
"""
import json
from dataclasses import dataclass, field

DEFAULT_MERGE_CAP = 10_000


class GraphError(ValueError):
    pass


class MergeOverflowError(RuntimeError):
    pass


@dataclass(frozen=True)
class OpGraph:
    num_ops: int
    edges: tuple = ()
    op_types: tuple = ()

    def __post_init__(self):
        edges = tuple(sorted({(int(u), int(v)) for u, v in self.edges}))
        for u, v in edges:
            if not (0 <= u < self.num_ops and 0 <= v < self.num_ops):
                raise GraphError(f"edge ({u}, {v}) references a missing op")
            if u >= v:
                # u < v on every edge is what makes index order topological
                raise GraphError(f"edge ({u}, {v}) violates topological index order")
        object.__setattr__(self, "edges", edges)
        if self.op_types and len(self.op_types) != self.num_ops:
            raise GraphError("op_types must have one entry per op")
        object.__setattr__(self, "op_types", tuple(self.op_types))

    @classmethod
    def chain(cls, n, op_types=()):
        return cls(n, tuple((i, i + 1) for i in range(n - 1)), op_types)

    def neighbours(self):
        adj = [set() for _ in range(self.num_ops)]
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        return adj


@dataclass(frozen=True)
class SupportTable:
    processors: tuple
    fallback: str
    masks: dict

    def supports(self, processor, op):
        return self.masks[processor][op]


def build_support_table(graph, unsupported, processors, fallback):
    """Per-processor op masks: ``mask[p][op]`` is true unless ``op`` is in ``unsupported[p]``."""
    processors = tuple(processors)
    if fallback not in processors:
        raise GraphError(f"fallback {fallback!r} is not a listed processor")
    unknown = set(unsupported) - set(processors)
    if unknown:
        raise GraphError(f"unsupported ops given for unknown processors {sorted(unknown)}")
    if unsupported.get(fallback):
        raise GraphError("the fallback processor must support every op")
    masks = {}
    for p in processors:
        missing = set(unsupported.get(p, ()))
        bad = [op for op in missing if not 0 <= op < graph.num_ops]
        if bad:
            raise GraphError(f"op indices {sorted(bad)} out of range for processor {p}")
        masks[p] = tuple(op not in missing for op in range(graph.num_ops))
    return SupportTable(processors, fallback, masks)


@dataclass(frozen=True, order=True)
class Subgraph:
    ops: tuple
    processors: frozenset = field(compare=False)
    kind: str = "unit"
    origin: str = field(default="", compare=False)

    def sort_key(self):
        return (self.ops, tuple(sorted(self.processors)), self.kind)


@dataclass(frozen=True)
class PartitionConfig:
    window_size: int = 1
    merge_cap: int = DEFAULT_MERGE_CAP

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")


def supported_runs(mask):
    """Maximal runs ``(start, stop)`` of consecutive true entries."""
    runs = []
    start = None
    for i, ok in enumerate(mask):
        if ok and start is None:
            start = i
        elif not ok and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(mask)))
    return runs


def get_unit_subgraphs(graph, table, cfg=PartitionConfig()):
    n = graph.num_ops
    if n == 0:
        return []
    every = tuple(range(n))
    if all(all(table.masks[p]) for p in table.processors):
        units = [Subgraph(every, frozenset([p]), "unit", p) for p in table.processors]
        return sorted(units, key=Subgraph.sort_key)

    # drop runs shorter than the window from each processor's effective mask
    kept = {}
    effective = {table.fallback: [True] * n}
    for p in table.processors:
        if p == table.fallback:
            continue
        eff = [False] * n
        kept[p] = []
        for start, stop in supported_runs(table.masks[p]):
            if stop - start >= cfg.window_size:
                kept[p].append((start, stop))
                eff[start:stop] = [True] * (stop - start)
        effective[p] = eff

    def capable(ops):
        return frozenset(p for p in table.processors if all(effective[p][o] for o in ops))

    units = {}
    covered = [False] * n
    for p in table.processors:
        for start, stop in kept.get(p, ()):
            ops = tuple(range(start, stop))
            covered[start:stop] = [True] * (stop - start)
            units.setdefault(ops, Subgraph(ops, capable(ops), "unit", p))
    gaps = supported_runs([not c for c in covered])
    for start, stop in gaps:
        ops = tuple(range(start, stop))
        units.setdefault(ops, Subgraph(ops, capable(ops), "unit", table.fallback))
    return sorted(units.values(), key=Subgraph.sort_key)


def _adjacent(a, b, adj):
    b = set(b)
    return any(adj[o] & b for o in a)


def merge_subgraphs(units, graph, cap=DEFAULT_MERGE_CAP):
    """Units plus every merge of disjoint, dependency-adjacent subgraphs sharing processors.

    Closure is built by growing merged sets one unit at a time, which reaches
    every connected union. Raises :class:`MergeOverflowError` past ``cap``
    subgraphs in total.
    """
    units = sorted(units, key=Subgraph.sort_key)
    adj = graph.neighbours()
    seen = {(u.ops, u.processors) for u in units}
    result = list(units)
    frontier = list(units)
    while frontier:
        grown = []
        for s in frontier:
            s_ops = set(s.ops)
            for u in units:
                if s_ops & set(u.ops):
                    continue
                shared = s.processors & u.processors
                if not shared or not _adjacent(s.ops, u.ops, adj):
                    continue
                ops = tuple(sorted(s_ops | set(u.ops)))
                key = (ops, shared)
                if key in seen:
                    continue
                seen.add(key)
                merged = Subgraph(ops, shared, "merged", "")
                result.append(merged)
                grown.append(merged)
                if len(result) > cap:
                    raise MergeOverflowError(f"more than {cap} subgraphs")
        frontier = grown
    return sorted(result, key=Subgraph.sort_key)


def partition_graph(graph, table, cfg=PartitionConfig()):
    units = get_unit_subgraphs(graph, table, cfg)
    return units, merge_subgraphs(units, graph, cfg.merge_cap)


def load_graph_file(path):
    """Read a graph definition.

    JSON object with ``num_ops``, ``edges`` (list of ``[src, dst]``),
    optional ``op_types``, ``processors`` (names), ``fallback`` (name) and
    ``unsupported`` (processor name -> list of op indices).
    """
    with open(path) as fh:
        doc = json.load(fh)
    return graph_from_dict(doc)


def graph_from_dict(doc):
    graph = OpGraph(int(doc["num_ops"]), tuple(map(tuple, doc.get("edges", ()))), tuple(doc.get("op_types", ())))
    table = build_support_table(
        graph,
        {p: set(v) for p, v in doc.get("unsupported", {}).items()},
        doc.get("processors", ["CPU"]),
        doc.get("fallback", "CPU"),
    )
    return graph, table
