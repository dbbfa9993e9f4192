"""Turning arc flows into patterns and bins, and checking packings."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import ConsistencyError, ValidationError
from .flowgraph import LOSS, ArcFlowGraph
from .instance import VbpInstance, canonical_order


@dataclass
class PackingSolution:
    patterns: list[tuple[tuple[int, ...], int]]
    bins: list[tuple[int, ...]]

    @property
    def objective(self) -> int:
        return len(self.bins)


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def arc_flows(model, values: dict, g: ArcFlowGraph) -> list:
    """Per-arc flows in arc order from solver values keyed by variable name."""
    flows = [0] * g.num_arcs
    for name, k in model.annotation.items():
        flows[k] = values.get(name, 0)
    return flows


def _pick(g, out, residual, u, eps):
    # highest item number first, loss arcs last; ties by head id
    best = None
    for k in out[u]:
        if residual[k] > eps:
            _, v, i = g.arcs[k]
            key = (i != LOSS, i, -v)
            if best is None or key > best[0]:
                best = (key, k)
    return None if best is None else best[1]


def _check_conservation(g: ArcFlowGraph, flows) -> int:
    bal = [0] * g.num_nodes
    for (u, v, _), f in zip(g.arcs, flows):
        if f < 0:
            raise ValidationError(f"negative flow {f} on arc {u}->{v}")
        bal[u] -= f
        bal[v] += f
    z = -bal[g.source]
    for n, b in enumerate(bal):
        if n not in (g.source, g.target) and b != 0:
            raise ValidationError(f"flow is not conserved at node {n} (excess {b})")
    if bal[g.target] != z:
        raise ValidationError("source outflow differs from target inflow")
    return z


def decompose_flow(g: ArcFlowGraph, flows: Sequence[int], z: int | None = None):
    """Split an integral flow into ``(pattern, multiplicity)`` pairs.

    Patterns are sorted tuples of 0-based item indices, merged and listed in
    order of first extraction.
    """
    flows = [int(f) for f in flows]
    total = _check_conservation(g, flows)
    if z is not None and z != total:
        raise ValidationError(f"flow value {total} differs from z = {z}")
    residual = list(flows)
    out = g.out_arcs()
    found: dict[tuple[int, ...], int] = {}
    sent = 0
    for _ in range(g.num_arcs + 1):
        if sent == total:
            break
        path, u = [], g.source
        while u != g.target:
            k = _pick(g, out, residual, u, 0)
            if k is None:
                raise ConsistencyError(f"path extraction stuck at node {u}")
            path.append(k)
            u = g.arcs[k][1]
        amount = min(residual[k] for k in path)
        for k in path:
            residual[k] -= amount
        pat = tuple(sorted(g.arcs[k][2] - 1 for k in path if g.arcs[k][2] != LOSS))
        found[pat] = found.get(pat, 0) + amount
        sent += amount
    if any(residual):
        raise ConsistencyError("flow left on arcs after extracting all paths")
    return list(found.items())


def decompose_fractional(g: ArcFlowGraph, flows: Sequence[float], eps: float = 1e-9):
    """Weighted path decomposition of a fractional flow, tolerant of solver noise."""
    residual = [max(0.0, float(f)) for f in flows]
    out = g.out_arcs()
    paths = []
    for _ in range(g.num_arcs + 1):
        if sum(residual[k] for k in out[g.source]) <= eps:
            break
        path, u = [], g.source
        while u != g.target:
            k = _pick(g, out, residual, u, eps)
            if k is None:
                break
            path.append(k)
            u = g.arcs[k][1]
        if u != g.target:  # dead end from rounding noise: drop the stub
            for k in path:
                residual[k] = 0.0
            continue
        amount = min(residual[k] for k in path)
        for k in path:
            residual[k] -= amount
        pat = tuple(sorted(g.arcs[k][2] - 1 for k in path if g.arcs[k][2] != LOSS))
        paths.append((pat, amount))
    return paths


def to_bins(patterns, inst: VbpInstance) -> PackingSolution:
    """Expand patterns into bins and drop excess copies so every demand is met exactly.

    Over-covered items are trimmed starting with the smallest normalized size,
    from the last bins backwards; bins left empty are removed.
    """
    bins: list[list[int]] = []
    for pat, mult in patterns:
        for _ in range(int(mult)):
            bins.append(list(pat))
    have = Counter(i for b in bins for i in b)
    for i, it in enumerate(inst.items):
        if have[i] < it.demand:
            raise ValidationError(
                f"item {i + 1} is covered {have[i]} times, demand is {it.demand}")
    for i in reversed(canonical_order(inst).permutation):
        extra = have[i] - inst.items[i].demand
        for b in reversed(bins):
            while extra and i in b:
                b.remove(i)
                extra -= 1
            if not extra:
                break
    bins = [tuple(sorted(b)) for b in bins if b]
    counts = Counter(bins)
    pats = []
    for b in bins:
        if b in counts:
            pats.append((b, counts.pop(b)))
    return PackingSolution(pats, bins)


def validate_solution(inst: VbpInstance, sol: PackingSolution, reduction=None) -> ValidationReport:
    """Capacity, exact demand and reduction-specific checks; never raises."""
    rep = ValidationReport()
    v = rep.violations
    if sum(m for _, m in sol.patterns) != len(sol.bins):
        v.append("pattern multiplicities do not add up to the bin count")
    for k, b in enumerate(sol.bins, start=1):
        if any(not 0 <= i < inst.m for i in b):
            v.append(f"bin {k} holds an unknown item")
            continue
        for d, cap in enumerate(inst.capacities):
            load = sum(inst.items[i].weights[d] for i in b)
            if load > cap:
                v.append(f"bin {k}: load {load} > capacity {cap} in dimension {d + 1}")
    have = Counter(i for b in sol.bins for i in b)
    for i, it in enumerate(inst.items):
        if have[i] != it.demand:
            v.append(f"item {i + 1}: {have[i]} copies packed, demand {it.demand}")
    if reduction is not None:
        v += _reduction_checks(sol, reduction)
    return rep


def _reduction_checks(sol: PackingSolution, rmap) -> list[str]:
    v = []
    kind = rmap.kind
    if rmap.graph is not None and kind in ("coloring", "conflict", "binary_conflict"):
        for k, b in enumerate(sol.bins, start=1):
            members = {i + 1 for i in b}
            for a, c in rmap.graph.edges:
                if a in members and c in members:
                    what = "color" if kind == "coloring" else "bin"
                    v.append(f"{what} {k} holds adjacent vertices {a} and {c}")
    if kind == "timetable":
        for k, b in enumerate(sol.bins, start=1):
            used = Counter()
            for i in b:
                r = rmap.item_sources[i]
                used[("class", r.class_id)] += 1
                used[("teacher", r.teacher_id)] += 1
                used[("venue", r.venue_id)] += 1
            for (what, ident), n in sorted(used.items()):
                if n > 1:
                    v.append(f"period {k}: {what} {ident} booked {n} times")
    if rmap.cardinality is not None:
        for k, b in enumerate(sol.bins, start=1):
            if len(b) > rmap.cardinality:
                v.append(f"bin {k} holds {len(b)} items, limit {rmap.cardinality}")
    if rmap.binary_items:
        for k, b in enumerate(sol.bins, start=1):
            for i, n in Counter(b).items():
                if n > 1 and i in rmap.binary_items:
                    v.append(f"bin {k} holds {n} copies of item {i + 1}")
    return v


# ------------------------------------------------------------------ output

def _ident(inst: VbpInstance, i: int) -> str:
    return inst.items[i].external_id or str(i + 1)


def dumps_solution(inst: VbpInstance, sol: PackingSolution) -> str:
    lines = [str(sol.objective)]
    for b in sol.bins:
        lines.append(" ".join(f"{_ident(inst, i)}×{n}" for i, n in sorted(Counter(b).items())))
    return "\n".join(lines) + "\n"


def write_solution(inst, sol, path) -> None:
    Path(path).write_text(dumps_solution(inst, sol))


def dumps_coloring(sol: PackingSolution, rmap) -> str:
    color = {}
    for c, b in enumerate(sol.bins, start=1):
        for i in b:
            color[rmap.item_sources[i]] = c
    return "".join(f"{vtx} {color[vtx]}\n" for vtx in sorted(color))


def dumps_timetable(sol: PackingSolution, rmap) -> str:
    lines = []
    for k, b in enumerate(sol.bins, start=1):
        cells = []
        for i in sorted(b):
            r = rmap.item_sources[i]
            cells.append(f"c{r.class_id}/t{r.teacher_id}/v{r.venue_id}")
        lines.append(f"period {k}: " + " ".join(cells))
    return "\n".join(lines) + "\n"
