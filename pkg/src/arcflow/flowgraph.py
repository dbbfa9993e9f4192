"""Arc-flow graphs whose source-to-target paths are the packing patterns.

Nodes carry integer labels (one coordinate per dimension, plus a level
coordinate in level-split graphs).  Arcs are ``(tail, head, item)`` triples
where ``item`` is the 1-based item number and 0 marks a loss arc.  Node ids
are assigned by sorting labels, so identical inputs give identical graphs.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from typing import Iterable, Sequence

from .errors import BudgetExceeded, ConsistencyError
from .instance import VbpInstance, canonical_order

log = logging.getLogger(__name__)

LOSS = 0
DEFAULT_STATE_BUDGET = 10**8
DEFAULT_PATH_BUDGET = 10**6

_TARGET = object()  # label key of the target while a graph is being assembled


@dataclass(frozen=True)
class ArcFlowGraph:
    labels: tuple[tuple[int, ...], ...]
    arcs: tuple[tuple[int, int, int], ...]
    source: int
    target: int
    weights: tuple[tuple[int, ...], ...]  # indexed by item number, [0] is the loss arc
    capacities: tuple[int, ...]
    stats: dict = field(default_factory=dict, compare=False)

    @property
    def num_nodes(self) -> int:
        return len(self.labels)

    @property
    def num_arcs(self) -> int:
        return len(self.arcs)

    @property
    def m(self) -> int:
        return len(self.weights) - 1

    def out_arcs(self) -> list[list[int]]:
        """Arc indices leaving each node."""
        out = [[] for _ in self.labels]
        for k, (u, _, _) in enumerate(self.arcs):
            out[u].append(k)
        return out

    def in_arcs(self) -> list[list[int]]:
        inc = [[] for _ in self.labels]
        for k, (_, v, _) in enumerate(self.arcs):
            inc[v].append(k)
        return inc

    def topological_order(self) -> list[int]:
        ts = TopologicalSorter({v: () for v in range(self.num_nodes)})
        for u, v, _ in self.arcs:
            ts.add(v, u)
        try:
            return list(ts.static_order())
        except CycleError as exc:
            raise ConsistencyError(f"arc-flow graph has a cycle: {exc.args[1]}") from None

    def item_arc_counts(self) -> list[int]:
        counts = [0] * (self.m + 1)
        for _, _, i in self.arcs:
            counts[i] += 1
        return counts

    def node_count_figure(self) -> int:
        """Node count without the target, the convention used for reporting."""
        return self.num_nodes - 1


def assemble(source_key, arc_keys: Iterable[tuple], weights, capacities,
             target_label=None, stats=None) -> ArcFlowGraph:
    """Freeze label-keyed arcs into an ArcFlowGraph.

    ``_TARGET`` marks the target in ``arc_keys``.  Duplicate triples are kept
    once and zero-weight self loops are dropped.
    """
    arc_set = set()
    keys = {source_key}
    for u, v, i in arc_keys:
        if u == v:
            if any(weights[i]):
                raise ConsistencyError(f"item arc {i} is a self loop at {u}")
            continue
        arc_set.add((u, v, i))
        keys.add(u)
        keys.add(v)
    keys.discard(_TARGET)
    ordered = sorted(keys)
    ids = {k: n for n, k in enumerate(ordered)}
    target = len(ordered)
    ids[_TARGET] = target
    if target_label is None:
        target_label = tuple(capacities)
    labels = tuple(tuple(k) for k in ordered) + (tuple(target_label),)
    arcs = tuple(sorted((ids[u], ids[v], i) for u, v, i in arc_set))
    return ArcFlowGraph(labels, arcs, ids[source_key], target,
                        tuple(tuple(w) for w in weights), tuple(capacities),
                        dict(stats or {}))


def _item_weights(inst: VbpInstance) -> tuple[tuple[int, ...], ...]:
    return (tuple([0] * inst.dim_count),) + tuple(it.weights for it in inst.items)


# ------------------------------------------------------------------ lifting

class Lifter:
    """Per-dimension lifting of DP states by bounded subset-sum reachability.

    Items are addressed by canonical rank.  For dimension d, the reachable
    sums of items at ranks >= i (with ``b_i - c`` copies of rank i left) are
    stored as a bitset in a Python int.
    """

    def __init__(self, weights: Sequence[Sequence[int]], demands: Sequence[int],
                 capacities: Sequence[int]):
        self.weights = [tuple(w) for w in weights]
        self.demands = list(demands)
        self.capacities = tuple(capacities)
        self.m = len(self.weights)
        self.p = len(self.capacities)
        self._masks = [(1 << (cap + 1)) - 1 for cap in self.capacities]
        self._suffix = []
        for d in range(self.p):
            col = [1] * (self.m + 1)
            for i in range(self.m - 1, -1, -1):
                col[i] = self._add_copies(col[i + 1], d, i, self.demands[i])
            self._suffix.append(col)
        self._reach = {}
        self._memo = {}

    def _add_copies(self, bits: int, d: int, i: int, copies: int) -> int:
        w = self.weights[i][d]
        if w == 0 or copies <= 0:
            return bits
        cap = self.capacities[d]
        copies = min(copies, cap // w)
        mask = self._masks[d]
        chunk = 1
        while copies > 0:
            take = min(chunk, copies)
            bits = (bits | (bits << (take * w))) & mask
            copies -= take
            chunk *= 2
        return bits

    def reachable(self, d: int, i: int, c: int) -> int:
        if i >= self.m:
            return 1
        key = (d, i, c)
        bits = self._reach.get(key)
        if bits is None:
            bits = self._add_copies(self._suffix[d][i + 1], d, i, self.demands[i] - c)
            self._reach[key] = bits
        return bits

    def highest_position(self, d: int, x: int, i: int, c: int) -> int:
        key = (d, x, i, c)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        cap = self.capacities[d]
        room = cap - x
        bits = self.reachable(d, i, c) & ((1 << (room + 1)) - 1)
        best = bits.bit_length() - 1
        hit = cap - best
        self._memo[key] = hit
        return hit

    def lift(self, x: Sequence[int], i: int, c: int) -> tuple[int, ...]:
        return tuple(self.highest_position(d, x[d], i, c) for d in range(self.p))


def lift_state(inst: VbpInstance, x: Sequence[int], rank: int, c: int) -> tuple[int, ...]:
    """Lift state ``x`` at canonical ``rank`` with ``c`` copies already used."""
    order = canonical_order(inst).permutation
    lifter = Lifter([inst.items[j].weights for j in order],
                    [inst.items[j].demand for j in order], inst.capacities)
    return lifter.lift(x, rank, c)


# ----------------------------------------------------------- direct step-3

def build_step3(inst: VbpInstance, max_states: int = DEFAULT_STATE_BUDGET) -> ArcFlowGraph:
    """Build the main-compression graph directly by memoized DP over states.

    A state is (space used per dimension, item rank, copies of that item
    already used).  Each state is lifted before the memo lookup.  Using an
    item keeps the rank and increments the copy count; skipping it moves to
    the next rank with a zero count.
    """
    order = canonical_order(inst).permutation
    ws = [inst.items[j].weights for j in order]
    bs = [inst.items[j].demand for j in order]
    cap = inst.capacities
    p = inst.dim_count
    m = len(ws)
    lifter = Lifter(ws, bs, cap)

    dp: dict[tuple, tuple[int, ...]] = {}
    nodes: set[tuple[int, ...]] = set()
    arcs: set[tuple] = set()
    stack: list[list] = []
    ret = None

    def call(x, i, c):
        nonlocal ret
        x = lifter.lift(x, i, c)
        key = (x, i, c)
        hit = dp.get(key)
        if hit is not None:
            ret = hit
            return
        if len(dp) + len(stack) >= max_states:
            raise BudgetExceeded(
                f"state budget of {max_states} exceeded "
                f"({len(dp)} finished, {len(stack)} open)",
                used=len(dp) + len(stack))
        # frame: key, phase, up_x, u
        stack.append([key, 0, None, cap])

    call(tuple([0] * p), 0, 0)
    while stack:
        fr = stack[-1]
        (x, i, c), phase = fr[0], fr[1]
        if phase == 0:
            if i < m - 1:
                fr[1] = 1
                call(x, i + 1, 0)
                continue
            fr[1] = 2
            continue
        if phase == 1:
            fr[2] = ret
            fr[3] = ret
            fr[1] = 2
            continue
        if phase == 2:
            w = ws[i]
            if c < bs[i] and all(x[d] + w[d] <= cap[d] for d in range(p)):
                fr[1] = 3
                call(tuple(x[d] + w[d] for d in range(p)), i, c + 1)
                continue
        elif phase == 3:
            v, w, up = ret, ws[i], fr[2]
            u = tuple(min(fr[3][d], v[d] - w[d]) for d in range(p))
            fr[3] = u
            arcs.add((u, v, order[i] + 1))
            nodes.add(u)
            nodes.add(v)
            if up is not None and u != up:
                arcs.add((u, up, LOSS))
                nodes.add(up)
        dp[fr[0]] = fr[3]
        stack.pop()
        ret = fr[3]

    source = ret
    for u in nodes:
        if u != source:
            arcs.add((u, _TARGET, LOSS))
    g = assemble(source, arcs, _item_weights(inst), cap,
                 stats={"states": len(dp)})
    g.stats["step3_nodes"] = g.num_nodes
    g.stats["step3_arcs"] = g.num_arcs
    return g


# --------------------------------------------------------------- relabeling

def _relabel_source_side(g: ArcFlowGraph) -> list[tuple[int, ...]]:
    """Longest path from the source in each dimension."""
    p = len(g.capacities)
    inc = g.in_arcs()
    psi: list = [None] * g.num_nodes
    for v in g.topological_order():
        if v == g.source:
            psi[v] = tuple([0] * p)
            continue
        best = None
        for k in inc[v]:
            u, _, i = g.arcs[k]
            if psi[u] is None:
                continue
            w = g.weights[i]
            cand = tuple(psi[u][d] + w[d] for d in range(p))
            best = cand if best is None else tuple(map(max, best, cand))
        psi[v] = best
    return psi


def _relabel_target_side(g: ArcFlowGraph) -> list[tuple[int, ...]]:
    """Highest start position of the sub-patterns towards the target."""
    p = len(g.capacities)
    out = g.out_arcs()
    phi: list = [None] * g.num_nodes
    for u in reversed(g.topological_order()):
        if u == g.target:
            phi[u] = tuple(g.capacities)
            continue
        best = None
        for k in out[u]:
            _, v, i = g.arcs[k]
            if phi[v] is None:
                continue
            w = g.weights[i]
            cand = tuple(phi[v][d] - w[d] for d in range(p))
            best = cand if best is None else tuple(map(min, best, cand))
        phi[u] = best
    return phi


def _rebuild(g: ArcFlowGraph, new_labels, stats) -> ArcFlowGraph:
    def key(n):
        return _TARGET if n == g.target else new_labels[n]

    dead = [n for n, lab in enumerate(new_labels) if lab is None and n != g.target]
    if dead:
        raise ConsistencyError(f"{len(dead)} nodes are unreachable during relabeling")
    arcs = [(key(u), key(v), i) for u, v, i in g.arcs]
    return assemble(key(g.source), arcs, g.weights, g.capacities,
                    target_label=g.capacities, stats=stats)


def compress_final(g: ArcFlowGraph) -> ArcFlowGraph:
    """Relabel nodes by their longest path from the source and merge equal labels."""
    psi = _relabel_source_side(g)
    stats = dict(g.stats)
    h = _rebuild(g, psi, stats)
    h.stats["final_nodes"] = h.num_nodes
    h.stats["final_arcs"] = h.num_arcs
    return h


def build_graph(inst: VbpInstance, max_states: int = DEFAULT_STATE_BUDGET) -> ArcFlowGraph:
    """The production path: direct step-3 construction followed by final compression."""
    return compress_final(build_step3(inst, max_states=max_states))


# --------------------------------------------------- reference pipeline

def build_step1(inst: VbpInstance, max_states: int = DEFAULT_STATE_BUDGET) -> ArcFlowGraph:
    """Uncompressed graph built item by item from all previously existing nodes."""
    order = canonical_order(inst).permutation
    cap = inst.capacities
    p = inst.dim_count
    src = tuple([0] * p)
    nodes = {src}
    arcs = set()
    for j in order:
        w = inst.items[j].weights
        created = set()
        for x in sorted(nodes):
            cur = x
            for _ in range(inst.items[j].demand):
                nxt = tuple(cur[d] + w[d] for d in range(p))
                if any(nxt[d] > cap[d] for d in range(p)):
                    break
                arcs.add((cur, nxt, j + 1))
                created.add(nxt)
                cur = nxt
        nodes |= created
        if len(nodes) > max_states:
            raise BudgetExceeded(
                f"step-1 node budget of {max_states} exceeded", used=len(nodes))
    for u in nodes:
        if u != src:
            arcs.add((u, _TARGET, LOSS))
    return assemble(src, arcs, _item_weights(inst), cap)


def split_levels(g1: ArcFlowGraph, inst: VbpInstance) -> ArcFlowGraph:
    """Split a step-1 graph into one level per item, linked by loss arcs.

    A node gets a copy on every level whose item touches it; consecutive
    copies are joined by loss arcs and only the top copy of a non-source
    node gets a loss arc to the target.  The level is appended to the label.
    """
    rank = canonical_order(inst).rank_of()
    levels = defaultdict(set)
    arcs = []
    for u, v, i in g1.arcs:
        if i == LOSS:
            continue
        r = rank[i - 1]
        levels[u].add(r)
        levels[v].add(r)
        arcs.append((g1.labels[u] + (r,), g1.labels[v] + (r,), i))
    src_levels = sorted(levels[g1.source])
    for n, lv in levels.items():
        lv = sorted(lv)
        for a, b in zip(lv, lv[1:]):
            arcs.append((g1.labels[n] + (a,), g1.labels[n] + (b,), LOSS))
        if n != g1.source:
            arcs.append((g1.labels[n] + (lv[-1],), _TARGET, LOSS))
    weights = tuple(w + (0,) for w in g1.weights)
    m = len(rank)
    src = g1.labels[g1.source] + (src_levels[0],)
    return assemble(src, arcs, weights, g1.capacities + (m,),
                    target_label=g1.capacities + (m,))


def _drop_level(g2: ArcFlowGraph) -> ArcFlowGraph:
    """Same graph with the level coordinate removed from capacities and weights."""
    return ArcFlowGraph(g2.labels, g2.arcs, g2.source, g2.target,
                        tuple(w[:-1] for w in g2.weights), g2.capacities[:-1],
                        dict(g2.stats))


def compress_main(g2: ArcFlowGraph) -> ArcFlowGraph:
    """Relabel a level-split graph by highest start positions, dropping levels.

    Every internal node of the result gets a loss arc to the target.
    """
    g = _drop_level(g2)
    phi = _relabel_target_side(g)
    h = _rebuild(g, phi, g.stats)
    arcs = [(h.labels[u], h.labels[v] if v != h.target else _TARGET, i)
            for u, v, i in h.arcs]
    src = h.labels[h.source]
    arcs += [(lab, _TARGET, LOSS) for n, lab in enumerate(h.labels)
             if n not in (h.source, h.target)]
    return assemble(src, arcs, h.weights, h.capacities, stats=h.stats)


@dataclass(frozen=True)
class ReferencePipeline:
    step1: ArcFlowGraph
    step2: ArcFlowGraph
    step3: ArcFlowGraph
    step4: ArcFlowGraph


def build_reference_pipeline(inst: VbpInstance,
                             max_states: int = DEFAULT_STATE_BUDGET) -> ReferencePipeline:
    g1 = build_step1(inst, max_states=max_states)
    g2 = split_levels(g1, inst)
    g3 = compress_main(g2)
    g4 = compress_final(g3)
    return ReferencePipeline(g1, g2, g3, g4)


# -------------------------------------------------------------- patterns

def enumerate_patterns(g: ArcFlowGraph, cap: int = DEFAULT_PATH_BUDGET) -> set[tuple[int, ...]]:
    """All item multisets along source-to-target paths.

    A pattern is a sorted tuple of 0-based item indices; loss arcs add
    nothing, so a loss-only path yields the empty tuple.
    """
    out = g.out_arcs()
    memo: dict[int, set] = {g.target: {()}}
    total = 0
    for u in reversed(g.topological_order()):
        if u == g.target:
            continue
        acc = set()
        for k in out[u]:
            _, v, i = g.arcs[k]
            sub = memo.get(v, set())
            if i == LOSS:
                acc |= sub
            else:
                acc |= {tuple(sorted(s + (i - 1,))) for s in sub}
        total += len(acc)
        if total > cap:
            raise BudgetExceeded(f"more than {cap} partial patterns enumerated", used=total)
        memo[u] = acc
    return memo.get(g.source, set())


def pattern_counts(pattern: Iterable[int], m: int) -> tuple[int, ...]:
    counts = [0] * m
    for i in pattern:
        counts[i] += 1
    return tuple(counts)


def price_min_reduced_cost(g: ArcFlowGraph, duals: Sequence) -> tuple[tuple[int, ...], object]:
    """Most valuable pattern for the given duals and its reduced cost 1 - value.

    ``duals[k]`` is the price of 0-based item k; loss arcs are worth 0.
    Ties keep the first arc in (tail, head, item) order.
    """
    value = [0] * (g.m + 1)
    for k, c in enumerate(duals):
        value[k + 1] = c
    out = g.out_arcs()
    f: list = [None] * g.num_nodes
    choice = [None] * g.num_nodes
    f[g.target] = 0
    for u in reversed(g.topological_order()):
        if u == g.target:
            continue
        for k in out[u]:
            _, v, i = g.arcs[k]
            if f[v] is None:
                continue
            cand = f[v] + value[i]
            if f[u] is None or cand > f[u]:
                f[u] = cand
                choice[u] = k
    pattern = []
    u = g.source
    while u != g.target:
        _, v, i = g.arcs[choice[u]]
        if i != LOSS:
            pattern.append(i - 1)
        u = v
    return tuple(sorted(pattern)), 1 - f[g.source]


# ------------------------------------------------------------------ dumps

def dumps_graph(g: ArcFlowGraph) -> str:
    lines = [f"{g.num_nodes} {g.num_arcs}"]
    for n, lab in enumerate(g.labels):
        lines.append(" ".join(map(str, (n,) + tuple(lab))))
    for u, v, i in g.arcs:
        lines.append(f"{u} {v} {i}")
    lines.append(f"{g.source} {g.target}")
    return "\n".join(lines) + "\n"


def loads_graph(text: str, weights, capacities) -> ArcFlowGraph:
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    nv, na = map(int, rows[0])
    labels = tuple(tuple(int(t) for t in r[1:]) for r in rows[1:1 + nv])
    arcs = tuple(tuple(int(t) for t in r) for r in rows[1 + nv:1 + nv + na])
    s, t = map(int, rows[1 + nv + na])
    return ArcFlowGraph(labels, arcs, s, t, tuple(map(tuple, weights)), tuple(capacities))


def check_graph(g: ArcFlowGraph) -> None:
    """Raise ConsistencyError when structural invariants are broken."""
    g.topological_order()
    p = len(g.capacities)
    for u, v, i in g.arcs:
        if v == g.target or i == LOSS:
            continue
        lu, lv, w = g.labels[u], g.labels[v], g.weights[i]
        if any(lv[d] - lu[d] < w[d] for d in range(p)):
            raise ConsistencyError(f"arc {lu}->{lv} is shorter than item {i}")
    reach = {g.source}
    out = g.out_arcs()
    for u in g.topological_order():
        if u in reach:
            reach.update(g.arcs[k][1] for k in out[u])
    if len(reach) != g.num_nodes:
        raise ConsistencyError("some nodes are unreachable from the source")
