"""Reductions from coloring, timetabling and bin packing variants to vector packing.

Every reduction returns a validated :class:`VbpInstance`.  Functions that
introduce new entities (vertices, requirements) also return a
:class:`ReductionMap` so that a packing can be read back in the source
problem's terms.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ParseError, ValidationError
from .instance import ItemType, VbpInstance

ADJACENCY, DEGREE, CLIQUE = "adjacency", "degree", "clique"
COLORING_MODES = (ADJACENCY, DEGREE, CLIQUE)


@dataclass(frozen=True)
class ConflictGraph:
    """Undirected simple graph on vertices 1..n."""

    n: int
    edges: frozenset[tuple[int, int]]

    def __init__(self, n: int, edges: Iterable[tuple[int, int]] = ()):
        norm = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValidationError(f"self-loop on vertex {u}")
            if not (1 <= u <= n and 1 <= v <= n):
                raise ValidationError(f"edge ({u}, {v}) outside vertex range 1..{n}")
            norm.add((min(u, v), max(u, v)))
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "edges", frozenset(norm))

    def adjacency(self) -> dict[int, set[int]]:
        adj = {v: set() for v in range(1, self.n + 1)}
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        return adj

    def degree(self, v: int) -> int:
        return sum(1 for e in self.edges if v in e)


@dataclass(frozen=True)
class Requirement:
    class_id: int
    teacher_id: int
    venue_id: int
    demand: int


@dataclass
class ReductionMap:
    """How the dimensions and items of a reduced instance map back to the source."""

    kind: str = "plain"
    dimensions: list[str] = field(default_factory=list)
    item_sources: list = field(default_factory=list)
    graph: ConflictGraph | None = None
    requirements: list[Requirement] = field(default_factory=list)
    cardinality: int | None = None
    binary_items: frozenset[int] = frozenset()
    counts: tuple[int, int, int] | None = None  # teachers, classes, venues


def plain_map(inst: VbpInstance) -> ReductionMap:
    return ReductionMap("plain", [f"capacity {d + 1}" for d in range(inst.dim_count)],
                        [it.external_id for it in inst.items])


# ------------------------------------------------------------- cliques

def bron_kerbosch(g: ConflictGraph) -> list[frozenset[int]]:
    """All maximal cliques, using Tomita pivoting.  Isolated vertices are singletons."""
    adj = g.adjacency()
    found = []

    def expand(r, p, x):
        if not p and not x:
            found.append(frozenset(r))
            return
        pivot = max(p | x, key=lambda u: (len(adj[u] & p), -u))
        for v in sorted(p - adj[pivot]):
            expand(r | {v}, p & adj[v], x & adj[v])
            p = p - {v}
            x = x | {v}

    if g.n:
        expand(set(), set(adj), set())
    return sorted(found, key=lambda c: (-len(c), sorted(c)))


def maximal_cliques(g: ConflictGraph) -> list[frozenset[int]]:
    """Maximal cliques chosen greedily until every edge is covered."""
    candidates = [c for c in bron_kerbosch(g) if len(c) > 1]
    uncovered = set(g.edges)
    cover = []
    while uncovered:
        best = max(candidates, key=lambda c: sum(1 for u, v in uncovered if u in c and v in c))
        cover.append(best)
        uncovered = {(u, v) for u, v in uncovered if not (u in best and v in best)}
        candidates.remove(best)
    return sorted(cover, key=sorted)


# ------------------------------------------------------------- coloring

def coloring_to_vbp(g: ConflictGraph, mode: str = DEGREE) -> tuple[VbpInstance, ReductionMap]:
    """One demand-one item per vertex; a packing into z bins is a z-coloring.

    Vertices left without any dimension by the chosen encoding get a private
    unit dimension so that their weight vector is not all zero.
    """
    if g.n < 1:
        raise ValidationError("graph has no vertices")
    if mode not in COLORING_MODES:
        raise ValueError(f"unknown coloring mode {mode!r}")
    n = g.n
    rows: list[dict[int, int]] = []
    caps: list[int] = []
    notes: list[str] = []
    adj = g.adjacency()
    if mode == ADJACENCY:
        for u, v in sorted(g.edges):
            rows.append({u: 1, v: 1})
            caps.append(1)
            notes.append(f"edge {u}-{v}")
    elif mode == DEGREE:
        for k in range(1, n + 1):
            deg = len(adj[k])
            if deg == 0:
                continue
            row = {j: 1 for j in adj[k]}
            row[k] = deg
            rows.append(row)
            caps.append(deg)
            notes.append(f"degree {k}")
    else:
        for clique in maximal_cliques(g):
            rows.append({v: 1 for v in clique})
            caps.append(1)
            notes.append("clique " + ",".join(map(str, sorted(clique))))
    touched = {v for row in rows for v in row}
    for k in range(1, n + 1):
        if k not in touched:
            rows.append({k: 1})
            caps.append(1)
            notes.append(f"isolated {k}")
    items = tuple(
        ItemType(tuple(row.get(v, 0) for row in rows), 1, str(v)) for v in range(1, n + 1))
    inst = VbpInstance(tuple(caps), items)
    return inst, ReductionMap("coloring", notes, list(range(1, n + 1)), graph=g)


# ---------------------------------------------------------- timetabling

def timetable_to_vbp(teachers: int, classes: int, venues: int,
                     reqs: Sequence[Requirement]) -> tuple[VbpInstance, ReductionMap]:
    """Class, teacher and venue dimensions of capacity one; periods are bins.

    Requirements with the same (class, teacher, venue) are merged.
    """
    if min(teachers, classes, venues) < 1:
        raise ValidationError("teacher, class and venue counts must be positive")
    if not reqs:
        raise ValidationError("no requirements")
    merged: dict[tuple[int, int, int], int] = {}
    for r in reqs:
        if not (1 <= r.class_id <= classes and 1 <= r.teacher_id <= teachers
                and 1 <= r.venue_id <= venues):
            raise ValidationError(f"requirement {r} references an unknown id")
        if r.demand < 1:
            raise ValidationError(f"requirement {r} has non-positive demand")
        key = (r.class_id, r.teacher_id, r.venue_id)
        merged[key] = merged.get(key, 0) + r.demand
    p = classes + teachers + venues
    items = []
    sources = []
    for (c, t, v), b in sorted(merged.items()):
        w = [0] * p
        w[c - 1] = 1
        w[classes + t - 1] = 1
        w[classes + teachers + v - 1] = 1
        items.append(ItemType(tuple(w), b, f"c{c}t{t}v{v}"))
        sources.append(Requirement(c, t, v, b))
    notes = ([f"class {k}" for k in range(1, classes + 1)]
             + [f"teacher {k}" for k in range(1, teachers + 1)]
             + [f"venue {k}" for k in range(1, venues + 1)])
    inst = VbpInstance(tuple([1] * p), tuple(items))
    rmap = ReductionMap("timetable", notes, sources, requirements=sources,
                        counts=(teachers, classes, venues))
    return inst, rmap


# ------------------------------------------------------ side constraints

def add_cardinality(inst: VbpInstance, limit: int) -> VbpInstance:
    """Append a dimension of capacity ``limit`` where every item weighs one."""
    if limit < 1:
        raise ValidationError(f"cardinality limit must be >= 1, got {limit}")
    items = tuple(ItemType(it.weights + (1,), it.demand, it.external_id) for it in inst.items)
    return VbpInstance(inst.capacities + (limit,), items, j_exact=inst.j_exact, name=inst.name)


def _add_unit_dims(inst: VbpInstance, which: Sequence[int]) -> VbpInstance:
    which = list(which)
    pos = {i: k for k, i in enumerate(which)}
    items = []
    for i, it in enumerate(inst.items):
        extra = [0] * len(which)
        if i in pos:
            extra[pos[i]] = 1
        items.append(ItemType(it.weights + tuple(extra), it.demand, it.external_id))
    return VbpInstance(inst.capacities + (1,) * len(which), tuple(items),
                       j_exact=inst.j_exact, name=inst.name)


def add_binary_patterns(inst: VbpInstance) -> VbpInstance:
    """Allow at most one copy of each item type per bin."""
    return _add_unit_dims(inst, range(inst.m))


def add_conflicts(inst: VbpInstance, g: ConflictGraph,
                  binary: bool = False) -> tuple[VbpInstance, ReductionMap]:
    """Forbid conflicting items in the same bin using degree constraints.

    With ``binary`` set, items without conflicts also get a unit dimension;
    conflicting items are already limited to one copy per bin.
    """
    if g.n != inst.m:
        raise ValidationError(f"conflict graph has {g.n} vertices, instance has {inst.m} items")
    adj = g.adjacency()
    rows, caps, notes = [], [], []
    for k in range(1, g.n + 1):
        deg = len(adj[k])
        if deg == 0:
            continue
        row = {j: 1 for j in adj[k]}
        row[k] = deg
        rows.append(row)
        caps.append(deg)
        notes.append(f"conflict degree {k}")
    items = tuple(
        ItemType(it.weights + tuple(row.get(i + 1, 0) for row in rows), it.demand, it.external_id)
        for i, it in enumerate(inst.items))
    out = VbpInstance(inst.capacities + tuple(caps), items, j_exact=inst.j_exact, name=inst.name)
    free = [i for i in range(inst.m) if not adj[i + 1]]
    binary_items = frozenset()
    if binary:
        out = _add_unit_dims(out, free)
        notes += [f"binary {i + 1}" for i in free]
        binary_items = frozenset(range(inst.m))
    dims = [f"capacity {d + 1}" for d in range(inst.dim_count)] + notes
    kind = "binary_conflict" if binary else "conflict"
    return out, ReductionMap(kind, dims, [it.external_id for it in inst.items], graph=g,
                             binary_items=binary_items)


# ---------------------------------------------------------------- parsing

def parse_dimacs(path) -> ConflictGraph:
    """Read a DIMACS ``.col`` file; repeated or reversed edges are merged."""
    path = Path(path)
    n = None
    edges = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        parts = raw.split()
        if not parts or parts[0] == "c":
            continue
        try:
            if parts[0] == "p":
                if len(parts) < 4:
                    raise ParseError("malformed problem line", line=lineno, path=path)
                n = int(parts[2])
            elif parts[0] == "e":
                edges.append((int(parts[1]), int(parts[2])))
            else:
                raise ParseError(f"unknown line type {parts[0]!r}", line=lineno, path=path)
        except (ValueError, IndexError):
            raise ParseError(f"malformed line {raw.strip()!r}", line=lineno, path=path)
    if n is None:
        raise ParseError("missing 'p edge' header", path=path)
    return ConflictGraph(n, edges)


def dumps_dimacs(g: ConflictGraph, comment: str = "") -> str:
    lines = [f"c {comment}"] if comment else []
    lines.append(f"p edge {g.n} {len(g.edges)}")
    lines += [f"e {u} {v}" for u, v in sorted(g.edges)]
    return "\n".join(lines) + "\n"


def parse_timetable(path) -> tuple[int, int, int, list[Requirement]]:
    """Read ``t c v`` then ``class teacher venue demand`` lines."""
    path = Path(path)
    rows = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            rows.append((lineno, [int(t) for t in line.split()]))
        except ValueError:
            raise ParseError(f"non-integer token in {raw.strip()!r}", line=lineno, path=path)
    if not rows or len(rows[0][1]) != 3:
        raise ParseError("first line must be 't c v'", line=rows[0][0] if rows else None, path=path)
    t, c, v = rows[0][1]
    reqs = []
    for lineno, vals in rows[1:]:
        if len(vals) != 4:
            raise ParseError("expected 'class teacher venue demand'", line=lineno, path=path)
        reqs.append(Requirement(*vals))
    return t, c, v, reqs


def dumps_timetable(t: int, c: int, v: int, reqs: Sequence[Requirement]) -> str:
    lines = [f"{t} {c} {v}"]
    lines += [f"{r.class_id} {r.teacher_id} {r.venue_id} {r.demand}" for r in reqs]
    return "\n".join(lines) + "\n"


def queen_graph(q: int) -> ConflictGraph:
    """Squares of a q x q board, adjacent when a queen on one attacks the other."""
    def vid(r, c):
        return r * q + c + 1

    edges = []
    cells = [(r, c) for r in range(q) for c in range(q)]
    for a, (r1, c1) in enumerate(cells):
        for r2, c2 in cells[a + 1:]:
            if r1 == r2 or c1 == c2 or abs(r1 - r2) == abs(c1 - c2):
                edges.append((vid(r1, c1), vid(r2, c2)))
    return ConflictGraph(q * q, edges)
