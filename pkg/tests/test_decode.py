import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arcflow.decode import (PackingSolution, arc_flows, decompose_flow, decompose_fractional,
                            dumps_coloring, dumps_solution, dumps_timetable, to_bins,
                            validate_solution)
from arcflow.errors import ValidationError
from arcflow.flowgraph import LOSS, build_graph
from arcflow.instance import make_instance
from arcflow.model import build_arcflow_model
from arcflow.reduce import (ConflictGraph, Requirement, add_cardinality, coloring_to_vbp, plain_map,
                            timetable_to_vbp)
from arcflow.solve import SolverConfig, solve_milp

from conftest import example1, random_instance


def random_walks(g, rng, count):
    """Flow made of ``count`` random source-target walks, plus the walks' patterns."""
    out = g.out_arcs()
    flows = [0] * g.num_arcs
    pats = []
    for _ in range(count):
        u, items = g.source, []
        while u != g.target:
            k = rng.choice(out[u])
            flows[k] += 1
            _, u, i = g.arcs[k]
            if i != LOSS:
                items.append(i - 1)
        pats.append(tuple(sorted(items)))
    return flows, pats


def packing(bins):
    bins = [tuple(sorted(b)) for b in bins]
    return PackingSolution(list(Counter(bins).items()), bins)


# --------------------------------------------------------- decomposition

def test_example1_decomposition():
    inst = example1()
    g = build_graph(inst)
    mdl = build_arcflow_model(g, inst)
    sol = solve_milp(mdl, SolverConfig(backend="highs"))
    pats = decompose_flow(g, arc_flows(mdl, sol.values, g), sol.objective)
    assert sum(k for _, k in pats) == 4
    got = Counter()
    for p, k in pats:
        for i in p:
            got[i] += k
    assert all(got[i] >= b for i, b in enumerate(inst.demands))


@given(st.integers(0, 10**6), st.integers(1, 8))
@settings(max_examples=200, deadline=None)
def test_decomposition_recovers_walk_totals(seed, count):
    inst = random_instance(seed)
    g = build_graph(inst)
    flows, walks = random_walks(g, random.Random(seed), count)
    pats = decompose_flow(g, flows, count)
    assert sum(k for _, k in pats) == count
    mine, theirs = Counter(), Counter()
    for p, k in pats:
        for i in p:
            mine[i] += k
    for p in walks:
        theirs.update(p)
    assert mine == theirs
    assert decompose_flow(g, flows) == pats  # deterministic


def test_decomposition_rejects_bad_flows():
    g = build_graph(example1())
    with pytest.raises(ValidationError):
        decompose_flow(g, [1] + [0] * (g.num_arcs - 1))
    flows, _ = random_walks(g, random.Random(1), 3)
    with pytest.raises(ValidationError, match="differs"):
        decompose_flow(g, flows, 4)
    with pytest.raises(ValidationError, match="negative"):
        decompose_flow(g, [-1] * g.num_arcs)


def test_fractional_decomposition():
    inst = example1()
    g = build_graph(inst)
    flows, _ = random_walks(g, random.Random(3), 4)
    half = [f / 2 + 1e-12 for f in flows]
    paths = decompose_fractional(g, half)
    assert sum(w for _, w in paths) == pytest.approx(2)
    assert decompose_fractional(g, [0.0] * g.num_arcs) == []


# ---------------------------------------------------------------- to_bins

def test_to_bins_trims_smallest_first():
    inst = make_instance(10, [5, 2], [1, 1])
    sol = to_bins([((0, 1), 1), ((1,), 1)], inst)
    assert sol.bins == [(0, 1)]
    sol = to_bins([((0, 1, 1), 1)], inst)
    assert sol.bins == [(0, 1)]


def test_to_bins_trims_late_bins_first():
    inst = make_instance(10, [5, 2], [2, 1])
    sol = to_bins([((0, 1), 1), ((0, 1), 1)], inst)
    assert sol.bins == [(0, 1), (0,)]
    assert sol.patterns == [((0, 1), 1), ((0,), 1)]


def test_to_bins_shortfall():
    with pytest.raises(ValidationError, match="item 2"):
        to_bins([((0,), 3)], example1())


# ------------------------------------------------------------- validation

def test_validation_catches_overload():
    inst = example1()
    rep = validate_solution(inst, packing([(0, 1), (0,), (0, 2, 2)]))
    assert not rep.ok
    assert any("load 8 > capacity 7" in v for v in rep.violations)
    assert any("load 9" in v for v in rep.violations)


def test_validation_catches_demand():
    rep = validate_solution(example1(), packing([(0,), (0,), (1, 2, 2)]))
    assert rep.violations == ["item 1: 2 copies packed, demand 3"]
    good = validate_solution(example1(), packing([(0,), (0,), (0,), (1, 2, 2)]))
    assert good.ok and bool(good)


def test_validation_reduction_rules():
    g = ConflictGraph(3, [(1, 2)])
    inst, rmap = coloring_to_vbp(g, "degree")
    assert not validate_solution(inst, packing([(0, 1), (2,)]), rmap).ok
    assert validate_solution(inst, packing([(0, 2), (1,)]), rmap).ok
    card = add_cardinality(example1(), 2)
    rmap = plain_map(card)
    rmap.cardinality = 2
    sol = packing([(0,), (0,), (0,), (1, 2, 2)])
    assert any("limit 2" in v for v in validate_solution(example1(), sol, rmap).violations)


def test_timetable_clash_detected():
    reqs = [Requirement(1, 1, 1, 1), Requirement(2, 1, 2, 1)]
    inst, rmap = timetable_to_vbp(1, 2, 2, reqs)
    rep = validate_solution(inst, packing([(0, 1)]), rmap)
    assert any("teacher 1 booked 2 times" in v for v in rep.violations)


# ----------------------------------------------------------------- output

def test_solution_text():
    sol = packing([(0,), (0,), (0,), (1, 2, 2)])
    text = dumps_solution(example1(), sol)
    assert text.splitlines() == ["4", "1×1", "1×1", "1×1", "2×1 3×2"]


def test_coloring_and_timetable_text():
    inst, rmap = coloring_to_vbp(ConflictGraph(3, [(1, 2)]), "degree")
    assert dumps_coloring(packing([(0, 2), (1,)]), rmap) == "1 1\n2 2\n3 1\n"
    reqs = [Requirement(1, 1, 1, 1), Requirement(2, 2, 2, 1)]
    inst, rmap = timetable_to_vbp(2, 2, 2, reqs)
    assert dumps_timetable(packing([(0, 1)]), rmap) == "period 1: c1/t1/v1 c2/t2/v2\n"


def test_small_timetable_end_to_end():
    reqs = [Requirement(1, 1, 1, 2), Requirement(2, 2, 2, 2), Requirement(2, 1, 2, 1)]
    inst, rmap = timetable_to_vbp(2, 2, 2, reqs)
    g = build_graph(inst)
    mdl = build_arcflow_model(g, inst)
    sol = solve_milp(mdl, SolverConfig(backend="highs"))
    assert sol.objective == 3
    result = to_bins(decompose_flow(g, arc_flows(mdl, sol.values, g)), inst)
    assert validate_solution(inst, result, rmap).ok

