import itertools
import random

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arcflow.errors import ParseError, ValidationError
from arcflow.instance import make_instance, parse_instance
from arcflow.reduce import (ConflictGraph, Requirement, add_binary_patterns, add_cardinality,
                            add_conflicts, bron_kerbosch, coloring_to_vbp, maximal_cliques,
                            parse_dimacs, parse_timetable, queen_graph, timetable_to_vbp)
from arcflow.solve import oracle_exact

from conftest import DATA, example1

FIG5 = ConflictGraph(4, [(1, 2), (1, 3), (2, 3), (3, 4)])


def fits(inst, counts):
    return all(sum(k * it.weights[d] for k, it in zip(counts, inst.items)) <= cap
               for d, cap in enumerate(inst.capacities))


def zero_one_patterns(inst):
    return {frozenset(i + 1 for i, k in enumerate(y) if k)
            for y in itertools.product((0, 1), repeat=inst.m) if fits(inst, y)}


def independent_sets(g):
    adj = g.adjacency()
    out = set()
    for r in range(g.n + 1):
        for s in itertools.combinations(range(1, g.n + 1), r):
            if all(b not in adj[a] for a, b in itertools.combinations(s, 2)):
                out.add(frozenset(s))
    return out


def random_graph(seed, n_max=10):
    rng = random.Random(seed)
    n = rng.randint(1, n_max)
    dens = rng.random()
    edges = [(u, v) for u in range(1, n + 1) for v in range(u + 1, n + 1) if rng.random() < dens]
    return ConflictGraph(n, edges)


# ------------------------------------------------------------- graphs

def test_graph_validation():
    with pytest.raises(ValidationError):
        ConflictGraph(3, [(1, 1)])
    with pytest.raises(ValidationError):
        ConflictGraph(3, [(1, 4)])
    assert ConflictGraph(3, [(2, 1), (1, 2)]).edges == {(1, 2)}


def test_queen_edge_counts():
    assert [len(queen_graph(q).edges) for q in (5, 6, 7, 8)] == [160, 290, 476, 728]


def test_dimacs_duplicates_merged():
    g = parse_dimacs(DATA / "queen5_5.col")
    assert g.n == 25 and len(g.edges) == 160
    assert g == queen_graph(5)


def test_dimacs_errors(tmp_path):
    f = tmp_path / "x.col"
    f.write_text("p edge 3 1\ne 1 z\n")
    with pytest.raises(ParseError) as info:
        parse_dimacs(f)
    assert info.value.line == 2
    f.write_text("e 1 2\n")
    with pytest.raises(ParseError, match="header"):
        parse_dimacs(f)


# ------------------------------------------------------------- cliques

def test_clique_examples():
    assert maximal_cliques(ConflictGraph(3, [(1, 2), (1, 3), (2, 3)])) == [{1, 2, 3}]
    assert maximal_cliques(ConflictGraph(3, [(1, 2), (2, 3)])) == [{1, 2}, {2, 3}]
    assert maximal_cliques(FIG5) == [{1, 2, 3}, {3, 4}]


@given(st.integers(0, 10**6))
@settings(max_examples=200, deadline=None)
def test_bron_kerbosch_matches_networkx(seed):
    g = random_graph(seed, 12)
    ref = nx.Graph()
    ref.add_nodes_from(range(1, g.n + 1))
    ref.add_edges_from(g.edges)
    assert set(bron_kerbosch(g)) == {frozenset(c) for c in nx.find_cliques(ref)}


@pytest.mark.parametrize("seed", range(80))
def test_clique_cover(seed):
    g = random_graph(seed, 12)
    adj = g.adjacency()
    cover = maximal_cliques(g)
    for c in cover:
        assert all(b in adj[a] for a, b in itertools.combinations(c, 2))
        outside = set(range(1, g.n + 1)) - c
        assert not any(c <= adj[v] for v in outside)
    for u, v in g.edges:
        assert any(u in c and v in c for c in cover)


# ------------------------------------------------------------- coloring

def test_fig5_dimension_counts():
    adj, _ = coloring_to_vbp(FIG5, "adjacency")
    assert adj.capacities == (1, 1, 1, 1)
    clq, rmap = coloring_to_vbp(FIG5, "clique")
    assert clq.dim_count == 2
    deg, _ = coloring_to_vbp(FIG5, "degree")
    assert deg.capacities == (2, 2, 3, 1)
    assert deg.items[2].weights == (1, 1, 3, 1)
    assert all(it.demand == 1 for it in deg.items)


@pytest.mark.parametrize("mode", ["adjacency", "degree", "clique"])
@pytest.mark.parametrize("seed", range(40))
def test_coloring_patterns_are_independent_sets(mode, seed):
    g = random_graph(seed, 9)
    inst, _ = coloring_to_vbp(g, mode)
    assert zero_one_patterns(inst) == independent_sets(g)


def test_edgeless_graph_one_color():
    inst, _ = coloring_to_vbp(ConflictGraph(3), "degree")
    assert inst.capacities == (1, 1, 1)
    assert oracle_exact(inst)[0] == 1


def test_empty_graph_rejected():
    with pytest.raises(ValidationError):
        coloring_to_vbp(ConflictGraph(0), "degree")


# ----------------------------------------------------------- timetables

def test_hdtt4_like_counts():
    t, c, v, reqs = parse_timetable(DATA / "hdtt4_like.txt")
    inst, rmap = timetable_to_vbp(t, c, v, reqs)
    assert (inst.m, inst.n, inst.dim_count) == (59, 120, 12)
    assert set(inst.capacities) == {1}
    assert all(sum(it.weights) == 3 for it in inst.items)


def test_timetable_small_cases():
    one, _ = timetable_to_vbp(1, 1, 1, [Requirement(1, 1, 1, 1)])
    assert oracle_exact(one)[0] == 1
    clash, _ = timetable_to_vbp(1, 2, 2, [Requirement(1, 1, 1, 1), Requirement(2, 1, 2, 1)])
    assert oracle_exact(clash)[0] == 2


def test_timetable_merges_duplicates():
    inst, rmap = timetable_to_vbp(2, 2, 2, [Requirement(1, 2, 1, 2), Requirement(1, 2, 1, 3)])
    assert inst.m == 1 and inst.demands == [5]
    assert rmap.dimensions[:2] == ["class 1", "class 2"]
    with pytest.raises(ValidationError):
        timetable_to_vbp(2, 2, 2, [Requirement(3, 1, 1, 1)])


# ---------------------------------------------------------- side rules

def test_cardinality_matches_fig4():
    assert add_cardinality(example1(), 3).capacities == parse_instance(DATA / "fig4.vbp").capacities
    assert add_cardinality(example1(), 3).weights == parse_instance(DATA / "fig4.vbp").weights
    assert oracle_exact(add_cardinality(example1(), 1))[0] == 6
    assert oracle_exact(add_cardinality(example1(), 6))[0] == oracle_exact(example1())[0]


@pytest.mark.parametrize("seed", range(30))
def test_cardinality_limits_pattern_size(seed):
    rng = random.Random(seed)
    inst = make_instance(20, [rng.randint(1, 8) for _ in range(3)], [3, 3, 3])
    C = rng.randint(1, 4)
    capped = add_cardinality(inst, C)
    for y in itertools.product(range(4), repeat=3):
        assert fits(capped, y) == (fits(inst, y) and sum(y) <= C)


def test_binary_patterns():
    inst = add_binary_patterns(example1())
    assert inst.dim_count == 4
    assert fits(inst, (1, 0, 1)) and not fits(inst, (0, 0, 2))
    one = make_instance(9, [3], [5])
    assert oracle_exact(one)[0] == 2
    assert oracle_exact(add_binary_patterns(one))[0] == 5
    unit = make_instance(10, [4, 3, 2], [1, 1, 1])
    assert oracle_exact(add_binary_patterns(unit))[0] == oracle_exact(unit)[0]


def test_conflicts():
    inst = make_instance(10, [3, 4], [1, 1])
    out, rmap = add_conflicts(inst, ConflictGraph(2, [(1, 2)]))
    assert oracle_exact(out)[0] == 2 and rmap.kind == "conflict"
    same, _ = add_conflicts(example1(), ConflictGraph(3))
    assert same.capacities == example1().capacities and same.items == example1().items
    binary, rmap = add_conflicts(example1(), ConflictGraph(3), binary=True)
    assert binary == add_binary_patterns(example1())
    assert rmap.kind == "binary_conflict"


@pytest.mark.parametrize("seed", range(40))
def test_conflicting_items_never_share(seed):
    rng = random.Random(seed)
    m = rng.randint(2, 5)
    inst = make_instance(12, [rng.randint(1, 6) for _ in range(m)], [rng.randint(1, 3) for _ in range(m)])
    g = random_graph(seed, m)
    g = ConflictGraph(m, [e for e in g.edges])
    for binary in (False, True):
        out, _ = add_conflicts(inst, g, binary=binary)
        for y in itertools.product(*(range(b + 1) for b in inst.demands)):
            if not fits(out, y):
                continue
            assert fits(inst, y)
            for u, v in g.edges:
                assert not (y[u - 1] and y[v - 1])
            if binary:
                assert max(y) <= 1
