"""Regenerate the fixture files in this directory.

Queen graphs are written with every edge listed twice, as in the DIMACS
originals.  ``hdtt4_like.txt`` stands in for the OR-Library file hdtt4: four
classes, teachers and venues, 30 periods in which every class, teacher and
venue is busy, giving 120 requirements over 59 distinct triplets.
"""
import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "src"))

from arcflow.reduce import Requirement, dumps_timetable, queen_graph  # noqa: E402

HERE = Path(__file__).resolve().parent


def write_queen(q):
    g = queen_graph(q)
    lines = [f"c queen{q}_{q}", f"p edge {g.n} {2 * len(g.edges)}"]
    for u, v in sorted(g.edges):
        lines += [f"e {u} {v}", f"e {v} {u}"]
    (HERE / f"queen{q}_{q}.col").write_text("\n".join(lines) + "\n")


def hdtt4_like(target=59, periods=30, size=4):
    for seed in range(10**6):
        rng = random.Random(seed)
        events = []
        for _ in range(periods):
            t = list(range(1, size + 1))
            v = list(range(1, size + 1))
            rng.shuffle(t)
            rng.shuffle(v)
            events += [(c + 1, t[c], v[c]) for c in range(size)]
        distinct = {}
        for e in events:
            distinct[e] = distinct.get(e, 0) + 1
        if len(distinct) == target:
            reqs = [Requirement(c, t, v, b) for (c, t, v), b in sorted(distinct.items())]
            return seed, reqs
    raise RuntimeError("no seed found")


if __name__ == "__main__":
    for q in (5, 6, 7, 8):
        write_queen(q)
    seed, reqs = hdtt4_like()
    text = dumps_timetable(4, 4, 4, reqs)
    (HERE / "hdtt4_like.txt").write_text(f"# generated with seed {seed}\n" + text)
    (HERE / "example1.bpp").write_text("3\n7\n5 3\n3 1\n2 2\n")
    (HERE / "fig4.vbp").write_text("2\n7 3\n3\n5 1 3\n3 1 1\n2 1 2\n")
    (HERE / "compression.vbp").write_text("2\n9 3\n3\n4 1 1\n3 1 3\n2 1 1\n")
    (HERE / "fig5.col").write_text("p edge 4 4\ne 1 2\ne 1 3\ne 2 3\ne 3 4\n")
