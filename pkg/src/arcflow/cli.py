"""Command line: solve, graph-stats, bench and gen-divisible."""
from __future__ import annotations

import argparse
import csv
import logging
import os
import random
import shlex
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields
from pathlib import Path

from . import decode, reduce
from .errors import ArcFlowError, BudgetExceeded
from .flowgraph import DEFAULT_STATE_BUDGET, build_graph, build_reference_pipeline
from .instance import ItemType, VbpInstance, dumps_instance, parse_instance
from .model import build_arcflow_model, lp_bound_report, write_annotation, write_model
from .solve import (FEASIBLE, OPTIMAL, SOLVER_ENV, SolverConfig, oracle_exact, solve_lp_relaxation,
                    solve_milp)

log = logging.getLogger("arcflow")

KINDS = ("bpp", "csp", "vbp", "color", "timetable")
CSV_HEADER = ("instance", "kind", "m", "n", "p", "#v", "#a", "%v", "%a", "z_lp", "z_ip",
              "gap", "t_pp", "t_lp", "t_ip", "t_tot", "n_bb", "status")
TIMING = {"t_pp", "t_lp", "t_ip", "t_tot"}


@dataclass
class BenchRecord:
    instance: str
    kind: str
    m: int | None = None
    n: int | None = None
    p: int | None = None
    nv: int | None = None
    na: int | None = None
    pv: float | None = None
    pa: float | None = None
    z_lp: float | None = None
    z_ip: int | None = None
    gap: str | None = None
    t_pp: float | None = None
    t_lp: float | None = None
    t_ip: float | None = None
    t_tot: float | None = None
    n_bb: int | None = None
    status: str = ""

    def row(self) -> list[str]:
        out = []
        for f, v in zip(fields(self), astuple(self)):
            if v is None:
                out.append("")
            elif isinstance(v, float):
                out.append(f"{v:.3f}" if f.name in TIMING or f.name in ("pv", "pa") else f"{v:.6f}")
            else:
                out.append(str(v))
        return out


class StageError(ArcFlowError):
    def __init__(self, stage, exc):
        self.stage = stage
        super().__init__(f"[{stage}] {exc}")


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, tp, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, Exception):
            raise StageError(self.name, exc) from exc


# ------------------------------------------------------------------ inputs

def load_problem(args) -> tuple[VbpInstance, reduce.ReductionMap]:
    path = Path(args.instance)
    kind = args.kind
    with _Stage("parse"):
        if kind in ("bpp", "csp", "vbp"):
            inst = parse_instance(path, kind)
            rmap = reduce.plain_map(inst)
        elif kind == "color":
            g = reduce.parse_dimacs(path)
        else:
            t, c, v, reqs = reduce.parse_timetable(path)
    with _Stage("reduce"):
        if kind == "color":
            inst, rmap = reduce.coloring_to_vbp(g, args.mode)
        elif kind == "timetable":
            inst, rmap = reduce.timetable_to_vbp(t, c, v, reqs)
        if args.conflicts:
            if kind in ("color", "timetable"):
                raise ArcFlowError("--conflicts applies to packing instances only")
            cg = reduce.parse_dimacs(args.conflicts)
            inst, rmap = reduce.add_conflicts(inst, cg, binary=args.binary)
        elif args.binary:
            inst = reduce.add_binary_patterns(inst)
            rmap.kind = "binary" if rmap.kind == "plain" else rmap.kind
            rmap.binary_items = frozenset(range(inst.m))
            rmap.dimensions += [f"binary {i + 1}" for i in range(inst.m)]
        if args.card:
            inst = reduce.add_cardinality(inst, args.card)
            rmap.kind = "cardinality" if rmap.kind == "plain" else rmap.kind
            rmap.cardinality = args.card
            rmap.dimensions.append(f"cardinality {args.card}")
        inst = VbpInstance(inst.capacities, inst.items, exact_set(args.exact, inst), name=path.stem)
    return inst, rmap


def exact_set(choice, inst: VbpInstance):
    """Items whose demand rows are equalities: auto, all, none or 1-based ids like 1,3."""
    if choice in (None, "auto"):
        return inst.j_exact
    if choice == "all":
        return frozenset(range(inst.m))
    if choice == "none":
        return frozenset()
    try:
        ids = {int(tok) - 1 for tok in choice.split(",") if tok.strip()}
    except ValueError:
        raise ArcFlowError(f"--exact expects auto, all, none or item numbers, got {choice!r}") from None
    return frozenset(ids)


def solver_config(args, workdir=None) -> SolverConfig:
    return SolverConfig(backend=args.backend, command=args.solver_cmd, time_limit=args.time_limit,
                        threads=args.threads, workdir=workdir or args.workdir, format=args.format)


def _pct(before, after):
    return 100.0 * (before - after) / before if before else 0.0


# -------------------------------------------------------------------- solve

def run_solve(args, workdir=None) -> tuple[int, BenchRecord, str]:
    """Full pipeline for one instance; returns exit code, record and solution text."""
    rec = BenchRecord(Path(args.instance).stem, args.kind)
    t0 = time.perf_counter()
    inst, rmap = load_problem(args)
    rec.m, rec.n, rec.p = inst.m, inst.n, inst.dim_count
    with _Stage("build"):
        tb = time.perf_counter()
        g = build_graph(inst, max_states=args.max_states)
        rec.t_pp = time.perf_counter() - tb
        rec.nv, rec.na = g.num_nodes, g.num_arcs
        if args.reference_pipeline:
            try:
                ref = build_reference_pipeline(inst, max_states=args.max_states)
                rec.pv = _pct(ref.step1.num_nodes, g.num_nodes)
                rec.pa = _pct(ref.step1.num_arcs, g.num_arcs)
            except BudgetExceeded as exc:
                log.warning("step-1 graph skipped: %s", exc)
    cfg = solver_config(args, workdir)
    with _Stage("model"):
        mdl = build_arcflow_model(g, inst, name=rec.instance or "arcflow")
        for w in mdl.warnings:
            log.warning(w)
        if args.model_out:
            write_model(mdl, args.model_out, args.format)
            write_annotation(mdl, str(args.model_out) + ".map")
    with _Stage("solve"):
        lp = solve_lp_relaxation(mdl, cfg)
        if lp.objective is not None:
            rec.z_lp = lp.objective
            rec.t_lp = lp.seconds
        sol = solve_milp(mdl, cfg)
        rec.status = sol.status
        rec.n_bb = sol.stats.n_bb
        rec.t_ip = sol.stats.t_ip
        rec.z_ip = sol.objective
    text = ""
    ok = sol.status == OPTIMAL or (sol.status == FEASIBLE and args.time_limit and args.accept_feasible)
    if sol.objective is not None:
        with _Stage("decode"):
            flows = decode.arc_flows(mdl, sol.values, g)
            pats = decode.decompose_flow(g, flows, sol.objective)
            packing = decode.to_bins(pats, inst)
            report = decode.validate_solution(inst, packing, rmap)
            text = decode.dumps_solution(inst, packing)
            if rmap.kind == "coloring":
                text += decode.dumps_coloring(packing, rmap)
            elif rmap.kind == "timetable":
                text += decode.dumps_timetable(packing, rmap)
        if not report.ok:
            for v in report.violations:
                log.error("validation: %s", v)
            rec.status = "invalid"
            ok = False
        if rec.z_lp is not None and sol.status == OPTIMAL:
            rec.gap = lp_bound_report(rec.z_lp, sol.objective).classification
    if args.oracle:
        with _Stage("oracle"):
            z_or, _ = oracle_exact(inst)
        if sol.objective != z_or:
            log.error("oracle optimum %s differs from solver %s", z_or, sol.objective)
            rec.status = "oracle-mismatch"
            ok = False
    rec.t_tot = time.perf_counter() - t0
    return (0 if ok else 1), rec, text


def write_csv(records, handle) -> None:
    w = csv.writer(handle, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.row())


def cmd_solve(args) -> int:
    try:
        code, rec, text = run_solve(args)
    except ArcFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    if args.csv:
        new = not Path(args.csv).exists()
        with open(args.csv, "a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(CSV_HEADER)
            w.writerow(rec.row())
    print(f"z={rec.z_ip} z_lp={rec.z_lp} status={rec.status}", file=sys.stderr)
    return code


# -------------------------------------------------------------- graph-stats

def cmd_graph_stats(args) -> int:
    try:
        inst, _ = load_problem(args)
        with _Stage("build"):
            t = time.perf_counter()
            g = build_graph(inst, max_states=args.max_states)
            secs = time.perf_counter() - t
    except ArcFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"instance {inst.name}: m={inst.m} n={inst.n} p={inst.dim_count}")
    print(f"final      nodes={g.num_nodes} arcs={g.num_arcs} states={g.stats.get('states')} "
          f"time={secs:.3f}s")
    if args.reference_pipeline:
        try:
            ref = build_reference_pipeline(inst, max_states=args.max_states)
        except BudgetExceeded as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        base = ref.step1
        for name, h in (("step1", ref.step1), ("step2", ref.step2), ("step3", ref.step3),
                        ("step4", ref.step4), ("final", g)):
            print(f"{name:<10} nodes={h.num_nodes} arcs={h.num_arcs} "
                  f"removed: nodes {_pct(base.num_nodes, h.num_nodes):.1f}% "
                  f"arcs {_pct(base.num_arcs, h.num_arcs):.1f}%")
    return 0


# -------------------------------------------------------------------- bench

def _bench_one(line: str, base: Path, defaults: list[str]):
    parser = build_parser()
    try:
        argv = ["solve"] + defaults + shlex.split(line)
        args = parser.parse_args(argv)
        if not Path(args.instance).is_absolute():
            args.instance = str(base / args.instance)
        if args.conflicts and not Path(args.conflicts).is_absolute():
            args.conflicts = str(base / args.conflicts)
        with tempfile.TemporaryDirectory(prefix="arcflow-bench-") as wd:
            _, rec, _ = run_solve(args, workdir=wd)
        return rec
    except (ArcFlowError, OSError, ValueError, SystemExit) as exc:
        name = Path(shlex.split(line)[-1]).stem if line.split() else "?"
        log.warning("%s failed: %s", name, exc)
        return BenchRecord(name, "?", status=f"error: {exc}".replace("\n", " ")[:200])


def read_manifest(path) -> list[str]:
    lines = []
    for raw in Path(path).read_text().splitlines():
        s = raw.split("#", 1)[0].strip()
        if s:
            lines.append(s)
    return lines


def cmd_bench(args) -> int:
    lines = read_manifest(args.manifest)
    base = Path(args.manifest).resolve().parent
    defaults = []
    if args.solver_cmd:
        defaults += ["--solver-cmd", args.solver_cmd]
    if args.time_limit:
        defaults += ["--time-limit", str(args.time_limit)]
    defaults += ["--backend", args.backend]
    if args.jobs > 1 and len(lines) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            records = list(pool.map(_bench_one, lines, [base] * len(lines), [defaults] * len(lines)))
    else:
        records = [_bench_one(ln, base, defaults) for ln in lines]
    records.sort(key=lambda r: r.instance)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            write_csv(records, fh)
    else:
        write_csv(records, sys.stdout)
    failed = [r for r in records if r.status.startswith("error")]
    if failed:
        print(f"warning: {len(failed)} instance(s) failed", file=sys.stderr)
    for kind in sorted({r.kind for r in records if not r.status.startswith("error")}):
        rows = [r for r in records if r.kind == kind and r.t_tot is not None]
        mean = sum(r.t_tot for r in rows) / len(rows)
        print(f"{kind}: {len(rows)} instances, mean t_tot {mean:.3f}s", file=sys.stderr)
    return 0


# ------------------------------------------------------------ gen-divisible

def proper_divisors(W: int) -> list[int]:
    return [d for d in range(1, W) if W % d == 0]


def gen_divisible(seed: int, m: int, W: int, max_demand: int = 10) -> VbpInstance:
    """Random one-dimensional instance whose sizes are distinct proper divisors of W."""
    if W < 2:
        raise ValueError("W must be at least 2")
    rng = random.Random(seed)
    divs = proper_divisors(W)
    sizes = sorted(rng.sample(divs, min(m, len(divs))), reverse=True)
    items = tuple(ItemType((s,), rng.randint(1, max_demand), str(k + 1))
                  for k, s in enumerate(sizes))
    return VbpInstance((W,), items, name=f"div_{W}_{m}_{seed}")


def cmd_gen_divisible(args) -> int:
    inst = gen_divisible(args.seed, args.m, args.W, args.max_demand)
    text = dumps_instance(inst, "bpp")
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# ------------------------------------------------------------------- parser

def _problem_flags(p):
    kind = p.add_mutually_exclusive_group()
    for k in KINDS:
        kind.add_argument(f"--{k}", dest="kind", action="store_const", const=k)
    p.set_defaults(kind="vbp")
    p.add_argument("--card", type=int, metavar="C", help="at most C items per bin")
    p.add_argument("--binary", action="store_true", help="at most one copy of an item per bin")
    p.add_argument("--conflicts", metavar="FILE", help="DIMACS graph of conflicting items")
    p.add_argument("--mode", choices=reduce.COLORING_MODES, default=reduce.DEGREE)
    p.add_argument("--exact", metavar="J", default="auto",
                   help="equality demand rows: auto (demand-one items), all, none, or e.g. 1,3")
    p.add_argument("--reference-pipeline", action="store_true",
                   help="also build the step-1..4 graphs for compression ratios")
    p.add_argument("--max-states", type=int, default=DEFAULT_STATE_BUDGET)


def _solver_flags(p):
    p.add_argument("--solver-cmd", metavar="TEMPLATE",
                   help=f"solver command with {{model}} {{solution}} {{time_limit}} {{threads}}; "
                        f"default from ${SOLVER_ENV}")
    p.add_argument("--backend", choices=("cbc", "highs"), default=os.environ.get("ARCFLOW_BACKEND", "cbc"))
    p.add_argument("--time-limit", type=float, metavar="S")
    p.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="arcflow", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one instance")
    s.add_argument("instance")
    _problem_flags(s)
    _solver_flags(s)
    s.add_argument("--format", choices=("lp", "mps"), default="mps")
    s.add_argument("--oracle", action="store_true", help="cross-check with the exhaustive oracle")
    s.add_argument("--accept-feasible", action="store_true")
    s.add_argument("--workdir")
    s.add_argument("--model-out", metavar="FILE", help="keep the model file (plus FILE.map)")
    s.add_argument("-o", "--output", metavar="FILE", help="solution file (default stdout)")
    s.add_argument("--csv", metavar="FILE", help="append a result row")
    s.set_defaults(func=cmd_solve)

    g = sub.add_parser("graph-stats", help="graph sizes per construction stage")
    g.add_argument("instance")
    _problem_flags(g)
    g.set_defaults(func=cmd_graph_stats)

    b = sub.add_parser("bench", help="solve every manifest line, write CSV")
    b.add_argument("manifest")
    _solver_flags(b)
    b.add_argument("-j", "--jobs", type=int, default=1)
    b.add_argument("--csv", metavar="FILE")
    b.set_defaults(func=cmd_bench)

    d = sub.add_parser("gen-divisible", help="random instance with sizes dividing W")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--m", type=int, default=5)
    d.add_argument("--W", type=int, default=60)
    d.add_argument("--max-demand", type=int, default=10)
    d.add_argument("-o", "--output")
    d.set_defaults(func=cmd_gen_divisible)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
