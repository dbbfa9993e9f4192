"""Running models through MILP/LP solvers, column generation, and an exact search oracle.

Two backends read the same model file: ``cbc`` runs an external CBC
executable through a command template, ``highs`` loads the file into the
HiGHS library in-process.
"""
from __future__ import annotations

import logging
import math
import os
import re
import shlex
import shutil
import subprocess
import tempfile
import time
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import BudgetExceeded, ConsistencyError, SolverError
from .flowgraph import ArcFlowGraph, pattern_counts, price_min_reduced_cost
from .instance import VbpInstance
from .model import MilpModel, demand_row, write_model

log = logging.getLogger(__name__)

SOLVER_ENV = "ARCFLOW_SOLVER_CMD"
CBC_ENV = "ARCFLOW_CBC"
INT_TOL = 1e-4
OPTIMAL, FEASIBLE, INFEASIBLE, TIMEOUT, ERROR = "optimal", "feasible", "infeasible", "timeout", "error"

CBC_MILP = ("{cbc} {model} -sec {time_limit} -allowableGap {gap_abs} -ratioGap {gap_rel} "
            "-threads {threads} -solve -solu {solution}")
CBC_LP = "{cbc} {model} -sec {time_limit} -initialSolve -printingOptions all -solu {solution}"


def find_cbc() -> str | None:
    """CBC executable from the environment, the PATH, or the copy bundled with PuLP."""
    exe = os.environ.get(CBC_ENV) or shutil.which("cbc")
    if exe:
        return exe
    try:
        import pulp
    except ImportError:
        return None
    path = Path(pulp.__file__).parent / "solverdir" / "cbc" / "linux" / "i64" / "cbc"
    return str(path) if path.exists() else None


@dataclass
class SolverConfig:
    backend: str = "cbc"
    command: str | None = None  # template with {model} {solution} {time_limit} {threads}
    time_limit: float | None = None
    gap_abs: float = 1 - 1e-5
    gap_rel: float = 0.0
    threads: int = 1
    workdir: str | None = None
    format: str = "mps"

    def __post_init__(self):
        if self.time_limit is not None and self.time_limit <= 0:
            raise ValueError("time limit must be positive")
        if self.command is None:
            self.command = os.environ.get(SOLVER_ENV) or None


@dataclass
class SolveStats:
    t_pp: float | None = None
    t_lp: float | None = None
    t_ip: float | None = None
    n_bb: int | None = None
    t_tot: float | None = None


@dataclass
class FlowSolution:
    status: str
    objective: int | None
    values: dict[str, int] = field(default_factory=dict)
    best_bound: float | None = None
    stats: SolveStats = field(default_factory=SolveStats)
    output: str = ""

    @property
    def gap(self):
        if self.objective is None or self.best_bound is None:
            return None
        return self.objective - self.best_bound


@dataclass
class LpSolution:
    status: str
    objective: float | None
    values: dict[str, float] = field(default_factory=dict)
    duals: dict[str, float] = field(default_factory=dict)
    seconds: float = 0.0
    output: str = ""

    def item_duals(self, m: int) -> list[float]:
        return [self.duals.get(demand_row(i), 0.0) for i in range(m)]


# ------------------------------------------------------------- CBC parsing

_CBC_STATUS = [
    ("optimal", OPTIMAL),
    ("integer infeasible", INFEASIBLE),
    ("infeasible", INFEASIBLE),
    ("unbounded", ERROR),
    ("stopped", TIMEOUT),
]


def parse_cbc_solution(text: str) -> tuple[str, float | None, list[tuple[str, float, float]]]:
    """Status, objective and ``(name, value, dual)`` entries of a CBC solution file."""
    lines = text.splitlines()
    if not lines:
        raise SolverError("empty solution file")
    head = lines[0].strip()
    low = head.lower()
    status = next((s for key, s in _CBC_STATUS if low.startswith(key)), None)
    if status is None:
        raise SolverError(f"unrecognized solution header {head!r}", output=text)
    obj = None
    m = re.search(r"objective value\s+(\S+)", head)
    if m:
        obj = float(m.group(1))
    entries = []
    for ln in lines[1:]:
        parts = ln.replace("**", " ").split()
        if len(parts) < 3:
            continue
        try:
            entries.append((parts[1], float(parts[2]), float(parts[3]) if len(parts) > 3 else 0.0))
        except (ValueError, IndexError):
            raise SolverError(f"unparsable solution line {ln!r}", output=text)
    return status, obj, entries


def _grab(pattern, text, conv=float):
    m = re.search(pattern, text)
    return conv(m.group(1)) if m else None


def _cbc_command(template: str, cfg: SolverConfig, model: Path, solution: Path) -> list[str]:
    exe = find_cbc()
    if "{cbc}" in template and exe is None:
        raise SolverError("no CBC executable found; set ARCFLOW_CBC or --solver-cmd")
    limit = cfg.time_limit if cfg.time_limit is not None else 1e8
    text = template.format(cbc=shlex.quote(exe or "cbc"), model=shlex.quote(str(model)),
                           solution=shlex.quote(str(solution)), time_limit=limit,
                           threads=cfg.threads, gap_abs=cfg.gap_abs, gap_rel=cfg.gap_rel)
    return shlex.split(text)


def _run(cmd: list[str], cwd) -> str:
    try:
        proc = subprocess.run(cmd, cwd=cwd, capture_output=True, text=True)
    except OSError as exc:
        raise SolverError(f"cannot run solver: {exc}") from None
    out = proc.stdout + proc.stderr
    if proc.returncode != 0:
        raise SolverError(f"solver exited with code {proc.returncode}", output=out)
    return out


class _Workdir:
    def __init__(self, cfg: SolverConfig):
        self.cfg = cfg

    def __enter__(self) -> Path:
        if self.cfg.workdir:
            Path(self.cfg.workdir).mkdir(parents=True, exist_ok=True)
            self._tmp = None
            return Path(self.cfg.workdir)
        self._tmp = tempfile.TemporaryDirectory(prefix="arcflow-")
        return Path(self._tmp.name)

    def __exit__(self, *exc):
        if self._tmp is not None:
            self._tmp.cleanup()


def _model_file(mdl: MilpModel, wd: Path, cfg: SolverConfig, path) -> Path:
    if path is not None:
        return Path(path)
    target = wd / f"{mdl.name}.{cfg.format}"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return write_model(mdl, target, cfg.format)


# ------------------------------------------------------------ integrality

def _integral(mdl: MilpModel, raw: dict[str, float]) -> dict[str, int]:
    """Round to integers within INT_TOL and re-check every row exactly."""
    values = {}
    for var in mdl.variables:
        x = raw.get(var.name, 0.0)
        r = round(x)
        if var.integer and abs(x - r) > INT_TOL:
            raise ConsistencyError(f"{var.name} = {x} is not integral within {INT_TOL}")
        values[var.name] = int(r)
    bad = mdl.violations(values)
    if bad:
        raise ConsistencyError("rounded solution violates the model: " + "; ".join(bad[:5]))
    return {k: v for k, v in values.items() if v}


# ------------------------------------------------------------------- MILP

def solve_milp(mdl: MilpModel, cfg: SolverConfig | None = None, path=None) -> FlowSolution:
    """Solve ``mdl`` (written to ``path`` or a scratch file) to integer optimality."""
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    with _Workdir(cfg) as wd:
        model = _model_file(mdl, wd, cfg, path)
        if cfg.backend == "highs":
            sol = _highs_milp(mdl, model, cfg)
        elif cfg.backend == "cbc":
            sol = _cbc_milp(mdl, model, cfg, wd)
        else:
            raise ValueError(f"unknown backend {cfg.backend!r}")
    sol.stats.t_tot = time.perf_counter() - t0
    if sol.stats.t_lp is not None and sol.stats.t_ip is None:
        sol.stats.t_ip = max(0.0, sol.stats.t_tot - sol.stats.t_lp)
    return sol


def _objective(mdl: MilpModel, values) -> int:
    return int(round(sum(c * values.get(v, 0) for v, c in mdl.objective.items())))


def _sane_bound(mdl: MilpModel, bound):
    """Drop bounds above the largest attainable objective (CBC prints these when interrupted)."""
    if bound is None:
        return None
    ub = {v.name: v.ub for v in mdl.variables}
    top = sum(c * ub[v] for v, c in mdl.objective.items() if c > 0)
    return None if bound > top + INT_TOL else bound


def _cbc_milp(mdl, model: Path, cfg: SolverConfig, wd: Path, retry=True) -> FlowSolution:
    solution = wd / (model.stem + ".sol")
    if solution.exists():
        solution.unlink()
    out = _run(_cbc_command(cfg.command or CBC_MILP, cfg, model, solution), wd)
    if "Pre-processing says infeasible" in out and retry and "preprocess" not in (cfg.command or ""):
        # CBC 2.10 preprocessing can misreport feasible arc-flow models as infeasible
        log.warning("CBC preprocessing reported infeasibility; retrying with preprocessing off")
        alt = SolverConfig(**{**cfg.__dict__, "command": CBC_MILP.replace("-solve", "-preprocess off -solve")})
        sol = _cbc_milp(mdl, model, alt, wd, retry=False)
        sol.output = out + sol.output
        return sol
    if not solution.exists():
        raise SolverError("solver produced no solution file", output=out)
    status, obj, entries = parse_cbc_solution(solution.read_text())
    stats = SolveStats(t_lp=_grab(r"Continuous objective value is \S+ - (\S+) seconds", out),
                       n_bb=_grab(r"Enumerated nodes:\s+(\d+)", out, int))
    bound = _grab(r"Lower bound:\s+(\S+)", out)
    if bound is None:
        bound = _grab(r"Continuous objective value is (\S+)", out)
    bound = _sane_bound(mdl, bound)
    if status == INFEASIBLE:
        return FlowSolution(INFEASIBLE, None, best_bound=None, stats=stats, output=out)
    if status == ERROR:
        raise SolverError("solver reported an unbounded model", output=out)
    raw = {name: val for name, val, _ in entries}
    if status == TIMEOUT:
        if "No feasible solution found" in out or "Stopped on iterations" in solution.read_text():
            return FlowSolution(TIMEOUT, None, best_bound=bound, stats=stats, output=out)
        try:
            values = _integral(mdl, raw)
        except ConsistencyError:
            return FlowSolution(TIMEOUT, None, best_bound=bound, stats=stats, output=out)
        return FlowSolution(FEASIBLE, _objective(mdl, values), values, bound, stats, out)
    values = _integral(mdl, raw)
    z = _objective(mdl, values)
    if obj is not None and abs(z - obj) > INT_TOL:
        raise ConsistencyError(f"solver objective {obj} differs from recomputed {z}")
    # an optimal run closes the gap; the root LP value is kept separately in the CSV
    return FlowSolution(OPTIMAL, z, values, float(z), stats, out)


def _highs(model: Path, cfg: SolverConfig, relax=False):
    import highspy

    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    if h.readModel(str(model)) != highspy.HighsStatus.kOk:
        raise SolverError(f"HiGHS could not read {model}")
    if cfg.time_limit is not None:
        h.setOptionValue("time_limit", float(cfg.time_limit))
    h.setOptionValue("mip_abs_gap", float(cfg.gap_abs))
    h.setOptionValue("mip_rel_gap", float(cfg.gap_rel))
    h.setOptionValue("threads", int(cfg.threads))
    if relax:
        lp = h.getLp()
        lp.integrality_ = []
        h.passModel(lp)
    h.run()
    return h


def _highs_milp(mdl, model: Path, cfg) -> FlowSolution:
    import highspy

    t0 = time.perf_counter()
    h = _highs(model, cfg)
    elapsed = time.perf_counter() - t0
    ms = h.getModelStatus()
    info = h.getInfo()
    stats = SolveStats(n_bb=int(info.mip_node_count), t_ip=elapsed)
    bound = info.mip_dual_bound
    M = highspy.HighsModelStatus
    if ms == M.kInfeasible:
        return FlowSolution(INFEASIBLE, None, stats=stats)
    has_sol = info.primal_solution_status == 2
    names = h.getLp().col_names_
    raw = dict(zip(names, h.getSolution().col_value))
    if ms == M.kOptimal:
        values = _integral(mdl, raw)
        return FlowSolution(OPTIMAL, _objective(mdl, values), values, bound, stats)
    if ms in (M.kTimeLimit, M.kIterationLimit, M.kSolutionLimit, M.kInterrupt):
        if has_sol:
            values = _integral(mdl, raw)
            return FlowSolution(FEASIBLE, _objective(mdl, values), values, _sane_bound(mdl, bound), stats)
        return FlowSolution(TIMEOUT, None, best_bound=bound, stats=stats)
    raise SolverError(f"HiGHS finished with status {h.modelStatusToString(ms)}")


# --------------------------------------------------------------------- LP

def solve_lp_relaxation(mdl: MilpModel, cfg: SolverConfig | None = None, path=None) -> LpSolution:
    """Continuous relaxation with primal values and row duals."""
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    with _Workdir(cfg) as wd:
        model = _model_file(mdl, wd, cfg, path)
        if cfg.backend == "highs":
            h = _highs(model, cfg, relax=True)
            import highspy
            if h.getModelStatus() != highspy.HighsModelStatus.kOptimal:
                st = h.modelStatusToString(h.getModelStatus())
                return LpSolution(INFEASIBLE if "nfeasible" in st else ERROR, None)
            lp, sol = h.getLp(), h.getSolution()
            res = LpSolution(OPTIMAL, h.getInfo().objective_function_value,
                             dict(zip(lp.col_names_, sol.col_value)),
                             dict(zip(lp.row_names_, sol.row_dual)))
        elif cfg.backend == "cbc":
            res = _cbc_lp(mdl, model, cfg, wd)
        else:
            raise ValueError(f"unknown backend {cfg.backend!r}")
    res.seconds = time.perf_counter() - t0
    return res


def _cbc_lp(mdl: MilpModel, model: Path, cfg, wd: Path) -> LpSolution:
    solution = wd / (model.stem + ".lpsol")
    out = _run(_cbc_command(CBC_LP, cfg, model, solution), wd)
    status, obj, entries = parse_cbc_solution(solution.read_text())
    if status != OPTIMAL:
        return LpSolution(status, None, output=out)
    # rows come first, then columns; both sections restart their index at 0
    rows = {r.name for r in mdl.constraints}
    n_rows = len(mdl.constraints)
    duals = {name: dual for name, _, dual in entries[:n_rows] if name in rows}
    values = {name: val for name, val, _ in entries[n_rows:]}
    if len(duals) != n_rows:
        raise SolverError("row section of the LP solution does not match the model", output=out)
    return LpSolution(OPTIMAL, obj, values, duals, output=out)


# ---------------------------------------------------------- pattern LPs

def feasible_patterns(inst: VbpInstance, limit: int = 10**6) -> list[tuple[int, ...]]:
    """Every non-empty count vector y <= b that fits one bin, by exhaustive search."""
    caps = inst.capacities
    ws = inst.weights
    bs = inst.demands
    out = []

    def rec(i, load, counts):
        if i == inst.m:
            if any(counts):
                out.append(tuple(counts))
                if len(out) > limit:
                    raise BudgetExceeded(f"more than {limit} patterns", used=len(out))
            return
        k = 0
        cur = list(load)
        while True:
            counts.append(k)
            rec(i + 1, cur, counts)
            counts.pop()
            k += 1
            cur = [c + w for c, w in zip(cur, ws[i])]
            if k > bs[i] or any(c > W for c, W in zip(cur, caps)):
                break

    rec(0, [0] * inst.dim_count, [])
    return out


def pattern_lp(inst: VbpInstance, patterns: Sequence[Sequence[int]]) -> float:
    """Optimum of min sum(lambda) s.t. sum(a_p lambda_p) >= b over the given count vectors."""
    A = np.array(patterns, dtype=float).T
    res = linprog(np.ones(A.shape[1]), A_ub=-A, b_ub=-np.array(inst.demands, dtype=float),
                  bounds=(0, None), method="highs")
    if res.status != 0:
        raise SolverError(f"pattern LP failed: {res.message}")
    return float(res.fun)


@dataclass
class ColumnGenerationResult:
    z_lp: float
    iterations: int
    patterns: list[tuple[int, ...]]
    duals: list[float]

    def as_fraction(self, max_den=10**6) -> Fraction:
        return Fraction(self.z_lp).limit_denominator(max_den)


def column_generation_lp(inst: VbpInstance, g: ArcFlowGraph, cfg: SolverConfig | None = None,
                         max_iter: int = 10**5, tol: float = 1e-9) -> ColumnGenerationResult:
    """Restricted master over count vectors, priced by a longest path on ``g``."""
    m = inst.m
    b = np.array(inst.demands, dtype=float)
    cols = [tuple(1 if j == i else 0 for j in range(m)) for i in range(m)]
    seen = set(cols)
    for it in range(1, max_iter + 1):
        A = np.array(cols, dtype=float).T
        res = linprog(np.ones(len(cols)), A_ub=-A, b_ub=-b, bounds=(0, None), method="highs")
        if res.status != 0:
            raise SolverError(f"master LP failed: {res.message}")
        duals = [float(-x) for x in res.ineqlin.marginals]
        pattern, rc = price_min_reduced_cost(g, duals)
        col = pattern_counts(pattern, m)
        if rc >= -tol or col in seen:
            if rc < -tol:
                log.warning("pricing returned an existing column with reduced cost %g", rc)
            return ColumnGenerationResult(float(res.fun), it, cols, duals)
        cols.append(col)
        seen.add(col)
    raise BudgetExceeded(f"column generation did not converge in {max_iter} iterations",
                         used=max_iter)


# ---------------------------------------------------------------- oracle

def _lower_bound(inst: VbpInstance, rem: Sequence[int]) -> int:
    lb = 1 if any(rem) else 0
    for d, W in enumerate(inst.capacities):
        tot = sum(r * it.weights[d] for r, it in zip(rem, inst.items))
        lb = max(lb, -(-tot // W))
    return lb


def oracle_exact(inst: VbpInstance, budget: int = 10**6) -> tuple[int, list[tuple[int, ...]]]:
    """Minimum bin count by exhaustive cover search, plus one optimal list of count vectors.

    Each step packs a bin holding the first item with remaining demand, using
    only patterns that are maximal for the remaining demand.
    """
    caps = inst.capacities
    ws = inst.weights
    states = 1
    for b in inst.demands:
        states *= b + 1
    if states > budget:
        raise BudgetExceeded(f"oracle state space {states} exceeds budget {budget}", used=states)
    expanded = 0

    def patterns_for(rem):
        first = next(i for i, r in enumerate(rem) if r)
        found = []

        def rec(i, load, counts):
            if i == inst.m:
                if counts[first] == 0:
                    return
                for j in range(inst.m):  # maximal w.r.t. the remaining demand
                    if counts[j] < rem[j] and all(l + w <= c for l, w, c in zip(load, ws[j], caps)):
                        return
                found.append(tuple(counts))
                return
            k, cur = 0, list(load)
            while True:
                counts.append(k)
                rec(i + 1, cur, counts)
                counts.pop()
                k += 1
                cur = [c + w for c, w in zip(cur, ws[i])]
                if k > rem[i] or any(c > W for c, W in zip(cur, caps)):
                    break

        rec(0, [0] * len(caps), [])
        return found

    @lru_cache(maxsize=None)
    def best(rem):
        nonlocal expanded
        if not any(rem):
            return 0, ()
        expanded += 1
        if expanded > budget:
            raise BudgetExceeded("oracle budget exhausted", used=expanded)
        lb = _lower_bound(inst, rem)
        top, plan = math.inf, ()
        for pat in patterns_for(rem):
            nxt = tuple(r - p for r, p in zip(rem, pat))
            val, sub = best(nxt)
            if 1 + val < top:
                top, plan = 1 + val, (pat,) + sub
                if top == lb:
                    break
        return top, plan

    z, plan = best(tuple(inst.demands))
    return z, list(plan)


# ---------------------------------------------------------------- rounding

def round_lp_heuristic(flows: Sequence[float], g: ArcFlowGraph, inst: VbpInstance):
    """Round a fractional arc flow to a feasible packing.

    The flow is split into weighted paths, the restricted pattern LP over those
    paths is re-solved to a basic solution (at most m fractional columns),
    multiplicities are floored and then raised by decreasing fractional part
    until demands are met.  Returns ``(PackingSolution, bin count)``.
    """
    from .decode import decompose_fractional, to_bins

    paths = decompose_fractional(g, flows)
    pats = sorted({p for p, _ in paths})
    if not pats:
        raise ConsistencyError("LP flow carries no pattern")
    A = np.array([pattern_counts(p, inst.m) for p in pats], dtype=float).T
    res = linprog(np.ones(len(pats)), A_ub=-A, b_ub=-np.array(inst.demands, dtype=float),
                  bounds=(0, None), method="highs-ds")
    lam = res.x if res.status == 0 else np.array([sum(w for q, w in paths if q == p) for p in pats])
    mult = [int(math.floor(x + 1e-9)) for x in lam]
    frac = sorted(((x - math.floor(x + 1e-9), k) for k, x in enumerate(lam)), reverse=True)
    cover = A @ np.array(mult, dtype=float)
    need = np.array(inst.demands, dtype=float)
    for f, k in frac:
        if np.all(cover >= need - 1e-9):
            break
        if f > 1e-9 and np.any((A[:, k] > 0) & (cover < need - 1e-9)):
            mult[k] += 1
            cover += A[:, k]
    chosen = [(p, c) for p, c in zip(pats, mult) if c]
    for i in range(inst.m):  # safety net; not reached for a basic LP solution
        short = int(round(need[i] - cover[i]))
        if short > 0:
            chosen.append(((i,), short))
    sol = to_bins(chosen, inst)
    return sol, sol.objective
