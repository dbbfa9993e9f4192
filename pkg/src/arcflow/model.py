"""Solver-agnostic MILP container, the arc-flow and assignment models, and LP/MPS writers."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .errors import ConsistencyError, ValidationError
from .flowgraph import LOSS, ArcFlowGraph
from .instance import VbpInstance

INF = math.inf
SENSES = ("<=", ">=", "=")
LP_TOL = 1e-6


@dataclass
class Variable:
    name: str
    lb: float = 0
    ub: float = INF
    integer: bool = False


@dataclass
class Constraint:
    name: str
    coefs: list[tuple[str, float]]
    sense: str
    rhs: float


@dataclass
class MilpModel:
    """Minimization model.  ``annotation`` maps flow variable names to arc indices."""

    name: str = "model"
    variables: list[Variable] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    objective: dict[str, float] = field(default_factory=dict)
    annotation: dict[str, int] = field(default_factory=dict)
    labels: dict[str, tuple] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self._names: dict[str, int] = {}

    def add_var(self, name, lb=0, ub=INF, integer=False) -> Variable:
        if name in self._names:
            raise ValidationError(f"duplicate variable {name}")
        self._names[name] = len(self.variables)
        var = Variable(name, lb, ub, integer)
        self.variables.append(var)
        return var

    def add_row(self, name, coefs, sense, rhs) -> Constraint:
        if sense not in SENSES:
            raise ValueError(f"bad sense {sense!r}")
        row = Constraint(name, [(v, c) for v, c in coefs if c != 0], sense, rhs)
        self.constraints.append(row)
        return row

    def var_index(self, name: str) -> int:
        return self._names[name]

    def check(self) -> None:
        rows = set()
        for row in self.constraints:
            if row.name in rows or row.name in self._names:
                raise ValidationError(f"duplicate name {row.name}")
            rows.add(row.name)
            for v, _ in row.coefs:
                if v not in self._names:
                    raise ValidationError(f"row {row.name} uses undeclared variable {v}")

    def row_activity(self, row: Constraint, values: dict) -> object:
        return sum(c * values.get(v, 0) for v, c in row.coefs)

    def violations(self, values: dict, tol=0) -> list[str]:
        """Rows and bounds broken by ``values``; exact when the values are integers."""
        bad = []
        for var in self.variables:
            x = values.get(var.name, 0)
            if x < var.lb - tol or x > var.ub + tol:
                bad.append(f"{var.name}={x} outside [{var.lb}, {var.ub}]")
        for row in self.constraints:
            act = self.row_activity(row, values)
            if ((row.sense == "<=" and act > row.rhs + tol)
                    or (row.sense == ">=" and act < row.rhs - tol)
                    or (row.sense == "=" and abs(act - row.rhs) > tol)):
                bad.append(f"{row.name}: {act} {row.sense} {row.rhs} violated")
        return bad


# ---------------------------------------------------------------- builders

def flow_var(g: ArcFlowGraph, k: int) -> str:
    u, v, i = g.arcs[k]
    return f"F_{u}_{v}_{i}"


def demand_row(i: int) -> str:
    """Demand row name of 0-based item i."""
    return f"D_{i + 1}"


def build_arcflow_model(g: ArcFlowGraph, inst: VbpInstance, name="arcflow") -> MilpModel:
    """Minimize z subject to flow conservation, demand rows and item-arc bounds."""
    if g.m != inst.m:
        raise ValidationError(f"graph has {g.m} items, instance has {inst.m}")
    mdl = MilpModel(name)
    demands = inst.demands
    for k, (u, v, i) in enumerate(g.arcs):
        vname = flow_var(g, k)
        mdl.add_var(vname, 0, demands[i - 1] if i != LOSS else INF, integer=True)
        mdl.annotation[vname] = k
        mdl.labels[vname] = (g.labels[u], g.labels[v], i)
    mdl.add_var("Z", 0, inst.n, integer=True)
    mdl.objective = {"Z": 1}

    inflow = [[] for _ in range(g.num_nodes)]
    outflow = [[] for _ in range(g.num_nodes)]
    per_item = [[] for _ in range(inst.m)]
    for k, (u, v, i) in enumerate(g.arcs):
        outflow[u].append(flow_var(g, k))
        inflow[v].append(flow_var(g, k))
        if i != LOSS:
            per_item[i - 1].append(flow_var(g, k))
    for node in range(g.num_nodes):
        coefs = [(f, 1) for f in inflow[node]] + [(f, -1) for f in outflow[node]]
        if node == g.source:
            coefs.append(("Z", 1))
        elif node == g.target:
            coefs.append(("Z", -1))
        mdl.add_row(f"N_{node}", coefs, "=", 0)
    for i, b in enumerate(demands):
        if not per_item[i]:
            msg = f"item {i + 1} has no arc in the graph; its demand row is infeasible"
            mdl.warnings.append(msg)
            warnings.warn(msg, stacklevel=2)
        sense = "=" if i in inst.j_exact else ">="
        mdl.add_row(demand_row(i), [(f, 1) for f in per_item[i]], sense, b)
    return mdl


def first_fit_decreasing(inst: VbpInstance) -> list[list[int]]:
    """Bins of 0-based item indices, items taken by decreasing normalized size."""
    from .instance import canonical_order

    bins: list[list[int]] = []
    loads: list[list[int]] = []
    for i in canonical_order(inst).permutation:
        w = inst.items[i].weights
        for _ in range(inst.items[i].demand):
            for bi, load in enumerate(loads):
                if all(l + x <= c for l, x, c in zip(load, w, inst.capacities)):
                    bins[bi].append(i)
                    loads[bi] = [l + x for l, x in zip(load, w)]
                    break
            else:
                bins.append([i])
                loads.append(list(w))
    return bins


def build_assignment_model(inst: VbpInstance, K: int | None = None,
                           name="assignment") -> MilpModel:
    """Assignment model with K candidate bins and one knapsack row per bin and dimension."""
    if K is None:
        K = len(first_fit_decreasing(inst))
    if K < 1:
        raise ValidationError(f"K must be >= 1, got {K}")
    mdl = MilpModel(name)
    for k in range(1, K + 1):
        mdl.add_var(f"Y_{k}", 0, 1, integer=True)
    for i, it in enumerate(inst.items, start=1):
        for k in range(1, K + 1):
            mdl.add_var(f"X_{i}_{k}", 0, it.demand, integer=True)
    mdl.objective = {f"Y_{k}": 1 for k in range(1, K + 1)}
    for i, it in enumerate(inst.items, start=1):
        mdl.add_row(f"D_{i}", [(f"X_{i}_{k}", 1) for k in range(1, K + 1)], ">=", it.demand)
    for k in range(1, K + 1):
        for d, cap in enumerate(inst.capacities):
            coefs = [(f"X_{i}_{k}", it.weights[d]) for i, it in enumerate(inst.items, start=1)]
            coefs.append((f"Y_{k}", -cap))
            mdl.add_row(f"K_{k}_{d + 1}", coefs, "<=", 0)
    return mdl


# ----------------------------------------------------------------- writers

def _num(x) -> str:
    if isinstance(x, Fraction):
        x = x.numerator if x.denominator == 1 else float(x)
    if isinstance(x, float) and x.is_integer() and abs(x) < 2**53:
        x = int(x)
    if isinstance(x, int):
        return str(x)
    return format(x, ".15g")


def _columns(mdl: MilpModel):
    """Per-variable (row, coef) lists in declaration order."""
    cols = {v.name: [] for v in mdl.variables}
    for v, c in mdl.objective.items():
        if c:
            cols[v].append(("OBJ", c))
    for row in mdl.constraints:
        for v, c in row.coefs:
            cols[v].append((row.name, c))
    return cols


def fits_fixed_mps(mdl: MilpModel) -> bool:
    names = [v.name for v in mdl.variables] + [r.name for r in mdl.constraints] + [mdl.name]
    return all(len(n) <= 8 and " " not in n for n in names)


def dumps_mps(mdl: MilpModel, free: bool | None = None) -> str:
    """MPS text.  Fixed columns when every name fits 8 characters, free MPS otherwise."""
    mdl.check()
    if free is None:
        free = not fits_fixed_mps(mdl)
        if free:
            warnings.warn(f"model {mdl.name}: names exceed 8 characters, writing free MPS",
                          stacklevel=2)

    def line(code, n1, n2="", v2="", n3="", v3=""):
        if free:
            return " " + " ".join(t for t in (code, n1, n2, v2, n3, v3) if t)
        s = f" {code:<2} {n1:<8}  {n2:<8}  {v2:>12}"
        if n3:
            s += f"   {n3:<8}  {v3:>12}"
        return s.rstrip()

    kind = {"<=": "L", ">=": "G", "=": "E"}
    # the FREE keyword stops readers from guessing fixed columns on short lines
    head = f"NAME {mdl.name} FREE" if free else f"NAME          {mdl.name}"
    out = [head, "ROWS", " N  OBJ"]
    out += [f" {kind[r.sense]}  {r.name}" for r in mdl.constraints]
    out.append("COLUMNS")
    in_int = False
    def marker(tag):
        if free:
            return f" M{tag} 'MARKER' '{tag}'"
        return line("", f"M{tag}", "'MARKER'", "", f"'{tag}'")

    for var, entries in _columns(mdl).items():
        vdef = mdl.variables[mdl.var_index(var)]
        if vdef.integer != in_int:
            out.append(marker("INTORG" if vdef.integer else "INTEND"))
            in_int = vdef.integer
        if not entries:
            entries = [("OBJ", 0)]
        for a in range(0, len(entries), 2):
            (r1, c1), *rest = entries[a:a + 2]
            if rest:
                out.append(line("", var, r1, _num(c1), rest[0][0], _num(rest[0][1])))
            else:
                out.append(line("", var, r1, _num(c1)))
    if in_int:
        out.append(marker("INTEND"))
    out.append("RHS")
    for row in mdl.constraints:
        if row.rhs != 0:
            out.append(line("", "RHS", row.name, _num(row.rhs)))
    if all(r.rhs == 0 for r in mdl.constraints):
        out.append(line("", "RHS", "OBJ", "0"))
    out.append("BOUNDS")
    for v in mdl.variables:
        if v.lb != 0:
            out.append(line("LO" if v.lb != -INF else "MI", "BND", v.name,
                            _num(v.lb) if v.lb != -INF else ""))
        if v.ub == INF:
            out.append(line("PL", "BND", v.name))
        else:
            out.append(line("UP", "BND", v.name, _num(v.ub)))
    out.append("ENDATA")
    return "\n".join(out) + "\n"


def _lp_expr(coefs) -> list[str]:
    terms = []
    for v, c in coefs:
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        terms.append(f"{sign} {v}" if mag == 1 else f"{sign} {_num(mag)} {v}")
    return terms


def _wrap(head: str, terms: list[str], tail: str) -> list[str]:
    lines, cur = [], head
    for t in terms + [tail]:
        if len(cur) + len(t) + 1 > 250:
            lines.append(cur)
            cur = "   "
        cur += " " + t
    lines.append(cur)
    return lines


def dumps_lp(mdl: MilpModel) -> str:
    """CPLEX LP text."""
    mdl.check()
    out = [f"\\ {mdl.name}", "Minimize"]
    obj = _lp_expr([(v, c) for v, c in mdl.objective.items() if c]) or ["0 " + mdl.variables[0].name]
    out += _wrap(" obj:", obj, "")
    out.append("Subject To")
    for row in mdl.constraints:
        terms = _lp_expr(row.coefs) or [f"0 {mdl.variables[0].name}"]
        out += _wrap(f" {row.name}:", terms, f"{row.sense} {_num(row.rhs)}")
    out.append("Bounds")
    for v in mdl.variables:
        lo = "-inf" if v.lb == -INF else _num(v.lb)
        hi = "+inf" if v.ub == INF else _num(v.ub)
        out.append(f" {lo} <= {v.name} <= {hi}")
    ints = [v.name for v in mdl.variables if v.integer]
    if ints:
        out.append("General")
        out += _wrap("", ints, "")
    out.append("End")
    return "\n".join(line.rstrip() for line in out) + "\n"


def write_model(mdl: MilpModel, path, format: str = "mps") -> Path:
    path = Path(path)
    if format == "mps":
        path.write_text(dumps_mps(mdl))
    elif format == "lp":
        path.write_text(dumps_lp(mdl))
    else:
        raise ValueError(f"unknown model format {format!r}")
    return path


def dumps_annotation(mdl: MilpModel) -> str:
    """One line per flow variable: name, tail label, head label, item."""
    lines = []
    for name, (tail, head, item) in mdl.labels.items():
        lines.append(f"{name} {','.join(map(str, tail))} {','.join(map(str, head))} {item}")
    return "\n".join(lines) + ("\n" if lines else "")


def write_annotation(mdl: MilpModel, path) -> Path:
    path = Path(path)
    path.write_text(dumps_annotation(mdl))
    return path


# ------------------------------------------------------------ bound report

IP, IRUP, MIRUP, NON_MIRUP = "IP", "IRUP", "MIRUP", "NON-MIRUP"


@dataclass(frozen=True)
class BoundReport:
    z_lp: object
    z_ip: int
    gap: object
    classification: str

    @property
    def ceil_lp(self) -> int:
        return _ceil_tol(self.z_lp)


def _ceil_tol(z, tol=LP_TOL) -> int:
    r = round(z)
    if abs(z - r) <= tol:
        return int(r)
    return math.ceil(z)


def lp_bound_report(z_lp, z_ip: int, tol: float = LP_TOL) -> BoundReport:
    """Classify an optimum against its linear relaxation bound."""
    if z_ip < z_lp - tol:
        raise ConsistencyError(f"integer optimum {z_ip} is below the LP bound {z_lp}")
    near = abs(z_lp - round(z_lp)) <= tol
    c = _ceil_tol(z_lp, tol)
    if near and z_ip == c:
        cls = IP
    elif z_ip == c:
        cls = IRUP
    elif z_ip == c + 1:
        cls = MIRUP
    else:
        cls = NON_MIRUP
    return BoundReport(z_lp, int(z_ip), z_ip - z_lp, cls)
