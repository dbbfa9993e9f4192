"""Vector packing instances: data model, canonical ordering and text formats.

Item indices are 0-based everywhere in this module.  Arc-flow graphs use
1-based item numbers on arcs so that 0 can denote a loss arc.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ParseError, ValidationError

INT64_MAX = 2**63 - 1


@dataclass(frozen=True)
class ItemType:
    weights: tuple[int, ...]
    demand: int
    external_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(int(w) for w in self.weights))
        object.__setattr__(self, "demand", int(self.demand))


@dataclass(frozen=True)
class VbpInstance:
    """A p-dimensional vector packing instance with m item types.

    ``j_exact`` holds the indices of items whose demand rows are equalities
    in the arc-flow model.  When not given it defaults to the items with
    demand one.
    """

    capacities: tuple[int, ...]
    items: tuple[ItemType, ...]
    j_exact: frozenset[int] | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "capacities", tuple(int(c) for c in self.capacities))
        object.__setattr__(self, "items", tuple(self.items))
        if self.j_exact is None:
            object.__setattr__(self, "j_exact", default_j_exact(self.items))
        else:
            object.__setattr__(self, "j_exact", frozenset(int(i) for i in self.j_exact))
        self.validate()

    @property
    def dim_count(self) -> int:
        return len(self.capacities)

    @property
    def m(self) -> int:
        return len(self.items)

    @property
    def n(self) -> int:
        """Total number of item copies."""
        return sum(it.demand for it in self.items)

    @property
    def weights(self) -> list[tuple[int, ...]]:
        return [it.weights for it in self.items]

    @property
    def demands(self) -> list[int]:
        return [it.demand for it in self.items]

    def validate(self) -> None:
        p = len(self.capacities)
        if p < 1:
            raise ValidationError("instance needs at least one dimension")
        if any(c <= 0 for c in self.capacities):
            raise ValidationError(f"capacities must be positive: {self.capacities}")
        if not self.items:
            raise ValidationError("instance has no items")
        for idx, it in enumerate(self.items):
            label = _item_label(idx, it)
            if len(it.weights) != p:
                raise ValidationError(
                    f"{label} has {len(it.weights)} weights, expected {p}")
            if any(w < 0 for w in it.weights):
                raise ValidationError(f"{label} has a negative weight")
            if not any(it.weights):
                raise ValidationError(f"{label} has an all-zero weight vector")
            if it.demand < 1:
                raise ValidationError(f"{label} has non-positive demand {it.demand}")
            if it.demand > INT64_MAX:
                raise ValidationError(f"{label} demand exceeds 64-bit range")
            for d, (w, cap) in enumerate(zip(it.weights, self.capacities)):
                if w > cap:
                    raise ValidationError(
                        f"{label} does not fit in an empty bin: weight {w} > "
                        f"capacity {cap} in dimension {d + 1}")
        bad = [j for j in self.j_exact if not 0 <= j < len(self.items)]
        if bad:
            raise ValidationError(f"j_exact holds unknown item indices {sorted(bad)}")

    def with_items(self, items, capacities=None, j_exact=None) -> "VbpInstance":
        return VbpInstance(
            capacities=self.capacities if capacities is None else capacities,
            items=items, j_exact=j_exact, name=self.name)


def _item_label(idx: int, it: ItemType) -> str:
    if it.external_id:
        return f"item {idx + 1} ({it.external_id})"
    return f"item {idx + 1}"


def default_j_exact(items: Iterable[ItemType]) -> frozenset[int]:
    return frozenset(i for i, it in enumerate(items) if it.demand == 1)


def make_instance(capacities, weights, demands, name="", j_exact=None) -> VbpInstance:
    """Build an instance from plain sequences; scalar weights mean p = 1."""
    if isinstance(capacities, int):
        capacities = (capacities,)
    items = []
    for k, (w, b) in enumerate(zip(weights, demands)):
        if isinstance(w, int):
            w = (w,)
        items.append(ItemType(tuple(w), b, str(k + 1)))
    if len(items) != len(list(demands)):
        raise ValidationError("weights and demands differ in length")
    return VbpInstance(tuple(capacities), tuple(items), j_exact=j_exact, name=name)


# ---------------------------------------------------------------- ordering

@dataclass(frozen=True)
class CanonicalOrder:
    permutation: tuple[int, ...]
    alpha: tuple[Fraction, ...]

    def rank_of(self) -> list[int]:
        ranks = [0] * len(self.permutation)
        for r, i in enumerate(self.permutation):
            ranks[i] = r
        return ranks


def item_alpha(weights: Sequence[int], capacities: Sequence[int]) -> Fraction:
    return sum((Fraction(w, c) for w, c in zip(weights, capacities)), Fraction(0))


def canonical_order(inst: VbpInstance) -> CanonicalOrder:
    """Rank items by decreasing normalized weight sum, ties by decreasing weights.

    Equal weight vectors keep their original relative order.
    """
    alpha = tuple(item_alpha(it.weights, inst.capacities) for it in inst.items)
    perm = sorted(range(inst.m),
                  key=lambda i: (-alpha[i], tuple(-w for w in inst.items[i].weights), i))
    return CanonicalOrder(tuple(perm), alpha)


def scale_demands(inst: VbpInstance, factor: int) -> VbpInstance:
    if factor < 1:
        raise ValidationError(f"scale factor must be >= 1, got {factor}")
    items = []
    for it in inst.items:
        b = it.demand * factor
        if b > INT64_MAX:
            raise OverflowError(
                f"demand {it.demand} x {factor} overflows a 64-bit integer")
        items.append(ItemType(it.weights, b, it.external_id))
    return VbpInstance(inst.capacities, tuple(items), j_exact=None, name=inst.name)


# ------------------------------------------------------------------ parsing

def _tokens(text: str):
    """Yield (line number, [ints]) for every non-blank, non-comment line."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            yield lineno, [int(tok) for tok in line.split()]
        except ValueError:
            raise ParseError(f"non-integer token in line {raw.strip()!r}", line=lineno)


def _take(lines, what, count=None):
    try:
        lineno, vals = next(lines)
    except StopIteration:
        raise ParseError(f"unexpected end of file, expected {what}")
    if count is not None and len(vals) != count:
        raise ParseError(f"expected {count} integer(s) for {what}, got {len(vals)}",
                         line=lineno)
    return lineno, vals


def loads_instance(text: str, format: str = "vbp", name: str = "") -> VbpInstance:
    lines = iter(list(_tokens(text)))
    if format == "vbp":
        _, (p,) = _take(lines, "dimension count", 1)
        if p < 1:
            raise ParseError("dimension count must be >= 1", line=1)
        _, caps = _take(lines, "capacities", p)
        lineno, (m,) = _take(lines, "item count", 1)
        width = p + 1
    elif format in ("bpp", "csp"):
        lineno, (m,) = _take(lines, "item count", 1)
        _, caps = _take(lines, "capacity", 1)
        width = 2
    else:
        raise ValueError(f"unknown instance format {format!r}")
    if m < 1:
        raise ParseError("item count must be >= 1", line=lineno)
    items = []
    for k in range(m):
        lineno, vals = _take(lines, f"item {k + 1}", width)
        items.append(ItemType(tuple(vals[:-1]), vals[-1], str(k + 1)))
    extra = next(lines, None)
    if extra is not None:
        raise ParseError("trailing data after the last item", line=extra[0])
    return VbpInstance(tuple(caps), tuple(items), name=name)


def parse_instance(path, format: str = "vbp") -> VbpInstance:
    path = Path(path)
    try:
        return loads_instance(path.read_text(), format, name=path.stem)
    except ParseError as exc:
        raise ParseError(exc.message, line=exc.line, path=path) from None


def dumps_instance(inst: VbpInstance, format: str = "vbp") -> str:
    out = []
    if format == "vbp":
        out.append(str(inst.dim_count))
        out.append(" ".join(map(str, inst.capacities)))
        out.append(str(inst.m))
    elif format in ("bpp", "csp"):
        if inst.dim_count != 1:
            raise ValidationError(f"{format} format needs p = 1, instance has p = {inst.dim_count}")
        out.append(str(inst.m))
        out.append(str(inst.capacities[0]))
    else:
        raise ValueError(f"unknown instance format {format!r}")
    for it in inst.items:
        out.append(" ".join(map(str, it.weights + (it.demand,))))
    return "\n".join(out) + "\n"


def write_instance(inst: VbpInstance, path, format: str = "vbp") -> None:
    Path(path).write_text(dumps_instance(inst, format))
