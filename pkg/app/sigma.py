"""The sigma disjointness functional, separation tests and the repair operator.

For p != 2, sigma(z, w) = C_p * |2(|z|^p + |w|^p) - (|z - w|^p + |z + w|^p)|
with C_p = |4 - 2 * sqrt(2)^p|^-1 vanishes exactly when z * w = 0, and its
integral over [0, 1] equals the same combination of p-th power norms. Vector
and node-map sigma are computed from norms, so they work over any
``NormedSpace`` (direct step functions or a norm oracle).
"""

from __future__ import annotations

import math
from collections.abc import Callable
from collections.abc import Iterable
from collections.abc import Iterator
from collections.abc import Mapping
from dataclasses import dataclass
from fractions import Fraction
from typing import Any
from typing import Generic
from typing import Literal
from typing import TypeVar

from .config import settings
from .enclosure import ZERO
from .enclosure import ComplexRational
from .enclosure import Exponent
from .enclosure import Interval
from .enclosure import pow_abs
from .enclosure import pow_abs2
from .enclosure import refine
from .enclosure import root_of_power
from .enclosure import sigma_constant
from .presentation import DirectSpace
from .presentation import NormedSpace
from .stepfn import StepFn
from .stepfn import disjointly_supported
from .stepfn import refine_all
from .stepfn import subvector_le
from .utils import DomainShapeError

Node = tuple[int, ...]
ROOT: Node = ()
V = TypeVar("V")


def is_ancestor(a: Node, b: Node) -> bool:
    """True when a is a proper prefix of b."""
    return len(a) < len(b) and b[: len(a)] == a


def comparable(a: Node, b: Node) -> bool:
    return a == b or is_ancestor(a, b) or is_ancestor(b, a)


def format_node(node: Node) -> str:
    return ".".join(str(i) for i in node)


def parse_node(text: str) -> Node:
    text = text.strip()
    if not text:
        return ROOT
    node = tuple(int(part) for part in text.split("."))
    if any(i < 0 for i in node):
        raise ValueError(f"node indices must be non-negative: {text!r}")
    return node


def node_pairs(nodes: Iterable[Node]) -> Iterator[tuple[str, Node, Node]]:
    """Yield ("incomparable", a, b) once per unordered pair and
    ("descendant", a, b) for every b strictly below a, in lexicographic order."""
    ordered = sorted(nodes)
    for i, a in enumerate(ordered):
        for b in ordered[i + 1 :]:
            if is_ancestor(a, b):
                yield "descendant", a, b
            elif not comparable(a, b):
                yield "incomparable", a, b


class NodeMap(Mapping[Node, V], Generic[V]):
    """A finite map from nodes to vectors over an orchard or a tree."""

    def __init__(
        self,
        entries: Mapping[Node, V] | Iterable[tuple[Node, V]] = (),
        domain_kind: Literal["orchard", "tree"] = "orchard",
        check: bool = True,
    ) -> None:
        items = entries.items() if isinstance(entries, Mapping) else entries
        self._entries: dict[Node, V] = dict(sorted((tuple(n), v) for n, v in items))
        self.domain_kind = domain_kind
        if check:
            self._check_shape()

    def _check_shape(self) -> None:
        nodes = set(self._entries)
        if self.domain_kind == "orchard" and ROOT in nodes:
            raise DomainShapeError("an orchard does not contain the root")
        if self.domain_kind == "tree" and nodes and ROOT not in nodes:
            raise DomainShapeError("a tree contains the root")
        for node in nodes:
            for cut in range(1, len(node)):
                if node[:cut] not in nodes:
                    raise DomainShapeError(
                        f"node {format_node(node)} is missing its ancestor "
                        f"{format_node(node[:cut])}",
                        {"node": format_node(node)},
                    )

    def __getitem__(self, node: Node) -> V:
        return self._entries[node]

    def __iter__(self) -> Iterator[Node]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def nodes(self) -> tuple[Node, ...]:
        return tuple(self._entries)

    def with_entries(
        self,
        updates: Mapping[Node, V],
        domain_kind: Literal["orchard", "tree"] | None = None,
    ) -> NodeMap[V]:
        merged = dict(self._entries)
        merged.update(updates)
        return NodeMap(merged, domain_kind or self.domain_kind)

    def restrict(self, nodes: Iterable[Node]) -> NodeMap[V]:
        keep = set(nodes)
        return NodeMap(
            {n: v for n, v in self._entries.items() if n in keep}, self.domain_kind, check=False
        )

    def map_values(self, fn: Callable[[V], Any]) -> NodeMap[Any]:
        return NodeMap({n: fn(v) for n, v in self._entries.items()}, self.domain_kind, check=False)

    def __repr__(self) -> str:
        body = ", ".join(f"{format_node(n) or 'root'}: {v}" for n, v in self._entries.items())
        return f"NodeMap[{self.domain_kind}]({{{body}}})"


def _magnitude(x: Interval) -> int:
    top = x.abs().hi + 1
    return max(0, top.numerator.bit_length() - top.denominator.bit_length() + 1)


def lamperti_gap(z: ComplexRational, w: ComplexRational, p: Exponent, k: int) -> Interval:
    """Enclose 2(|z|^p + |w|^p) - (|z - w|^p + |z + w|^p) to width 2^-k.

    Non-negative for p < 2 and non-positive for p > 2.
    """
    kk = k + 3
    return (pow_abs(z, p, kk) + pow_abs(w, p, kk)) * 2 - (
        pow_abs(z - w, p, kk) + pow_abs(z + w, p, kk)
    )


def _scaled(gap_at: Callable[[int], Interval], p: Exponent, k: int) -> Interval:
    extra = _magnitude(sigma_constant(p, 0)) + _magnitude(gap_at(0)) + 2

    def compute(kk: int) -> Interval:
        gap = gap_at(kk + extra).abs()
        const = sigma_constant(p, kk + extra)
        return gap * const

    return refine(compute, k)


def sigma_scalar(z: ComplexRational, w: ComplexRational, p: Exponent, k: int) -> Interval:
    p.certify_not_two()
    if not z or not w:
        return Interval.point(0)
    return _scaled(lambda kk: lamperti_gap(z, w, p, kk), p, k)


def sigma_vec(space: NormedSpace[V], f: V, g: V, k: int) -> Interval:
    """Enclose sigma(f, g) from the p-th power norms of f, g, f - g and f + g."""
    p = space.p
    p.certify_not_two()
    if space.is_zero(f) or space.is_zero(g):
        return Interval.point(0)
    diff, total = space.sub(f, g), space.add(f, g)

    def gap_at(kk: int) -> Interval:
        kk += 3
        return (space.norm_pow(f, kk) + space.norm_pow(g, kk)) * 2 - (
            space.norm_pow(diff, kk) + space.norm_pow(total, kk)
        )

    return _scaled(gap_at, p, k)


def sigma_terms(space: NormedSpace[V], psi: NodeMap[V]) -> list[tuple[Node, Node, V, V]]:
    """The argument pairs whose sigma values sum to sigma(psi)."""
    terms = []
    for kind, a, b in node_pairs(psi.nodes):
        if kind == "incomparable":
            terms.append((a, b, psi[a], psi[b]))
        else:
            terms.append((a, b, space.sub(psi[b], psi[a]), psi[b]))
    return terms


def sigma_map(space: NormedSpace[V], psi: NodeMap[V], k: int) -> Interval:
    space.p.certify_not_two()
    terms = sigma_terms(space, psi)
    if not terms:
        return Interval.point(0)
    kk = k + len(terms).bit_length()
    lo = hi = Fraction(0)
    for _, _, f, g in terms:
        term = sigma_vec(space, f, g, kk)
        lo += term.lo
        hi += term.hi
    return Interval(lo, hi)


def is_separating_antitone_exact(psi: NodeMap[StepFn]) -> bool:
    """Incomparable nodes go to disjointly supported values and descendants to subvectors."""
    for kind, a, b in node_pairs(psi.nodes):
        if kind == "incomparable":
            if not disjointly_supported(psi[a], psi[b]):
                return False
        elif not subvector_le(psi[b], psi[a]):
            return False
    return True


def dist_bound(space: NormedSpace[V], psi: NodeMap[V], k: int) -> Interval:
    """Enclose 2 * sigma(psi)^(1/p), an upper bound on the distance to the
    nearest separating antitone map."""
    half = root_of_power(lambda kk: sigma_map(space, psi, kk), space.p, k + 1)
    return half * 2


def map_distance(space: NormedSpace[V], a: NodeMap[V], b: NodeMap[V], k: int) -> Interval:
    """Enclose max over the shared nodes of ||a(nu) - b(nu)||."""
    out = Interval.point(0)
    for node in a:
        if node in b:
            d = space.norm(space.sub(a[node], b[node]), k)
            out = Interval(max(out.lo, d.lo), max(out.hi, d.hi))
    return out


def map_distance_pow(space: NormedSpace[V], a: NodeMap[V], b: NodeMap[V], k: int) -> Interval:
    out = Interval.point(0)
    for node in a:
        if node in b:
            d = space.norm_pow(space.sub(a[node], b[node]), k)
            out = Interval(max(out.lo, d.lo), max(out.hi, d.hi))
    return out


@dataclass(frozen=True)
class PointwiseSigma:
    """The min-term integrand sigma-hat on a shared grid.

    Each cell keeps the exact squared magnitudes m_i of its min-terms, so the
    cell value is sum_i m_i^(p/2).
    """

    breakpoints: tuple[Fraction, ...]
    magnitudes: tuple[tuple[Fraction, ...], ...]

    def value(self, cell: int, p: Exponent, k: int) -> Interval:
        ms = [m for m in self.magnitudes[cell] if m]
        kk = k + len(ms).bit_length()
        lo = hi = Fraction(0)
        for m in ms:
            term = pow_abs2(m, p, kk)
            lo += term.lo
            hi += term.hi
        return Interval(lo, hi)

    def dominates(self, cell: int, a: Fraction, p: Exponent) -> bool:
        """Decide a^(p/2) <= sigma-hat on the cell; undecided ties count as dominated."""
        ms = self.magnitudes[cell]
        if a == 0 or any(m >= a for m in ms):
            return True
        if not any(ms):
            return False
        k = settings.default_precision
        for _ in range(settings.max_refinements):
            left = pow_abs2(a, p, k)
            right = self.value(cell, p, k)
            if left.hi <= right.lo:
                return True
            if left.lo > right.hi:
                return False
            k += settings.refine_step
        return True

    def integral(self, p: Exponent, k: int) -> Interval:
        kk = k + 1
        lo = hi = Fraction(0)
        for j, (a, b) in enumerate(zip(self.breakpoints, self.breakpoints[1:])):
            cell = self.value(j, p, kk)
            lo += cell.lo * (b - a)
            hi += cell.hi * (b - a)
        return Interval(lo, hi)


def pointwise_sigma(psi: NodeMap[StepFn]) -> PointwiseSigma:
    nodes = psi.nodes
    refinement = refine_all([psi[n] for n in nodes] or [StepFn.zero()])
    column = {n: refinement.columns[i] for i, n in enumerate(nodes)}
    cells = []
    for j in range(len(refinement)):
        ms = []
        for kind, a, b in node_pairs(nodes):
            if kind == "incomparable":
                ms.append(min(column[a][j].abs2(), column[b][j].abs2()))
            else:
                ms.append(min((column[b][j] - column[a][j]).abs2(), column[b][j].abs2()))
        cells.append(tuple(ms))
    return PointwiseSigma(refinement.breakpoints, tuple(cells))


def source_node(node: Node, old: Iterable[Node]) -> Node | None:
    """The deepest proper ancestor of node inside old."""
    best = None
    for candidate in old:
        if is_ancestor(candidate, node) and (best is None or len(candidate) > len(best)):
            best = candidate
    return best


def repair(phi: NodeMap[StepFn], psi: NodeMap[StepFn], p: Exponent) -> NodeMap[StepFn]:
    """Turn phi on S plus psi on the new nodes into a separating antitone map.

    New node nu gets phi(source(nu)) * (1 - chi_N), where N collects the
    points at which some new ancestor-or-self of nu is dominated by
    sigma-hat, together with the supports of old values at nodes
    incomparable with nu.
    """
    p.certify_not_two()
    old = set(phi.nodes)
    if not old.issubset(psi.nodes):
        raise DomainShapeError("the repaired map must extend the partial disintegration")
    delta = [n for n in psi.nodes if n not in old]
    sources: dict[Node, Node] = {}
    for node in delta:
        src = source_node(node, old)
        if src is None:
            raise DomainShapeError(
                f"new node {format_node(node)} has no ancestor in the old domain",
                {"node": format_node(node)},
            )
        sources[node] = src
    if not delta:
        return phi

    base = NodeMap({**dict(phi), **{n: psi[n] for n in delta}}, "orchard")
    sigma_hat = pointwise_sigma(base)
    grid = sigma_hat.breakpoints
    cells = len(grid) - 1
    refinement = refine_all([base[n] for n in base.nodes])
    column = {n: refinement.columns[i] for i, n in enumerate(base.nodes)}

    dominated = {
        n: [sigma_hat.dominates(j, column[n][j].abs2(), p) for j in range(cells)] for n in delta
    }
    out: dict[Node, StepFn] = {}
    for node in delta:
        lineage = [m for m in delta if m == node or is_ancestor(m, node)]
        blocked = [o for o in old if not comparable(o, node)]
        src_values = column[sources[node]]
        values = []
        for j in range(cells):
            nullified = any(dominated[m][j] for m in lineage) or any(
                column[o][j] for o in blocked
            )
            values.append(ZERO if nullified else src_values[j])
        out[node] = StepFn(grid, tuple(values))
    return phi.with_entries(out)


@dataclass(frozen=True)
class RepairBound:
    lhs: Interval
    rhs: Interval
    rhs_pointwise: Interval
    holds: bool
    holds_pointwise: bool

    def to_json(self) -> dict[str, Any]:
        return {
            "lhs": self.lhs.to_json(),
            "rhs": self.rhs.to_json(),
            "rhs_pointwise": self.rhs_pointwise.to_json(),
            "holds": self.holds,
            "holds_pointwise": self.holds_pointwise,
        }


def repair_bound(
    phi: NodeMap[StepFn],
    psi: NodeMap[StepFn],
    repaired: NodeMap[StepFn],
    p: Exponent,
    k: int,
) -> RepairBound:
    """Both sides of ||psi' - psi||^p <= ||phi - psi|_S||^p + 2^p sigma(phi u psi|new).

    Also reports the tighter right side with the integral of sigma-hat in
    place of sigma. ``holds`` means the enclosures do not refute the
    inequality at precision k.
    """
    space = DirectSpace(p)
    kk = k + 3
    old = set(phi.nodes)
    base = NodeMap({**dict(phi), **{n: psi[n] for n in psi.nodes if n not in old}}, "orchard")
    lhs = map_distance_pow(space, repaired, psi, kk)
    head = map_distance_pow(space, phi, psi, kk)
    two_p = pow_abs(ComplexRational(Fraction(2)), p, kk)
    scale = math.ceil(two_p.hi).bit_length()
    rhs = head + two_p * sigma_map(space, base, kk + scale)
    rhs_pointwise = head + two_p * pointwise_sigma(base).integral(p, kk + scale)
    return RepairBound(
        lhs=lhs,
        rhs=rhs,
        rhs_pointwise=rhs_pointwise,
        holds=lhs.lo <= rhs.hi,
        holds_pointwise=lhs.lo <= rhs_pointwise.hi,
    )
