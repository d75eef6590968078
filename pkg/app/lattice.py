"""Orchards, simple set semilattices, partial-disintegration extension and
success certificates.

Distance-to-span witnesses are found numerically (IRLS on the common
refinement for step functions, pattern search against the norm oracle
otherwise), snapped to Gaussian rationals and then certified by one exact
norm enclosure. A dovetailed grid enumeration is the complete fallback.
Nothing returned here is trusted on the strength of the search path:
certificates carry their coefficients and re-verify on their own.
"""

from __future__ import annotations

import itertools
import logging
from collections.abc import Callable
from collections.abc import Iterable
from collections.abc import Sequence
from dataclasses import dataclass
from dataclasses import field
from fractions import Fraction
from typing import Any

import numpy as np

from .config import settings
from .enclosure import ComplexRational
from .enclosure import Exponent
from .enclosure import Interval
from .presentation import DirectSpace
from .presentation import NormedSpace
from .presentation import dyadic_interval
from .sigma import ROOT
from .sigma import Node
from .sigma import NodeMap
from .sigma import format_node
from .sigma import is_separating_antitone_exact
from .sigma import parse_node
from .stepfn import DyadicSet
from .stepfn import StepFn
from .stepfn import disjointly_supported
from .stepfn import refine_all
from .stepfn import subvector_le
from .utils import BudgetExhaustedError
from .utils import SimplicityViolationError
from .utils import log_event

_EPS = 1e-9


# Orchards


def is_tree(nodes: Iterable[Node]) -> bool:
    domain = set(nodes)
    return ROOT in domain and all(n[:cut] in domain for n in domain for cut in range(len(n)))


def is_orchard(nodes: Iterable[Node]) -> bool:
    domain = set(nodes)
    return ROOT not in domain and all(
        n[:cut] in domain for n in domain for cut in range(1, len(n))
    )


def children(nodes: Iterable[Node], node: Node) -> list[Node]:
    return sorted(n for n in nodes if len(n) == len(node) + 1 and n[: len(node)] == node)


def next_child_index(nodes: Iterable[Node], node: Node) -> int:
    kids = children(nodes, node)
    return kids[-1][-1] + 1 if kids else 0


def top_level_index(nodes: Iterable[Node]) -> int:
    """Largest first index in use, or -1 for an empty orchard."""
    return max((n[0] for n in nodes if n), default=-1)


def nonterminal(nodes: Iterable[Node]) -> list[Node]:
    domain = list(nodes)
    return [n for n in domain if children(domain, n)]


def partial_disintegration_violations(phi: NodeMap[StepFn]) -> list[str]:
    problems = []
    if not is_orchard(phi.nodes):
        problems.append("domain is not an orchard")
    seen: dict[StepFn, Node] = {}
    for node, value in phi.items():
        if value.is_zero:
            problems.append(f"{format_node(node)} maps to zero")
        if value in seen:
            problems.append(f"{format_node(node)} repeats the value of {format_node(seen[value])}")
        seen.setdefault(value, node)
    if not is_separating_antitone_exact(phi):
        problems.append("map is not separating antitone")
    return problems


def is_partial_disintegration(phi: NodeMap[StepFn]) -> bool:
    return not partial_disintegration_violations(phi)


# Set semilattices


@dataclass(frozen=True)
class SetSemilattice:
    """A finite family of nonempty sets; the empty set is implicit."""

    members: tuple[DyadicSet, ...] = ()

    @classmethod
    def of(cls, sets: Iterable[DyadicSet]) -> SetSemilattice:
        out: list[DyadicSet] = []
        for s in sets:
            if s and s not in out:
                out.append(s)
        return cls(tuple(out))

    def __contains__(self, subset: DyadicSet) -> bool:
        return subset in self.members

    def __len__(self) -> int:
        return len(self.members)

    def union(self) -> DyadicSet:
        out = DyadicSet()
        for s in self.members:
            out = out.union(s)
        return out

    def is_simple(self) -> bool:
        for a, b in itertools.combinations(self.members, 2):
            if not (a.issubset(b) or b.issubset(a)) and not a.isdisjoint(b):
                return False
        return True

    def meet_closed(self) -> bool:
        for a, b in itertools.combinations(self.members, 2):
            m = a.intersection(b)
            if m and m not in self.members:
                return False
        return True

    def generates(self, subset: DyadicSet) -> bool:
        """True when subset is a finite union of members."""
        covered = DyadicSet()
        for s in self.members:
            if s.issubset(subset):
                covered = covered.union(s)
        return covered == subset

    def remnant(self, member: DyadicSet) -> DyadicSet:
        out = member
        for s in self.members:
            if s != member and s.issubset(member):
                out = out.difference(s)
        return out


def adjoin_set(lattice: SetSemilattice, subset: DyadicSet) -> SetSemilattice:
    """Extend a simple lower semilattice so that subset is a union of members.

    Adds every remnant of an old member cut down to subset, and the part of
    subset outside all old members.
    """
    if lattice.generates(subset):
        return lattice
    pieces = [lattice.remnant(y).intersection(subset) for y in lattice.members]
    outside = subset.difference(lattice.union())
    return SetSemilattice.of([*lattice.members, *pieces, outside])


# Extension of partial disintegrations


def extend_to_orchard(phi: NodeMap[StepFn], newvec: StepFn) -> NodeMap[StepFn]:
    """Add newvec to the range of phi, as a new top-level node when it is
    incomparable with every value, else as a child of the node of the least
    value above it."""
    if newvec.is_zero:
        raise SimplicityViolationError("cannot adjoin the zero vector")
    above: list[Node] = []
    for node, value in phi.items():
        if value == newvec:
            return phi
        if subvector_le(newvec, value):
            above.append(node)
        elif subvector_le(value, newvec):
            raise SimplicityViolationError(
                f"value at {format_node(node)} lies strictly below the new vector",
                {"node": format_node(node)},
            )
        elif not disjointly_supported(value, newvec):
            raise SimplicityViolationError(
                f"value at {format_node(node)} is incomparable with the new vector "
                "but overlaps it",
                {"node": format_node(node)},
            )
    if not above:
        return phi.with_entries({(top_level_index(phi.nodes) + 1,): newvec})
    least = [a for a in above if all(subvector_le(phi[a], phi[b]) for b in above)]
    if len(least) != 1:
        raise SimplicityViolationError("no unique least value above the new vector")
    parent = least[0]
    return phi.with_entries({parent + (next_child_index(phi.nodes, parent),): newvec})


def dense_sequence(targets: Sequence[StepFn]) -> Callable[[int], DyadicSet]:
    """Level sets of the targets first, then dyadic intervals in standard order."""
    level_sets: list[DyadicSet] = []
    for f in targets:
        for value in dict.fromkeys(v for v in f.values if v):
            subset = DyadicSet.of(*((lo, hi) for lo, hi, v in f.cells() if v == value))
            if subset not in level_sets:
                level_sets.append(subset)

    def dense(n: int) -> DyadicSet:
        if n < len(level_sets):
            return level_sets[n]
        return DyadicSet.interval(*dyadic_interval(n - len(level_sets)))

    return dense


def _ordered_new_sets(new: Iterable[DyadicSet]) -> list[DyadicSet]:
    return sorted(new, key=lambda s: (-s.measure(), s.intervals[0][0]))


def extend_dense(
    phi: NodeMap[StepFn],
    targets: Sequence[StepFn],
    k: int,
    p: Exponent,
    dense: Callable[[int], DyadicSet] | None = None,
) -> NodeMap[StepFn]:
    """Extend phi until every target lies within 2^-k of the span.

    Each round adjoins the next dense set R_n to the support semilattice and
    adds (h1 + h2) * chi_S for every new support S, where h1 sums the maximal
    values and h2 = chi_(R_n - supp h1).
    """
    space = DirectSpace(p)
    dense = dense or dense_sequence(targets)
    psi = phi
    for n in range(settings.extend_max_rounds):
        if all(dist_to_span_witness(space, f, psi, k) is not None for f in targets):
            log_event("extend_dense", level=logging.DEBUG, rounds=n, nodes=len(psi), k=k)
            return psi
        r_n = dense(n)
        old = SetSemilattice.of(v.support() for v in psi.values())
        grown = adjoin_set(old, r_n)
        if grown is old:
            continue
        h1 = space.combine((1, psi[node]) for node in psi.nodes if len(node) == 1)
        h2 = StepFn.from_set(r_n.difference(h1.support()))
        h = h1 + h2
        for subset in _ordered_new_sets(s for s in grown.members if s not in old):
            psi = extend_to_orchard(psi, h.restrict(subset))
    if all(dist_to_span_witness(space, f, psi, k) is not None for f in targets):
        return psi
    raise BudgetExhaustedError(
        f"no span witness at 2^-{k} after {settings.extend_max_rounds} rounds",
        {"k": k, "nodes": len(psi)},
    )


def nabla_of(space: NormedSpace[Any], psi: NodeMap[Any], node: Node) -> Any:
    """psi(node) minus the sum of its children's values."""
    kids = children(psi.nodes, node)
    return space.combine([(1, psi[node]), *((-1, psi[kid]) for kid in kids)])


def summative_completion(space: NormedSpace[Any], psi: NodeMap[Any]) -> NodeMap[Any]:
    """Give every nonterminal node with a nonzero remainder a new last child
    carrying that remainder; the span is unchanged and every defect is 0."""
    additions = {}
    for node in nonterminal(psi.nodes):
        rest = nabla_of(space, psi, node)
        if not space.is_zero(rest):
            additions[node + (next_child_index(psi.nodes, node),)] = rest
    return psi.with_entries(additions) if additions else psi


# Witnesses and certificates


Coefficients = dict[Node, ComplexRational]


@dataclass(frozen=True)
class Witness:
    coefficients: Coefficients
    residual: Interval

    def to_json(self) -> dict[str, Any]:
        return {
            "coefficients": {format_node(n): c.to_json() for n, c in self.coefficients.items()},
            "residual": self.residual.to_json(),
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> Witness:
        return cls(
            {parse_node(n): ComplexRational.from_json(c) for n, c in data["coefficients"].items()},
            Interval.from_json(data["residual"]),
        )


def span_residual(
    space: NormedSpace[Any], v: Any, psi: NodeMap[Any], coefficients: Coefficients
) -> Any:
    return space.sub(v, space.combine((c, psi[n]) for n, c in coefficients.items()))


def _certify(
    space: NormedSpace[Any], v: Any, psi: NodeMap[Any], coefficients: Coefficients, n: int
) -> Interval | None:
    residual = span_residual(space, v, psi, coefficients)
    bound = Fraction(1, 1 << n)
    k = n + 2
    for _ in range(2):
        enclosure = space.norm(residual, k)
        if enclosure.hi < bound:
            return enclosure
        if enclosure.lo >= bound:
            return None
        k += 2 * settings.refine_step
    return None


def _irls(space: NormedSpace[Any], v: StepFn, values: list[StepFn]) -> np.ndarray:
    grid = refine_all([v, *values])
    lengths = np.array([float(x) for x in grid.lengths])
    target = np.array([complex(c) for c in grid.columns[0]], dtype=complex)
    design = np.array([[complex(c) for c in col] for col in grid.columns[1:]], dtype=complex).T
    p = space.p.approx()
    base = np.sqrt(lengths)
    beta = np.linalg.lstsq(design * base[:, None], target * base, rcond=None)[0]
    for _ in range(settings.witness_iterations):
        r = np.abs(target - design @ beta)
        w = base * np.maximum(r, _EPS) ** ((p - 2) / 2)
        nxt = np.linalg.lstsq(design * w[:, None], target * w, rcond=None)[0]
        done = np.allclose(nxt, beta, atol=1e-13)
        beta = nxt
        if done:
            break
    return beta


def _pattern_search(space: NormedSpace[Any], v: Any, psi: NodeMap[Any]) -> np.ndarray:
    nodes = psi.nodes
    beta = np.zeros(len(nodes), dtype=complex)

    def objective(b: np.ndarray) -> float:
        coeffs = _snap(b, 1 << 20, nodes)
        return float(space.norm(span_residual(space, v, psi, coeffs), 16).mid)

    best = objective(beta)
    step = 1.0
    for _ in range(settings.witness_iterations):
        improved = False
        for i in range(len(nodes)):
            for move in (step, -step, 1j * step, -1j * step):
                trial = beta.copy()
                trial[i] += move
                value = objective(trial)
                if value < best:
                    beta, best, improved = trial, value, True
        if not improved:
            step /= 2
            if step < 2.0**-24:
                break
    return beta


def _snap(beta: np.ndarray, denominator: int, nodes: Sequence[Node] | None = None) -> Coefficients:
    out: Coefficients = {}
    for i, b in enumerate(beta):
        re = Fraction(float(b.real)).limit_denominator(denominator)
        im = Fraction(float(b.imag)).limit_denominator(denominator)
        if re or im:
            out[nodes[i] if nodes is not None else (i,)] = ComplexRational(re, im)
    return out


def _numeric_guess(space: NormedSpace[Any], v: Any, psi: NodeMap[Any]) -> np.ndarray | None:
    if not psi:
        return np.zeros(0, dtype=complex)
    if isinstance(space, DirectSpace):
        beta = _irls(space, v, [psi[n] for n in psi.nodes])
    else:
        beta = _pattern_search(space, v, psi)
    return beta if np.all(np.isfinite(beta)) else None


def _grid_search(
    space: NormedSpace[Any], v: Any, psi: NodeMap[Any], n: int
) -> Witness | None:
    nodes = psi.nodes
    spent = 0
    for depth in itertools.count():
        scale = 1 << depth
        steps = sorted(
            (Fraction(j, scale) for j in range(-2 * scale, 2 * scale + 1)),
            key=lambda q: (abs(q), q < 0),
        )
        points = [ComplexRational(re, im) for re in steps for im in steps]
        points.sort(key=lambda z: (z.abs2(), -z.re, -z.im))
        for combo in itertools.product(points, repeat=len(nodes)):
            spent += 1
            if spent > settings.witness_grid_budget:
                return None
            coefficients = {node: c for node, c in zip(nodes, combo) if c}
            residual = _certify(space, v, psi, coefficients, n)
            if residual is not None:
                return Witness(coefficients, residual)
        if not nodes:
            return None


def dist_to_span_witness(
    space: NormedSpace[Any], v: Any, psi: NodeMap[Any], n: int
) -> Witness | None:
    """Coefficients beta with ||v - sum beta(nu) psi(nu)|| certified below 2^-n.

    None means no witness was found within budget, never that the distance
    is at least 2^-n.
    """
    if space.is_zero(v):
        return Witness({}, Interval.point(0))
    guess = _numeric_guess(space, v, psi)
    if guess is not None:
        tried: list[Coefficients] = []
        for denominator in (16, 1 << 10, 1 << (n + 12), 1 << (n + 24)):
            coefficients = _snap(guess, denominator, psi.nodes)
            if coefficients in tried:
                continue
            tried.append(coefficients)
            residual = _certify(space, v, psi, coefficients, n)
            if residual is not None:
                return Witness(coefficients, residual)
    return _grid_search(space, v, psi, n)


def best_span_witness(space: NormedSpace[Any], v: Any, psi: NodeMap[Any], k: int) -> Witness:
    """The numerically best snapped combination with its residual enclosure, no threshold."""
    guess = _numeric_guess(space, v, psi)
    coefficients = _snap(guess, 1 << (k + 12), psi.nodes) if guess is not None else {}
    return Witness(coefficients, space.norm(span_residual(space, v, psi, coefficients), k))


@dataclass(frozen=True)
class SuccessCertificate:
    """Level-N evidence: span witnesses for generators below N and
    summativity defects of every nonterminal node, all below 2^-N."""

    level: int
    witnesses: tuple[Witness, ...] = ()
    defects: dict[Node, Interval] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "level": self.level,
            "witnesses": [w.to_json() for w in self.witnesses],
            "defects": {format_node(n): d.to_json() for n, d in self.defects.items()},
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> SuccessCertificate:
        return cls(
            level=int(data["level"]),
            witnesses=tuple(Witness.from_json(w) for w in data.get("witnesses", [])),
            defects={parse_node(n): Interval.from_json(d) for n, d in data.get("defects", {}).items()},
        )


def _defect(space: NormedSpace[Any], psi: NodeMap[Any], node: Node, n: int) -> Interval | None:
    rest = nabla_of(space, psi, node)
    if space.is_zero(rest):
        return Interval.point(0)
    bound = Fraction(1, 1 << n)
    enclosure = space.norm(rest, n + 2)
    return enclosure if enclosure.hi < bound else None


def success_certify(space: NormedSpace[Any], psi: NodeMap[Any], n: int) -> SuccessCertificate | None:
    defects: dict[Node, Interval] = {}
    for node in nonterminal(psi.nodes):
        defect = _defect(space, psi, node, n)
        if defect is None:
            return None
        defects[node] = defect
    witnesses = []
    for j in range(n):
        witness = dist_to_span_witness(space, space.generator(j), psi, n)
        if witness is None:
            log_event("witness_failed", level=logging.DEBUG, generator=j, level_n=n)
            return None
        witnesses.append(witness)
    return SuccessCertificate(n, tuple(witnesses), defects)


def verify_certificate(
    space: NormedSpace[Any], psi: NodeMap[Any], certificate: SuccessCertificate
) -> bool:
    """Re-check a certificate from its coefficients alone."""
    n = certificate.level
    if len(certificate.witnesses) != n:
        return False
    if any(node not in psi for w in certificate.witnesses for node in w.coefficients):
        return False
    for j, witness in enumerate(certificate.witnesses):
        if _certify(space, space.generator(j), psi, witness.coefficients, n) is None:
            return False
    return all(_defect(space, psi, node, n) is not None for node in nonterminal(psi.nodes))


def certified_success_index(
    space: NormedSpace[Any], psi: NodeMap[Any], n_max: int
) -> tuple[int, SuccessCertificate | None]:
    """Largest certified level up to n_max; a lower bound on the success index."""
    best: tuple[int, SuccessCertificate | None] = (-1, None)
    for n in range(n_max + 1):
        certificate = success_certify(space, psi, n)
        if certificate is not None:
            best = (n, certificate)
    return best

