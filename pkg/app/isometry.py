"""Interval-valued disintegrations, the nabla expansion and isometry synthesis.

A tree-domained disintegration phi with unit root norm is matched by
psi(nu) = chi_I(nu), where I(root) = [0, 1) and the children of a node cut
its interval left to right in child order, each child taking a length equal
to its p-th power norm. Transporting coefficients along a norm-preserving
node bijection lifts to a linear isometry. Composing A -> intervals with
intervals -> B gives the images of A's generators as rational vectors of B.
"""

from __future__ import annotations

import logging
import random
from collections.abc import Mapping
from collections.abc import Sequence
from dataclasses import dataclass
from dataclasses import field
from fractions import Fraction
from typing import Any

import numpy as np

from .config import settings
from .enclosure import ONE
from .enclosure import ZERO
from .enclosure import ComplexRational
from .enclosure import Exponent
from .enclosure import Interval
from .enclosure import pow_abs
from .enclosure import root
from .lattice import Coefficients
from .lattice import children
from .lattice import dist_to_span_witness
from .lattice import nabla_of
from .presentation import DirectSpace
from .presentation import NormedSpace
from .presentation import Presentation
from .presentation import RationalVector
from .presentation import space_for
from .sigma import ROOT
from .sigma import Node
from .sigma import NodeMap
from .sigma import format_node
from .sigma import is_ancestor
from .stepfn import DyadicSet
from .stepfn import StepFn
from .stepfn import linear_combine
from .stepfn import refine_all
from .synth import Stage
from .synth import advance_stage
from .synth import attach_root
from .synth import root_constants
from .synth import run_stages
from .utils import BudgetExhaustedError
from .utils import ExponentMismatchError
from .utils import IsoCertificationError
from .utils import RootNormError
from .utils import log_event


@dataclass(frozen=True)
class DisintegrationIso:
    """A node bijection between two disintegration domains."""

    mapping: Mapping[Node, Node]

    @classmethod
    def identity(cls, nodes: Sequence[Node]) -> DisintegrationIso:
        return cls({n: n for n in nodes})

    def __call__(self, node: Node) -> Node:
        return self.mapping[node]

    def inverse(self) -> DisintegrationIso:
        return DisintegrationIso({b: a for a, b in self.mapping.items()})

    def compose(self, after: DisintegrationIso) -> DisintegrationIso:
        """Apply self, then after."""
        return DisintegrationIso({a: after(b) for a, b in self.mapping.items()})

    def certify(
        self,
        space1: NormedSpace[Any],
        phi1: NodeMap[Any],
        space2: NormedSpace[Any],
        phi2: NodeMap[Any],
        k: int,
        tolerance: Fraction = Fraction(0),
    ) -> None:
        """Check bijectivity, monotonicity and norm agreement within tolerance."""
        images = list(self.mapping.values())
        if set(self.mapping) != set(phi1.nodes) or sorted(images) != sorted(phi2.nodes):
            raise IsoCertificationError("node map is not a bijection between the domains")
        for a in self.mapping:
            for b in self.mapping:
                if is_ancestor(a, b) != is_ancestor(self(a), self(b)):
                    raise IsoCertificationError(
                        f"order between {format_node(a)} and {format_node(b)} is not preserved"
                    )
        for node, image in self.mapping.items():
            gap = space2.norm(phi2[image], k) - space1.norm(phi1[node], k)
            if gap.abs().lo > tolerance:
                raise IsoCertificationError(
                    f"norms at {format_node(node)} differ", {"gap": gap.to_json()}
                )


def nabla(space: NormedSpace[Any], phi: NodeMap[Any], node: Node) -> Any:
    return nabla_of(space, phi, node)


def expand_in_nabla(phi: NodeMap[Any], gamma: Mapping[Node, ComplexRational]) -> dict[Node, ComplexRational]:
    """nu -> sum of gamma over the ancestors-or-self of nu."""
    out = {}
    for node in phi.nodes:
        total = ZERO
        for other, c in gamma.items():
            if other == node or is_ancestor(other, node):
                total = total + c
        out[node] = total
    return out


def check_nabla_expansion(phi: NodeMap[StepFn], gamma: Mapping[Node, ComplexRational]) -> bool:
    """Exact equality of sum gamma phi with sum expanded * nabla."""
    space = DirectSpace(Exponent.rational(1))
    lhs = linear_combine((c, phi[n]) for n, c in gamma.items())
    expanded = expand_in_nabla(phi, gamma)
    rhs = linear_combine((expanded[n], nabla(space, phi, n)) for n in phi.nodes)
    return lhs == rhs


def nabla_norm_identity(
    space: NormedSpace[Any], phi: NodeMap[Any], gamma: Mapping[Node, ComplexRational], k: int
) -> tuple[Interval, Interval]:
    """Enclosures of ||sum gamma phi||^p and sum |expanded|^p ||nabla||^p."""
    combo = space.combine((c, phi[n]) for n, c in gamma.items())
    lhs = space.norm_pow(combo, k)
    expanded = expand_in_nabla(phi, gamma)
    terms = [(expanded[n], nabla(space, phi, n)) for n in phi.nodes if expanded[n]]
    top = max((c.abs2() for c, _ in terms), default=Fraction(0)) + 1
    kk = k + len(terms).bit_length() + 8 + int(space.p.interval(0).hi * top.numerator.bit_length())
    lo = hi = Fraction(0)
    for c, rest in terms:
        term = pow_abs(c, space.p, kk) * space.norm_pow(rest, kk)
        lo += term.lo
        hi += term.hi
    return lhs, Interval(lo, hi)


def lift_apply(
    iso: DisintegrationIso,
    phi1: NodeMap[Any],
    phi2: NodeMap[Any],
    coefficients: Mapping[Node, ComplexRational],
    k: int,
    space1: NormedSpace[Any],
    space2: NormedSpace[Any],
) -> dict[Node, ComplexRational]:
    """Transport coefficients along iso, certifying ||Tv|| = ||v|| within 2 * 2^-k."""
    transported = {iso(n): c for n, c in coefficients.items() if c}
    if not transported:
        return {}
    before = space1.norm(space1.combine((c, phi1[n]) for n, c in coefficients.items()), k + 1)
    after = space2.norm(space2.combine((c, phi2[n]) for n, c in transported.items()), k + 1)
    if (after - before).abs().lo > Fraction(2, 1 << k):
        raise IsoCertificationError(
            "lifted map does not preserve the norm",
            {"before": before.to_json(), "after": after.to_json()},
        )
    return transported


def normalize_root(space: NormedSpace[Any], phi: NodeMap[Any], k: int) -> tuple[NodeMap[Any], Fraction]:
    """Scale a tree map by a rational s close to 1 / ||phi(root)||.

    s is exact when the root norm is rational; otherwise it inverts the
    midpoint of a 2^-(k+8) enclosure and the scaled root misses norm 1 by
    at most that width, which callers read back as a length defect.
    """
    p_th = space.norm_pow(phi[ROOT], k + 8)
    norm = root(p_th, space.p, k + 8)
    if norm.hi <= 0:
        raise RootNormError("root has norm zero")
    scale = 1 / norm.lo if norm.is_point else 1 / norm.mid
    return phi.map_values(lambda v: space.scale(scale, v)), scale


def interval_lengths(
    space: NormedSpace[Any], phi: NodeMap[Any], k: int
) -> tuple[dict[Node, Fraction], Fraction]:
    """Lengths ||phi(nu)||^p / ||phi(root)||^p and the largest half-width behind them.

    Exact ratios give a defect of 0. An irrational ratio is replaced by the
    midpoint of its enclosure, which is off by at most the returned defect.
    """
    whole = space.norm_pow(phi[ROOT], k + 8)
    if whole.lo <= 0:
        raise RootNormError("root has no certified positive norm", {"norm": whole.to_json()})
    out = {}
    defect = Fraction(0)
    for node, value in phi.items():
        part = space.norm_pow(value, k + 8)
        if part.is_point and whole.is_point:
            out[node] = part.lo / whole.lo
            continue
        lo, hi = max(part.lo, Fraction(0)) / whole.hi, part.hi / whole.lo
        out[node] = (lo + hi) / 2
        defect = max(defect, (hi - lo) / 2)
    return out, defect


def interval_valued(
    space: NormedSpace[Any], phi: NodeMap[Any], k: int
) -> tuple[NodeMap[StepFn], DisintegrationIso, dict[Node, tuple[Fraction, Fraction]]]:
    """The interval-valued counterpart of a unit-root tree map.

    Lengths are ||phi(nu)||^p / ||phi(root)||^p, exact whenever those
    norms are rational.
    """
    if ROOT not in phi:
        raise RootNormError("interval-valued form needs a tree with a root")
    norm = space.norm(phi[ROOT], k)
    slack = Fraction(1, 1 << k)
    if norm.lo > 1 + slack or norm.hi < 1 - slack:
        raise RootNormError(f"root norm {norm} is not 1", {"norm": norm.to_json()})
    lengths, _ = interval_lengths(space, phi, k)
    spans: dict[Node, tuple[Fraction, Fraction]] = {ROOT: (Fraction(0), Fraction(1))}
    queue = [ROOT]
    while queue:
        node = queue.pop(0)
        lo, hi = spans[node]
        cursor = lo
        for kid in children(phi.nodes, node):
            end = min(cursor + lengths[kid], hi)
            spans[kid] = (cursor, end)
            cursor = end
            queue.append(kid)
    psi = NodeMap({n: StepFn.indicator(*spans[n]) for n in phi.nodes}, "tree")
    return psi, DisintegrationIso.identity(phi.nodes), spans


def _atoms(spans: Mapping[Node, tuple[Fraction, Fraction]]) -> dict[Node, DyadicSet]:
    nodes = list(spans)
    out = {}
    for node in nodes:
        atom = DyadicSet.interval(*spans[node])
        for kid in children(nodes, node):
            atom = atom.difference(DyadicSet.interval(*spans[kid]))
        out[node] = atom
    return out


def _average(g: StepFn, subset: DyadicSet) -> ComplexRational:
    total = ZERO
    for a, b, v in g.restrict(subset).cells():
        total = total + v * (b - a)
    return total / subset.measure()


def express_in_presentation(
    presentation: Presentation, f: StepFn, n: int
) -> tuple[RationalVector, Interval]:
    """A rational vector of the presentation close to f, with its residual norm.

    Picks a linearly independent run of generators, solves least squares
    on the common refinement and snaps the solution to rationals.
    """
    p = presentation.p
    space = DirectSpace(p, presentation)
    if f.is_zero:
        return RationalVector(), Interval.point(0)
    count = settings.express_max_generators
    if presentation.size is not None:
        count = min(count, presentation.size)
    candidates = [(j, presentation.generator(j)) for j in range(count)]
    candidates = [(j, g) for j, g in candidates if not g.is_zero]
    grid = refine_all([f, *(g for _, g in candidates)])
    weight = np.sqrt(np.array([float(x) for x in grid.lengths]))
    target = np.array([complex(c) for c in grid.columns[0]]) * weight
    kept: list[int] = []
    columns: list[np.ndarray] = []
    for (j, _), column in zip(candidates, grid.columns[1:]):
        col = np.array([complex(c) for c in column]) * weight
        trial = np.column_stack([*columns, col])
        if np.linalg.matrix_rank(trial, tol=1e-10) > len(columns):
            kept.append(j)
            columns.append(col)
    best: tuple[RationalVector, Interval] | None = None
    if columns:
        solution = np.linalg.lstsq(np.column_stack(columns), target, rcond=None)[0]
        for denominator in (1 << 10, 1 << (n + 12), 1 << (n + 24)):
            vec = RationalVector.of(
                (
                    j,
                    ComplexRational(
                        Fraction(float(b.real)).limit_denominator(denominator),
                        Fraction(float(b.imag)).limit_denominator(denominator),
                    ),
                )
                for j, b in zip(kept, solution)
            )
            residual = space.norm(f - presentation.evaluate(vec), n + 2)
            if best is None or residual.hi < best[1].hi:
                best = (vec, residual)
            if residual.hi < Fraction(1, 1 << n):
                break
    if best is None:
        best = (RationalVector(), space.norm(f, n + 2))
    return best


@dataclass(frozen=True)
class GeneratorImage:
    generator: int
    image: RationalVector
    stage_residual: Fraction = Fraction(0)
    transport_residual: Fraction = Fraction(0)
    expression_residual: Fraction = Fraction(0)
    length_defect: Fraction = Fraction(0)

    @property
    def total(self) -> Fraction:
        return (
            self.stage_residual
            + self.transport_residual
            + self.expression_residual
            + self.length_defect
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "generator": self.generator,
            "image": self.image.to_json(),
            "residuals": {
                "stage": str(self.stage_residual),
                "transport": str(self.transport_residual),
                "expression": str(self.expression_residual),
                "length_defect": str(self.length_defect),
                "total": str(self.total),
            },
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> GeneratorImage:
        residuals = data.get("residuals", {})
        return cls(
            generator=int(data["generator"]),
            image=RationalVector.from_json(data["image"]),
            stage_residual=Fraction(residuals.get("stage", "0")),
            transport_residual=Fraction(residuals.get("transport", "0")),
            expression_residual=Fraction(residuals.get("expression", "0")),
            length_defect=Fraction(residuals.get("length_defect", "0")),
        )


@dataclass(frozen=True)
class IsometryData:
    """Images of the first source generators as rational vectors of the target."""

    source: str
    target: str
    p: str
    k: int
    images: tuple[GeneratorImage, ...] = field(default_factory=tuple)

    def image_of(self, j: int) -> GeneratorImage:
        for image in self.images:
            if image.generator == j:
                return image
        raise IsoCertificationError(f"no image recorded for generator {j}", {"generator": j})

    def apply(self, v: RationalVector) -> RationalVector:
        out = RationalVector()
        for j, c in v.terms:
            out = out + self.image_of(j).image.scale(c)
        return out

    def residual_bound(self, v: RationalVector) -> Fraction:
        return sum(
            ((abs(c.re) + abs(c.im)) * self.image_of(j).total for j, c in v.terms), Fraction(0)
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "source": self.source,
            "target": self.target,
            "p": self.p,
            "k": self.k,
            "images": [image.to_json() for image in self.images],
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> IsometryData:
        return cls(
            source=data["source"],
            target=data["target"],
            p=str(data["p"]),
            k=int(data["k"]),
            images=tuple(GeneratorImage.from_json(i) for i in data.get("images", [])),
        )


@dataclass
class _Side:
    """One presentation carried through stages, root attachment and intervals."""

    space: NormedSpace[Any]
    stages: list[Stage]
    constants: dict[int, Fraction] = field(default_factory=dict)
    scale: Fraction = Fraction(1)
    tree: NodeMap[Any] | None = None
    intervals: NodeMap[StepFn] | None = None
    spans: dict[Node, tuple[Fraction, Fraction]] = field(default_factory=dict)
    length_defect: Fraction = Fraction(0)

    def build(self, k: int) -> None:
        phi = self.stages[-1].phi
        self.constants = root_constants(self.space, phi)
        tree, self.scale = normalize_root(self.space, attach_root(self.space, phi), k)
        self.tree = tree
        self.intervals, iso, self.spans = interval_valued(self.space, tree, k)
        root_norm = self.space.norm(tree[ROOT], k + 4)
        self.length_defect = max(abs(root_norm.lo - 1), abs(root_norm.hi - 1))
        _, width = interval_lengths(self.space, tree, k)
        if width:
            # every endpoint drifts by at most len(tree) * width
            drift = 2 * len(tree) * width
            self.length_defect += root(Interval.point(min(drift, Fraction(1))), self.space.p, k + 4).hi
        iso.certify(
            self.space,
            tree,
            DirectSpace(self.space.p),
            self.intervals,
            k + 4,
            tolerance=self.length_defect + Fraction(1, 1 << (k + 2)),
        )

    def tree_coefficient(self, node: Node) -> Fraction:
        """Factor turning a stage coefficient into a tree coefficient."""
        return 1 / (self.scale * self.constants[node[0]])


def _image(a: _Side, b: _Side, presentation_b: Presentation, j: int, k: int) -> GeneratorImage:
    space_a = a.space
    phi_a = a.stages[-1].phi
    witness = dist_to_span_witness(space_a, space_a.generator(j), phi_a, k + 2)
    if witness is None:
        witness = a.stages[-1].certificate.witnesses[j]
    alpha: Coefficients = {
        node: c * a.tree_coefficient(node) for node, c in witness.coefficients.items()
    }
    interval_space = DirectSpace(space_a.p)
    moved = lift_apply(
        DisintegrationIso.identity(a.tree.nodes),
        a.tree,
        a.intervals,
        alpha,
        k + 2,
        space_a,
        interval_space,
    )
    g = linear_combine((c, a.intervals[n]) for n, c in moved.items())

    atoms = _atoms(b.spans)
    levels: dict[Node, ComplexRational] = {}
    for node in sorted(b.spans, key=len):
        atom = atoms[node]
        if atom:
            levels[node] = _average(g, atom)
        else:
            levels[node] = levels.get(node[:-1], ZERO) if node else ZERO
    projected = linear_combine((levels[n], StepFn.from_set(atoms[n])) for n in atoms if atoms[n])
    transport = interval_space.norm(g - projected, k + 2).hi

    gamma = {
        node: levels[node] - (levels[node[:-1]] if node else ZERO) for node in b.spans
    }
    back = lift_apply(
        DisintegrationIso.identity(b.tree.nodes),
        b.intervals,
        b.tree,
        {n: c for n, c in gamma.items() if c},
        k + 2,
        interval_space,
        b.space,
    )
    h = b.space.combine((c, b.tree[n]) for n, c in back.items())
    if isinstance(h, StepFn):
        vector, residual = express_in_presentation(presentation_b, h, k + 2)
        expression = residual.hi
    else:
        vector, expression = h, Fraction(0)
    norm_g = interval_space.norm(g, 8).hi
    return GeneratorImage(
        generator=j,
        image=vector,
        stage_residual=witness.residual.hi,
        transport_residual=transport,
        expression_residual=expression,
        length_defect=(a.length_defect + b.length_defect) * (1 + norm_g),
    )


def _needs_depth(image: GeneratorImage, bound: Fraction) -> bool:
    # deeper target stages shrink transport and expression, never the source stage residual
    return image.transport_residual >= bound or image.expression_residual >= bound


def require_within_bound(data: IsometryData, image: GeneratorImage, bound: Fraction) -> None:
    """Raise a budget failure when the latest image misses the residual bound.

    The images computed so far, the failing one last, travel as the partial result.
    """
    if image.total < bound:
        return
    raise BudgetExhaustedError(
        f"image of generator {image.generator} has residual {image.total}, "
        f"not below {bound}",
        {
            "generator": image.generator,
            "bound": str(bound),
            "residuals": image.to_json()["residuals"],
        },
        partial={"isometry": data.to_json()},
    )


def synthesize_isometry(
    source: Presentation,
    target: Presentation,
    k: int,
    budget: int,
    strategy: str = "whitebox",
) -> IsometryData:
    """Images of source generators 0..budget-1 in the target presentation."""
    if source.p != target.p:
        raise ExponentMismatchError(
            f"exponents differ: {source.p} vs {target.p}",
            {"source": str(source.p), "target": str(target.p)},
        )
    source.p.certify_not_two()
    a = _Side(space_for(source, strategy), [])
    b = _Side(space_for(target, strategy), [])
    a.stages = run_stages(a.space, budget, strategy)
    b.stages = run_stages(b.space, budget, strategy)
    a.build(k)
    b.build(k)
    bound = Fraction(1, 1 << k)
    images = []
    for j in range(budget):
        image = _image(a, b, target, j, k)
        extra = 0
        while _needs_depth(image, bound) and extra < settings.isometry_extra_levels:
            extra += 1
            last = b.stages[-1]
            try:
                grown = advance_stage(b.space, last, last.k + 1, last.n + 1, strategy)
            except BudgetExhaustedError:
                break
            b.stages.append(grown)
            b.build(k)
            image = _image(a, b, target, j, k)
        log_event(
            "generator_image",
            level=logging.DEBUG,
            generator=j,
            total=str(image.total),
            extra_levels=extra,
        )
        data = IsometryData(source.name, target.name, str(source.p), k, (*images, image))
        require_within_bound(data, image, bound)
        images.append(image)
    return IsometryData(source.name, target.name, str(source.p), k, tuple(images))


@dataclass(frozen=True)
class ProbeCheck:
    probe: RationalVector
    norm_source: Interval
    norm_target: Interval
    norm_gap: Fraction
    linearity: Interval

    def to_json(self) -> dict[str, Any]:
        return {
            "probe": self.probe.to_json(),
            "norm_source": self.norm_source.to_json(),
            "norm_target": self.norm_target.to_json(),
            "norm_gap": str(self.norm_gap),
            "linearity": self.linearity.to_json(),
        }


@dataclass(frozen=True)
class IsometryVerification:
    checks: tuple[ProbeCheck, ...]

    @property
    def max_norm_gap(self) -> Fraction:
        return max((c.norm_gap for c in self.checks), default=Fraction(0))

    @property
    def max_linearity(self) -> Fraction:
        return max((c.linearity.hi for c in self.checks), default=Fraction(0))

    def to_json(self) -> dict[str, Any]:
        return {
            "probes": [c.to_json() for c in self.checks],
            "max_norm_gap": str(self.max_norm_gap),
            "max_linearity": str(self.max_linearity),
        }


def random_probes(generators: int, count: int, terms: int, seed: int) -> list[RationalVector]:
    """Deterministic probe vectors over generators 0..generators-1."""
    rng = random.Random(seed)
    out = []
    for _ in range(count):
        picked = rng.sample(range(generators), min(terms, generators))
        out.append(
            RationalVector.of(
                (
                    j,
                    ComplexRational(
                        Fraction(rng.randint(-8, 8), 4), Fraction(rng.randint(-8, 8), 4)
                    ),
                )
                for j in picked
            )
        )
    return out


def verify_isometry(
    target: Presentation,
    data: IsometryData,
    source: Presentation,
    probes: Sequence[RationalVector],
    k: int,
) -> IsometryVerification:
    """Bound |‖Tv‖ - ‖v‖| and the linearity residual on every probe.

    T acts on coefficients, so T(av + bw) - aTv - bTw is computed exactly
    as a rational vector. The linearity residual is therefore an exact
    check: it is [0, 0] unless the stored images fail to compose, and only
    then is the target oracle asked for its norm.
    """
    a, b = ONE, ComplexRational(Fraction(1), Fraction(1))
    checks = []
    for i, v in enumerate(probes):
        w = probes[(i + 1) % len(probes)]
        image = data.apply(v)
        n_source = source.norm(v, k + 1)
        n_target = target.norm(image, k + 1)
        gap = n_target - n_source
        combined = data.apply(v.scale(a) + w.scale(b))
        split = data.apply(v).scale(a) + data.apply(w).scale(b)
        difference = combined - split
        linearity = Interval.point(0) if difference.is_zero else target.norm(difference, k + 1)
        checks.append(
            ProbeCheck(
                probe=v,
                norm_source=n_source,
                norm_target=n_target,
                norm_gap=max(abs(gap.lo), abs(gap.hi)),
                linearity=linearity,
            )
        )
    return IsometryVerification(tuple(checks))
