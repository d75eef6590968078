"""Staged synthesis of a disintegration from a presentation.

Stage n holds a partial disintegration certified at success level n and a
margin k_n: every map within 2^-k_n of it stays nonzero, injective and
certified. Stages only ever add nodes, so consecutive restrictions agree
exactly and the chain condition holds with room to spare.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from collections.abc import Iterator
from collections.abc import Sequence
from dataclasses import dataclass
from fractions import Fraction
from typing import Any
from typing import Literal

from .config import settings
from .enclosure import ComplexRational
from .enclosure import Interval
from .lattice import SuccessCertificate
from .lattice import children
from .lattice import extend_dense
from .lattice import next_child_index
from .lattice import nonterminal
from .lattice import success_certify
from .lattice import summative_completion
from .lattice import top_level_index
from .lattice import verify_certificate
from .presentation import DirectSpace
from .presentation import NormedSpace
from .presentation import RationalVector
from .sigma import ROOT
from .sigma import Node
from .sigma import NodeMap
from .sigma import dist_bound
from .sigma import format_node
from .sigma import map_distance
from .sigma import parse_node
from .stepfn import StepFn
from .utils import BudgetExhaustedError
from .utils import ChainViolationError
from .utils import DomainShapeError
from .utils import PrecisionExhaustedError
from .utils import ZeroNormError
from .utils import elapsed_ms
from .utils import log_event

Strategy = Literal["whitebox", "dovetail"]


@dataclass(frozen=True)
class Stage:
    n: int
    phi: NodeMap[Any]
    k: int
    certificate: SuccessCertificate
    strategy: str = "whitebox"


def _slack_bits(slack: Fraction) -> int:
    """Smallest k >= 0 with 2^-k < slack."""
    if slack <= 0:
        raise PrecisionExhaustedError("no positive margin left for this stage")
    k = max(0, math.ceil(math.log2(slack.denominator) - math.log2(slack.numerator)))
    while Fraction(1, 1 << k) >= slack:
        k += 1
    return k


def _coefficient_size(c: ComplexRational) -> Fraction:
    return abs(c.re) + abs(c.im)


def margin_precision(
    space: NormedSpace[Any], phi: NodeMap[Any], certificate: SuccessCertificate
) -> int:
    """k_n from explicit slack: value norms, half the pairwise distances,
    witness slack over sum |beta| and defect slack over the number of terms."""
    k = settings.default_precision + 8
    bound = Fraction(1, 1 << certificate.level)
    slacks: list[Fraction] = []
    for value in phi.values():
        slacks.append(space.norm(value, k).lo)
    for a, b in itertools.combinations(phi.nodes, 2):
        slacks.append(space.norm(space.sub(phi[a], phi[b]), k).lo / 2)
    for witness in certificate.witnesses:
        weight = 1 + sum((_coefficient_size(c) for c in witness.coefficients.values()), Fraction(0))
        slacks.append((bound - witness.residual.hi) / weight)
    for node, defect in certificate.defects.items():
        slacks.append((bound - defect.hi) / (2 + len(children(phi.nodes, node))))
    if not slacks:
        return 0
    return _slack_bits(min(slacks))


def seed_stage(space: NormedSpace[Any]) -> Stage:
    """Stage 0: the first generator with certified nonzero norm at node (0)."""
    limit = settings.seed_scan_budget
    if space.size is not None:
        limit = min(limit, space.size)
    for j in range(limit):
        value = space.generator(j)
        if space.is_zero(value):
            continue
        if space.norm(value, settings.default_precision).lo > 0:
            phi = NodeMap({(0,): value})
            certificate = SuccessCertificate(0)
            k = margin_precision(space, phi, certificate)
            log_event("seed", generator=j, k_n=k)
            return Stage(0, phi, k, certificate, _strategy_of(space))
    raise BudgetExhaustedError(
        f"no generator with certified nonzero norm among the first {limit}", {"scanned": limit}
    )


def _strategy_of(space: NormedSpace[Any]) -> str:
    return "whitebox" if isinstance(space, DirectSpace) else "dovetail"


def _whitebox_candidate(space: NormedSpace[Any], stage: Stage, n: int) -> NodeMap[Any]:
    if not isinstance(space, DirectSpace):
        raise DomainShapeError("the white-box strategy needs step-function access")
    targets = [space.generator(j) for j in range(n)]
    psi = extend_dense(stage.phi, targets, n, space.p)
    return summative_completion(space, psi)


def _value_grid(space: NormedSpace[Any]) -> list[Any]:
    count = settings.dovetail_generators
    if space.size is not None:
        count = min(count, space.size)
    values = []
    for mask in range(1, 1 << count):
        values.append(
            space.combine((1, space.generator(j)) for j in range(count) if mask >> j & 1)
        )
    return values


def _positions(nodes: Sequence[Node]) -> list[Node]:
    spots = [(top_level_index(nodes) + 1,)]
    spots.extend(node + (next_child_index(nodes, node),) for node in nodes)
    return spots


def _dovetail_candidates(space: NormedSpace[Any], stage: Stage) -> Iterator[NodeMap[Any]]:
    yield stage.phi
    values = _value_grid(space)
    frontier = [stage.phi]
    for _ in range(settings.dovetail_max_new_nodes):
        grown: list[NodeMap[Any]] = []
        for psi in frontier:
            for spot in _positions(psi.nodes):
                for value in values:
                    candidate = psi.with_entries({spot: value})
                    grown.append(candidate)
                    yield candidate
        frontier = grown


def _acceptable(space: NormedSpace[Any], psi: NodeMap[Any], k: int, n: int) -> SuccessCertificate | None:
    precision = k + 2
    for a, b in itertools.combinations(psi.nodes, 2):
        if space.norm(space.sub(psi[a], psi[b]), precision).lo <= 0:
            return None
    for value in psi.values():
        if space.norm(value, precision).lo <= 0:
            return None
    if dist_bound(space, psi, precision).hi >= Fraction(1, 1 << k):
        return None
    return success_certify(space, psi, n)


def advance_stage(
    space: NormedSpace[Any], stage: Stage, k: int, n: int, strategy: Strategy | None = None
) -> Stage:
    """Extend a stage to success level n, keeping its map on the old nodes."""
    if stage.certificate.level >= n:
        return stage
    k = max(k, stage.k + 1)
    strategy = strategy or stage.strategy
    start = time.perf_counter()
    if strategy == "whitebox":
        psi = _whitebox_candidate(space, stage, n)
        certificate = success_certify(space, psi, n)
    else:
        psi, certificate = stage.phi, None
        for candidate in _dovetail_candidates(space, stage):
            certificate = _acceptable(space, candidate, k, n)
            if certificate is not None:
                psi = candidate
                break
    if certificate is None:
        raise BudgetExhaustedError(
            f"no level-{n} stage found with strategy {strategy}",
            {"n": n, "k": k, "strategy": strategy},
        )
    margin = margin_precision(space, psi, certificate)
    out = Stage(n, psi, max(margin, k), certificate, strategy)
    log_event(
        "stage",
        n=n,
        k_n=out.k,
        nodes=len(psi),
        strategy=strategy,
        elapsed_ms=elapsed_ms(start),
    )
    return out


def run_stages(space: NormedSpace[Any], n: int, strategy: Strategy | None = None) -> list[Stage]:
    """Seed and advance through levels 1..n; a budget failure carries the stages so far."""
    stages = [seed_stage(space)]
    for level in range(1, n + 1):
        try:
            stages.append(advance_stage(space, stages[-1], stages[-1].k + 1, level, strategy))
        except BudgetExhaustedError as exc:
            log_event("budget_exhausted", level=logging.WARNING, n=level, reason=exc.message)
            exc.partial = {"stages": [stage_to_json(s) for s in stages]}
            raise
    return stages


def check_chain(space: NormedSpace[Any], stages: Sequence[Stage], k: int) -> None:
    for before, after in zip(stages, stages[1:]):
        if not set(before.phi.nodes).issubset(after.phi.nodes):
            raise ChainViolationError(
                f"stage {after.n} drops nodes of stage {before.n}", {"n": after.n}
            )
        step = map_distance(space, after.phi.restrict(before.phi.nodes), before.phi, k)
        if step.hi >= Fraction(1, 1 << (before.k + 1)):
            raise ChainViolationError(
                f"stage {after.n} moves more than 2^-{before.k + 1} from stage {before.n}",
                {"n": after.n, "step": step.to_json()},
            )


def stage_limit(space: NormedSpace[Any], stages: Sequence[Stage], node: Node, k: int) -> Any:
    """A value within 2^-k of the limit disintegration at node."""
    holding = [i for i, s in enumerate(stages) if node in s.phi]
    if not holding:
        raise DomainShapeError(
            f"node {format_node(node)} is outside every stage", {"node": format_node(node)}
        )
    for i in holding:
        if stages[i].k >= k:
            check_chain(space, stages[i:], stages[i].k + 2)
            return stages[i].phi[node]
    raise BudgetExhaustedError(
        f"no stage holding {format_node(node)} has margin 2^-{k}",
        {"node": format_node(node), "k": k},
    )


def _level_one_norms(space: NormedSpace[Any], phi: NodeMap[Any]) -> dict[int, Interval]:
    out = {}
    for node in phi.nodes:
        if len(node) != 1:
            continue
        value = phi[node]
        norm = space.norm(value, settings.default_precision)
        if norm.hi == 0 or space.is_zero(value):
            raise ZeroNormError(f"level-1 node {format_node(node)} has norm zero")
        if not norm.is_point:
            norm = space.norm(value, 2 * settings.default_precision)
        if norm.lo <= 0:
            raise ZeroNormError(f"level-1 node {format_node(node)} has no certified norm")
        out[node[0]] = norm
    return out


def root_constants(space: NormedSpace[Any], phi: NodeMap[Any]) -> dict[int, Fraction]:
    """c_i = 2^-i / ||phi((i))||, exact when the norm is rational.

    An irrational norm is replaced by the midpoint of its enclosure;
    root_constant_defect bounds how far c_i ||phi((i))|| then sits from 2^-i.
    """
    return {
        i: Fraction(1, 1 << i) / (norm.lo if norm.is_point else norm.mid)
        for i, norm in _level_one_norms(space, phi).items()
    }


def root_constant_defect(space: NormedSpace[Any], phi: NodeMap[Any]) -> Fraction:
    """Largest |c_i ||phi((i))|| - 2^-i| over the level-1 nodes."""
    defect = Fraction(0)
    for i, norm in _level_one_norms(space, phi).items():
        if norm.is_point:
            continue
        # c_i ||phi((i))|| = 2^-i * norm / mid with norm in [lo, hi]
        ratio = (norm.hi - norm.lo) / (2 * norm.mid)
        defect = max(defect, Fraction(1, 1 << i) * ratio)
    return defect


def attach_root(space: NormedSpace[Any], phi: NodeMap[Any]) -> NodeMap[Any]:
    """Rescale each level-1 subtree and add the root as the sum of level-1 values."""
    constants = root_constants(space, phi)
    scaled = {node: space.scale(constants[node[0]], value) for node, value in phi.items()}
    top = [scaled[(i,)] for i in sorted(constants)]
    scaled[ROOT] = space.combine((1, v) for v in top)
    return NodeMap(scaled, "tree")


def _vector_to_json(value: Any) -> dict[str, Any]:
    if isinstance(value, StepFn):
        return {"kind": "stepfn", **value.to_json()}
    return {"kind": "rational", "terms": value.to_json()}


def _vector_from_json(data: dict[str, Any]) -> Any:
    if data.get("kind") == "rational":
        return RationalVector.from_json(data.get("terms", {}))
    return StepFn.from_json(data)


def stage_to_json(stage: Stage) -> dict[str, Any]:
    return {
        "n": stage.n,
        "k": stage.k,
        "strategy": stage.strategy,
        "nodes": {format_node(n): _vector_to_json(v) for n, v in stage.phi.items()},
        "certificate": stage.certificate.to_json(),
    }


def stage_from_json(data: dict[str, Any]) -> Stage:
    phi = NodeMap({parse_node(n): _vector_from_json(v) for n, v in data["nodes"].items()})
    return Stage(
        n=int(data["n"]),
        phi=phi,
        k=int(data["k"]),
        certificate=SuccessCertificate.from_json(data["certificate"]),
        strategy=data.get("strategy", "whitebox"),
    )


def verify_stages(space: NormedSpace[Any], stages: Sequence[Stage]) -> list[dict[str, Any]]:
    """Re-verify every stage certificate and the chain between neighbours."""
    out = []
    for i, stage in enumerate(stages):
        chain_ok = True
        if i:
            try:
                check_chain(space, stages[i - 1 : i + 1], stages[i - 1].k + 2)
            except ChainViolationError:
                chain_ok = False
        out.append(
            {
                "n": stage.n,
                "certificate_ok": verify_certificate(space, stage.phi, stage.certificate),
                "chain_ok": chain_ok,
                "summative": all(d.hi == 0 for d in stage.certificate.defects.values())
                and len(stage.certificate.defects) == len(nonterminal(stage.phi.nodes)),
            }
        )
    return out
