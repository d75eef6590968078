from fractions import Fraction

import pytest

from app.config import settings
from app.enclosure import ComplexRational
from app.enclosure import Exponent
from app.enclosure import Interval
from app.lattice import SuccessCertificate
from app.lattice import Witness
from app.presentation import DirectSpace
from app.presentation import PresentedSpace
from app.presentation import RationalVector
from app.presentation import from_generators
from app.presentation import standard_dyadic
from app.sigma import ROOT
from app.sigma import NodeMap
from app.stepfn import StepFn
from app.synth import Stage
from app.synth import advance_stage
from app.synth import attach_root
from app.synth import check_chain
from app.synth import root_constant_defect
from app.synth import root_constants
from app.synth import run_stages
from app.synth import seed_stage
from app.synth import stage_from_json
from app.synth import stage_limit
from app.synth import stage_to_json
from app.synth import verify_stages
from app.utils import BudgetExhaustedError
from app.utils import ChainViolationError
from app.utils import DomainShapeError

HALF = Fraction(1, 2)


@pytest.fixture(autouse=True)
def small_grid(monkeypatch):
    # the grid fallback only runs when a generator is still outside the span
    monkeypatch.setattr(settings, "witness_grid_budget", 256)


def _space(p: str = "1") -> DirectSpace:
    exponent = Exponent.rational(p)
    return DirectSpace(exponent, standard_dyadic(exponent))


@pytest.mark.parametrize("p", ["1", "3"])
def test_whitebox_stages_on_dyadic(p):
    """Two levels split [0,1) into halves and stay summative."""
    space = _space(p)
    stages = run_stages(space, 2)
    assert [s.n for s in stages] == [0, 1, 2]
    assert stages[0].phi[(0,)] == StepFn.constant(1)
    last = stages[-1].phi
    assert set(last.nodes) == {(0,), (0, 0), (0, 1)}
    assert last[(0, 0)] == StepFn.indicator(0, HALF)
    assert last[(0, 1)] == StepFn.indicator(HALF, 1)
    assert all(a.k < b.k for a, b in zip(stages, stages[1:]))
    check_chain(space, stages, stages[-1].k)
    for row in verify_stages(space, stages):
        assert row["certificate_ok"] and row["chain_ok"] and row["summative"]


def test_advance_is_a_no_op_at_reached_level():
    space = _space()
    stage = seed_stage(space)
    assert advance_stage(space, stage, stage.k + 1, 0) is stage


def test_stage_json_codec():
    """Stages survive their dump, both for step functions and rational vectors."""
    for stage in run_stages(_space(), 2):
        back = stage_from_json(stage_to_json(stage))
        assert dict(back.phi) == dict(stage.phi)
        assert back.certificate == stage.certificate
        assert (back.n, back.k, back.strategy) == (stage.n, stage.k, stage.strategy)
    rational = Stage(0, NodeMap({(0,): RationalVector.basis(3)}), 4, SuccessCertificate(0), "dovetail")
    assert stage_from_json(stage_to_json(rational)).phi[(0,)] == RationalVector.basis(3)


def test_stage_limit():
    """The limit at a node comes from the first stage with enough margin."""
    space = _space()
    stages = run_stages(space, 2)
    assert stage_limit(space, stages, (0,), 1) == StepFn.constant(1)
    assert stage_limit(space, stages, (0, 1), stages[-1].k) == StepFn.indicator(HALF, 1)
    with pytest.raises(DomainShapeError):
        stage_limit(space, stages, (5,), 1)
    with pytest.raises(BudgetExhaustedError):
        stage_limit(space, stages, (0,), 10_000)


def test_root_constants_and_attach_root():
    """c_i = 2^-i / ||phi((i))||, and the root is the sum of the rescaled tops."""
    space = _space()
    phi = NodeMap({(0,): StepFn.indicator(0, HALF), (1,): StepFn.indicator(HALF, 1)})
    assert root_constants(space, phi) == {0: Fraction(2), 1: Fraction(1)}
    tree = attach_root(space, phi)
    assert tree.domain_kind == "tree"
    assert tree[(0,)] == StepFn.indicator(0, HALF, 2)
    assert tree[ROOT] == StepFn.from_pieces([(0, HALF, 2), (HALF, 1, 1)])


def test_root_constants_carry_their_defect():
    """An irrational level-1 norm makes c_i inexact; the defect says by how much."""
    space = _space()
    phi = NodeMap({(0,): StepFn.indicator(0, HALF), (1,): StepFn.indicator(HALF, 1)})
    assert root_constant_defect(space, phi) == 0
    cubic = DirectSpace(Exponent.rational(3))
    slanted = NodeMap({(0,): StepFn.indicator(0, HALF, ComplexRational(Fraction(1), Fraction(1)))})
    c = root_constants(cubic, slanted)[0]
    defect = root_constant_defect(cubic, slanted)
    assert 0 < defect < Fraction(1, 1 << 30)
    # ||phi((0))||_3 = 2^(1/6)
    assert abs(float(c) * 2 ** (1 / 6) - 1) <= float(defect) + 1e-12


def test_chain_violation_detected():
    """A later stage that drops or moves a node breaks the chain."""
    space = _space()
    before = Stage(0, NodeMap({(0,): StepFn.constant(1)}), 2, SuccessCertificate(0))
    dropped = Stage(1, NodeMap({(1,): StepFn.constant(1)}), 3, SuccessCertificate(0))
    moved = Stage(1, NodeMap({(0,): StepFn.indicator(0, HALF)}), 3, SuccessCertificate(0))
    with pytest.raises(ChainViolationError):
        check_chain(space, [before, dropped], 8)
    with pytest.raises(ChainViolationError):
        check_chain(space, [before, moved], 8)
    rows = verify_stages(space, [before, moved])
    assert rows[1]["chain_ok"] is False


def test_forged_certificate_is_flagged():
    space = _space()
    stages = run_stages(space, 2)
    empty = Witness({}, Interval.point(0))
    forged = Stage(2, stages[-1].phi, stages[-1].k, SuccessCertificate(2, (empty, empty), {}))
    rows = verify_stages(space, [*stages[:-1], forged])
    assert rows[-1]["certificate_ok"] is False


def test_budget_failure_keeps_partial_stages(monkeypatch):
    """Running out of extension rounds reports the stages reached so far."""
    monkeypatch.setattr(settings, "extend_max_rounds", 1)
    with pytest.raises(BudgetExhaustedError) as info:
        run_stages(_space(), 2)
    partial = info.value.partial["stages"]
    assert [s["n"] for s in partial] == [0, 1]


def test_seed_needs_a_nonzero_generator():
    p = Exponent.rational(1)
    space = DirectSpace(p, from_generators(p, [StepFn.zero(), StepFn.zero()]))
    with pytest.raises(BudgetExhaustedError):
        seed_stage(space)


def test_dovetail_first_level_through_oracle():
    """The oracle-only search certifies level 1 from the seed alone."""
    space = PresentedSpace(standard_dyadic(Exponent.rational(3)))
    stages = run_stages(space, 1, "dovetail")
    assert [s.strategy for s in stages] == ["dovetail", "dovetail"]
    assert stages[-1].phi[(0,)] == RationalVector.basis(0)
    assert all(row["certificate_ok"] for row in verify_stages(space, stages))


def test_whitebox_strategy_needs_step_functions():
    space = PresentedSpace(standard_dyadic(Exponent.rational(1)))
    stage = seed_stage(space)
    with pytest.raises(DomainShapeError):
        advance_stage(space, stage, stage.k + 1, 1, "whitebox")
