from typing import Annotated
from typing import Any
from typing import Literal
from typing import Optional
from typing import TypeVar

from pydantic import BaseModel
from pydantic import Field
from pydantic import ValidationError
from pydantic import model_validator

from .config import settings
from .enclosure import Exponent
from .lattice import SuccessCertificate
from .presentation import Presentation
from .presentation import dyadic_ring
from .presentation import finite_ring
from .presentation import from_generators
from .presentation import half_swapped_dyadic
from .presentation import induced_presentation
from .presentation import oracle_view
from .presentation import standard_dyadic
from .sigma import NodeMap
from .sigma import parse_node
from .stepfn import DyadicSet
from .stepfn import StepFn
from .utils import ParseError

RationalStr = Annotated[str, Field(pattern=r"^\s*-?\d+(/\d+|\.\d+)?\s*$")]
Verb = Literal["sigma", "disintegrate", "isometry", "verify"]
Strategy = Literal["whitebox", "dovetail"]

M = TypeVar("M", bound=BaseModel)


class PieceModel(BaseModel):
    """A constant complex value on [lo, hi)."""

    lo: RationalStr
    hi: RationalStr
    re: RationalStr = "0"
    im: RationalStr = "0"


class StepFnModel(BaseModel):
    pieces: list[PieceModel] = Field(default_factory=list)

    model_config = {
        "json_schema_extra": {
            "examples": [
                {"pieces": [{"lo": "0", "hi": "1/2", "re": "1", "im": "0"}]}
            ]
        }
    }

    def to_stepfn(self) -> StepFn:
        return StepFn.from_json(self.model_dump())


class SpanModel(BaseModel):
    lo: RationalStr
    hi: RationalStr


class PresentationSpec(BaseModel):
    """A presentation document: explicit generators, a measure ring or a built-in."""

    p: RationalStr
    kind: Literal["stepfn", "measure_ring", "dyadic_ring", "standard_dyadic", "half_swapped_dyadic"]
    name: Optional[str] = None
    generators: list[StepFnModel] = Field(default_factory=list)
    sets: list[list[SpanModel]] = Field(default_factory=list)
    view: Literal["whitebox", "oracle"] = "whitebox"

    model_config = {
        "json_schema_extra": {
            "examples": [
                {"p": "3/2", "kind": "stepfn", "generators": [{"pieces": [{"lo": "0", "hi": "1"}]}]},
                {"p": "1", "kind": "measure_ring", "sets": [[{"lo": "0", "hi": "1/2"}]]},
            ]
        }
    }

    @model_validator(mode="after")
    def _check_kind(self) -> "PresentationSpec":
        if self.kind == "stepfn" and not self.generators:
            raise ValueError("a stepfn presentation needs at least one generator")
        if self.kind == "measure_ring":
            if not self.sets:
                raise ValueError("a measure_ring presentation needs at least one set")
            if len(self.sets) > settings.max_ring_sets:
                raise ValueError(f"a measure_ring takes at most {settings.max_ring_sets} sets")
        return self

    def exponent(self) -> Exponent:
        return Exponent.rational(self.p)

    def build(self) -> Presentation:
        p = self.exponent()
        if self.kind == "stepfn":
            out: Presentation = from_generators(
                p, [g.to_stepfn() for g in self.generators], self.name or "stepfn"
            )
        elif self.kind == "measure_ring":
            sets = [DyadicSet.from_json(s.model_dump() for s in spans) for spans in self.sets]
            out = induced_presentation(finite_ring(sets, self.name or "finite"), p)
        elif self.kind == "dyadic_ring":
            out = induced_presentation(dyadic_ring(), p)
        elif self.kind == "half_swapped_dyadic":
            out = half_swapped_dyadic(p)
        else:
            out = standard_dyadic(p)
        return oracle_view(out) if self.view == "oracle" else out


class SigmaInput(BaseModel):
    """Either a pair f, g or a node-indexed map."""

    p: RationalStr
    f: Optional[StepFnModel] = None
    g: Optional[StepFnModel] = None
    kind: Literal["orchard", "tree"] = "orchard"
    nodes: dict[str, StepFnModel] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_shape(self) -> "SigmaInput":
        pair = self.f is not None and self.g is not None
        if pair == bool(self.nodes):
            raise ValueError("give either both f and g, or nodes")
        return self

    @property
    def is_pair(self) -> bool:
        return not self.nodes

    def node_map(self) -> NodeMap[StepFn]:
        return NodeMap(
            {parse_node(n): v.to_stepfn() for n, v in self.nodes.items()}, self.kind
        )


class IntervalModel(BaseModel):
    lo: RationalStr
    hi: RationalStr


class ComplexModel(BaseModel):
    re: RationalStr = "0"
    im: RationalStr = "0"


class WitnessModel(BaseModel):
    coefficients: dict[str, ComplexModel] = Field(default_factory=dict)
    residual: IntervalModel


class CertificateModel(BaseModel):
    level: Annotated[int, Field(ge=0)]
    witnesses: list[WitnessModel] = Field(default_factory=list)
    defects: dict[str, IntervalModel] = Field(default_factory=dict)

    def to_certificate(self) -> SuccessCertificate:
        return SuccessCertificate.from_json(self.model_dump())


class VectorModel(BaseModel):
    kind: Literal["stepfn", "rational"] = "stepfn"
    pieces: list[PieceModel] = Field(default_factory=list)
    terms: dict[str, ComplexModel] = Field(default_factory=dict)


class StageModel(BaseModel):
    n: Annotated[int, Field(ge=0)]
    k: Annotated[int, Field(ge=0)]
    strategy: Strategy = "whitebox"
    nodes: dict[str, VectorModel]
    certificate: CertificateModel


class ResidualsModel(BaseModel):
    stage: RationalStr = "0"
    transport: RationalStr = "0"
    expression: RationalStr = "0"
    length_defect: RationalStr = "0"
    total: RationalStr = "0"


class GeneratorImageModel(BaseModel):
    generator: Annotated[int, Field(ge=0)]
    image: dict[str, ComplexModel] = Field(default_factory=dict)
    residuals: ResidualsModel = Field(default_factory=ResidualsModel)


class IsometryDataModel(BaseModel):
    source: str
    target: str
    p: RationalStr
    k: Annotated[int, Field(ge=0)]
    images: list[GeneratorImageModel] = Field(default_factory=list)


class ProbeModel(BaseModel):
    probe: dict[str, ComplexModel]
    norm_source: IntervalModel
    norm_target: IntervalModel
    norm_gap: RationalStr
    linearity: IntervalModel


class VerificationModel(BaseModel):
    probes: list[ProbeModel] = Field(default_factory=list)
    max_norm_gap: RationalStr = "0"
    max_linearity: RationalStr = "0"


class ErrorDetail(BaseModel):
    """Error details model."""

    type: str
    message: str
    status: int
    details: Optional[dict[str, Any]] = None


class ErrorResponse(BaseModel):
    """Error response model."""

    error: ErrorDetail

    model_config = {
        "json_schema_extra": {
            "examples": [
                {
                    "error": {
                        "type": "p_equals_two",
                        "message": "cannot certify p != 2 for exponent 2",
                        "status": 422,
                        "details": {"p": "2"},
                    }
                }
            ]
        }
    }


class JobSpec(BaseModel):
    """One CLI invocation."""

    verb: Verb
    inputs: list[str] = Field(default_factory=list)
    precision: Annotated[int, Field(ge=0)] = Field(default_factory=lambda: settings.default_precision)
    budget: Annotated[int, Field(ge=0)] = Field(default_factory=lambda: settings.default_budget)
    strategy: Strategy = Field(default_factory=lambda: settings.default_strategy)
    seed: int = Field(default_factory=lambda: settings.seed)
    report: Optional[str] = None


class JobRequest(BaseModel):
    """HTTP job body: the input documents inline instead of paths."""

    documents: list[dict[str, Any]] = Field(min_length=1)
    precision: Annotated[int, Field(ge=0)] = Field(default_factory=lambda: settings.default_precision)
    budget: Annotated[int, Field(ge=0)] = Field(default_factory=lambda: settings.default_budget)
    strategy: Strategy = Field(default_factory=lambda: settings.default_strategy)
    seed: int = Field(default_factory=lambda: settings.seed)

    model_config = {
        "json_schema_extra": {
            "examples": [
                {
                    "documents": [{"p": "1", "kind": "standard_dyadic"}],
                    "precision": 8,
                    "budget": 2,
                }
            ]
        }
    }


class Report(BaseModel):
    """Everything a run certified; contains no timings so reruns are byte-identical."""

    verb: Verb
    status: int = 0
    precision: int
    budget: int
    strategy: Strategy
    seed: int
    inputs: list[dict[str, Any]] = Field(default_factory=list)
    results: dict[str, Any] = Field(default_factory=dict)
    stages: dict[str, list[StageModel]] = Field(default_factory=dict)
    isometry: Optional[IsometryDataModel] = None
    verification: Optional[VerificationModel] = None
    error: Optional[ErrorDetail] = None


def parse_document(model: type[M], data: Any) -> M:
    """Validate a JSON document, turning schema failures into ParseError."""
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        raise ParseError(
            f"invalid {model.__name__} document",
            {"errors": exc.errors(include_url=False, include_context=False)},
        ) from exc
