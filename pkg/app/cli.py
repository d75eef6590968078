"""Batch front door: ``python -m app.cli <verb> INPUT... [flags]``.

Exit status 0 on success, 2 on unreadable input, 3 when a search budget
runs out (a partial report is still written), 4 when the exponent is 2 or
the two presentations disagree on it, 1 for any other domain failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from collections.abc import Sequence
from fractions import Fraction
from typing import Any

from . import cache
from .config import settings
from .enclosure import Exponent
from .isometry import IsometryData
from .isometry import random_probes
from .isometry import synthesize_isometry
from .isometry import verify_isometry
from .lattice import partial_disintegration_violations
from .models import ErrorDetail
from .models import IsometryDataModel
from .models import JobSpec
from .models import PresentationSpec
from .models import Report
from .models import SigmaInput
from .models import StageModel
from .models import VerificationModel
from .models import parse_document
from .presentation import DirectSpace
from .presentation import NormedSpace
from .presentation import Presentation
from .presentation import RationalVector
from .presentation import space_for
from .sigma import dist_bound
from .sigma import format_node
from .sigma import is_separating_antitone_exact
from .sigma import pointwise_sigma
from .sigma import sigma_map
from .sigma import sigma_vec
from .stepfn import disjointly_supported
from .synth import Stage
from .synth import root_constant_defect
from .synth import root_constants
from .synth import run_stages
from .synth import stage_from_json
from .synth import stage_to_json
from .synth import verify_stages
from .utils import BudgetExhaustedError
from .utils import ParseError
from .utils import WorkbenchError
from .utils import elapsed_ms
from .utils import log_event

ARITY = {"sigma": 1, "disintegrate": 1, "isometry": 2, "verify": 1}


class VerificationFailedError(WorkbenchError):
    kind = "verification_failed"


def _build(document: dict[str, Any]) -> Presentation:
    spec = parse_document(PresentationSpec, document)
    try:
        return spec.build()
    except (ValueError, ZeroDivisionError) as exc:
        raise ParseError(f"bad presentation: {exc}") from exc


def _run_sigma(document: dict[str, Any], k: int) -> dict[str, Any]:
    data = parse_document(SigmaInput, document)
    try:
        p = Exponent.rational(data.p)
        if data.is_pair:
            f, g = data.f.to_stepfn(), data.g.to_stepfn()
        else:
            psi = data.node_map()
    except (ValueError, ZeroDivisionError) as exc:
        raise ParseError(f"bad sigma input: {exc}") from exc
    space = DirectSpace(p)
    if data.is_pair:
        sigma = sigma_vec(space, f, g, k)
        return {
            "sigma": sigma.to_json(),
            "sigma_excludes_zero": sigma.excludes_zero(),
            "disjoint_exact": disjointly_supported(f, g),
        }
    sigma = sigma_map(space, psi, k)
    return {
        "sigma": sigma.to_json(),
        "sigma_excludes_zero": sigma.excludes_zero(),
        "pointwise_integral": pointwise_sigma(psi).integral(p, k).to_json(),
        "dist_bound": dist_bound(space, psi, k).to_json(),
        "separating_antitone_exact": is_separating_antitone_exact(psi),
        "violations": partial_disintegration_violations(psi),
    }


def _cached_stages(
    document: dict[str, Any], space: NormedSpace[Any], budget: int, strategy: str
) -> list[Stage]:
    key = cache.stage_key(document, strategy, budget)
    store = cache.StageStore.at(settings.cache_dir)
    if settings.cache_enabled:
        hit = store.load(key)
        if hit is not None:
            stages = [stage_from_json(s) for s in hit.stages]
            if all(c["certificate_ok"] for c in verify_stages(space, stages)):
                log_event("stage_cache_hit", key=key)
                return stages
    stages = run_stages(space, budget, strategy)
    if settings.cache_enabled:
        try:
            store.save(key, [stage_to_json(s) for s in stages], settings.cache_ttl_s)
        except OSError as exc:
            log_event("stage_cache_write_failed", level=logging.WARNING, reason=str(exc))
    return stages


def _stage_models(stages: Sequence[Stage]) -> list[StageModel]:
    return [StageModel.model_validate(stage_to_json(s)) for s in stages]


def _disintegration_results(space: NormedSpace[Any], stages: Sequence[Stage]) -> dict[str, Any]:
    last = stages[-1]
    return {
        "levels": verify_stages(space, stages),
        "n": last.n,
        "k_n": last.k,
        "nodes": [format_node(n) for n in sorted(last.phi.nodes)],
        "success_index_lower_bound": last.certificate.level,
        "root_constants": {str(i): str(c) for i, c in sorted(root_constants(space, last.phi).items())},
        "root_constant_defect": str(root_constant_defect(space, last.phi)),
    }


def _verify_report(report: Report) -> dict[str, Any]:
    if report.verb == "verify":
        raise ParseError("a verify report has nothing left to verify")
    if report.status != 0:
        raise ParseError("only successful reports can be verified", {"status": report.status})
    if report.verb == "sigma":
        again = _run_sigma(report.inputs[0], report.precision)
        return {"verified_verb": "sigma", "ok": again == report.results, "checks": again}
    if report.verb == "disintegrate":
        presentation = _build(report.inputs[0])
        space = space_for(presentation, report.strategy)
        stages = [stage_from_json(s.model_dump()) for s in report.stages.get("main", [])]
        if not stages:
            raise ParseError("report carries no stages")
        checks = verify_stages(space, stages)
        ok = all(c["certificate_ok"] and c["chain_ok"] for c in checks)
        return {"verified_verb": "disintegrate", "ok": ok, "checks": checks}
    source, target = _build(report.inputs[0]), _build(report.inputs[1])
    if report.isometry is None or report.verification is None:
        raise ParseError("report carries no isometry data")
    data = IsometryData.from_json(report.isometry.model_dump())
    probes = [
        RationalVector.from_json({j: c.model_dump() for j, c in probe.probe.items()})
        for probe in report.verification.probes
    ]
    again = verify_isometry(target, data, source, probes, report.precision).to_json()
    bound = Fraction(2, 1 << report.precision)
    ok = (
        Fraction(again["max_norm_gap"]) == Fraction(report.verification.max_norm_gap)
        and Fraction(again["max_norm_gap"]) <= bound
        and Fraction(again["max_linearity"]) <= bound
    )
    return {
        "verified_verb": "isometry",
        "ok": ok,
        "checks": {"max_norm_gap": again["max_norm_gap"], "max_linearity": again["max_linearity"]},
    }


def execute(
    verb: str,
    documents: list[dict[str, Any]],
    precision: int,
    budget: int,
    strategy: str,
    seed: int,
) -> Report:
    """Run one job over already-loaded documents; domain failures raise."""
    if verb not in ARITY:
        raise ParseError(f"unknown verb {verb!r}", {"verbs": sorted(ARITY)})
    if len(documents) != ARITY[verb]:
        raise ParseError(
            f"{verb} takes {ARITY[verb]} input document(s), got {len(documents)}",
            {"expected": ARITY[verb], "got": len(documents)},
        )
    report = Report(
        verb=verb,
        precision=precision,
        budget=budget,
        strategy=strategy,
        seed=seed,
        inputs=documents,
    )
    if verb == "sigma":
        report.results = _run_sigma(documents[0], precision)
    elif verb == "disintegrate":
        presentation = _build(documents[0])
        space = space_for(presentation, strategy)
        stages = _cached_stages(documents[0], space, budget, strategy)
        report.results = _disintegration_results(space, stages)
        report.stages = {"main": _stage_models(stages)}
    elif verb == "isometry":
        source, target = _build(documents[0]), _build(documents[1])
        data = synthesize_isometry(source, target, precision, budget, strategy)
        probes = random_probes(budget, settings.verify_probes, settings.probe_terms, seed)
        verification = verify_isometry(target, data, source, probes, precision)
        bound = Fraction(2, 1 << precision)
        report.isometry = IsometryDataModel.model_validate(data.to_json())
        report.verification = VerificationModel.model_validate(verification.to_json())
        report.results = {
            "max_norm_gap": str(verification.max_norm_gap),
            "max_linearity": str(verification.max_linearity),
            "bound": str(bound),
            "within_bound": verification.max_norm_gap <= bound
            and verification.max_linearity <= bound,
        }
    else:
        target_report = parse_document(Report, documents[0])
        results = _verify_report(target_report)
        report.results = results
        if not results["ok"]:
            raise VerificationFailedError(
                f"{results['verified_verb']} report does not re-verify", {"results": results}
            )
    return report


def failure_report(
    exc: WorkbenchError,
    verb: str,
    documents: list[dict[str, Any]],
    precision: int,
    budget: int,
    strategy: str,
    seed: int,
) -> Report:
    """The report written when a job fails; budget failures keep their partial results."""
    report = Report(
        verb=verb if verb in ARITY else "verify",
        status=exc.status,
        precision=precision,
        budget=budget,
        strategy=strategy,
        seed=seed,
        inputs=documents,
        error=ErrorDetail(type=exc.kind, message=exc.message, status=exc.status, details=exc.details),
    )
    if isinstance(exc, BudgetExhaustedError) and exc.partial:
        if "stages" in exc.partial:
            report.stages = {"partial": [StageModel.model_validate(s) for s in exc.partial["stages"]]}
        if "isometry" in exc.partial:
            report.isometry = IsometryDataModel.model_validate(exc.partial["isometry"])
    if isinstance(exc, VerificationFailedError):
        report.results = exc.details.get("results", {})
    return report


def render(report: Report) -> str:
    return json.dumps(report.model_dump(mode="json", exclude_none=True), sort_keys=True, indent=2) + "\n"


def _load(path: str) -> dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}", {"path": path}) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} is not JSON: {exc.msg}", {"path": path, "line": exc.lineno}) from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path} must hold a JSON object", {"path": path})
    return data


def run(job: JobSpec) -> int:
    """Execute a job, write its report and return the exit status."""
    start = time.perf_counter()
    documents: list[dict[str, Any]] = []
    try:
        documents = [_load(p) for p in job.inputs]
        report = execute(job.verb, documents, job.precision, job.budget, job.strategy, job.seed)
    except WorkbenchError as exc:
        report = failure_report(
            exc, job.verb, documents, job.precision, job.budget, job.strategy, job.seed
        )
    text = render(report)
    if job.report:
        with open(job.report, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    log_event("job_finished", verb=job.verb, status=report.status, elapsed_ms=elapsed_ms(start))
    return report.status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lp-workbench", description=__doc__.splitlines()[0])
    parser.add_argument("verb", choices=sorted(ARITY))
    parser.add_argument("inputs", nargs="+", metavar="INPUT")
    parser.add_argument("--precision", type=int, help="target precision k (bound 2^-k)")
    parser.add_argument("--budget", type=int, help="stage budget n")
    parser.add_argument("--strategy", choices=["whitebox", "dovetail"])
    parser.add_argument("--seed", type=int)
    parser.add_argument("--report", help="write the report here instead of stdout")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    given = {k: v for k, v in vars(args).items() if v is not None}
    try:
        job = parse_document(JobSpec, given)
    except ParseError as exc:
        sys.stderr.write(f"{exc.message}: {json.dumps(exc.details, default=str)}\n")
        return exc.status
    return run(job)


if __name__ == "__main__":
    sys.exit(main())
