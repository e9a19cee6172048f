"""Judge-scored evaluation of served answers, Table-style reports, and the
gateway-vs-baseline token/latency comparison."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from . import prompts
from .errors import EmptyRecords, MissingSystem, UnparsableJudgment
from .gateway import AnswerResponse
from .llm import ChatBackend, ChatRequest
from .pipeline import QualityScores, parse_judgment
from .styles import StandardsRegistry, StyleLabelVector

logger = logging.getLogger(__name__)

SYSTEM_GATEWAY = "gateway"
SYSTEM_BASELINE = "baseline"

METRICS = ("q_a", "c_a", "s_a", "fluency")
METRIC_TITLES = {"q_a": "Q-A", "c_a": "C-A", "s_a": "S-A", "fluency": "Fluency"}


@dataclass(frozen=True)
class EvalQuery:
    query_id: str
    account_id: str
    question: str


@dataclass(frozen=True)
class EvalRecord:
    query_id: str
    cluster_key: str
    system: str
    answer: str
    scores: QualityScores | None
    prompt_tokens: int
    completion_tokens: int
    latency_ms: float
    error: str | None = None

    def to_record(self) -> dict:
        return {
            "query_id": self.query_id,
            "cluster": self.cluster_key,
            "system": self.system,
            "answer": self.answer,
            "scores": self.scores.to_record() if self.scores else None,
            "usage": {
                "prompt_tokens": self.prompt_tokens,
                "completion_tokens": self.completion_tokens,
            },
            "latency_ms": self.latency_ms,
            "error": self.error,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "EvalRecord":
        scores = rec.get("scores")
        return cls(
            query_id=rec["query_id"],
            cluster_key=rec["cluster"],
            system=rec["system"],
            answer=rec["answer"],
            scores=QualityScores.from_record(scores) if scores else None,
            prompt_tokens=int(rec["usage"]["prompt_tokens"]),
            completion_tokens=int(rec["usage"]["completion_tokens"]),
            latency_ms=float(rec["latency_ms"]),
            error=rec.get("error"),
        )


def run_eval(
    queries: Sequence[EvalQuery],
    systems: Mapping[str, Callable[[EvalQuery], AnswerResponse]],
    judge_backend: ChatBackend,
    registry: StandardsRegistry,
    labels_for: Callable[[str], StyleLabelVector],
    context_for: Callable[[EvalQuery], str],
) -> list[EvalRecord]:
    """Judge every (query, system) exactly once; judge failures are recorded
    on the record, never dropped."""
    records: list[EvalRecord] = []
    for query in queries:
        for system_name, run in systems.items():
            resp = run(query)
            labels = labels_for(resp.cluster_key).as_dict()
            judge_req = ChatRequest(
                system="You are a strict automatic evaluator.",
                messages=(
                    (
                        "user",
                        prompts.judge_prompt(
                            context=context_for(query),
                            question=query.question,
                            answer=resp.answer,
                            standard_labels=[
                                (s.id, s.name, labels[s.id]) for s in registry
                            ],
                        ),
                    ),
                ),
                temperature=0.0,
                tag="eval-judge",
            )
            scores: QualityScores | None = None
            error: str | None = None
            try:
                scores = parse_judgment(judge_backend.complete(judge_req).text)
            except UnparsableJudgment as exc:
                error = str(exc)
                logger.warning("judgment failed for %s/%s: %s", query.query_id, system_name, exc)
            records.append(
                EvalRecord(
                    query_id=query.query_id,
                    cluster_key=resp.cluster_key,
                    system=system_name,
                    answer=resp.answer,
                    scores=scores,
                    prompt_tokens=resp.prompt_tokens,
                    completion_tokens=resp.completion_tokens,
                    latency_ms=resp.latency_ms,
                    error=error,
                )
            )
    return records


@dataclass(frozen=True)
class EvalReport:
    per_cluster: dict  # cluster -> system -> metric -> mean
    overall: dict  # system -> metric -> mean
    usage: dict  # system -> {mean_prompt_tokens, mean_completion_tokens, mean_latency_ms}
    counts: dict  # system -> {records, scored, failed}

    def to_document(self) -> dict:
        return {
            "per_cluster": self.per_cluster,
            "overall": self.overall,
            "usage": self.usage,
            "counts": self.counts,
        }

    @classmethod
    def from_document(cls, doc: dict) -> "EvalReport":
        return cls(doc["per_cluster"], doc["overall"], doc["usage"], doc["counts"])


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def report(records: Sequence[EvalRecord]) -> EvalReport:
    """Per-cluster and overall metric means plus token/latency summaries.
    Full precision is stored; presentation rounding happens at render time."""
    if not records:
        raise EmptyRecords("no records to report on")

    per_cluster: dict[str, dict[str, dict[str, float]]] = {}
    overall: dict[str, dict[str, float]] = {}
    usage: dict[str, dict[str, float]] = {}
    counts: dict[str, dict[str, int]] = {}

    systems = sorted({r.system for r in records})
    clusters = sorted({r.cluster_key for r in records})

    for system in systems:
        sys_records = [r for r in records if r.system == system]
        scored = [r for r in sys_records if r.scores is not None]
        counts[system] = {
            "records": len(sys_records),
            "scored": len(scored),
            "failed": len(sys_records) - len(scored),
        }
        usage[system] = {
            "mean_prompt_tokens": _mean([r.prompt_tokens for r in sys_records]),
            "mean_completion_tokens": _mean([r.completion_tokens for r in sys_records]),
            "mean_latency_ms": _mean([r.latency_ms for r in sys_records]),
        }
        if scored:
            overall[system] = {
                m: _mean([getattr(r.scores, m) for r in scored]) for m in METRICS
            }

    for cluster in clusters:
        per_cluster[cluster] = {}
        for system in systems:
            scored = [
                r
                for r in records
                if r.cluster_key == cluster and r.system == system and r.scores is not None
            ]
            if scored:
                per_cluster[cluster][system] = {
                    m: _mean([getattr(r.scores, m) for r in scored]) for m in METRICS
                }

    return EvalReport(per_cluster, overall, usage, counts)


def verify_report(rep: EvalReport, records: Sequence[EvalRecord], tol: float = 1e-9) -> bool:
    """Recompute every stored mean from the records and compare within tol."""
    fresh = report(records)
    for stored, recomputed in ((rep.overall, fresh.overall), (rep.usage, fresh.usage)):
        for system, metrics in recomputed.items():
            for name, value in metrics.items():
                if abs(stored[system][name] - value) > tol:
                    return False
    for cluster, by_system in fresh.per_cluster.items():
        for system, metrics in by_system.items():
            for name, value in metrics.items():
                if abs(rep.per_cluster[cluster][system][name] - value) > tol:
                    return False
    return True


@dataclass(frozen=True)
class TimeCost:
    mean_latency_ms: dict
    speedup: float  # baseline mean latency / gateway mean latency
    prompt_token_delta: float  # baseline mean prompt tokens - gateway mean

    def to_document(self) -> dict:
        return {
            "mean_latency_ms": self.mean_latency_ms,
            "speedup": self.speedup,
            "prompt_token_delta": self.prompt_token_delta,
        }


def time_cost(
    records: Sequence[EvalRecord],
    gateway_system: str = SYSTEM_GATEWAY,
    baseline_system: str = SYSTEM_BASELINE,
) -> TimeCost:
    """speedup = baseline mean latency / gateway mean latency. With the mock
    backend latency is synthetic, so the prompt-token delta is the primary
    efficiency signal."""
    by_system: dict[str, list[EvalRecord]] = {}
    for r in records:
        by_system.setdefault(r.system, []).append(r)
    for name in (gateway_system, baseline_system):
        if name not in by_system:
            raise MissingSystem(f"no records for system {name!r}")
    gateway_latency = _mean([r.latency_ms for r in by_system[gateway_system]])
    baseline_latency = _mean([r.latency_ms for r in by_system[baseline_system]])
    gateway_tokens = _mean([r.prompt_tokens for r in by_system[gateway_system]])
    baseline_tokens = _mean([r.prompt_tokens for r in by_system[baseline_system]])
    return TimeCost(
        mean_latency_ms={
            gateway_system: gateway_latency,
            baseline_system: baseline_latency,
        },
        speedup=baseline_latency / gateway_latency,
        prompt_token_delta=baseline_tokens - gateway_tokens,
    )


def report_csv_rows(rep: EvalReport) -> list[list[str]]:
    """Table-shaped layout: one row per cluster x metric, one column per
    system, two-decimal presentation."""
    systems = sorted(rep.overall)
    rows = [["dataset_metric"] + systems]
    for cluster in sorted(rep.per_cluster):
        for metric in METRICS:
            row = [f"{cluster} {METRIC_TITLES[metric]}"]
            for system in systems:
                value = rep.per_cluster[cluster].get(system, {}).get(metric)
                row.append("" if value is None else f"{value:.2f}")
            rows.append(row)
    for metric in METRICS:
        row = [f"average {METRIC_TITLES[metric]}"]
        for system in systems:
            value = rep.overall[system].get(metric)
            row.append("" if value is None else f"{value:.2f}")
        rows.append(row)
    return rows
