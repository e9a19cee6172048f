"""Training-data pipeline: CQA construction, stylized rewriting, judging,
and metric-based selection.

Two construction strategies feed the pool: forward generation straight from
article segments, and a bottom-up pass that simulates user roles for the
account's domain, asks their questions, retrieves context, and answers
grounded in it. Rewrites restyle the answer per target cluster; a judge
scores each instance on four dimensions and the top-N per cluster survive.
"""

from __future__ import annotations

import logging
import random
import re
from collections import Counter
from dataclasses import dataclass, replace
from enum import Enum
from typing import Mapping, Sequence

from . import prompts
from .errors import (
    EmptyExemplarPool,
    MalformedGeneration,
    UnparsableJudgment,
    UnscoredInstance,
)
from .llm import ChatBackend, ChatRequest
from .retrieval import ArticleChunk, RetrievalIndex
from .styles import StandardsRegistry, StyleLabelVector, StyleProfile
from .tree import ClusterId

logger = logging.getLogger(__name__)

DEFAULT_M_EXEMPLARS = 3
DEFAULT_SELECT_N = 10_000
DEFAULT_N_ROLES = 3
DEFAULT_N_QUESTIONS = 3

SCORE_MIN = 1.0
SCORE_MAX = 5.0

_QA_RE = re.compile(r"Q:\s*(?P<q>.+?)\s*\nA:\s*(?P<a>.+)", re.DOTALL)
_JUDGE_RE = re.compile(
    r"C-A\s*=\s*(?P<ca>[\d.]+)\s*;\s*Q-A\s*=\s*(?P<qa>[\d.]+)\s*;"
    r"\s*S-A\s*=\s*(?P<sa>[\d.]+)\s*;\s*F\s*=\s*(?P<f>[\d.]+)"
)


class Provenance(str, Enum):
    FORWARD_THINKING = "forward_thinking"
    BOTTOM_UP = "bottom_up"
    LIVE_USER = "live_user"


@dataclass(frozen=True)
class CqaTriplet:
    id: str
    account_id: str
    context_refs: tuple[str, ...]
    context_text: str
    question: str
    answer: str
    provenance: Provenance

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "account_id": self.account_id,
            "context_refs": list(self.context_refs),
            "context_text": self.context_text,
            "question": self.question,
            "answer": self.answer,
            "provenance": self.provenance.value,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "CqaTriplet":
        return cls(
            id=rec["id"],
            account_id=rec["account_id"],
            context_refs=tuple(rec["context_refs"]),
            context_text=rec["context_text"],
            question=rec["question"],
            answer=rec["answer"],
            provenance=Provenance(rec["provenance"]),
        )


@dataclass(frozen=True)
class QualityScores:
    c_a: float
    q_a: float
    s_a: float
    fluency: float
    aggregate: float

    def __post_init__(self):
        for name in ("c_a", "q_a", "s_a", "fluency"):
            value = getattr(self, name)
            if not (SCORE_MIN <= value <= SCORE_MAX):
                raise ValueError(f"{name}={value} outside [{SCORE_MIN}, {SCORE_MAX}]")
        if abs(self.aggregate - (self.c_a + self.q_a + self.s_a + self.fluency)) > 1e-9:
            raise ValueError("aggregate does not equal the component sum")

    @classmethod
    def from_components(cls, c_a: float, q_a: float, s_a: float, fluency: float) -> "QualityScores":
        return cls(c_a, q_a, s_a, fluency, c_a + q_a + s_a + fluency)

    def to_record(self) -> dict:
        return {
            "c_a": self.c_a,
            "q_a": self.q_a,
            "s_a": self.s_a,
            "fluency": self.fluency,
            "aggregate": self.aggregate,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "QualityScores":
        return cls(rec["c_a"], rec["q_a"], rec["s_a"], rec["fluency"], rec["aggregate"])


@dataclass(frozen=True)
class CqsaInstance:
    cqa_id: str
    cluster_key: str
    stylized_answer: str
    exemplars_used: tuple[tuple[str, int], ...]
    scores: QualityScores | None = None

    def to_record(self) -> dict:
        return {
            "cqa_id": self.cqa_id,
            "cluster": self.cluster_key,
            "stylized_answer": self.stylized_answer,
            "exemplars_used": [list(e) for e in self.exemplars_used],
            "scores": self.scores.to_record() if self.scores else None,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "CqsaInstance":
        scores = rec.get("scores")
        loaded = QualityScores.from_record(scores) if scores else None
        return cls(
            cqa_id=rec["cqa_id"],
            cluster_key=rec["cluster"],
            stylized_answer=rec["stylized_answer"],
            exemplars_used=tuple((a, int(i)) for a, i in rec.get("exemplars_used", [])),
            scores=loaded,
        )


def parse_qa(text: str) -> tuple[str, str]:
    match = _QA_RE.search(text)
    if not match:
        raise MalformedGeneration(f"no Q:/A: block in {text[:80]!r}")
    return match.group("q").strip(), match.group("a").strip()


def gen_cqa_forward(
    account_id: str,
    chunks: Sequence[ArticleChunk],
    backend: ChatBackend,
    counters: Counter | None = None,
) -> list[CqaTriplet]:
    """One grounded (Q, A) per article segment; malformed generations are
    dropped and counted."""
    triplets: list[CqaTriplet] = []
    for chunk in chunks:
        req = ChatRequest(
            system=prompts.ANSWER_SYSTEM,
            messages=(("user", prompts.forward_qa_prompt(chunk.text)),),
            temperature=0.0,
            tag="gen-cqa-forward",
        )
        resp = backend.complete(req)
        try:
            question, answer = parse_qa(resp.text)
        except MalformedGeneration:
            if counters is not None:
                counters["malformed_generation"] += 1
            logger.warning("dropping malformed generation for %s#%s", chunk.article_id, chunk.chunk_id)
            continue
        triplets.append(
            CqaTriplet(
                id=f"{account_id}:fw:{chunk.article_id}#{chunk.chunk_id}",
                account_id=account_id,
                context_refs=(f"{chunk.article_id}#{chunk.chunk_id}",),
                context_text=chunk.text,
                question=question,
                answer=answer,
                provenance=Provenance.FORWARD_THINKING,
            )
        )
    return triplets


def _parse_lines(text: str, limit: int) -> list[str]:
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    return lines[:limit]


def gen_cqa_bottom_up(
    account_id: str,
    domain: str,
    backend: ChatBackend,
    index: RetrievalIndex,
    n_roles: int = DEFAULT_N_ROLES,
    n_questions: int = DEFAULT_N_QUESTIONS,
    top_n: int = 3,
    counters: Counter | None = None,
) -> list[CqaTriplet]:
    """Simulated user roles ask domain questions; context is retrieved and
    the answer grounded in it. Questions with empty retrieval are dropped."""
    roles_resp = backend.complete(
        ChatRequest(
            system=prompts.ANSWER_SYSTEM,
            messages=(("user", prompts.roles_prompt(domain, n_roles)),),
            temperature=0.0,
            tag="gen-roles",
        )
    )
    triplets: list[CqaTriplet] = []
    for role_idx, role in enumerate(_parse_lines(roles_resp.text, n_roles)):
        questions_resp = backend.complete(
            ChatRequest(
                system=prompts.ANSWER_SYSTEM,
                messages=(("user", prompts.role_questions_prompt(domain, role, n_questions)),),
                temperature=0.0,
                tag="gen-questions",
            )
        )
        for q_idx, question in enumerate(_parse_lines(questions_resp.text, n_questions)):
            result = index.retrieve(account_id, question, top_n=top_n)
            if not result.chunks:
                if counters is not None:
                    counters["retrieval_miss"] += 1
                continue
            context_text = "\n\n".join(result.texts())
            answer_resp = backend.complete(
                ChatRequest(
                    system=prompts.ANSWER_SYSTEM,
                    messages=(("user", prompts.grounded_answer_prompt(question, context_text)),),
                    temperature=0.0,
                    tag="gen-answer",
                )
            )
            triplets.append(
                CqaTriplet(
                    id=f"{account_id}:bu:{role_idx}:{q_idx}",
                    account_id=account_id,
                    context_refs=tuple(result.refs()),
                    context_text=context_text,
                    question=question,
                    answer=answer_resp.text.strip(),
                    provenance=Provenance.BOTTOM_UP,
                )
            )
    return triplets


def cluster_label_vector(
    member_profiles: Sequence[StyleProfile], registry: StandardsRegistry
) -> StyleLabelVector:
    """Per-standard majority over the cluster's member profiles (vocabulary
    order breaks ties), giving the cluster's representative label set."""
    if not member_profiles:
        raise EmptyExemplarPool("cluster has no member profiles")
    labels: dict[str, str] = {}
    for standard in registry:
        votes = Counter(p.labels[standard.id] for p in member_profiles)
        top = max(votes.values())
        labels[standard.id] = next(l for l in standard.labels if votes.get(l) == top)
    return StyleLabelVector.from_dict(labels, registry)


def sample_exemplars(
    pool: Mapping[str, Sequence[tuple[str, str]]],
    m: int,
    rng: random.Random,
) -> list[tuple[str, int]]:
    """m draws, each uniform over authors then uniform over that author's pairs."""
    authors = sorted(a for a in pool if pool[a])
    if not authors:
        raise EmptyExemplarPool("no exemplar authors in cluster")
    picks = []
    for _ in range(m):
        author = authors[rng.randrange(len(authors))]
        picks.append((author, rng.randrange(len(pool[author]))))
    return picks


def gen_cqsa(
    cqa: CqaTriplet,
    cluster: ClusterId,
    cluster_labels: StyleLabelVector,
    exemplar_pool: Mapping[str, Sequence[tuple[str, str]]],
    registry: StandardsRegistry,
    backend: ChatBackend,
    rng: random.Random,
    m: int = DEFAULT_M_EXEMPLARS,
) -> CqsaInstance:
    """Rewrite the answer into the cluster's style; context and question are
    never modified."""
    picks = sample_exemplars(exemplar_pool, m, rng)
    exemplars = [exemplar_pool[a][i] for a, i in picks]
    labels = cluster_labels.as_dict()
    prompt = prompts.rewrite_prompt(
        context=cqa.context_text,
        question=cqa.question,
        answer=cqa.answer,
        standard_labels=[(s.id, s.name, labels[s.id]) for s in registry],
        exemplars=exemplars,
    )
    resp = backend.complete(
        ChatRequest(
            system=prompts.ANSWER_SYSTEM,
            messages=(("user", prompt),),
            temperature=0.0,
            tag="gen-cqsa",
        )
    )
    return CqsaInstance(
        cqa_id=cqa.id,
        cluster_key=cluster.key,
        stylized_answer=resp.text.strip(),
        exemplars_used=tuple(picks),
    )


def parse_judgment(text: str) -> QualityScores:
    match = _JUDGE_RE.search(text)
    if not match:
        raise UnparsableJudgment(f"no score line in {text[:80]!r}")
    try:
        return QualityScores.from_components(
            float(match.group("ca")),
            float(match.group("qa")),
            float(match.group("sa")),
            float(match.group("f")),
        )
    except ValueError as exc:
        raise UnparsableJudgment(str(exc)) from exc


def judge(
    instance: CqsaInstance,
    cqa: CqaTriplet,
    cluster_labels: StyleLabelVector,
    registry: StandardsRegistry,
    backend: ChatBackend,
) -> QualityScores:
    """Score one instance on the four dimensions with a temperature-0 judge."""
    labels = cluster_labels.as_dict()
    prompt = prompts.judge_prompt(
        context=cqa.context_text,
        question=cqa.question,
        answer=instance.stylized_answer,
        standard_labels=[(s.id, s.name, labels[s.id]) for s in registry],
    )
    resp = backend.complete(
        ChatRequest(
            system="You are a strict automatic evaluator.",
            messages=(("user", prompt),),
            temperature=0.0,
            tag="judge",
        )
    )
    return parse_judgment(resp.text)


def with_scores(instance: CqsaInstance, scores: QualityScores) -> CqsaInstance:
    return replace(instance, scores=scores)


def select_top(instances: Sequence[CqsaInstance], n: int) -> list[CqsaInstance]:
    """The n highest by aggregate score. Ties fall through the score
    components in order, then ascending (cqa_id, cluster)."""
    for inst in instances:
        if inst.scores is None:
            raise UnscoredInstance(f"instance {inst.cqa_id}/{inst.cluster_key} has no scores")
    ranked = sorted(
        instances,
        key=lambda i: (
            -i.scores.aggregate,
            -i.scores.c_a,
            -i.scores.q_a,
            -i.scores.s_a,
            -i.scores.fluency,
            i.cqa_id,
            i.cluster_key,
        ),
    )
    return ranked[:n]
