"""Online inference: author -> cluster -> adapter, context in the prompt.

The serving contract is dual injection: retrieved article chunks go into
the prompt, the author's style rides exclusively in the cluster adapter
referenced by ``adapter_id``. The prompt never contains exemplar replies;
if no adapter is Ready the gateway degrades to the base model rather than
falling back to prompt-injected style.
"""

from __future__ import annotations

import logging
import random
import threading
from dataclasses import dataclass
from typing import Mapping, Sequence

from . import prompts
from .errors import UnknownAccount
from .llm import ChatBackend, ChatRequest
from .pairs import AdapterRecord, AdapterRegistry
from .pipeline import sample_exemplars
from .retrieval import DEFAULT_TOP_N, RetrievalIndex
from .styles import StyleProfile
from .tree import ClusterId, StyleTree, assign_cluster, largest_leaf

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnswerRequest:
    account_id: str
    question: str
    top_n: int | None = None
    trace: bool = False

    def __post_init__(self):
        if not self.question:
            raise ValueError("question must be non-empty")


@dataclass(frozen=True)
class AnswerResponse:
    answer: str
    cluster_key: str
    adapter_used: str | None
    context_refs: tuple[str, ...]
    prompt_tokens: int
    completion_tokens: int
    latency_ms: float
    degraded: bool
    trace_notes: tuple[str, ...] = ()

    def to_record(self) -> dict:
        return {
            "answer": self.answer,
            "cluster": self.cluster_key,
            "adapter_used": self.adapter_used,
            "context_refs": list(self.context_refs),
            "usage": {
                "prompt_tokens": self.prompt_tokens,
                "completion_tokens": self.completion_tokens,
            },
            "latency_ms": self.latency_ms,
            "degraded": self.degraded,
            "trace_notes": list(self.trace_notes),
        }


class Gateway:
    def __init__(
        self,
        tree: StyleTree,
        profiles: Mapping[str, StyleProfile],
        adapters: AdapterRegistry,
        index: RetrievalIndex,
        backend: ChatBackend,
        system_prompt: str = prompts.ANSWER_SYSTEM,
        top_n: int = DEFAULT_TOP_N,
        default_cluster_key: str | None = None,
        allow_unprofiled: bool = True,
    ):
        self.tree = tree
        self.profiles = dict(profiles)
        self.adapters = adapters
        self.index = index
        self.backend = backend
        self.system_prompt = system_prompt
        self.top_n = top_n
        self.default_cluster_key = default_cluster_key
        self.allow_unprofiled = allow_unprofiled
        self._cache: dict[str, tuple[ClusterId, AdapterRecord | None]] = {}
        self._cache_epoch = adapters.epoch
        self._cache_lock = threading.Lock()

    # --- resolution ---

    def _default_cluster(self) -> ClusterId:
        if self.default_cluster_key is not None:
            for cid in self.tree.cluster_ids():
                if cid.key == self.default_cluster_key:
                    return cid
        return self.tree.cluster_id(largest_leaf(self.tree.root))

    def set_tree(self, tree: StyleTree) -> None:
        """Publish a new tree epoch; resolution cache is invalidated."""
        with self._cache_lock:
            self.tree = tree
            self._cache.clear()

    def resolve(self, account_id: str) -> tuple[ClusterId, AdapterRecord | None]:
        """Profile -> leaf cluster -> Ready adapter (or none). Memoized until
        the registry or tree changes epoch."""
        with self._cache_lock:
            if self.adapters.epoch != self._cache_epoch:
                self._cache.clear()
                self._cache_epoch = self.adapters.epoch
            cached = self._cache.get(account_id)
        if cached is not None:
            return cached

        profile = self.profiles.get(account_id)
        if profile is not None:
            cluster = assign_cluster(profile.labels, self.tree)
        elif self.allow_unprofiled:
            cluster = self._default_cluster()
        else:
            raise UnknownAccount(account_id)
        record = self.adapters.lookup(cluster.key)
        with self._cache_lock:
            self._cache[account_id] = (cluster, record)
        return cluster, record

    # --- serving ---

    def _retrieve(self, req: AnswerRequest) -> tuple[list[str], list[str], list[str]]:
        notes: list[str] = []
        if not self.index.has_account(req.account_id):
            notes.append("empty-retrieval:no-index")
            return [], [], notes
        result = self.index.retrieve(
            req.account_id, req.question, top_n=req.top_n or self.top_n
        )
        if not result.chunks:
            notes.append("empty-retrieval:no-match")
        return result.texts(), result.refs(), notes

    def answer(self, req: AnswerRequest) -> AnswerResponse:
        cluster, record = self.resolve(req.account_id)
        texts, refs, notes = self._retrieve(req)
        body = prompts.assemble_answer_prompt(req.question, texts)
        adapter_id = record.artifact_uri if record is not None else None
        resp = self.backend.complete(
            ChatRequest(
                system=self.system_prompt,
                messages=(("user", body),),
                adapter_id=adapter_id,
                temperature=0.0,
                tag="answer",
            )
        )
        return AnswerResponse(
            answer=resp.text,
            cluster_key=cluster.key,
            adapter_used=adapter_id,
            context_refs=tuple(refs),
            prompt_tokens=resp.prompt_tokens,
            completion_tokens=resp.completion_tokens,
            latency_ms=resp.latency_ms,
            degraded=adapter_id is None,
            trace_notes=tuple(notes) if req.trace else (),
        )

    # --- prompt-injection baseline (eval harness only) ---

    def baseline_assemble(
        self,
        req: AnswerRequest,
        exemplar_pool: Mapping[str, Sequence[tuple[str, str]]],
        m: int,
        rng: random.Random,
    ) -> str:
        """Baseline prompt body: context plus m style exemplars plus the
        question. With m = 0 this reduces to the gateway prompt."""
        texts, _, _ = self._retrieve(req)
        exemplars: list[tuple[str, str]] = []
        if m > 0:
            picks = sample_exemplars(exemplar_pool, m, rng)
            exemplars = [exemplar_pool[a][i] for a, i in picks]
        return prompts.assemble_answer_prompt(req.question, texts, exemplars)

    def baseline_answer(
        self,
        req: AnswerRequest,
        exemplar_pool: Mapping[str, Sequence[tuple[str, str]]],
        m: int,
        rng: random.Random,
    ) -> AnswerResponse:
        cluster, _ = self.resolve(req.account_id)
        _, refs, notes = self._retrieve(req)
        body = self.baseline_assemble(req, exemplar_pool, m, rng)
        resp = self.backend.complete(
            ChatRequest(
                system=self.system_prompt,
                messages=(("user", body),),
                adapter_id=None,
                temperature=0.0,
                tag="baseline-answer",
            )
        )
        return AnswerResponse(
            answer=resp.text,
            cluster_key=cluster.key,
            adapter_used=None,
            context_refs=tuple(refs),
            prompt_tokens=resp.prompt_tokens,
            completion_tokens=resp.completion_tokens,
            latency_ms=resp.latency_ms,
            degraded=True,
            trace_notes=tuple(notes) if req.trace else (),
        )
