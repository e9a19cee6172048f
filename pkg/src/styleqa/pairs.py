"""Preference-pair construction per style cluster, training job specs, and
the adapter registry.

Chosen answers are a cluster's selected top instances; the rejected answer
for the same question comes from the stylistically closest sibling cluster,
so the pair differs mainly in the one style label split at their lowest
common ancestor. Training jobs reference the persisted pairs file by
digest, and registered adapters must echo that digest back.
"""

from __future__ import annotations

import logging
import threading
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

from . import prompts
from .errors import (
    DigestMismatch,
    EmptyChosenSet,
    EmptyPairs,
    NoTree,
    SchemaVersionMismatch,
)
from .jsonl import file_digest, read_json, write_json, write_jsonl
from .pipeline import CqaTriplet, CqsaInstance
from .tree import ClusterId, StyleTree, sibling_clusters

logger = logging.getLogger(__name__)

DEFAULT_ADAPTER_RANK = 16
DEFAULT_EPOCHS = 1
DEFAULT_DPO_BETA = 0.1

REGISTRY_FORMAT = "adapter-registry"
REGISTRY_VERSION = 1


@dataclass(frozen=True)
class PreferencePair:
    cluster_key: str
    cqa_id: str
    prompt: str
    chosen: str
    rejected: str
    rejected_cluster_key: str
    differing_standard: str
    margin_meta: float | None = None

    def __post_init__(self):
        if self.chosen == self.rejected:
            raise ValueError("chosen and rejected must differ")
        if self.cluster_key == self.rejected_cluster_key:
            raise ValueError("rejected must come from a different cluster")

    def to_record(self) -> dict:
        rec = {
            "cluster": self.cluster_key,
            "cqa_id": self.cqa_id,
            "prompt": self.prompt,
            "chosen": self.chosen,
            "rejected": self.rejected,
            "rejected_cluster": self.rejected_cluster_key,
            "differing_standard": self.differing_standard,
        }
        if self.margin_meta is not None:
            rec["margin_meta"] = self.margin_meta
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "PreferencePair":
        return cls(
            cluster_key=rec["cluster"],
            cqa_id=rec["cqa_id"],
            prompt=rec["prompt"],
            chosen=rec["chosen"],
            rejected=rec["rejected"],
            rejected_cluster_key=rec["rejected_cluster"],
            differing_standard=rec["differing_standard"],
            margin_meta=rec.get("margin_meta"),
        )


def answer_prompt_for(cqa: CqaTriplet) -> str:
    """The training/serving prompt: context plus question, zero style text."""
    return prompts.assemble_answer_prompt(cqa.question, [cqa.context_text])


def cluster_constraint_distance(a: ClusterId, b: ClusterId) -> int:
    """Disagreement count over the union of the two leaves' path constraints;
    a standard constrained on only one side counts as a disagreement."""
    ca, cb = a.constraints(), b.constraints()
    return sum(1 for sid in set(ca) | set(cb) if ca.get(sid) != cb.get(sid))


def diverging_standard(a: ClusterId, b: ClusterId) -> str:
    """Split standard of the two leaves' lowest common ancestor."""
    for (sa, la), (sb, lb) in zip(a.path, b.path):
        if (sa, la) != (sb, lb):
            return sa
    raise ValueError(f"clusters {a.key} and {b.key} do not diverge")


def build_pairs(
    cluster: ClusterId,
    chosen_set: Sequence[CqsaInstance],
    tree: StyleTree | None,
    cqsa_store: Mapping[str, Mapping[str, CqsaInstance]],
    cqa_store: Mapping[str, CqaTriplet],
    counters: Counter | None = None,
) -> list[PreferencePair]:
    """One rejected per chosen, retrieved from the stylistically nearest
    cluster holding the same question. Sibling clusters are scanned first;
    on a miss the search widens to all other leaves. Chosen instances with
    no usable counterpart yield no pair and are counted."""
    if tree is None:
        raise NoTree("a style tree is required to find rejected clusters")
    if not chosen_set:
        raise EmptyChosenSet(f"no chosen instances for cluster {cluster.key}")

    siblings = sibling_clusters(cluster, tree)
    sibling_ids = [cid for cid, _ in siblings]
    all_other = [cid for cid in tree.cluster_ids() if cid.node_id != cluster.node_id]
    widened = [cid for cid in all_other if cid.node_id not in {c.node_id for c in sibling_ids}]

    pairs: list[PreferencePair] = []
    for chosen in chosen_set:
        cqa = cqa_store.get(chosen.cqa_id)
        if cqa is None:
            if counters is not None:
                counters["missing_cqa"] += 1
            continue
        candidate = _find_rejected(cluster, chosen.cqa_id, sibling_ids, cqsa_store)
        if candidate is None:
            candidate = _find_rejected(cluster, chosen.cqa_id, widened, cqsa_store)
        if candidate is None:
            if counters is not None:
                counters["unmatched"] += 1
            continue
        rejected_cluster, rejected = candidate
        if rejected.stylized_answer == chosen.stylized_answer:
            if counters is not None:
                counters["degenerate_rewrite"] += 1
            continue
        margin = None
        if chosen.scores is not None and rejected.scores is not None:
            margin = chosen.scores.aggregate - rejected.scores.aggregate
        pairs.append(
            PreferencePair(
                cluster_key=cluster.key,
                cqa_id=chosen.cqa_id,
                prompt=answer_prompt_for(cqa),
                chosen=chosen.stylized_answer,
                rejected=rejected.stylized_answer,
                rejected_cluster_key=rejected_cluster.key,
                differing_standard=diverging_standard(cluster, rejected_cluster),
                margin_meta=margin,
            )
        )
    return pairs


def _find_rejected(
    cluster: ClusterId,
    cqa_id: str,
    candidates: Sequence[ClusterId],
    cqsa_store: Mapping[str, Mapping[str, CqsaInstance]],
) -> tuple[ClusterId, CqsaInstance] | None:
    holders = [
        cid for cid in candidates if cqa_id in cqsa_store.get(cid.key, {})
    ]
    if not holders:
        return None
    best = min(
        holders,
        key=lambda cid: (cluster_constraint_distance(cluster, cid), cid.node_id),
    )
    return best, cqsa_store[best.key][cqa_id]


@dataclass(frozen=True)
class TrainingJobSpec:
    cluster_key: str
    base_model_id: str
    pairs_file: str
    pairs_digest: str
    output_dir: str
    adapter_rank: int = DEFAULT_ADAPTER_RANK
    epochs: int = DEFAULT_EPOCHS
    beta: float = DEFAULT_DPO_BETA
    seed: int = 0

    def __post_init__(self):
        if self.adapter_rank < 1:
            raise ValueError("adapter_rank must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def to_record(self) -> dict:
        return {
            "cluster": self.cluster_key,
            "base_model_id": self.base_model_id,
            "pairs_file": self.pairs_file,
            "pairs_digest": self.pairs_digest,
            "output_dir": self.output_dir,
            "adapter_rank": self.adapter_rank,
            "epochs": self.epochs,
            "beta": self.beta,
            "seed": self.seed,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "TrainingJobSpec":
        return cls(
            cluster_key=rec["cluster"],
            base_model_id=rec["base_model_id"],
            pairs_file=rec["pairs_file"],
            pairs_digest=rec["pairs_digest"],
            output_dir=rec["output_dir"],
            adapter_rank=int(rec["adapter_rank"]),
            epochs=int(rec["epochs"]),
            beta=float(rec["beta"]),
            seed=int(rec["seed"]),
        )


def emit_job(
    cluster: ClusterId,
    pairs: Sequence[PreferencePair],
    pairs_file: str | Path,
    output_dir: str | Path,
    base_model_id: str = "base-lm",
    adapter_rank: int = DEFAULT_ADAPTER_RANK,
    epochs: int = DEFAULT_EPOCHS,
    beta: float = DEFAULT_DPO_BETA,
    seed: int = 0,
) -> TrainingJobSpec:
    """Persist pairs as JSONL and emit a training job spec carrying their
    digest."""
    if not pairs:
        raise EmptyPairs(f"no pairs for cluster {cluster.key}")
    write_jsonl(pairs_file, (p.to_record() for p in pairs))
    return TrainingJobSpec(
        cluster_key=cluster.key,
        base_model_id=base_model_id,
        pairs_file=str(pairs_file),
        pairs_digest=file_digest(pairs_file),
        output_dir=str(output_dir),
        adapter_rank=adapter_rank,
        epochs=epochs,
        beta=beta,
        seed=seed,
    )


class AdapterStatus(str, Enum):
    PENDING = "pending"
    READY = "ready"
    FAILED = "failed"


@dataclass(frozen=True)
class AdapterRecord:
    cluster_key: str
    artifact_uri: str
    status: AdapterStatus
    manifest: tuple[tuple[str, str], ...] = ()  # sorted key/value pairs

    @classmethod
    def make(
        cls,
        cluster_key: str,
        artifact_uri: str,
        status: AdapterStatus = AdapterStatus.READY,
        **manifest: str,
    ) -> "AdapterRecord":
        return cls(cluster_key, artifact_uri, status, tuple(sorted(manifest.items())))

    def manifest_dict(self) -> dict[str, str]:
        return dict(self.manifest)

    def to_record(self) -> dict:
        return {
            "cluster": self.cluster_key,
            "artifact_uri": self.artifact_uri,
            "status": self.status.value,
            "manifest": self.manifest_dict(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "AdapterRecord":
        return cls(
            cluster_key=rec["cluster"],
            artifact_uri=rec["artifact_uri"],
            status=AdapterStatus(rec["status"]),
            manifest=tuple(sorted(rec.get("manifest", {}).items())),
        )


class AdapterRegistry:
    """cluster -> at most one Ready adapter; supersessions archive the old
    record. Lookups are lock-free against an immutable snapshot; writes are
    serialized and bump an epoch the gateway uses for cache invalidation."""

    def __init__(self):
        self._history: dict[str, list[AdapterRecord]] = {}
        self._ready: dict[str, AdapterRecord] = {}
        self._lock = threading.Lock()
        self.epoch = 0

    def register(self, record: AdapterRecord, expected_pairs_digest: str | None = None) -> None:
        if expected_pairs_digest is not None:
            actual = record.manifest_dict().get("pairs_digest")
            if actual != expected_pairs_digest:
                raise DigestMismatch(
                    f"adapter manifest digest {actual!r} != job pairs digest {expected_pairs_digest!r}"
                )
        with self._lock:
            self._history.setdefault(record.cluster_key, []).append(record)
            if record.status is AdapterStatus.READY:
                if record.cluster_key in self._ready:
                    logger.info("superseding Ready adapter for %s", record.cluster_key)
                self._ready[record.cluster_key] = record
            self.epoch += 1

    def lookup(self, cluster_key: str) -> AdapterRecord | None:
        return self._ready.get(cluster_key)

    def history(self, cluster_key: str) -> list[AdapterRecord]:
        return list(self._history.get(cluster_key, []))

    def to_document(self) -> dict:
        return {
            "format": REGISTRY_FORMAT,
            "version": REGISTRY_VERSION,
            "history": {
                key: [r.to_record() for r in records]
                for key, records in sorted(self._history.items())
            },
        }

    @classmethod
    def from_document(cls, doc: dict) -> "AdapterRegistry":
        if doc.get("format") != REGISTRY_FORMAT or doc.get("version") != REGISTRY_VERSION:
            raise SchemaVersionMismatch("unsupported adapter registry document")
        registry = cls()
        for _, records in sorted(doc.get("history", {}).items()):
            for rec in records:
                registry.register(AdapterRecord.from_record(rec))
        return registry

    def save(self, path: str | Path) -> None:
        write_json(path, self.to_document())

    @classmethod
    def load(cls, path: str | Path) -> "AdapterRegistry":
        return cls.from_document(read_json(path))
