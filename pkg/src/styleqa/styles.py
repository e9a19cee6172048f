"""Style standards, per-pair labeling, and majority-vote author profiles.

Twelve categorical standards across four dimensions describe how an author
replies to comments. Each QA pair in an author's corpus is labeled by a
chat backend; the per-standard majority across pairs becomes the author's
profile, which downstream clustering partitions on.
"""

from __future__ import annotations

import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import yaml

from .errors import ConfigError, EmptyInput, RegistryMismatch
from .llm import ChatBackend, ChatRequest
from .prompts import labeling_prompt

logger = logging.getLogger(__name__)


class Dimension(str, Enum):
    SEMANTIC = "semantic"
    GRAMMATICAL = "grammatical"
    SYNTACTIC = "syntactic"
    LEXICAL = "lexical"


@dataclass(frozen=True)
class StyleStandard:
    """One categorical classification axis (e.g. formality)."""

    id: str
    dimension: Dimension
    name: str
    labels: tuple[str, ...]  # tie-break order

    def __post_init__(self):
        if not self.labels:
            raise ConfigError(f"standard {self.id!r} has an empty vocabulary")
        if len(set(self.labels)) != len(self.labels):
            raise ConfigError(f"standard {self.id!r} has duplicate labels")


class StandardsRegistry:
    """Ordered collection of standards; order defines the default split order."""

    def __init__(self, standards: Sequence[StyleStandard]):
        if not standards:
            raise ConfigError("registry must contain at least one standard")
        ids = [s.id for s in standards]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate standard ids in registry")
        self.standards: tuple[StyleStandard, ...] = tuple(standards)
        self.by_id = {s.id: s for s in self.standards}

    def __iter__(self):
        return iter(self.standards)

    def __len__(self):
        return len(self.standards)

    def __contains__(self, standard_id: str) -> bool:
        return standard_id in self.by_id

    def __getitem__(self, standard_id: str) -> StyleStandard:
        return self.by_id[standard_id]

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.standards)

    def digest(self) -> str:
        parts = []
        for s in self.standards:
            parts.append(f"{s.id}|{s.dimension.value}|{s.name}|{','.join(s.labels)}")
        return hashlib.sha256("\n".join(parts).encode("utf-8")).hexdigest()


def load_registry(path: str | Path | None = None) -> StandardsRegistry:
    """Load a registry from YAML; with no path, load the packaged default."""
    if path is None:
        text = resources.files("styleqa.data").joinpath("standards.yaml").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    doc = yaml.safe_load(text)
    try:
        entries = doc["standards"]
        standards = [
            StyleStandard(
                id=e["id"],
                dimension=Dimension(e["dimension"]),
                name=e.get("name", e["id"]),
                labels=tuple(e["labels"]),
            )
            for e in entries
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad standards file: {exc}") from exc
    return StandardsRegistry(standards)


@dataclass(frozen=True)
class StyleLabelVector:
    """Exactly one label per registered standard."""

    items: tuple[tuple[str, str], ...]  # sorted by standard id

    @classmethod
    def from_dict(cls, labels: Mapping[str, str], registry: StandardsRegistry) -> "StyleLabelVector":
        if set(labels) != set(registry.ids):
            missing = set(registry.ids) - set(labels)
            extra = set(labels) - set(registry.ids)
            raise RegistryMismatch(f"label keys do not match registry (missing={sorted(missing)}, extra={sorted(extra)})")
        for sid, label in labels.items():
            if label not in registry[sid].labels:
                raise RegistryMismatch(f"label {label!r} not in vocabulary of {sid!r}")
        return cls(tuple(sorted(labels.items())))

    def as_dict(self) -> dict[str, str]:
        return dict(self.items)

    def __getitem__(self, standard_id: str) -> str:
        for sid, label in self.items:
            if sid == standard_id:
                return label
        raise KeyError(standard_id)


@dataclass(frozen=True)
class PairAnnotation:
    """Labeling outcome for a single (comment, reply) pair.

    Standards the backend failed to label survive in ``unlabeled`` and are
    excluded from that standard's vote.
    """

    labels: tuple[tuple[str, str], ...]
    unlabeled: frozenset[str] = frozenset()

    @classmethod
    def from_vector(cls, vector: StyleLabelVector) -> "PairAnnotation":
        return cls(vector.items)

    def as_dict(self) -> dict[str, str]:
        return dict(self.labels)


@dataclass(frozen=True)
class StyleProfile:
    author_id: str
    labels: StyleLabelVector
    support: int
    tie_flags: frozenset[str] = frozenset()

    def to_record(self) -> dict:
        return {
            "author_id": self.author_id,
            "labels": self.labels.as_dict(),
            "support": self.support,
            "tie_flags": sorted(self.tie_flags),
        }

    @classmethod
    def from_record(cls, rec: dict, registry: StandardsRegistry) -> "StyleProfile":
        return cls(
            author_id=rec["author_id"],
            labels=StyleLabelVector.from_dict(rec["labels"], registry),
            support=int(rec["support"]),
            tie_flags=frozenset(rec.get("tie_flags", [])),
        )


@dataclass
class StyleCorpus:
    author_id: str
    pairs: list[tuple[str, str]]  # (user comment, author reply)
    domain: str = ""

    @property
    def size(self) -> int:
        return len(self.pairs)


def label_pair(
    pair: tuple[str, str],
    registry: StandardsRegistry,
    backend: ChatBackend,
    max_tokens: int = 256,
) -> PairAnnotation:
    """Label one (comment, reply) pair on every standard via the backend.

    Backend outputs are coerced by case-insensitive exact match against the
    standard's vocabulary; anything else leaves that standard unlabeled.
    """
    comment, reply = pair
    if not reply:
        raise EmptyInput("reply must be non-empty")
    req = ChatRequest(
        system=labeling_prompt(
            [(s.id, s.name, list(s.labels)) for s in registry]
        ),
        messages=(("user", f"Comment: {comment}\nReply: {reply}"),),
        max_tokens=max_tokens,
        temperature=0.0,
        tag="label-pair",
    )
    resp = backend.complete(req)
    raw: dict[str, str] = {}
    for line in resp.text.splitlines():
        if "=" in line:
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()

    labels: dict[str, str] = {}
    unlabeled: set[str] = set()
    for standard in registry:
        if len(standard.labels) == 1:
            labels[standard.id] = standard.labels[0]
            continue
        value = raw.get(standard.id)
        coerced = _coerce_label(value, standard.labels)
        if coerced is None:
            unlabeled.add(standard.id)
            logger.debug("unlabeled standard %s (raw=%r)", standard.id, value)
        else:
            labels[standard.id] = coerced
    return PairAnnotation(tuple(sorted(labels.items())), frozenset(unlabeled))


def _coerce_label(value: str | None, vocabulary: Sequence[str]) -> str | None:
    if value is None:
        return None
    folded = value.strip().casefold()
    for label in vocabulary:
        if label.casefold() == folded:
            return label
    return None


def aggregate_profile(
    corpus: StyleCorpus,
    per_pair: Iterable[PairAnnotation | StyleLabelVector],
    registry: StandardsRegistry,
) -> StyleProfile:
    """Majority vote per standard; ties resolved by vocabulary order and flagged.

    A standard with no usable votes at all gets the first vocabulary label
    and is flagged.
    """
    annotations = [
        a if isinstance(a, PairAnnotation) else PairAnnotation.from_vector(a)
        for a in per_pair
    ]
    if not annotations:
        raise EmptyInput("per_pair must be non-empty")

    labels: dict[str, str] = {}
    tie_flags: set[str] = set()
    for standard in registry:
        votes = Counter(
            a.as_dict()[standard.id] for a in annotations if standard.id in a.as_dict()
        )
        for label in votes:
            if label not in standard.labels:
                raise RegistryMismatch(f"vote {label!r} outside vocabulary of {standard.id!r}")
        if not votes:
            labels[standard.id] = standard.labels[0]
            tie_flags.add(standard.id)
            continue
        top = max(votes.values())
        winners = [label for label in standard.labels if votes.get(label) == top]
        labels[standard.id] = winners[0]
        if len(winners) > 1:
            tie_flags.add(standard.id)

    return StyleProfile(
        author_id=corpus.author_id,
        labels=StyleLabelVector.from_dict(labels, registry),
        support=len(annotations),
        tie_flags=frozenset(tie_flags),
    )


def profile_distance(a: StyleLabelVector, b: StyleLabelVector) -> int:
    """Hamming distance over standards; 0 iff identical vectors."""
    da, db = a.as_dict(), b.as_dict()
    if set(da) != set(db):
        raise RegistryMismatch("vectors cover different standard sets")
    return sum(1 for sid, label in da.items() if db[sid] != label)
