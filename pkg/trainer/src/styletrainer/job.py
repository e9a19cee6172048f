"""Job spec + pairs file loading.

The trainer consumes exactly what the pipeline's pair builder emits: a
job spec JSON (cluster, base_model_id, pairs_file, pairs_digest,
output_dir, adapter_rank, epochs, beta, seed) and a pairs JSONL whose
records carry prompt/chosen/rejected fields. Nothing else is shared with
the pipeline codebase.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .dpo import PreferencePair
from .errors import DigestMismatch, JobError

REQUIRED_FIELDS = (
    "cluster",
    "base_model_id",
    "pairs_file",
    "pairs_digest",
    "output_dir",
    "adapter_rank",
    "epochs",
    "beta",
    "seed",
)


@dataclass(frozen=True)
class JobSpec:
    cluster: str
    base_model_id: str
    pairs_file: str
    pairs_digest: str
    output_dir: str
    adapter_rank: int
    epochs: int
    beta: float
    seed: int

    @classmethod
    def load(cls, path: str | Path) -> "JobSpec":
        path = Path(path)
        if not path.exists():
            raise JobError(f"job spec not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise JobError(f"cannot read job spec {path}: {exc}") from exc
        missing = [f for f in REQUIRED_FIELDS if f not in doc]
        if missing:
            raise JobError(f"job spec missing fields: {missing}")
        return cls(
            cluster=doc["cluster"],
            base_model_id=doc["base_model_id"],
            pairs_file=doc["pairs_file"],
            pairs_digest=doc["pairs_digest"],
            output_dir=doc["output_dir"],
            adapter_rank=int(doc["adapter_rank"]),
            epochs=int(doc["epochs"]),
            beta=float(doc["beta"]),
            seed=int(doc["seed"]),
        )


def file_digest(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def load_pairs(spec: JobSpec) -> list[PreferencePair]:
    path = Path(spec.pairs_file)
    if not path.exists():
        raise JobError(f"pairs file not found: {path}")
    actual = file_digest(path)
    if actual != spec.pairs_digest:
        raise DigestMismatch(
            f"pairs file digest {actual} != job spec digest {spec.pairs_digest}"
        )
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                pairs.append(PreferencePair.from_record(json.loads(line)))
    if not pairs:
        raise JobError(f"pairs file is empty: {path}")
    return pairs
