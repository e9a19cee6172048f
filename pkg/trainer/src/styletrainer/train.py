"""One training job: pairs in, adapter artifact + manifest out."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path

import torch

from .dpo import PreferencePair, dpo_loss, score_pairs
from .errors import DivergedLoss, OutOfMemory
from .job import JobSpec, file_digest, load_pairs
from .lora import apply_lora, lora_state_dict, trainable_parameters
from .model import ByteTokenizer, ModelConfig, load_base_model

ADAPTER_FILE = "adapter.pt"
MANIFEST_FILE = "manifest.json"
HOLDOUT_EVERY = 5  # every 5th pair is held out for the margin eval


@dataclass(frozen=True)
class TrainerManifest:
    cluster: str
    base_model_id: str
    rank: int
    epochs: int
    beta: float
    pairs_digest: str
    seed: int
    final_train_loss: float
    eval_margin_pre: float
    eval_margin_post: float
    eval_pairs: int
    skipped_overflow: int
    artifact_files: tuple[str, ...]

    def to_document(self) -> dict:
        return {
            "cluster": self.cluster,
            "base_model_id": self.base_model_id,
            "rank": self.rank,
            "epochs": self.epochs,
            "beta": self.beta,
            "pairs_digest": self.pairs_digest,
            "seed": self.seed,
            "final_train_loss": self.final_train_loss,
            "eval_margin_pre": self.eval_margin_pre,
            "eval_margin_post": self.eval_margin_post,
            "eval_pairs": self.eval_pairs,
            "skipped_overflow": self.skipped_overflow,
            "artifact_files": list(self.artifact_files),
        }


def split_holdout(pairs: list[PreferencePair]) -> tuple[list[PreferencePair], list[PreferencePair]]:
    train = [p for i, p in enumerate(pairs) if i % HOLDOUT_EVERY != 0]
    heldout = [p for i, p in enumerate(pairs) if i % HOLDOUT_EVERY == 0]
    if not train:  # tiny pair sets still need something to step on
        train = heldout
    return train, heldout


def train(
    spec: JobSpec,
    dry_run: bool = False,
    batch_size: int = 8,
    lr: float = 1e-3,
    model_config: ModelConfig = ModelConfig(),
) -> TrainerManifest:
    """Run DPO for the job's epochs and write the adapter + manifest.

    Deterministic given the job's seed on a fixed torch build. A dry run
    performs zero optimizer steps, so the post margin equals the pre margin.
    """
    pairs = load_pairs(spec)
    torch.manual_seed(spec.seed)
    rng = random.Random(spec.seed)
    tokenizer = ByteTokenizer()

    policy = load_base_model(spec.base_model_id, model_config)
    reference = load_base_model(spec.base_model_id, model_config)
    apply_lora(policy, spec.adapter_rank)
    for param in reference.parameters():
        param.requires_grad_(False)

    train_pairs, heldout = split_holdout(pairs)
    pre = score_pairs(policy, tokenizer, heldout, model_config.max_context)

    final_loss = math.nan
    if not dry_run:
        optimizer = torch.optim.Adam(trainable_parameters(policy), lr=lr)
        policy.train()
        current_batch = batch_size
        for _ in range(spec.epochs):
            order = list(train_pairs)
            rng.shuffle(order)
            for i in range(0, len(order), current_batch):
                batch = order[i : i + current_batch]
                try:
                    loss = dpo_loss(
                        policy, reference, tokenizer, batch, spec.beta,
                        model_config.max_context,
                    )
                    optimizer.zero_grad()
                    loss.backward()
                    optimizer.step()
                except torch.cuda.OutOfMemoryError as exc:
                    raise OutOfMemory(
                        f"out of memory at batch size {current_batch}; "
                        f"retry with {max(1, current_batch // 2)}",
                        max(1, current_batch // 2),
                    ) from exc
                final_loss = float(loss.detach())
                if not math.isfinite(final_loss):
                    raise DivergedLoss(f"training loss is {final_loss}")

    post = score_pairs(policy, tokenizer, heldout, model_config.max_context)

    out_dir = Path(spec.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save(lora_state_dict(policy), out_dir / ADAPTER_FILE)
    manifest = TrainerManifest(
        cluster=spec.cluster,
        base_model_id=spec.base_model_id,
        rank=spec.adapter_rank,
        epochs=spec.epochs,
        beta=spec.beta,
        pairs_digest=spec.pairs_digest,
        seed=spec.seed,
        final_train_loss=final_loss,
        eval_margin_pre=pre.mean,
        eval_margin_post=post.mean,
        eval_pairs=len(pre.margins),
        skipped_overflow=pre.skipped_overflow,
        artifact_files=(ADAPTER_FILE,),
    )
    (out_dir / MANIFEST_FILE).write_text(
        json.dumps(manifest.to_document(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return manifest


def verify_artifact(out_dir: str | Path) -> dict:
    """Return {tensor name: shape} for the saved adapter; raises if any
    saved tensor is not a low-rank factor."""
    state = torch.load(Path(out_dir) / ADAPTER_FILE, weights_only=True)
    for key in state:
        parts = key.split(".")
        if not any(p in ("lora_a", "lora_b") for p in parts):
            raise ValueError(f"full-model tensor in adapter artifact: {key}")
    return {key: tuple(tensor.shape) for key, tensor in state.items()}


__all__ = [
    "ADAPTER_FILE",
    "MANIFEST_FILE",
    "TrainerManifest",
    "train",
    "verify_artifact",
    "split_holdout",
    "file_digest",
]
