"""Preference scoring and the DPO objective.

Margins are completion log-probabilities conditioned on the prompt:
margin = logp(chosen | prompt) - logp(rejected | prompt). The training
loss follows the standard DPO formulation with a frozen reference model:
-log sigmoid(beta * ((pol_c - ref_c) - (pol_r - ref_r))).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .errors import ContextOverflow
from .model import BOS_ID, ByteTokenizer, PAD_ID


@dataclass(frozen=True)
class PreferencePair:
    prompt: str
    chosen: str
    rejected: str

    @classmethod
    def from_record(cls, rec: dict) -> "PreferencePair":
        return cls(rec["prompt"], rec["chosen"], rec["rejected"])


def encode_example(
    tokenizer: ByteTokenizer, prompt: str, completion: str, max_context: int
) -> tuple[list[int], int]:
    """Token ids plus the index where completion tokens start."""
    prompt_ids = [BOS_ID] + tokenizer.encode(prompt)
    ids = prompt_ids + tokenizer.encode(completion)
    if len(ids) > max_context:
        raise ContextOverflow(
            f"pair needs {len(ids)} tokens, context is {max_context}"
        )
    return ids, len(prompt_ids)


def completion_logprobs(
    model: nn.Module,
    tokenizer: ByteTokenizer,
    examples: list[tuple[str, str]],
    max_context: int,
) -> torch.Tensor:
    """Sum of completion-token log-probabilities for each (prompt, completion)."""
    encoded = [encode_example(tokenizer, p, c, max_context) for p, c in examples]
    width = max(len(ids) for ids, _ in encoded)
    batch = torch.full((len(encoded), width), PAD_ID, dtype=torch.long)
    mask = torch.zeros(len(encoded), width, dtype=torch.bool)
    for row, (ids, start) in enumerate(encoded):
        batch[row, : len(ids)] = torch.tensor(ids)
        mask[row, start : len(ids)] = True
    logits = model(batch)
    logprobs = F.log_softmax(logits[:, :-1], dim=-1)
    token_lp = logprobs.gather(-1, batch[:, 1:].unsqueeze(-1)).squeeze(-1)
    return (token_lp * mask[:, 1:]).sum(dim=-1)


def dpo_loss(
    policy: nn.Module,
    reference: nn.Module,
    tokenizer: ByteTokenizer,
    pairs: list[PreferencePair],
    beta: float,
    max_context: int,
) -> torch.Tensor:
    chosen = [(p.prompt, p.chosen) for p in pairs]
    rejected = [(p.prompt, p.rejected) for p in pairs]
    pol_c = completion_logprobs(policy, tokenizer, chosen, max_context)
    pol_r = completion_logprobs(policy, tokenizer, rejected, max_context)
    with torch.no_grad():
        ref_c = completion_logprobs(reference, tokenizer, chosen, max_context)
        ref_r = completion_logprobs(reference, tokenizer, rejected, max_context)
    logits = beta * ((pol_c - ref_c) - (pol_r - ref_r))
    return -F.logsigmoid(logits).mean()


@dataclass(frozen=True)
class MarginSummary:
    margins: tuple[float, ...]
    skipped_overflow: int

    @property
    def mean(self) -> float:
        return sum(self.margins) / len(self.margins) if self.margins else 0.0

    @property
    def median(self) -> float:
        if not self.margins:
            return 0.0
        ordered = sorted(self.margins)
        mid = len(ordered) // 2
        if len(ordered) % 2:
            return ordered[mid]
        return (ordered[mid - 1] + ordered[mid]) / 2


def score_pairs(
    model: nn.Module,
    tokenizer: ByteTokenizer,
    pairs: list[PreferencePair],
    max_context: int,
    batch_size: int = 16,
) -> MarginSummary:
    """Per-pair chosen-vs-rejected margins; oversize pairs skipped, counted."""
    usable: list[PreferencePair] = []
    skipped = 0
    for pair in pairs:
        try:
            encode_example(tokenizer, pair.prompt, pair.chosen, max_context)
            encode_example(tokenizer, pair.prompt, pair.rejected, max_context)
            usable.append(pair)
        except ContextOverflow:
            skipped += 1
    margins: list[float] = []
    model.eval()
    with torch.no_grad():
        for i in range(0, len(usable), batch_size):
            batch = usable[i : i + batch_size]
            lp_c = completion_logprobs(
                model, tokenizer, [(p.prompt, p.chosen) for p in batch], max_context
            )
            lp_r = completion_logprobs(
                model, tokenizer, [(p.prompt, p.rejected) for p in batch], max_context
            )
            margins.extend((lp_c - lp_r).tolist())
    return MarginSummary(tuple(margins), skipped)
