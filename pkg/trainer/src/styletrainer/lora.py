"""Low-rank adaptation of the attention projections.

Only the A/B factors are ever trainable or saved; the wrapped base weight
stays frozen. B is zero-initialized so a freshly attached adapter is an
exact no-op, which makes the pre-training margin of the adapted model
identical to the base model's.
"""

from __future__ import annotations

import torch
from torch import nn

ADAPTED_PROJECTIONS = ("q_proj", "v_proj")
LORA_PREFIXES = ("lora_a", "lora_b")


class LoRALinear(nn.Module):
    def __init__(self, base: nn.Linear, rank: int, alpha: float | None = None):
        super().__init__()
        self.base = base
        self.rank = rank
        self.scaling = (alpha if alpha is not None else float(rank)) / rank
        self.lora_a = nn.Parameter(torch.empty(rank, base.in_features))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.normal_(self.lora_a, std=0.02)
        base.weight.requires_grad_(False)
        if base.bias is not None:
            base.bias.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + (x @ self.lora_a.T @ self.lora_b.T) * self.scaling


def apply_lora(model: nn.Module, rank: int) -> nn.Module:
    """Freeze the model and wrap its q/v projections with LoRA factors."""
    for param in model.parameters():
        param.requires_grad_(False)
    for module in model.modules():
        for name in ADAPTED_PROJECTIONS:
            child = getattr(module, name, None)
            if isinstance(child, nn.Linear):
                setattr(module, name, LoRALinear(child, rank))
    return model


def lora_state_dict(model: nn.Module) -> dict[str, torch.Tensor]:
    """The saveable artifact: low-rank tensors only."""
    return {
        key: tensor.detach().clone()
        for key, tensor in model.state_dict().items()
        if any(part in LORA_PREFIXES for part in key.split("."))
    }


def load_lora_state_dict(model: nn.Module, state: dict[str, torch.Tensor]) -> None:
    missing, unexpected = model.load_state_dict(state, strict=False)
    if unexpected:
        raise ValueError(f"unexpected tensors in adapter artifact: {sorted(unexpected)}")
    leftover = [k for k in missing if any(p in LORA_PREFIXES for p in k.split("."))]
    if leftover:
        raise ValueError(f"adapter artifact missing tensors: {leftover}")


def trainable_parameters(model: nn.Module) -> list[nn.Parameter]:
    return [p for p in model.parameters() if p.requires_grad]
