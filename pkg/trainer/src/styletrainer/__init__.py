"""Desk-scale LoRA DPO trainer for per-cluster style adapters."""

from .dpo import MarginSummary, PreferencePair, score_pairs
from .job import JobSpec, load_pairs
from .train import TrainerManifest, train, verify_artifact

__all__ = [
    "JobSpec",
    "MarginSummary",
    "PreferencePair",
    "TrainerManifest",
    "load_pairs",
    "score_pairs",
    "train",
    "verify_artifact",
]
