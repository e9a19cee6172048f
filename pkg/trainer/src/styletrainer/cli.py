"""Command-line entry point for running one training job."""

from __future__ import annotations

import json
import sys

import click

from .errors import TrainerError
from .job import JobSpec
from .train import train


def _fail(exc: Exception) -> None:
    click.echo(
        json.dumps({"error": type(exc).__name__, "message": str(exc)}), err=True
    )
    sys.exit(2)


@click.group()
def main():
    """Desk-scale LoRA DPO trainer for per-cluster style adapters."""


@main.command("train")
@click.option("--job", "job_path", required=True, type=click.Path(), help="Job spec JSON.")
@click.option("--dry-run", is_flag=True, default=False, help="Skip optimizer steps.")
@click.option("--batch-size", type=int, default=8)
@click.option("--lr", type=float, default=1e-3)
def train_cmd(job_path, dry_run, batch_size, lr):
    """Train the adapter described by a job spec."""
    try:
        spec = JobSpec.load(job_path)
        manifest = train(spec, dry_run=dry_run, batch_size=batch_size, lr=lr)
    except TrainerError as exc:
        _fail(exc)
        return
    click.echo(json.dumps(manifest.to_document(), sort_keys=True))


if __name__ == "__main__":
    main()
