import json
from pathlib import Path

import pytest
import torch
from click.testing import CliRunner

from styletrainer.cli import main
from styletrainer.errors import DigestMismatch, JobError
from styletrainer.job import JobSpec, file_digest, load_pairs
from styletrainer.lora import apply_lora, load_lora_state_dict
from styletrainer.model import ByteTokenizer, ModelConfig, load_base_model
from styletrainer.train import (
    ADAPTER_FILE,
    MANIFEST_FILE,
    split_holdout,
    train,
    verify_artifact,
)
from styletrainer.dpo import PreferencePair, score_pairs

SMALL = ModelConfig(d_model=32, n_heads=2, n_layers=2, d_ff=64, max_context=128)


def separable_pairs(n=200):
    """Chosen and rejected differ only by a fixed trailing stylistic token."""
    return [
        {
            "cluster": "n3:s1=a/s2=x",
            "cqa_id": f"q{i:03d}",
            "prompt": f"Question: item {i % 17}?",
            "chosen": f"answer {i % 17} :)",
            "rejected": f"answer {i % 17} :(",
            "rejected_cluster": "n4:s1=a/s2=y",
            "differing_standard": "s2",
        }
        for i in range(n)
    ]


def write_job(root: Path, pairs, seed=0, **overrides) -> Path:
    pairs_file = root / "pairs.jsonl"
    pairs_file.write_text("\n".join(json.dumps(p) for p in pairs) + "\n")
    doc = {
        "cluster": "n3:s1=a/s2=x",
        "base_model_id": "base-lm",
        "pairs_file": str(pairs_file),
        "pairs_digest": file_digest(pairs_file),
        "output_dir": str(root / "adapters"),
        "adapter_rank": 16,
        "epochs": 1,
        "beta": 0.1,
        "seed": seed,
    }
    doc.update(overrides)
    job_file = root / "job.json"
    job_file.write_text(json.dumps(doc))
    return job_file


class TestJobLoading:
    def test_round_trip(self, tmp_path):
        spec = JobSpec.load(write_job(tmp_path, separable_pairs(10)))
        assert spec.adapter_rank == 16
        assert spec.epochs == 1
        assert spec.beta == 0.1
        assert len(load_pairs(spec)) == 10

    def test_missing_field(self, tmp_path):
        job = tmp_path / "job.json"
        job.write_text(json.dumps({"cluster": "c"}))
        with pytest.raises(JobError):
            JobSpec.load(job)

    def test_digest_mismatch(self, tmp_path):
        spec = JobSpec.load(
            write_job(tmp_path, separable_pairs(10), pairs_digest="0" * 64)
        )
        with pytest.raises(DigestMismatch):
            load_pairs(spec)

    def test_missing_pairs_file(self, tmp_path):
        spec = JobSpec.load(
            write_job(tmp_path, separable_pairs(2), pairs_file=str(tmp_path / "nope"))
        )
        with pytest.raises(JobError):
            load_pairs(spec)


class TestDryRun:
    def test_post_margin_equals_pre(self, tmp_path):
        spec = JobSpec.load(write_job(tmp_path, separable_pairs(40)))
        manifest = train(spec, dry_run=True, model_config=SMALL)
        assert manifest.eval_margin_post == pytest.approx(manifest.eval_margin_pre)
        assert (tmp_path / "adapters" / ADAPTER_FILE).exists()
        assert (tmp_path / "adapters" / MANIFEST_FILE).exists()

    def test_manifest_echoes_spec(self, tmp_path):
        spec = JobSpec.load(write_job(tmp_path, separable_pairs(20), seed=5))
        manifest = train(spec, dry_run=True, model_config=SMALL)
        assert manifest.rank == 16
        assert manifest.epochs == 1
        assert manifest.beta == 0.1
        assert manifest.seed == 5
        assert manifest.pairs_digest == spec.pairs_digest
        on_disk = json.loads((tmp_path / "adapters" / MANIFEST_FILE).read_text())
        assert on_disk["rank"] == 16
        assert on_disk["artifact_files"] == [ADAPTER_FILE]


class TestTraining:
    def test_margin_increases_for_three_seeds(self, tmp_path):
        improved = 0
        for seed in (0, 1, 2):
            root = tmp_path / f"seed{seed}"
            root.mkdir()
            spec = JobSpec.load(write_job(root, separable_pairs(200), seed=seed))
            manifest = train(spec, model_config=SMALL)
            if manifest.eval_margin_post > manifest.eval_margin_pre:
                improved += 1
        assert improved == 3

    def test_artifact_contains_only_low_rank_tensors(self, tmp_path):
        spec = JobSpec.load(write_job(tmp_path, separable_pairs(50)))
        train(spec, model_config=SMALL)
        shapes = verify_artifact(tmp_path / "adapters")
        assert shapes  # non-empty
        for name, shape in shapes.items():
            assert "lora_a" in name or "lora_b" in name
            assert 16 in shape
        # and it is far smaller than the full model would be
        full_bytes = sum(
            t.numel() * t.element_size()
            for t in load_base_model("base-lm", SMALL).state_dict().values()
        )
        assert (tmp_path / "adapters" / ADAPTER_FILE).stat().st_size < full_bytes / 2

    def test_artifact_reproduces_post_margin(self, tmp_path):
        spec = JobSpec.load(write_job(tmp_path, separable_pairs(100)))
        manifest = train(spec, model_config=SMALL)
        restored = apply_lora(load_base_model("base-lm", SMALL), rank=16)
        state = torch.load(tmp_path / "adapters" / ADAPTER_FILE, weights_only=True)
        load_lora_state_dict(restored, state)
        _, heldout = split_holdout(
            [PreferencePair.from_record(p) for p in separable_pairs(100)]
        )
        summary = score_pairs(restored, ByteTokenizer(), heldout, SMALL.max_context)
        assert summary.mean == pytest.approx(manifest.eval_margin_post, abs=1e-5)

    def test_deterministic_given_seed(self, tmp_path):
        results = []
        for tag in ("a", "b"):
            root = tmp_path / tag
            root.mkdir()
            spec = JobSpec.load(write_job(root, separable_pairs(60), seed=7))
            results.append(train(spec, model_config=SMALL).eval_margin_post)
        assert results[0] == pytest.approx(results[1], abs=1e-6)


class TestCli:
    def test_dry_run_emits_manifest_json(self, tmp_path):
        job = write_job(tmp_path, separable_pairs(20))
        result = CliRunner().invoke(main, ["train", "--job", str(job), "--dry-run"])
        assert result.exit_code == 0, result.output
        doc = json.loads(result.output)
        assert doc["eval_margin_post"] == doc["eval_margin_pre"]

    def test_digest_mismatch_exit_code(self, tmp_path):
        job = write_job(tmp_path, separable_pairs(5), pairs_digest="0" * 64)
        result = CliRunner().invoke(main, ["train", "--job", str(job)])
        assert result.exit_code == 2
        error = json.loads(result.output.strip().splitlines()[-1])
        assert error["error"] == "DigestMismatch"
