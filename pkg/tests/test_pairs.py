from collections import Counter

import pytest

from styleqa.errors import DigestMismatch, EmptyChosenSet, EmptyPairs, NoTree
from styleqa.pairs import (
    AdapterRecord,
    AdapterRegistry,
    AdapterStatus,
    PreferencePair,
    TrainingJobSpec,
    answer_prompt_for,
    build_pairs,
    cluster_constraint_distance,
    diverging_standard,
    emit_job,
)
from styleqa.pipeline import CqaTriplet, CqsaInstance, Provenance, QualityScores, with_scores
from styleqa.tree import assign_cluster, build_tree, sibling_clusters

from conftest import make_profile
from oracles import hamming_oracle


def make_cqa(cqa_id):
    return CqaTriplet(
        id=cqa_id,
        account_id="acct",
        context_refs=("a#0",),
        context_text=f"context for {cqa_id}",
        question=f"question {cqa_id}?",
        answer=f"answer {cqa_id}",
        provenance=Provenance.FORWARD_THINKING,
    )


def make_cqsa(cqa_id, cluster_key, answer=None, scores=(4, 4, 4, 4)):
    inst = CqsaInstance(cqa_id, cluster_key, answer or f"{cluster_key} styled {cqa_id}", ())
    return with_scores(inst, QualityScores.from_components(*scores))


def stores_for(tree, cqa_ids, answer_fn=None):
    cqa_store = {cid: make_cqa(cid) for cid in cqa_ids}
    cqsa_store = {}
    for cluster in tree.cluster_ids():
        cqsa_store[cluster.key] = {
            cid: make_cqsa(cid, cluster.key, answer_fn(cluster, cid) if answer_fn else None)
            for cid in cqa_ids
        }
    return cqa_store, cqsa_store


class TestBuildPairs:
    def test_sibling_pair_with_lca_standard(self, four_leaf_setup):
        _, profiles, _, tree = four_leaf_setup
        cluster = assign_cluster(profiles[0].labels, tree)  # (a, x)
        cqa_store, cqsa_store = stores_for(tree, ["q1", "q2"])
        chosen = list(cqsa_store[cluster.key].values())
        pairs = build_pairs(cluster, chosen, tree, cqsa_store, cqa_store)
        assert len(pairs) == 2
        sibling_key = sibling_clusters(cluster, tree)[0][0].key
        for pair in pairs:
            assert pair.differing_standard == "s2"
            assert pair.rejected_cluster_key == sibling_key
            assert pair.chosen != pair.rejected
            assert pair.prompt == answer_prompt_for(cqa_store[pair.cqa_id])

    def test_exhaustive_scan_oracle(self, four_leaf_setup):
        # oracle: scan sibling leaves first, fall back to every other leaf,
        # order by (constraint disagreement count, node id)
        _, profiles, _, tree = four_leaf_setup
        cluster = assign_cluster(profiles[3].labels, tree)  # (b, y)
        cqa_store, cqsa_store = stores_for(tree, ["q1"])
        chosen = list(cqsa_store[cluster.key].values())
        pairs = build_pairs(cluster, chosen, tree, cqsa_store, cqa_store)

        def scan(candidates):
            hits = []
            for other in candidates:
                if other.node_id == cluster.node_id:
                    continue
                if "q1" in cqsa_store.get(other.key, {}):
                    mine, theirs = cluster.constraints(), other.constraints()
                    union = set(mine) | set(theirs)
                    dist = sum(1 for s in union if mine.get(s) != theirs.get(s))
                    hits.append((dist, other.node_id, other.key))
            return hits

        siblings = [cid for cid, _ in sibling_clusters(cluster, tree)]
        candidates = scan(siblings) or scan(tree.cluster_ids())
        expected_key = min(candidates)[2]
        assert pairs[0].rejected_cluster_key == expected_key

    def test_root_only_tree_yields_no_pairs(self, binary_registry):
        tree = build_tree(
            [make_profile(binary_registry, "a0")], {"a0": 10}, ["s1"], 100, binary_registry
        )
        cluster = tree.cluster_ids()[0]
        cqa_store, cqsa_store = stores_for(tree, ["q1"])
        counters = Counter()
        pairs = build_pairs(
            cluster, list(cqsa_store[cluster.key].values()), tree, cqsa_store, cqa_store, counters
        )
        assert pairs == []
        assert counters["unmatched"] == 1

    def test_degenerate_rewrite_skipped(self, four_leaf_setup):
        _, profiles, _, tree = four_leaf_setup
        cluster = assign_cluster(profiles[0].labels, tree)
        cqa_store, cqsa_store = stores_for(tree, ["q1"], answer_fn=lambda c, q: "identical")
        counters = Counter()
        pairs = build_pairs(
            cluster, list(cqsa_store[cluster.key].values()), tree, cqsa_store, cqa_store, counters
        )
        assert pairs == []
        assert counters["degenerate_rewrite"] == 1

    def test_widening_when_sibling_lacks_question(self, four_leaf_setup):
        _, profiles, _, tree = four_leaf_setup
        cluster = assign_cluster(profiles[0].labels, tree)  # (a, x)
        sibling_key = sibling_clusters(cluster, tree)[0][0].key
        cqa_store, cqsa_store = stores_for(tree, ["q1"])
        del cqsa_store[sibling_key]["q1"]
        pairs = build_pairs(
            cluster, list(cqsa_store[cluster.key].values()), tree, cqsa_store, cqa_store
        )
        assert len(pairs) == 1
        # rejected now comes from across the s1 split
        assert pairs[0].differing_standard == "s1"

    def test_requires_tree_and_chosen(self, four_leaf_setup):
        _, profiles, _, tree = four_leaf_setup
        cluster = assign_cluster(profiles[0].labels, tree)
        with pytest.raises(NoTree):
            build_pairs(cluster, [make_cqsa("q", cluster.key)], None, {}, {})
        with pytest.raises(EmptyChosenSet):
            build_pairs(cluster, [], tree, {}, {})

    def test_margin_meta_is_aggregate_gap(self, four_leaf_setup):
        _, profiles, _, tree = four_leaf_setup
        cluster = assign_cluster(profiles[0].labels, tree)
        sibling_key = sibling_clusters(cluster, tree)[0][0].key
        cqa_store, _ = stores_for(tree, ["q1"])
        cqsa_store = {
            cluster.key: {"q1": make_cqsa("q1", cluster.key, scores=(5, 5, 5, 5))},
            sibling_key: {"q1": make_cqsa("q1", sibling_key, scores=(3, 3, 3, 3))},
        }
        [pair] = build_pairs(
            cluster, [cqsa_store[cluster.key]["q1"]], tree, cqsa_store, cqa_store
        )
        assert pair.margin_meta == pytest.approx(8.0)

    def test_prompt_contains_no_style_exemplars(self, four_leaf_setup):
        _, profiles, _, tree = four_leaf_setup
        cluster = assign_cluster(profiles[0].labels, tree)
        cqa_store, cqsa_store = stores_for(tree, ["q1"])
        [pair] = build_pairs(
            cluster, list(cqsa_store[cluster.key].values()), tree, cqsa_store, cqa_store
        )
        assert "Reply examples" not in pair.prompt
        assert "context for q1" in pair.prompt
        assert "question q1?" in pair.prompt

    def test_deterministic(self, four_leaf_setup):
        _, profiles, _, tree = four_leaf_setup
        cluster = assign_cluster(profiles[0].labels, tree)
        cqa_store, cqsa_store = stores_for(tree, [f"q{i}" for i in range(8)])
        chosen = list(cqsa_store[cluster.key].values())
        first = build_pairs(cluster, chosen, tree, cqsa_store, cqa_store)
        assert first == build_pairs(cluster, chosen, tree, cqsa_store, cqa_store)


class TestPreferencePairInvariants:
    def test_chosen_must_differ(self):
        with pytest.raises(ValueError):
            PreferencePair("c1", "q", "p", "same", "same", "c2", "s1")

    def test_clusters_must_differ(self):
        with pytest.raises(ValueError):
            PreferencePair("c1", "q", "p", "a", "b", "c1", "s1")

    def test_round_trip(self):
        pair = PreferencePair("c1", "q", "p", "a", "b", "c2", "s1", 1.5)
        assert PreferencePair.from_record(pair.to_record()) == pair


class TestDivergence:
    def test_constraint_distance_matches_hamming_on_equal_depth(self, four_leaf_setup):
        _, _, _, tree = four_leaf_setup
        ids = tree.cluster_ids()
        for a in ids:
            for b in ids:
                assert cluster_constraint_distance(a, b) == hamming_oracle(
                    a.constraints(), b.constraints()
                )

    def test_diverging_standard_is_lca_split(self, four_leaf_setup):
        _, _, _, tree = four_leaf_setup
        ids = {dict(c.path)["s1"] + dict(c.path)["s2"]: c for c in tree.cluster_ids()}
        assert diverging_standard(ids["ax"], ids["ay"]) == "s2"
        assert diverging_standard(ids["ax"], ids["bx"]) == "s1"
        assert diverging_standard(ids["ax"], ids["by"]) == "s1"


class TestEmitJob:
    def pair(self):
        return PreferencePair("c1", "q", "p", "a", "b", "c2", "s1")

    def test_defaults_rank16_epoch1(self, four_leaf_setup, tmp_path):
        *_, tree = four_leaf_setup
        cluster = tree.cluster_ids()[0]
        spec = emit_job(cluster, [self.pair()], tmp_path / "pairs.jsonl", tmp_path / "out")
        assert spec.adapter_rank == 16
        assert spec.epochs == 1
        assert spec.beta == 0.1

    def test_digest_matches_file(self, four_leaf_setup, tmp_path):
        from styleqa.jsonl import file_digest

        *_, tree = four_leaf_setup
        cluster = tree.cluster_ids()[0]
        spec = emit_job(cluster, [self.pair()], tmp_path / "pairs.jsonl", tmp_path / "out")
        assert spec.pairs_digest == file_digest(tmp_path / "pairs.jsonl")
        assert TrainingJobSpec.from_record(spec.to_record()) == spec

    def test_beta_override(self, four_leaf_setup, tmp_path):
        *_, tree = four_leaf_setup
        cluster = tree.cluster_ids()[0]
        spec = emit_job(
            cluster, [self.pair()], tmp_path / "pairs.jsonl", tmp_path / "out", beta=0.5
        )
        assert spec.beta == 0.5

    def test_empty_pairs(self, four_leaf_setup, tmp_path):
        *_, tree = four_leaf_setup
        with pytest.raises(EmptyPairs):
            emit_job(tree.cluster_ids()[0], [], tmp_path / "p.jsonl", tmp_path / "out")


class TestAdapterRegistry:
    def record(self, cluster="c1", uri="file://a1", status=AdapterStatus.READY, **manifest):
        return AdapterRecord.make(cluster, uri, status, **manifest)

    def test_register_then_lookup(self):
        registry = AdapterRegistry()
        record = self.record()
        registry.register(record)
        assert registry.lookup("c1") == record

    def test_lookup_before_registration(self):
        assert AdapterRegistry().lookup("c1") is None

    def test_supersede_keeps_newest_and_archives(self):
        registry = AdapterRegistry()
        first = self.record(uri="file://v1")
        second = self.record(uri="file://v2")
        registry.register(first)
        registry.register(second)
        assert registry.lookup("c1").artifact_uri == "file://v2"
        assert [r.artifact_uri for r in registry.history("c1")] == ["file://v1", "file://v2"]

    def test_digest_mismatch(self):
        registry = AdapterRegistry()
        record = self.record(pairs_digest="abc")
        with pytest.raises(DigestMismatch):
            registry.register(record, expected_pairs_digest="xyz")
        registry.register(record, expected_pairs_digest="abc")

    def test_pending_does_not_become_ready(self):
        registry = AdapterRegistry()
        registry.register(self.record(status=AdapterStatus.PENDING))
        assert registry.lookup("c1") is None

    def test_epoch_bumps_on_register(self):
        registry = AdapterRegistry()
        before = registry.epoch
        registry.register(self.record())
        assert registry.epoch == before + 1

    def test_save_load_round_trip(self, tmp_path):
        registry = AdapterRegistry()
        registry.register(self.record(pairs_digest="d1", rank="16"))
        registry.register(self.record(cluster="c2", uri="file://b"))
        registry.save(tmp_path / "registry.json")
        loaded = AdapterRegistry.load(tmp_path / "registry.json")
        assert loaded.lookup("c1") == registry.lookup("c1")
        assert loaded.lookup("c2") == registry.lookup("c2")
