"""Command-line entry point: every pipeline stage plus the server.

Stages read and write the JSONL schemas defined by the library modules and
drop a run manifest (input/config/output digests) next to their primary
output, so a full run with fixed seeds and the mock backend is auditable
and byte-reproducible.
"""

from __future__ import annotations

import csv
import logging
import random
import sys
from collections import Counter
from pathlib import Path

import click

from . import evalharness, figures, pipeline
from .config import PipelineConfig
from .errors import StageInputMissing, StyleQAError
from .gateway import AnswerRequest, Gateway
from .jsonl import dumps, file_digest, read_json, read_jsonl, write_json, write_jsonl
from .pairs import (
    AdapterRecord,
    AdapterRegistry,
    AdapterStatus,
    build_pairs,
    emit_job,
)
from .retrieval import RetrievalIndex
from .styles import (
    StandardsRegistry,
    StyleCorpus,
    StyleProfile,
    aggregate_profile,
    label_pair,
    load_registry,
)
from .tree import StyleTree, build_tree, deserialize_tree, serialize_tree

logger = logging.getLogger(__name__)


# --- shared loading helpers ---


def _require(path: str) -> str:
    if not Path(path).exists():
        raise StageInputMissing(f"missing input file: {path}")
    return path


def _load_corpora(path: str) -> dict[str, StyleCorpus]:
    corpora: dict[str, StyleCorpus] = {}
    for rec in read_jsonl(_require(path)):
        corpus = corpora.setdefault(
            rec["author_id"], StyleCorpus(rec["author_id"], [], rec.get("domain", ""))
        )
        corpus.pairs.append((rec["comment"], rec["reply"]))
        if rec.get("domain"):
            corpus.domain = rec["domain"]
    return corpora


def _load_profiles(path: str, registry: StandardsRegistry) -> dict[str, StyleProfile]:
    return {
        rec["author_id"]: StyleProfile.from_record(rec, registry)
        for rec in read_jsonl(_require(path))
    }


def _load_tree(path: str) -> StyleTree:
    return deserialize_tree(read_json(_require(path)))


def _load_cqa(path: str) -> dict[str, pipeline.CqaTriplet]:
    return {rec["id"]: pipeline.CqaTriplet.from_record(rec) for rec in read_jsonl(_require(path))}


def _load_cqsa(path: str) -> list[pipeline.CqsaInstance]:
    return [pipeline.CqsaInstance.from_record(rec) for rec in read_jsonl(_require(path))]


def _build_index(cfg: PipelineConfig, articles_path: str) -> RetrievalIndex:
    index = RetrievalIndex(max_chunk_tokens=int(cfg.retrieval.get("max_chunk_tokens", 256)))
    per_account: dict[str, list[tuple[str, str]]] = {}
    for rec in read_jsonl(_require(articles_path)):
        per_account.setdefault(rec["account_id"], []).append((rec["article_id"], rec["text"]))
    for account_id in sorted(per_account):
        index.ingest(account_id, per_account[account_id])
    return index


def _registry_from_cfg(cfg: PipelineConfig, standards: str | None) -> StandardsRegistry:
    return load_registry(standards or cfg.paths.get("standards"))


def _cluster_context(cfg: PipelineConfig, registry: StandardsRegistry, tree: StyleTree, profiles):
    """Per-leaf representative labels, keyed by cluster key."""
    labels = {}
    for cid in tree.cluster_ids():
        member_profiles = [profiles[a] for a in tree.node_by_id(cid.node_id).members if a in profiles]
        if member_profiles:
            labels[cid.key] = pipeline.cluster_label_vector(member_profiles, registry)
    return labels


def _write_manifest(stage: str, inputs: list[str], outputs: list[str], cfg: PipelineConfig, seed: int | None):
    manifest = {
        "stage": stage,
        "config_digest": cfg.digest(),
        "inputs": {p: file_digest(p) for p in inputs if Path(p).exists()},
        "outputs": {p: file_digest(p) for p in outputs if Path(p).exists()},
        "seed": seed,
    }
    target = Path(outputs[0]).with_suffix(Path(outputs[0]).suffix + ".manifest.json")
    write_json(target, manifest)


# --- CLI plumbing ---


class _Ctx:
    def __init__(self, cfg: PipelineConfig, seed: int | None):
        self.cfg = cfg
        self.seed = seed


def _fail(exc: Exception) -> None:
    click.echo(dumps({"error": type(exc).__name__, "message": str(exc)}), err=True)
    sys.exit(2)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="Pipeline config YAML.")
@click.option("--seed", type=int, default=None, help="Override the configured seed.")
@click.option("--verbose", is_flag=True, default=False)
@click.pass_context
def main(ctx, config_path, seed, verbose):
    """Stylized contextual QA pipeline and gateway."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING)
    try:
        cfg = PipelineConfig.load(config_path)
    except StyleQAError as exc:
        _fail(exc)
    ctx.obj = _Ctx(cfg, seed)


@main.command()
@click.option("--corpus", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--standards", type=click.Path(), default=None)
@click.pass_obj
def label(obj, corpus, out, standards):
    """Label reply corpora and aggregate majority-vote author profiles."""
    try:
        registry = _registry_from_cfg(obj.cfg, standards)
        backend = obj.cfg.make_backend()
        corpora = _load_corpora(corpus)
        records = []
        for author_id in sorted(corpora):
            c = corpora[author_id]
            annotations = [label_pair(pair, registry, backend) for pair in c.pairs]
            records.append(aggregate_profile(c, annotations, registry).to_record())
        write_jsonl(out, records)
        _write_manifest("label", [corpus], [out], obj.cfg, obj.seed)
        click.echo(f"profiled {len(records)} authors -> {out}")
    except StyleQAError as exc:
        _fail(exc)


@main.command("build-tree")
@click.option("--profiles", "profiles_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--k", type=int, default=None)
@click.option("--order", "order_path", type=click.Path(), default=None, help="File with one standard id per line.")
@click.option("--standards", type=click.Path(), default=None)
@click.pass_obj
def build_tree_cmd(obj, profiles_path, out, k, order_path, standards):
    """Build the hierarchical style tree from author profiles."""
    try:
        registry = _registry_from_cfg(obj.cfg, standards)
        profiles = _load_profiles(profiles_path, registry)
        if order_path:
            order = [l.strip() for l in Path(order_path).read_text().splitlines() if l.strip()]
        else:
            order = obj.cfg.standard_order or list(registry.ids)
        sizes = {a: p.support for a, p in profiles.items()}
        tree = build_tree(
            list(profiles.values()),
            sizes,
            order,
            k if k is not None else obj.cfg.k,
            registry,
            count_unit=obj.cfg.count_unit,
        )
        write_json(out, serialize_tree(tree))
        _write_manifest("build-tree", [profiles_path], [out], obj.cfg, obj.seed)
        click.echo(f"{len(tree.leaves())} clusters -> {out}")
    except StyleQAError as exc:
        _fail(exc)


@main.command()
@click.option("--articles", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path(), help="Normalized article index JSONL.")
@click.pass_obj
def ingest(obj, articles, out):
    """Validate and normalize the article corpus used for retrieval."""
    try:
        index = _build_index(obj.cfg, articles)
        records = sorted(
            (rec for rec in read_jsonl(articles) if rec.get("text", "").strip()),
            key=lambda r: (r["account_id"], r["article_id"]),
        )
        write_jsonl(out, records)
        total = sum(len(index.chunks(a)) for a in {r["account_id"] for r in records})
        _write_manifest("ingest", [articles], [out], obj.cfg, obj.seed)
        click.echo(f"{total} chunks indexed ({index.skipped_empty} empty skipped) -> {out}")
    except StyleQAError as exc:
        _fail(exc)


@main.command()
@click.option("--account", "account_id", required=True)
@click.option("--query", required=True)
@click.option("--top-n", type=int, default=None)
@click.pass_obj
def retrieve(obj, account_id, query, top_n):
    """Run one retrieval query against the configured article index."""
    try:
        index = _build_index(obj.cfg, obj.cfg.path("articles"))
        result = index.retrieve(account_id, query, top_n or int(obj.cfg.retrieval.get("top_n", 3)))
        for chunk, score in result.chunks:
            click.echo(dumps({"ref": f"{chunk.article_id}#{chunk.chunk_id}", "score": score, "text": chunk.text}))
    except StyleQAError as exc:
        _fail(exc)


@main.command("gen-cqa")
@click.option("--articles", required=True, type=click.Path())
@click.option("--corpus", type=click.Path(), default=None, help="Reply corpus (for account domains).")
@click.option("--out", required=True, type=click.Path())
@click.option("--strategy", type=click.Choice(["forward", "bottom-up", "both"]), default="both")
@click.pass_obj
def gen_cqa(obj, articles, corpus, out, strategy):
    """Construct CQA triplets via forward and/or bottom-up generation."""
    try:
        backend = obj.cfg.make_backend()
        index = _build_index(obj.cfg, articles)
        domains = {}
        if corpus:
            domains = {a: c.domain for a, c in _load_corpora(corpus).items()}
        counters: Counter = Counter()
        triplets = []
        accounts = sorted({rec["account_id"] for rec in read_jsonl(articles)})
        for account_id in accounts:
            if strategy in ("forward", "both"):
                triplets.extend(
                    pipeline.gen_cqa_forward(account_id, index.chunks(account_id), backend, counters)
                )
            if strategy in ("bottom-up", "both"):
                triplets.extend(
                    pipeline.gen_cqa_bottom_up(
                        account_id,
                        domains.get(account_id, ""),
                        backend,
                        index,
                        top_n=int(obj.cfg.retrieval.get("top_n", 3)),
                        counters=counters,
                    )
                )
        write_jsonl(out, (t.to_record() for t in triplets))
        inputs = [articles] + ([corpus] if corpus else [])
        _write_manifest("gen-cqa", inputs, [out], obj.cfg, obj.seed)
        click.echo(f"{len(triplets)} triplets ({dict(counters)}) -> {out}")
    except StyleQAError as exc:
        _fail(exc)


@main.command("gen-cqsa")
@click.option("--cqa", "cqa_path", required=True, type=click.Path())
@click.option("--tree", "tree_path", required=True, type=click.Path())
@click.option("--profiles", "profiles_path", required=True, type=click.Path())
@click.option("--corpus", required=True, type=click.Path(), help="Reply corpus (exemplar pool).")
@click.option("--cluster", "cluster_key", default="all", help="Cluster key or 'all'.")
@click.option("--out", required=True, type=click.Path())
@click.option("--m", type=int, default=None)
@click.pass_obj
def gen_cqsa(obj, cqa_path, tree_path, profiles_path, corpus, cluster_key, out, m):
    """Rewrite CQA answers into each cluster's style."""
    try:
        registry = _registry_from_cfg(obj.cfg, None)
        backend = obj.cfg.make_backend()
        tree = _load_tree(tree_path)
        profiles = _load_profiles(profiles_path, registry)
        corpora = _load_corpora(corpus)
        cqa_store = _load_cqa(cqa_path)
        labels = _cluster_context(obj.cfg, registry, tree, profiles)
        m = m if m is not None else obj.cfg.m
        seed = obj.seed if obj.seed is not None else obj.cfg.seeds.get("cqsa", 0)

        instances = []
        for cid in tree.cluster_ids():
            if cluster_key != "all" and cid.key != cluster_key:
                continue
            if cid.key not in labels:
                continue
            pool = {
                a: corpora[a].pairs
                for a in tree.node_by_id(cid.node_id).members
                if a in corpora and corpora[a].pairs
            }
            if not pool:
                continue
            for cqa_id in sorted(cqa_store):
                rng = random.Random(f"{seed}:{cid.key}:{cqa_id}")
                instances.append(
                    pipeline.gen_cqsa(
                        cqa_store[cqa_id], cid, labels[cid.key], pool, registry, backend, rng, m=m
                    )
                )
        write_jsonl(out, (i.to_record() for i in instances))
        _write_manifest("gen-cqsa", [cqa_path, tree_path, profiles_path, corpus], [out], obj.cfg, seed)
        click.echo(f"{len(instances)} stylized instances -> {out}")
    except StyleQAError as exc:
        _fail(exc)


@main.command("judge")
@click.option("--cqsa", "cqsa_path", required=True, type=click.Path())
@click.option("--cqa", "cqa_path", required=True, type=click.Path())
@click.option("--tree", "tree_path", required=True, type=click.Path())
@click.option("--profiles", "profiles_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.pass_obj
def judge_cmd(obj, cqsa_path, cqa_path, tree_path, profiles_path, out):
    """Score stylized instances on the four judge metrics."""
    try:
        registry = _registry_from_cfg(obj.cfg, None)
        backend = obj.cfg.make_backend()
        tree = _load_tree(tree_path)
        profiles = _load_profiles(profiles_path, registry)
        labels = _cluster_context(obj.cfg, registry, tree, profiles)
        cqa_store = _load_cqa(cqa_path)
        scored = []
        unscored = 0
        for inst in _load_cqsa(cqsa_path):
            try:
                scores = pipeline.judge(inst, cqa_store[inst.cqa_id], labels[inst.cluster_key], registry, backend)
                scored.append(pipeline.with_scores(inst, scores))
            except StyleQAError:
                unscored += 1
                scored.append(inst)
        write_jsonl(out, (i.to_record() for i in scored))
        _write_manifest("judge", [cqsa_path, cqa_path, tree_path, profiles_path], [out], obj.cfg, obj.seed)
        click.echo(f"{len(scored) - unscored} scored, {unscored} unscored -> {out}")
    except StyleQAError as exc:
        _fail(exc)


@main.command()
@click.option("--scored", "scored_path", required=True, type=click.Path())
@click.option("--n", type=int, default=None)
@click.option("--out", required=True, type=click.Path())
@click.pass_obj
def select(obj, scored_path, n, out):
    """Keep the top-N instances per cluster by aggregate score."""
    try:
        n = n if n is not None else obj.cfg.top_n_select
        by_cluster: dict[str, list[pipeline.CqsaInstance]] = {}
        for inst in _load_cqsa(scored_path):
            if inst.scores is not None:
                by_cluster.setdefault(inst.cluster_key, []).append(inst)
        selected = []
        for key in sorted(by_cluster):
            selected.extend(pipeline.select_top(by_cluster[key], n))
        write_jsonl(out, (i.to_record() for i in selected))
        _write_manifest("select", [scored_path], [out], obj.cfg, obj.seed)
        click.echo(f"{len(selected)} selected -> {out}")
    except StyleQAError as exc:
        _fail(exc)


@main.command("make-pairs")
@click.option("--selected", "selected_path", required=True, type=click.Path())
@click.option("--cqsa", "cqsa_path", required=True, type=click.Path(), help="All scored instances (rejected pool).")
@click.option("--cqa", "cqa_path", required=True, type=click.Path())
@click.option("--tree", "tree_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path(), help="Combined pairs JSONL; per-cluster files go next to it.")
@click.pass_obj
def make_pairs(obj, selected_path, cqsa_path, cqa_path, tree_path, out):
    """Build style-contrastive preference pairs for every cluster."""
    try:
        tree = _load_tree(tree_path)
        cqa_store = _load_cqa(cqa_path)
        cqsa_store: dict[str, dict[str, pipeline.CqsaInstance]] = {}
        for inst in _load_cqsa(cqsa_path):
            cqsa_store.setdefault(inst.cluster_key, {})[inst.cqa_id] = inst
        chosen_by_cluster: dict[str, list[pipeline.CqsaInstance]] = {}
        for inst in _load_cqsa(selected_path):
            chosen_by_cluster.setdefault(inst.cluster_key, []).append(inst)

        clusters = {cid.key: cid for cid in tree.cluster_ids()}
        counters: Counter = Counter()
        all_pairs = []
        out_dir = Path(out).parent
        per_cluster_files = []
        for key in sorted(chosen_by_cluster):
            cid = clusters.get(key)
            if cid is None:
                counters["unknown_cluster"] += 1
                continue
            pairs = build_pairs(cid, chosen_by_cluster[key], tree, cqsa_store, cqa_store, counters)
            all_pairs.extend(pairs)
            if pairs:
                cluster_file = out_dir / f"pairs_n{cid.node_id}.jsonl"
                write_jsonl(cluster_file, (p.to_record() for p in pairs))
                per_cluster_files.append(str(cluster_file))
        write_jsonl(out, (p.to_record() for p in all_pairs))
        _write_manifest(
            "make-pairs",
            [selected_path, cqsa_path, cqa_path, tree_path],
            [out] + per_cluster_files,
            obj.cfg,
            obj.seed,
        )
        click.echo(f"{len(all_pairs)} pairs ({dict(counters)}) -> {out}")
    except StyleQAError as exc:
        _fail(exc)


@main.command("emit-job")
@click.option("--cluster", "cluster_key", required=True)
@click.option("--pairs", "pairs_path", required=True, type=click.Path())
@click.option("--tree", "tree_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--output-dir", default="adapters")
@click.option("--rank", type=int, default=16)
@click.option("--epochs", type=int, default=1)
@click.option("--beta", type=float, default=None)
@click.pass_obj
def emit_job_cmd(obj, cluster_key, pairs_path, tree_path, out, output_dir, rank, epochs, beta):
    """Write a training job spec for one cluster's pairs file."""
    try:
        from .pairs import PreferencePair

        tree = _load_tree(tree_path)
        cid = next((c for c in tree.cluster_ids() if c.key == cluster_key), None)
        if cid is None:
            raise StageInputMissing(f"cluster {cluster_key!r} not in tree")
        pairs = [PreferencePair.from_record(rec) for rec in read_jsonl(_require(pairs_path))]
        spec = emit_job(
            cid,
            pairs,
            pairs_path,
            output_dir,
            base_model_id=obj.cfg.base_model_id,
            adapter_rank=rank,
            epochs=epochs,
            beta=beta if beta is not None else obj.cfg.beta,
            seed=obj.seed if obj.seed is not None else 0,
        )
        write_json(out, spec.to_record())
        _write_manifest("emit-job", [pairs_path, tree_path], [out], obj.cfg, obj.seed)
        click.echo(f"job spec for {cluster_key} -> {out}")
    except StyleQAError as exc:
        _fail(exc)


@main.command()
@click.option("--registry", "registry_path", required=True, type=click.Path())
@click.option("--cluster", "cluster_key", required=True)
@click.option("--artifact", required=True)
@click.option("--status", type=click.Choice([s.value for s in AdapterStatus]), default="ready")
@click.option("--pairs-digest", default=None, help="Expected digest; must match the manifest.")
@click.option("--manifest", "manifest_kv", multiple=True, help="key=value manifest entries.")
@click.pass_obj
def register(obj, registry_path, cluster_key, artifact, status, pairs_digest, manifest_kv):
    """Register a trained adapter artifact for a cluster."""
    try:
        registry = (
            AdapterRegistry.load(registry_path) if Path(registry_path).exists() else AdapterRegistry()
        )
        manifest = dict(kv.split("=", 1) for kv in manifest_kv)
        record = AdapterRecord.make(cluster_key, artifact, AdapterStatus(status), **manifest)
        registry.register(record, expected_pairs_digest=pairs_digest)
        registry.save(registry_path)
        _write_manifest("register", [], [registry_path], obj.cfg, obj.seed)
        click.echo(f"registered {artifact} for {cluster_key}")
    except StyleQAError as exc:
        _fail(exc)


def _build_gateway(cfg: PipelineConfig) -> tuple[Gateway, StandardsRegistry, dict, dict]:
    registry = load_registry(cfg.paths.get("standards"))
    tree = _load_tree(cfg.path("tree"))
    profiles = _load_profiles(cfg.path("profiles"), registry)
    adapters = (
        AdapterRegistry.load(cfg.path("registry"))
        if Path(cfg.path("registry", "registry.json")).exists()
        else AdapterRegistry()
    )
    index = _build_index(cfg, cfg.path("articles"))
    backend = cfg.make_backend()
    gateway = Gateway(
        tree,
        profiles,
        adapters,
        index,
        backend,
        top_n=int(cfg.retrieval.get("top_n", 3)),
        default_cluster_key=cfg.default_cluster,
    )
    labels = _cluster_context(cfg, registry, tree, profiles)
    corpora = _load_corpora(cfg.path("corpus"))
    return gateway, registry, labels, corpora


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8080)
@click.pass_obj
def serve(obj, host, port):
    """Run the HTTP gateway."""
    try:
        import uvicorn

        from .server import create_app

        gateway, _, _, _ = _build_gateway(obj.cfg)
        uvicorn.run(create_app(gateway), host=host, port=port)
    except StyleQAError as exc:
        _fail(exc)


@main.command("eval")
@click.option("--queries", "queries_path", required=True, type=click.Path())
@click.option("--systems", default="gateway,baseline")
@click.option("--out", required=True, type=click.Path(), help="Report JSON; CSV, records, and figures go next to it.")
@click.option("--m", type=int, default=None, help="Exemplars for the prompt baseline.")
@click.pass_obj
def eval_cmd(obj, queries_path, systems, out, m):
    """Judge gateway (and baseline) answers; write report, CSV, and figures."""
    try:
        gateway, registry, labels, corpora = _build_gateway(obj.cfg)
        m = m if m is not None else obj.cfg.m
        seed = obj.seed if obj.seed is not None else obj.cfg.seeds.get("baseline", 0)
        pool = {a: c.pairs for a, c in corpora.items() if c.pairs}

        queries = [
            evalharness.EvalQuery(rec["query_id"], rec["account_id"], rec["question"])
            for rec in read_jsonl(_require(queries_path))
        ]
        system_names = [s.strip() for s in systems.split(",") if s.strip()]
        runners = {}
        for name in system_names:
            if name == evalharness.SYSTEM_GATEWAY:
                runners[name] = lambda q: gateway.answer(AnswerRequest(q.account_id, q.question))
            elif name == evalharness.SYSTEM_BASELINE:
                runners[name] = lambda q: gateway.baseline_answer(
                    AnswerRequest(q.account_id, q.question),
                    pool,
                    m,
                    random.Random(f"{seed}:{q.query_id}"),
                )
            else:
                raise StageInputMissing(f"unknown system {name!r}")

        def context_for(q: evalharness.EvalQuery) -> str:
            if not gateway.index.has_account(q.account_id):
                return ""
            return "\n\n".join(gateway.index.retrieve(q.account_id, q.question, gateway.top_n).texts())

        records = evalharness.run_eval(
            queries,
            runners,
            obj.cfg.make_backend(),
            registry,
            labels_for=lambda key: labels[key],
            context_for=context_for,
        )
        rep = evalharness.report(records)

        out = Path(out)
        write_json(out, rep.to_document())
        write_jsonl(out.with_suffix(".records.jsonl"), (r.to_record() for r in records))
        with open(out.with_suffix(".csv"), "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(evalharness.report_csv_rows(rep))
        cost = None
        if {evalharness.SYSTEM_GATEWAY, evalharness.SYSTEM_BASELINE} <= set(system_names):
            cost = evalharness.time_cost(records)
            write_json(out.with_suffix(".timecost.json"), cost.to_document())
        figures.render_metric_figure(rep, out.with_suffix(".metrics.png"))
        figures.render_efficiency_figure(rep, cost, out.with_suffix(".efficiency.png"))
        _write_manifest("eval", [queries_path], [str(out)], obj.cfg, seed)
        click.echo(f"{len(records)} records -> {out}")
    except StyleQAError as exc:
        _fail(exc)


if __name__ == "__main__":
    main()
