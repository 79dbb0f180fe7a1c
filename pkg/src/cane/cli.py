"""Command-line front end: one subcommand per pipeline stage plus utilities.

Every command reads the same flat config (``--config``), with ``--set
key=value`` and the dedicated global flags overriding file values. Artifacts
land in the run directory (``--out``); stage commands go through the cached
pipeline, so an unchanged stage is skipped rather than recomputed.
"""
from __future__ import annotations

import json
import logging
from collections import Counter
from pathlib import Path

import click
import numpy as np

from .community import select_bridge_users
from .community import CommunityPartition
from .corpus import dedup_usernames, write_posts
from .downstream import data_efficiency_sweep, embed_graph, evaluate_classification, export_engagement_benchmark, write_sweep
from .embeddings import EmbeddingMatrix, write_embeddings
from .migration import permutation_significance, transfer_entropy
from .pipeline import (A_COMMUNITIES, A_EDGES, A_EMB, A_POSTS, A_USERS, A_CENTROIDS,
                       PipelineError, RunConfig, RunContext, STAGE_ORDER, load_config,
                       run_pipeline)
from .stats import match_nearest, write_matched_report
from .synth import SynthConfig, gen_planted_corpus, write_ground_truth
from ._util import dump_json
from .affiliation import count_matrix, weight_matrix
from .clustering import ClusterParams, dpmeans_fit
from .graph_static import default_k, knn_exact


def _build_config(config_path: str | None, seed: int | None, out: str | None,
                  threads: int | None, deterministic: bool | None,
                  assignments: tuple[str, ...]) -> RunConfig:
    overrides: dict[str, object] = {}
    for item in assignments:
        if "=" not in item:
            raise click.BadParameter(f"expected KEY=VALUE, got {item!r}", param_hint="--set")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    if seed is not None:
        overrides["seed"] = seed
    if out is not None:
        overrides["out"] = out
    if threads is not None:
        overrides["threads"] = threads
    if deterministic is not None:
        overrides["deterministic"] = deterministic
    try:
        return load_config(config_path, overrides)
    except PipelineError as exc:
        raise click.ClickException(str(exc)) from exc


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Flat key = value settings file.")
@click.option("--seed", type=int, default=None, help="Global seed override.")
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Run directory for artifacts.")
@click.option("--threads", type=int, default=None,
              help="Worker threads for stages that support them.")
@click.option("--deterministic/--no-deterministic", "deterministic", default=None,
              help="Force single-threaded, bit-reproducible execution (default on).")
@click.option("--set", "assignments", multiple=True, metavar="KEY=VALUE",
              help="Override any config key; repeatable.")
@click.option("-v", "--verbose", is_flag=True, help="Log stage progress.")
@click.pass_context
def main(ctx: click.Context, config_path: str | None, seed: int | None, out: str | None,
         threads: int | None, deterministic: bool | None,
         assignments: tuple[str, ...], verbose: bool) -> None:
    """Cross-platform narrative analysis: clustering, graphs, migration, benchmarks."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = _build_config(config_path, seed, out, threads, deterministic, assignments)


def _run_stages(cfg: RunConfig, stages: list[str] | None) -> None:
    try:
        manifest = run_pipeline(cfg, stages=stages)
    except (PipelineError, FileNotFoundError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc
    wanted = stages if stages is not None else list(STAGE_ORDER)
    for name in wanted:
        entry = manifest["stages"][name]
        click.echo(f"{name}: {entry['status']}")
    click.echo(f"artifacts in {cfg.out_dir}")


_STAGE_HELP = {
    "ingest": "Normalize the corpus, resolve post embeddings, index users.",
    "cluster": "Group post embeddings into narrative clusters.",
    "affiliate": "Build the user-narrative affiliation weights.",
    "graph": "Build the static user-user similarity graph.",
    "tgraph": "Replay the corpus into a windowed temporal graph.",
    "communities": "Detect communities and flag cross-platform ones.",
    "migrate": "Detect narrative migrations and score their timing coupling.",
    "walks": "Sample graph walks and train node embeddings.",
    "eval": "Classification benchmark on the node embeddings.",
}

for _name in STAGE_ORDER:
    def _make(name: str):
        @click.pass_obj
        def _cmd(cfg: RunConfig) -> None:
            _run_stages(cfg, [name])
        _cmd.__doc__ = _STAGE_HELP[name]
        return _cmd
    main.command(name=_name)(_make(_name))


@main.command()
@click.pass_obj
def run(cfg: RunConfig) -> None:
    """Run every pipeline stage in dependency order."""
    _run_stages(cfg, None)


def _require(cfg: RunConfig, *needs: tuple[str, str]) -> None:
    for artifact, stage in needs:
        if not (cfg.out_dir / artifact).is_file():
            raise click.ClickException(f"missing {artifact}; run `{stage}` first")


@main.command()
@click.option("--match-k", type=int, default=1, show_default=True,
              help="Matched controls per bridge user.")
@click.pass_obj
def bridges(cfg: RunConfig, match_k: int) -> None:
    """Bridge-community report plus a matched-control comparison."""
    _require(cfg, (A_COMMUNITIES, "communities"), (A_USERS, "ingest"), (A_EDGES, "graph"))
    ctx = RunContext(cfg)
    doc = ctx.communities()
    members = {c["id"]: list(c["users"]) for c in doc["communities"]}
    partition = CommunityPartition(
        assignment={u: cid for cid, mem in members.items() for u in mem},
        members=members,
        platform_counts={c["id"]: dict(c["platform_counts"]) for c in doc["communities"]},
        q=doc["modularity"], resolution=cfg.resolution, seed=cfg.seed)
    report = select_bridge_users(partition, ctx.user_platforms(),
                                 entropy_min=cfg.entropy_min, min_size=cfg.min_size,
                                 post_counts=ctx.user_post_counts())
    degree: Counter[str] = Counter()
    graph = ctx.graph()
    for u, v in graph.edges:
        degree[u] += 1
        degree[v] += 1
    posts_of = ctx.user_post_counts()
    out_doc = {
        "bridge_ids": report.bridge_ids,
        "bridge_users": report.bridge_users,
        "entropy": {str(cid): h for cid, h in sorted(report.entropy.items())},
        "entropy_min": report.entropy_min,
        "min_size": report.min_size,
        "user_share": report.user_share,
        "post_share": report.post_share,
        "matched_pairs": [],
    }
    if not report.bridge_users:
        dump_json(out_doc, cfg.out_dir / "bridge_report.json")
        click.echo(f"no community flagged at entropy_min={cfg.entropy_min}; "
                   "bridge_report.json written, matching skipped")
        return
    features = {u: {"posts": float(posts_of.get(u, 0)), "degree": float(degree.get(u, 0))}
                for u in graph.nodes}
    treated = {u: features[u] for u in report.bridge_users}
    pool = {u: f for u, f in features.items() if u not in treated}
    try:
        matched = match_nearest(treated, pool, k=match_k)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    out_doc["matched_pairs"] = [list(p) for p in matched.pairs]
    dump_json(out_doc, cfg.out_dir / "bridge_report.json")
    per_metric = {
        metric: ([features[u][metric] for u in report.bridge_users],
                 [features[c][metric] for c in matched.controls])
        for metric in ("posts", "degree")
    }
    write_matched_report(per_metric, cfg.out_dir / "matched_report.json")
    click.echo(f"{len(report.bridge_users)} bridge users in communities "
               f"{report.bridge_ids}; {len(matched.pairs)} matched pairs")
    click.echo(f"wrote bridge_report.json and matched_report.json to {cfg.out_dir}")


def _load_series(path: str) -> np.ndarray:
    series = np.loadtxt(path, ndmin=1)
    if series.ndim != 1:
        raise click.ClickException(f"{path}: expected one value per line")
    return series


@main.command()
@click.option("--src", "src_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Candidate driver series, one value per line.")
@click.option("--dst", "dst_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Candidate follower series, one value per line.")
@click.option("--history", type=int, default=None,
              help="History window length [default: config te_history].")
@click.option("--perms", type=int, default=None,
              help="Permutation count [default: config n_perm].")
@click.option("--out-file", type=click.Path(dir_okay=False), default=None,
              help="Also write the result JSON here.")
@click.pass_obj
def te(cfg: RunConfig, src_path: str, dst_path: str, history: int | None,
       perms: int | None, out_file: str | None) -> None:
    """Transfer entropy src -> dst (bits) with a permutation p-value."""
    src = _load_series(src_path)
    dst = _load_series(dst_path)
    h = history if history is not None else cfg.te_history
    n_perm = perms if perms is not None else cfg.n_perm
    try:
        bits = transfer_entropy(src, dst, h)
        p = permutation_significance(src, dst, h, n_perm=n_perm, seed=cfg.seed)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    result = {"te_bits": bits, "p": p, "n": int(len(src)),
              "history": h, "n_perm": n_perm}
    click.echo(json.dumps(result, sort_keys=True, indent=2))
    if out_file:
        dump_json(result, out_file)


@main.command()
@click.option("--step", type=int, default=5, show_default=True,
              help="Retention grid step, percent.")
@click.option("--labels", "labels_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="user<TAB>label file [default: the run's communities].")
@click.pass_obj
def sweep(cfg: RunConfig, step: int, labels_path: str | None) -> None:
    """Data-efficiency sweep: AUC per nested retention level."""
    _require(cfg, (A_POSTS, "ingest"), (A_EMB, "ingest"))
    ctx = RunContext(cfg)
    posts = ctx.posts()
    emb = ctx.embeddings()
    if labels_path is not None:
        raw = {}
        for line in Path(labels_path).read_text(encoding="utf-8").splitlines():
            if line:
                user, _, label = line.partition("\t")
                raw[user] = label
        labels: dict[str, object] = raw
    else:
        _require(cfg, (A_COMMUNITIES, "communities"))
        labels = ctx.community_labels()
    row_of = {pid: i for i, pid in enumerate(emb.ids)}

    def run_level(subset) -> float:
        ids = sorted(p.post_id for p in subset)
        sub_emb = EmbeddingMatrix(ids, emb.vectors[[row_of[i] for i in ids]])
        model = dpmeans_fit(sub_emb, ClusterParams(lam=cfg.lam, max_iters=cfg.max_iters,
                                                   seed=cfg.seed))
        aff = weight_matrix(count_matrix(subset, model), scheme=cfg.scheme)
        k = cfg.k if cfg.k > 0 else default_k(len(aff.users))
        graph = knn_exact(aff, k, cfg.min_sim)
        node_emb = embed_graph(graph, p=cfg.p, q=cfg.q, walk_length=cfg.walk_length,
                               walks_per_node=cfg.walks_per_node, d_emb=cfg.d_emb,
                               window=cfg.context_window, negatives=cfg.negatives,
                               epochs=cfg.epochs, lr=cfg.lr, seed=cfg.seed,
                               workers=cfg.sgns_workers())
        return evaluate_classification(node_emb, labels, folds=cfg.folds,
                                       seed=cfg.seed).auc

    try:
        result = data_efficiency_sweep(posts, run_level, step=step, seed=cfg.seed)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    write_sweep(result, cfg.out_dir / "sweep.json")
    for level, auc in zip(result.levels, result.aucs):
        click.echo(f"retention {level:3d}%: AUC {auc:.4f}")
    click.echo(f"efficiency point: {result.efficiency_pct}% (sweep.json written)")


@main.command("export-engagement")
@click.option("--cutoff", type=int, required=True,
              help="Feature/label split timestamp, unix seconds.")
@click.option("--horizon", type=float, default=7.0, show_default=True,
              help="Label horizon after the cutoff, days.")
@click.pass_obj
def export_engagement(cfg: RunConfig, cutoff: int, horizon: float) -> None:
    """Export feature/label matrices for engagement prediction."""
    _require(cfg, (A_POSTS, "ingest"), (A_CENTROIDS, "cluster"), (A_EDGES, "graph"))
    ctx = RunContext(cfg)
    try:
        bench = export_engagement_benchmark(ctx.graph(), ctx.model(), ctx.posts(),
                                            cutoff, horizon,
                                            out_dir=cfg.out_dir / "engagement")
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"{len(bench.users)} users x {len(bench.narrative_ids)} narratives; "
               f"features {int(bench.features.sum())} active cells, "
               f"labels {int(bench.labels.sum())} active cells")
    click.echo(f"wrote features.tsv and labels.tsv to {cfg.out_dir / 'engagement'}")


@main.command()
@click.option("--users-per-community", type=int, default=30, show_default=True)
@click.option("--communities", "n_communities", type=int, default=4, show_default=True)
@click.option("--bridge-users", type=int, default=12, show_default=True)
@click.option("--narratives", type=int, default=20, show_default=True)
@click.option("--posts-per-user", type=int, default=20, show_default=True)
@click.option("--dim", type=int, default=64, show_default=True,
              help="Embedding dimension.")
@click.option("--noise", type=float, default=0.1, show_default=True,
              help="Within-narrative embedding jitter.")
@click.option("--migration-fraction", type=float, default=0.5, show_default=True)
@click.option("--bridge-intro-share", type=float, default=0.7, show_default=True,
              help="Share of migrations seeded by a bridge user.")
@click.option("--strength", type=float, default=0.9, show_default=True,
              help="Cross-platform timing coupling in [0, 1].")
@click.option("--lag", type=int, default=1, show_default=True,
              help="Coupling lag in hours.")
@click.pass_obj
def synth(cfg: RunConfig, users_per_community: int, n_communities: int,
          bridge_users: int, narratives: int, posts_per_user: int, dim: int,
          noise: float, migration_fraction: float, bridge_intro_share: float,
          strength: float, lag: int) -> None:
    """Generate a planted-ground-truth corpus for pipeline validation."""
    try:
        sc = SynthConfig(users_per_community=users_per_community,
                         n_communities=n_communities, bridge_users=bridge_users,
                         n_narratives=narratives, posts_per_user=posts_per_user,
                         emb_dim=dim, noise=noise,
                         migration_fraction=migration_fraction,
                         bridge_intro_share=bridge_intro_share,
                         coupling_strength=strength, coupling_lag=lag,
                         seed=cfg.seed)
        posts, emb, truth = gen_planted_corpus(sc)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_posts(posts, out / "synth_posts.jsonl")
    write_embeddings(emb, out / "synth_embeddings.caneemb")
    write_ground_truth(truth, out / "ground_truth.json")
    n_migrated = sum(1 for nt in truth.narratives.values() if nt.migrated)
    click.echo(f"{len(posts)} posts, {sc.n_users} users, {sc.n_narratives} narratives "
               f"({n_migrated} migrated), {len(truth.bridge_users)} bridge users")
    click.echo(f"wrote synth_posts.jsonl, synth_embeddings.caneemb, ground_truth.json to {out}")
    click.echo(f"next: cane --out {out} --set posts={out / 'synth_posts.jsonl'} "
               f"--set embeddings={out / 'synth_embeddings.caneemb'} run")


@main.command()
@click.option("--threshold", type=float, default=0.9, show_default=True,
              help="Minimum normalized username similarity to flag.")
@click.pass_obj
def dedup(cfg: RunConfig, threshold: float) -> None:
    """Flag cross-platform username pairs that look like one account."""
    _require(cfg, (A_USERS, "ingest"))
    ctx = RunContext(cfg)
    try:
        flagged = dedup_usernames(ctx.user_platforms().items(), threshold)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    out_path = cfg.out_dir / "dedup.tsv"
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b, sim in flagged:
            fh.write(f"{a}\t{b}\t{sim:.6f}\n")
    click.echo(f"{len(flagged)} candidate pair(s) at threshold {threshold}; wrote {out_path}")


if __name__ == "__main__":
    main()
