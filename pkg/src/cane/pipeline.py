"""Config-driven orchestration: staged runs, content-hash caching, manifests.

A run reads a flat ``key = value`` config, executes the requested stages in
dependency order, and records every artifact's sha256 in ``manifest.json``.
A stage is skipped when its cache key — the hash of its input artifacts plus
the config subset it actually reads — matches the previous run and all of its
outputs are still on disk unchanged. Reruns with identical config and seed
therefore produce byte-identical artifacts without redoing any work.
"""
from __future__ import annotations

import json
import logging
import shutil
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from ._util import dump_json, sha256_file, sha256_text
from .affiliation import SCHEMES, count_matrix, read_affiliations, weight_matrix, write_affiliations
from .clustering import ClusterParams, dpmeans_fit, load_cluster_model, save_cluster_model, write_assignments
from .community import (DEFAULT_ENTROPY_MIN, DEFAULT_MIN_SIZE, louvain_partition,
                        read_communities, select_bridge_users, write_communities)
from .corpus import PostCollection, filter_min_activity, load_posts, write_posts
from .downstream import (DEFAULT_EMB_DIM, DEFAULT_EPOCHS, DEFAULT_LR, DEFAULT_NEGATIVES,
                         DEFAULT_WALK_LENGTH, DEFAULT_WALKS_PER_NODE, DEFAULT_WINDOW,
                         evaluate_classification, generate_walks, read_node_embeddings,
                         train_node_embeddings, write_eval_report, write_node_embeddings,
                         write_walks)
from .embeddings import EmbeddingMatrix, read_embeddings, toy_embed_posts, write_embeddings
from .graph_static import (GraphMeta, IndexParams, UserGraph, default_k,
                           knn_exact, knn_hnsw, read_edges, write_edges)
from .graph_temporal import TemporalParams, build_temporal, write_snapshots
from .migration import (DEFAULT_BIN, DEFAULT_HISTORY, DEFAULT_MIN_POSTS, DEFAULT_N_PERM,
                        DEFAULT_ORIGIN_GAP, analyze_migrations, write_migrations)

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA = "CANERUN1"


class PipelineError(RuntimeError):
    """Fatal orchestration problem: bad config, missing upstream artifact."""


# ---------------------------------------------------------------------------
# config

def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _min_posts(raw: str) -> int | str:
    if raw.strip().lower() == "auto":
        return "auto"
    return int(raw)


# key -> (parser, default). The parser doubles as the documented type.
CONFIG_SCHEMA: dict[str, tuple[Callable[[str], object], object]] = {
    # inputs
    "posts": (str, ""),
    "embeddings": (str, "toy"),        # CANEEMB1 path, or "toy" for hash vectors
    "toy_dim": (int, 64),
    "min_activity": (int, 0),
    # clustering
    "lam": (float, 0.30),
    "max_iters": (int, 50),
    # affiliation
    "scheme": (str, "tfidf"),
    # static graph
    "graph_method": (str, "exact"),    # exact | hnsw
    "k": (int, 0),                     # 0 -> min(800, n - 1)
    "min_sim": (float, 0.0),
    "dense_dim": (int, 256),
    "hnsw_m": (int, 16),
    "ef_construction": (int, 200),
    "ef_search": (int, 128),
    # temporal graph
    "alpha": (float, 0.8),
    "beta": (float, 0.2),
    "window": (float, 86_400.0),
    "prune": (float, 1e-3),
    # communities
    "resolution": (float, 1.0),
    "entropy_min": (float, DEFAULT_ENTROPY_MIN),
    "min_size": (int, DEFAULT_MIN_SIZE),
    # migration
    "origin_gap": (float, DEFAULT_ORIGIN_GAP),
    "min_posts": (_min_posts, DEFAULT_MIN_POSTS),
    "bin_width": (float, DEFAULT_BIN),
    "te_history": (int, DEFAULT_HISTORY),
    "n_perm": (int, DEFAULT_N_PERM),
    # node embeddings
    "p": (float, 1.0),
    "q": (float, 1.0),
    "walk_length": (int, DEFAULT_WALK_LENGTH),
    "walks_per_node": (int, DEFAULT_WALKS_PER_NODE),
    "d_emb": (int, DEFAULT_EMB_DIM),
    "context_window": (int, DEFAULT_WINDOW),
    "negatives": (int, DEFAULT_NEGATIVES),
    "epochs": (int, DEFAULT_EPOCHS),
    "lr": (float, DEFAULT_LR),
    # evaluation
    "labels": (str, "communities"),    # "communities" or a user\tlabel TSV path
    "folds": (int, 5),
    # run-wide
    "out": (str, "cane_run"),
    "seed": (int, 0),
    "threads": (int, 1),
    "deterministic": (_bool, True),
}


@dataclass(frozen=True)
class RunConfig:
    """Every pipeline parameter, validated against its module's range."""

    posts: str = ""
    embeddings: str = "toy"
    toy_dim: int = 64
    min_activity: int = 0
    lam: float = 0.30
    max_iters: int = 50
    scheme: str = "tfidf"
    graph_method: str = "exact"
    k: int = 0
    min_sim: float = 0.0
    dense_dim: int = 256
    hnsw_m: int = 16
    ef_construction: int = 200
    ef_search: int = 128
    alpha: float = 0.8
    beta: float = 0.2
    window: float = 86_400.0
    prune: float = 1e-3
    resolution: float = 1.0
    entropy_min: float = DEFAULT_ENTROPY_MIN
    min_size: int = DEFAULT_MIN_SIZE
    origin_gap: float = DEFAULT_ORIGIN_GAP
    min_posts: int | str = DEFAULT_MIN_POSTS
    bin_width: float = DEFAULT_BIN
    te_history: int = DEFAULT_HISTORY
    n_perm: int = DEFAULT_N_PERM
    p: float = 1.0
    q: float = 1.0
    walk_length: int = DEFAULT_WALK_LENGTH
    walks_per_node: int = DEFAULT_WALKS_PER_NODE
    d_emb: int = DEFAULT_EMB_DIM
    context_window: int = DEFAULT_WINDOW
    negatives: int = DEFAULT_NEGATIVES
    epochs: int = DEFAULT_EPOCHS
    lr: float = DEFAULT_LR
    labels: str = "communities"
    folds: int = 5
    out: str = "cane_run"
    seed: int = 0
    threads: int = 1
    deterministic: bool = True

    def __post_init__(self) -> None:
        # module param classes own their range checks; construct them eagerly
        ClusterParams(lam=self.lam, max_iters=self.max_iters, seed=self.seed)
        TemporalParams(alpha=self.alpha, beta=self.beta, window=self.window,
                       prune_eps=self.prune)
        IndexParams(m=self.hnsw_m, ef_construction=self.ef_construction,
                    ef_search=self.ef_search, dense_dim=self.dense_dim,
                    seed=self.seed)
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.graph_method not in ("exact", "hnsw"):
            raise ValueError(f"graph_method must be 'exact' or 'hnsw', got {self.graph_method!r}")
        if self.k < 0:
            raise ValueError(f"k must be >= 0 (0 = auto), got {self.k}")
        if not 0.0 <= self.min_sim <= 1.0:
            raise ValueError(f"min_sim must be in [0, 1], got {self.min_sim}")
        if not 0.0 <= self.entropy_min <= 1.0:
            raise ValueError(f"entropy_min must be in [0, 1], got {self.entropy_min}")
        if self.min_size < 1:
            raise ValueError(f"min_size must be >= 1, got {self.min_size}")
        if self.origin_gap <= 0 or self.bin_width <= 0:
            raise ValueError("origin_gap and bin_width must be positive")
        if isinstance(self.min_posts, str):
            if self.min_posts != "auto":
                raise ValueError(f"min_posts must be an integer or 'auto', got {self.min_posts!r}")
        elif self.min_posts < 1:
            raise ValueError(f"min_posts must be >= 1, got {self.min_posts}")
        if self.te_history < 1:
            raise ValueError(f"te_history must be >= 1, got {self.te_history}")
        if self.n_perm < 1:
            raise ValueError(f"n_perm must be >= 1, got {self.n_perm}")
        if self.p <= 0 or self.q <= 0:
            raise ValueError("walk biases p and q must be positive")
        for name in ("walk_length", "walks_per_node", "d_emb", "context_window",
                     "negatives", "epochs", "toy_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.folds < 2:
            raise ValueError(f"folds must be >= 2, got {self.folds}")
        if self.min_activity < 0:
            raise ValueError(f"min_activity must be >= 0, got {self.min_activity}")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def sgns_workers(self) -> int:
        return 1 if self.deterministic else self.threads


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    """Flat ``key = value`` lines; ``#`` comments; unknown keys rejected."""
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise PipelineError(f"{source}: line {lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in CONFIG_SCHEMA:
            raise PipelineError(f"{source}: line {lineno}: unknown config key {key!r}")
        if key in values:
            raise PipelineError(f"{source}: line {lineno}: duplicate config key {key!r}")
        parser, _ = CONFIG_SCHEMA[key]
        try:
            values[key] = parser(raw)
        except ValueError as exc:
            raise PipelineError(f"{source}: line {lineno}: bad value for {key!r}: {exc}") from exc
    return values


def load_config(path: str | Path | None = None,
                overrides: Mapping[str, object] | None = None) -> RunConfig:
    """File values (if any) overridden by explicit settings, then validated."""
    values: dict[str, object] = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8"), str(path)))
    for key, val in (overrides or {}).items():
        if key not in CONFIG_SCHEMA:
            raise PipelineError(f"unknown config key {key!r}")
        if isinstance(val, str):
            parser, _ = CONFIG_SCHEMA[key]
            try:
                val = parser(val)
            except ValueError as exc:
                raise PipelineError(f"bad value for {key!r}: {exc}") from exc
        values[key] = val
    try:
        return RunConfig(**values)  # type: ignore[arg-type]
    except ValueError as exc:
        raise PipelineError(str(exc)) from exc


def write_config(config: RunConfig, path: str | Path) -> None:
    """The run's resolved settings, one ``key = value`` per line."""
    lines = [f"{key} = {getattr(config, key)}" for key in CONFIG_SCHEMA]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# artifact access

A_POSTS = "posts.jsonl"
A_EMB = "embeddings.caneemb"
A_USERS = "users.tsv"
A_CENTROIDS = "centroids.caneemb"
A_CLUSTER_HEADER = "cluster_header.json"
A_ASSIGNMENTS = "assignments.tsv"
A_AFFIL = "affiliations.tsv"
A_EDGES = "edges.tsv"
A_GRAPH_META = "graph_meta.json"
A_TGRAPH = "tgraph/manifest.json"
A_COMMUNITIES = "communities.json"
A_MIGRATIONS = "migrations.json"
A_WALKS = "walks.txt"
A_NODE_VECS = "node_vecs.caneemb"
A_NODE_VECS_CONFIG = "node_vecs_config.json"
A_EVAL = "eval_report.json"


class RunContext:
    """Loads stage inputs from the run directory, caching within one process."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.out = config.out_dir
        self._cache: dict[str, object] = {}

    def path(self, name: str) -> Path:
        return self.out / name

    def posts(self) -> PostCollection:
        if "posts" not in self._cache:
            self._cache["posts"] = load_posts(self.path(A_POSTS))
        return self._cache["posts"]  # type: ignore[return-value]

    def embeddings(self) -> EmbeddingMatrix:
        if "embeddings" not in self._cache:
            self._cache["embeddings"] = read_embeddings(self.path(A_EMB), self.posts())
        return self._cache["embeddings"]  # type: ignore[return-value]

    def model(self):
        if "model" not in self._cache:
            self._cache["model"] = load_cluster_model(
                self.path(A_CENTROIDS), self.path(A_CLUSTER_HEADER), self.path(A_ASSIGNMENTS))
        return self._cache["model"]

    def affiliations(self):
        if "affiliations" not in self._cache:
            self._cache["affiliations"] = read_affiliations(
                self.path(A_AFFIL), scheme=self.config.scheme)
        return self._cache["affiliations"]

    def user_platforms(self) -> dict[str, str]:
        if "user_platforms" not in self._cache:
            platforms: dict[str, str] = {}
            counts: dict[str, int] = {}
            with open(self.path(A_USERS), encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    user, platform, n = line.rstrip("\n").split("\t")
                    platforms[user] = platform
                    counts[user] = int(n)
            self._cache["user_platforms"] = platforms
            self._cache["user_post_counts"] = counts
        return self._cache["user_platforms"]  # type: ignore[return-value]

    def user_post_counts(self) -> dict[str, int]:
        self.user_platforms()
        return self._cache["user_post_counts"]  # type: ignore[return-value]

    def graph(self) -> UserGraph:
        if "graph" not in self._cache:
            header = json.loads(self.path(A_GRAPH_META).read_text(encoding="utf-8"))
            meta = GraphMeta(k=header["k"], min_sim=header["min_sim"],
                             method=header["method"], seed=header["seed"])
            platforms = self.user_platforms()
            graph = read_edges(self.path(A_EDGES), nodes=sorted(platforms), meta=meta)
            graph.platforms = dict(platforms)
            self._cache["graph"] = graph
        return self._cache["graph"]  # type: ignore[return-value]

    def communities(self) -> dict:
        if "communities" not in self._cache:
            self._cache["communities"] = read_communities(self.path(A_COMMUNITIES))
        return self._cache["communities"]  # type: ignore[return-value]

    def bridge_users(self) -> list[str]:
        doc = self.communities()
        bridge_ids = set(doc["bridge_ids"])
        users = sorted({u for comm in doc["communities"]
                        if comm["id"] in bridge_ids for u in comm["users"]})
        return users

    def community_labels(self) -> dict[str, int]:
        doc = self.communities()
        return {u: comm["id"] for comm in doc["communities"] for u in comm["users"]}

    def node_embeddings(self):
        if "node_embeddings" not in self._cache:
            cfg = json.loads(self.path(A_NODE_VECS_CONFIG).read_text(encoding="utf-8"))
            self._cache["node_embeddings"] = read_node_embeddings(
                self.path(A_NODE_VECS), config=cfg)
        return self._cache["node_embeddings"]

    def invalidate(self, *keys: str) -> None:
        for key in keys:
            self._cache.pop(key, None)


# ---------------------------------------------------------------------------
# stages

def _stage_ingest(ctx: RunContext) -> None:
    cfg = ctx.config
    if not cfg.posts:
        raise PipelineError("config key 'posts' is required to ingest a corpus")
    coll = load_posts(cfg.posts)
    if cfg.min_activity > 0:
        coll = filter_min_activity(coll, cfg.min_activity)
    write_posts(coll, ctx.path(A_POSTS))
    if cfg.embeddings == "toy":
        matrix = toy_embed_posts(coll, cfg.toy_dim, cfg.seed)
    else:
        matrix = read_embeddings(cfg.embeddings, coll)
    write_embeddings(matrix, ctx.path(A_EMB))
    per_user: dict[str, Counter] = {}
    for post in coll:
        per_user.setdefault(post.user_id, Counter())[post.platform] += 1
    with open(ctx.path(A_USERS), "w", encoding="utf-8", newline="\n") as fh:
        for user in sorted(per_user):
            counts = per_user[user]
            top = max(counts.values())
            platform = min(p for p, c in counts.items() if c == top)
            fh.write(f"{user}\t{platform}\t{sum(counts.values())}\n")
    ctx.invalidate("posts", "embeddings", "user_platforms", "user_post_counts")


def _stage_cluster(ctx: RunContext) -> None:
    cfg = ctx.config
    model = dpmeans_fit(ctx.embeddings(),
                        ClusterParams(lam=cfg.lam, max_iters=cfg.max_iters, seed=cfg.seed))
    save_cluster_model(model, ctx.path(A_CENTROIDS), ctx.path(A_CLUSTER_HEADER))
    write_assignments(model, ctx.path(A_ASSIGNMENTS))
    logger.info("cluster: %d clusters, objective %.6f", model.n_clusters, model.objective)
    ctx.invalidate("model")


def _stage_affiliate(ctx: RunContext) -> None:
    counts = count_matrix(ctx.posts(), ctx.model())
    aff = weight_matrix(counts, scheme=ctx.config.scheme)
    write_affiliations(aff, ctx.path(A_AFFIL))
    ctx.invalidate("affiliations")


def _stage_graph(ctx: RunContext) -> None:
    cfg = ctx.config
    aff = ctx.affiliations()
    k = cfg.k if cfg.k > 0 else default_k(len(aff.users))
    platforms = ctx.user_platforms()
    if cfg.graph_method == "exact":
        graph = knn_exact(aff, k, cfg.min_sim, platforms=platforms)
    else:
        params = IndexParams(m=cfg.hnsw_m, ef_construction=cfg.ef_construction,
                             ef_search=cfg.ef_search, dense_dim=cfg.dense_dim,
                             seed=cfg.seed)
        graph = knn_hnsw(aff, k, cfg.min_sim, index_params=params, platforms=platforms)
    write_edges(graph, ctx.path(A_EDGES))
    dump_json({"k": graph.meta.k, "min_sim": graph.meta.min_sim,
               "method": graph.meta.method, "seed": graph.meta.seed,
               "n_nodes": len(graph.nodes), "n_edges": graph.n_edges},
              ctx.path(A_GRAPH_META))
    ctx.invalidate("graph")


def _stage_tgraph(ctx: RunContext) -> None:
    cfg = ctx.config
    params = TemporalParams(alpha=cfg.alpha, beta=cfg.beta, window=cfg.window,
                            k=cfg.k if cfg.k > 0 else None, min_sim=cfg.min_sim,
                            prune_eps=cfg.prune)
    tg = build_temporal(ctx.posts(), ctx.model(), params, scheme=cfg.scheme)
    shutil.rmtree(ctx.path("tgraph"), ignore_errors=True)  # drop stale snapshots
    write_snapshots(tg, ctx.path("tgraph"))


def _stage_communities(ctx: RunContext) -> None:
    cfg = ctx.config
    partition = louvain_partition(ctx.graph(), resolution=cfg.resolution, seed=cfg.seed)
    report = select_bridge_users(partition, ctx.user_platforms(),
                                 entropy_min=cfg.entropy_min, min_size=cfg.min_size,
                                 post_counts=ctx.user_post_counts())
    write_communities(partition, report, ctx.path(A_COMMUNITIES))
    logger.info("communities: %d found, %d flagged as bridge",
                partition.n_communities, len(report.bridge_ids))
    ctx.invalidate("communities")


def _stage_migrate(ctx: RunContext) -> None:
    cfg = ctx.config
    timelines, records = analyze_migrations(
        ctx.posts(), ctx.model(), bin_width=cfg.bin_width, origin_gap=cfg.origin_gap,
        min_posts=cfg.min_posts, history=cfg.te_history, n_perm=cfg.n_perm,
        seed=cfg.seed)
    write_migrations(timelines, records, ctx.bridge_users(), ctx.path(A_MIGRATIONS))


def _stage_walks(ctx: RunContext) -> None:
    cfg = ctx.config
    walks = generate_walks(ctx.graph(), p=cfg.p, q=cfg.q, walk_length=cfg.walk_length,
                           walks_per_node=cfg.walks_per_node, seed=cfg.seed)
    write_walks(walks, ctx.path(A_WALKS))
    walk_config = {"p": cfg.p, "q": cfg.q, "walk_length": cfg.walk_length,
                   "walks_per_node": cfg.walks_per_node}
    emb = train_node_embeddings(walks, d_emb=cfg.d_emb, window=cfg.context_window,
                                negatives=cfg.negatives, epochs=cfg.epochs, lr=cfg.lr,
                                seed=cfg.seed, workers=cfg.sgns_workers(),
                                walk_config=walk_config)
    write_node_embeddings(emb, ctx.path(A_NODE_VECS))
    dump_json(emb.config, ctx.path(A_NODE_VECS_CONFIG))
    ctx.invalidate("node_embeddings")


def _read_label_file(path: Path) -> dict[str, str]:
    labels: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise PipelineError(f"{path}: line {lineno}: expected 'user<TAB>label'")
            labels[parts[0]] = parts[1]
    return labels


def _stage_eval(ctx: RunContext) -> None:
    cfg = ctx.config
    if cfg.labels == "communities":
        labels: Mapping[str, object] = ctx.community_labels()
    else:
        labels = _read_label_file(Path(cfg.labels))
    report = evaluate_classification(ctx.node_embeddings(), labels,
                                     folds=cfg.folds, seed=cfg.seed)
    write_eval_report(report, ctx.path(A_EVAL))
    logger.info("eval: macro-F1 %.4f, AUC %.4f", report.macro_f1, report.auc)


@dataclass(frozen=True)
class StageSpec:
    name: str
    deps: tuple[str, ...]
    config_keys: tuple[str, ...]  # the config subset entering the cache key
    outputs: tuple[str, ...]
    run: Callable[[RunContext], None]


STAGES: dict[str, StageSpec] = {
    spec.name: spec for spec in (
        StageSpec("ingest", (), ("posts", "embeddings", "toy_dim", "min_activity", "seed"),
                  (A_POSTS, A_EMB, A_USERS), _stage_ingest),
        StageSpec("cluster", ("ingest",), ("lam", "max_iters", "seed"),
                  (A_CENTROIDS, A_CLUSTER_HEADER, A_ASSIGNMENTS), _stage_cluster),
        StageSpec("affiliate", ("ingest", "cluster"), ("scheme",),
                  (A_AFFIL,), _stage_affiliate),
        StageSpec("graph", ("ingest", "affiliate"),
                  ("graph_method", "k", "min_sim", "dense_dim", "hnsw_m",
                   "ef_construction", "ef_search", "seed"),
                  (A_EDGES, A_GRAPH_META), _stage_graph),
        StageSpec("tgraph", ("ingest", "cluster"),
                  ("alpha", "beta", "window", "prune", "k", "min_sim", "scheme"),
                  (A_TGRAPH,), _stage_tgraph),
        StageSpec("communities", ("ingest", "graph"),
                  ("resolution", "entropy_min", "min_size", "seed"),
                  (A_COMMUNITIES,), _stage_communities),
        StageSpec("migrate", ("ingest", "cluster", "communities"),
                  ("bin_width", "origin_gap", "min_posts", "te_history", "n_perm", "seed"),
                  (A_MIGRATIONS,), _stage_migrate),
        StageSpec("walks", ("ingest", "graph"),
                  ("p", "q", "walk_length", "walks_per_node", "d_emb", "context_window",
                   "negatives", "epochs", "lr", "deterministic", "threads", "seed"),
                  (A_WALKS, A_NODE_VECS, A_NODE_VECS_CONFIG), _stage_walks),
        StageSpec("eval", ("walks", "communities"), ("labels", "folds", "seed"),
                  (A_EVAL,), _stage_eval),
    )
}

STAGE_ORDER: tuple[str, ...] = tuple(STAGES)


# ---------------------------------------------------------------------------
# cache keys + manifest

def _external_inputs(stage: StageSpec, cfg: RunConfig) -> list[Path]:
    paths: list[Path] = []
    if stage.name == "ingest":
        if cfg.posts:
            paths.append(Path(cfg.posts))
        if cfg.embeddings not in ("", "toy"):
            paths.append(Path(cfg.embeddings))
    if stage.name == "eval" and cfg.labels != "communities":
        paths.append(Path(cfg.labels))
    return paths


def _hash_outputs(out: Path, names: Iterable[str]) -> dict[str, str]:
    hashes: dict[str, str] = {}
    for name in names:
        target = out / name
        if name == A_TGRAPH:
            # the whole snapshot dir travels with its manifest
            for child in sorted(target.parent.glob("*")):
                hashes[f"tgraph/{child.name}"] = sha256_file(child)
        else:
            hashes[name] = sha256_file(target)
    return hashes


def _stage_key(stage: StageSpec, cfg: RunConfig, input_hashes: Mapping[str, str]) -> str:
    payload = {
        "stage": stage.name,
        "config": {key: getattr(cfg, key) for key in stage.config_keys},
        "inputs": dict(sorted(input_hashes.items())),
    }
    return sha256_text(json.dumps(payload, sort_keys=True, separators=(",", ":")))


def _outputs_intact(out: Path, entry: Mapping) -> bool:
    for name, digest in entry.get("outputs", {}).items():
        target = out / name
        if not target.is_file() or sha256_file(target) != digest:
            return False
    return True


def read_manifest(out_dir: str | Path) -> dict | None:
    path = Path(out_dir) / "manifest.json"
    if not path.is_file():
        return None
    return json.loads(path.read_text(encoding="utf-8"))


def run_pipeline(config: RunConfig, stages: Sequence[str] | None = None) -> dict:
    """Execute the requested stages in dependency order; returns the manifest.

    Unchanged inputs + unchanged stage config ⇒ the stage is skipped and its
    artifacts are left untouched. A missing upstream artifact is fatal and
    names the stage that has to run first.
    """
    requested = list(stages) if stages is not None else list(STAGE_ORDER)
    for name in requested:
        if name not in STAGES:
            raise PipelineError(f"unknown stage {name!r}; expected one of {list(STAGE_ORDER)}")
    requested_set = set(requested)
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    previous = read_manifest(out) or {"stages": {}}
    prev_stages: dict = previous.get("stages", {})
    ctx = RunContext(config)
    manifest_stages: dict[str, dict] = {
        name: dict(entry) for name, entry in prev_stages.items() if name in STAGES
    }

    for name in STAGE_ORDER:
        if name not in requested_set:
            continue
        stage = STAGES[name]
        input_hashes: dict[str, str] = {}
        for dep in stage.deps:
            dep_spec = STAGES[dep]
            missing = [o for o in dep_spec.outputs if not (out / o).is_file()]
            if missing:
                raise PipelineError(
                    f"stage '{name}' needs artifacts from '{dep}' "
                    f"(missing {', '.join(missing)}); run `{dep}` first")
            input_hashes.update(_hash_outputs(out, dep_spec.outputs))
        for ext in _external_inputs(stage, config):
            if not ext.is_file():
                raise PipelineError(f"stage '{name}': input file not found: {ext}")
            input_hashes[f"external:{ext.name}"] = sha256_file(ext)

        key = _stage_key(stage, config, input_hashes)
        prev_entry = prev_stages.get(name)
        if (prev_entry is not None and prev_entry.get("key") == key
                and _outputs_intact(out, prev_entry)):
            logger.info("stage %s: cached", name)
            entry = dict(prev_entry)
            entry["status"] = "cached"
        else:
            logger.info("stage %s: running", name)
            stage.run(ctx)
            entry = {
                "key": key,
                "depends_on": list(stage.deps),
                "inputs": dict(sorted(input_hashes.items())),
                "config": {k: getattr(config, k) for k in stage.config_keys},
                "outputs": _hash_outputs(out, stage.outputs),
                "status": "ran",
            }
        manifest_stages[name] = entry

    manifest = {
        "schema": MANIFEST_SCHEMA,
        "stage_order": [s for s in STAGE_ORDER if s in manifest_stages],
        "stages": {name: manifest_stages[name] for name in STAGE_ORDER
                   if name in manifest_stages},
    }
    # the stored manifest is part of the run's byte-identity contract, so the
    # volatile ran/cached flag lives only in the returned copy
    stored = {
        "schema": manifest["schema"],
        "stage_order": manifest["stage_order"],
        "stages": {name: {k: v for k, v in entry.items() if k != "status"}
                   for name, entry in manifest["stages"].items()},
    }
    dump_json(stored, out / "manifest.json")
    return manifest
