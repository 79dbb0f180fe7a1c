"""Temporal user graph: windowed affiliations + memory/decay edge updates.

Posts are bucketed into fixed-width windows from the corpus minimum
timestamp. Each nonempty window gets its own TF-IDF affiliation matrix and
kNN similarity search; a pair's similarity is *defined* in a step iff the
pair appears in that step's symmetrized kNN edge set (which already implies
both users posted in the window). Edge state then evolves as

    e[t] = alpha * sim + (1 - alpha) * e[t-1]   when sim is defined
    e[t] = (1 - beta) * e[t-1]                  otherwise

with e[-1] = 0 for every pair, and edges falling below ``prune_eps`` are
dropped from the state. Empty windows are skipped entirely: steps index
nonempty windows, so a quiet gap costs no decay.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from ._util import dump_json
from .affiliation import AffiliationMatrix, count_matrix, weight_matrix
from .clustering import ClusterModel
from .corpus import PostCollection
from .graph_static import (
    GraphMeta,
    IndexParams,
    UserGraph,
    default_k,
    knn_exact,
    knn_hnsw,
    write_edge_dict,
)

logger = logging.getLogger(__name__)

Pair = tuple[str, str]


@dataclass(frozen=True)
class TemporalParams:
    alpha: float = 0.8
    beta: float = 0.2
    window: float = 86_400.0  # seconds
    k: int | None = None  # None -> min(800, active_users - 1) per step
    min_sim: float = 0.0
    prune_eps: float = 1e-3

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if self.window <= 0:
            raise ValueError(f"window must be positive, got {self.window}")
        if self.k is not None and self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.prune_eps < 0:
            raise ValueError(f"prune_eps must be >= 0, got {self.prune_eps}")


@dataclass
class TemporalStep:
    """State of one nonempty window after its update has been applied."""

    index: int
    start: float  # window bounds [start, end)
    end: float
    n_active: int  # users with >= 1 post in the window
    sims: dict[Pair, float]  # the step's defined similarities (kNN edge set)
    edges: dict[Pair, float]  # post-update, post-prune edge state


@dataclass
class TemporalGraph:
    steps: list[TemporalStep]
    final: UserGraph
    params: TemporalParams

    @property
    def n_steps(self) -> int:
        return len(self.steps)


def edge_update(prev: float, sim: float | None, alpha: float, beta: float) -> float:
    """One application of the memory/decay rule to a single pair."""
    if sim is None:
        return (1.0 - beta) * prev
    return alpha * sim + (1.0 - alpha) * prev


def window_slices(posts: PostCollection, window: float) -> list[tuple[int, float, float, PostCollection]]:
    """Nonempty window buckets as (window_index, start, end, sub-collection).

    Window i spans [t_min + i*window, t_min + (i+1)*window); indices are the
    raw bucket positions, so gaps in the sequence mark skipped empty windows.
    """
    if window <= 0:
        raise ValueError(f"window must be positive, got {window}")
    if len(posts) == 0:
        raise ValueError("no posts: zero nonempty windows")
    t_min = min(p.ts for p in posts)
    buckets: dict[int, list] = {}
    for p in posts:
        buckets.setdefault(int((p.ts - t_min) // window), []).append(p)
    out = []
    for i in sorted(buckets):
        start = t_min + i * window
        out.append((i, start, start + window, PostCollection(posts=buckets[i])))
    return out


def step_affiliations(posts: PostCollection, model: ClusterModel, window: float,
                      scheme: str = "tfidf", global_idf: bool = False) -> list[AffiliationMatrix]:
    """One affiliation matrix per nonempty window, tf/df computed within it.

    ``global_idf`` switches the idf factor to corpus-wide statistics while tf
    stays per-window (off by default).
    """
    idf_source = count_matrix(posts, model) if global_idf else None
    return [
        weight_matrix(count_matrix(sub, model), scheme=scheme, idf_source=idf_source)
        for _, _, _, sub in window_slices(posts, window)
    ]


def _step_similarities(affil: AffiliationMatrix, params: TemporalParams,
                       method: str, index_params: IndexParams | None) -> dict[Pair, float]:
    """The step's defined-similarity set: its symmetrized kNN edge weights."""
    n = affil.n_users
    if n < 2:
        return {}  # a lone active user defines no pair similarities
    k = params.k if params.k is not None else default_k(n)
    if method == "exact":
        graph = knn_exact(affil, k=k, min_sim=params.min_sim)
    elif method == "hnsw":
        graph = knn_hnsw(affil, k=k, min_sim=params.min_sim, index_params=index_params)
    else:
        raise ValueError(f"unknown method '{method}', expected 'exact' or 'hnsw'")
    return dict(graph.edges)


def build_temporal(posts: PostCollection, model: ClusterModel, params: TemporalParams,
                   method: str = "exact", index_params: IndexParams | None = None,
                   scheme: str = "tfidf", global_idf: bool = False) -> TemporalGraph:
    """Replay the corpus window by window, evolving edge state per the update rule."""
    slices = window_slices(posts, params.window)
    idf_source = count_matrix(posts, model) if global_idf else None
    state: dict[Pair, float] = {}
    steps: list[TemporalStep] = []
    for step_idx, (win_idx, start, end, sub) in enumerate(slices):
        affil = weight_matrix(count_matrix(sub, model), scheme=scheme, idf_source=idf_source)
        sims = _step_similarities(affil, params, method, index_params)
        new_state: dict[Pair, float] = {}
        for pair in state.keys() | sims.keys():
            w = edge_update(state.get(pair, 0.0), sims.get(pair), params.alpha, params.beta)
            if w >= params.prune_eps:
                new_state[pair] = w
        state = new_state
        steps.append(TemporalStep(
            index=win_idx, start=start, end=end, n_active=affil.n_users,
            sims=sims, edges=dict(state),
        ))
        logger.debug("step %d (window %d): %d active users, %d defined pairs, %d edges",
                     step_idx, win_idx, affil.n_users, len(sims), len(state))
    meta = GraphMeta(k=params.k if params.k is not None else -1,
                     min_sim=params.min_sim, method=f"temporal-{method}",
                     index_params=index_params)
    final = UserGraph(nodes=sorted(posts.users), edges=dict(state), meta=meta,
                      platforms=posts.user_platforms())
    return TemporalGraph(steps=steps, final=final, params=params)


def replay_max_error(tg: TemporalGraph) -> float:
    """Recompute every step from the stored similarity streams; max |diff|.

    Any structural mismatch (an edge present in one reconstruction but not
    the other) counts as infinite error.
    """
    p = tg.params
    state: dict[Pair, float] = {}
    worst = 0.0
    for step in tg.steps:
        new_state: dict[Pair, float] = {}
        for pair in state.keys() | step.sims.keys():
            w = edge_update(state.get(pair, 0.0), step.sims.get(pair), p.alpha, p.beta)
            if w >= p.prune_eps:
                new_state[pair] = w
        if new_state.keys() != step.edges.keys():
            return float("inf")
        for pair, w in new_state.items():
            worst = max(worst, abs(w - step.edges[pair]))
        state = new_state
    if tg.final.edges.keys() != state.keys():
        return float("inf")
    return worst


def write_snapshots(tg: TemporalGraph, out_dir: str | Path) -> None:
    """Snapshot directory: step_<i>.tsv per step, final.tsv, manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_steps = []
    for pos, step in enumerate(tg.steps):
        write_edge_dict(step.edges, out / f"step_{pos}.tsv")
        nodes = {u for pair in step.edges for u in pair}
        manifest_steps.append({
            "step": pos,
            "window_index": step.index,
            "window_start": step.start,
            "window_end": step.end,
            "active_users": step.n_active,
            "nodes": len(nodes),
            "edges": len(step.edges),
        })
    write_edge_dict(tg.final.edges, out / "final.tsv")
    p = tg.params
    dump_json({
        "params": {
            "alpha": p.alpha, "beta": p.beta, "window": p.window,
            "k": p.k, "min_sim": p.min_sim, "prune_eps": p.prune_eps,
        },
        "method": tg.final.meta.method,
        "n_steps": tg.n_steps,
        "steps": manifest_steps,
    }, out / "manifest.json")
