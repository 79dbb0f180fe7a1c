"""Network-quality evaluation: node2vec walks, skip-gram embeddings, a linear
classifier harness, rank metrics, the data-efficiency sweep, degree-preserving
rewiring, and the engagement-benchmark exporter.

The embedding trainer has two modes: ``workers=1`` (default) updates pairs
sequentially and is bit-for-bit reproducible for a fixed seed; ``workers>1``
runs lock-free parallel updates (hogwild) which are faster but NOT
bit-reproducible — use only when exact replay does not matter.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from numba import njit, prange
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import StratifiedKFold

from ._util import dump_json, stable_hash64
from .clustering import ClusterModel
from .corpus import PostCollection
from .embeddings import EmbeddingMatrix, parse_embeddings_file, write_embeddings
from .graph_static import UserGraph

logger = logging.getLogger(__name__)

DEFAULT_WALK_LENGTH = 40
DEFAULT_WALKS_PER_NODE = 10
DEFAULT_EMB_DIM = 128
DEFAULT_WINDOW = 5
DEFAULT_NEGATIVES = 5
DEFAULT_EPOCHS = 3
DEFAULT_LR = 0.025
EFFICIENCY_THRESHOLD = 0.95  # efficiency point: smallest level reaching 95% of max AUC
REWIRE_ATTEMPTS_PER_EDGE = 10

_TRAIN_BLOCK_WALKS = 2048  # walks per training block (bounds pair-buffer memory)


# ---------------------------------------------------------------------------
# random walks

def _graph_csr(graph: UserGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Neighbor lists as CSR arrays with neighbor ids ascending per node."""
    index = {u: i for i, u in enumerate(graph.nodes)}
    deg = np.zeros(len(graph.nodes) + 1, dtype=np.int64)
    for u, v in graph.edges:
        deg[index[u] + 1] += 1
        deg[index[v] + 1] += 1
    indptr = np.cumsum(deg)
    nbrs = np.empty(indptr[-1], dtype=np.int64)
    wts = np.empty(indptr[-1], dtype=np.float64)
    cursor = indptr[:-1].copy()
    for (u, v), w in graph.edges.items():
        iu, iv = index[u], index[v]
        nbrs[cursor[iu]], wts[cursor[iu]] = iv, w
        cursor[iu] += 1
        nbrs[cursor[iv]], wts[cursor[iv]] = iu, w
        cursor[iv] += 1
    for i in range(len(graph.nodes)):
        lo, hi = indptr[i], indptr[i + 1]
        order = np.argsort(nbrs[lo:hi], kind="stable")
        nbrs[lo:hi] = nbrs[lo:hi][order]
        wts[lo:hi] = wts[lo:hi][order]
    return indptr, nbrs, wts


@njit(cache=True)
def _sorted_contains(arr: np.ndarray, lo: int, hi: int, x: int) -> bool:
    while lo < hi:
        mid = (lo + hi) // 2
        if arr[mid] == x:
            return True
        if arr[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return False


@njit(cache=True)
def _walk_kernel(indptr: np.ndarray, nbrs: np.ndarray, wts: np.ndarray,
                 starts: np.ndarray, walk_length: int, p: float, q: float,
                 rand: np.ndarray) -> np.ndarray:
    """Second-order biased walks; rows padded with -1 past an isolated start.

    Transition weight out of ``cur`` (arrived from ``prev``) to neighbor ``x``:
    edge weight scaled by 1/p if x == prev, by 1 if x neighbors prev, else 1/q.
    The first hop (no prev yet) is plain weight-proportional.
    """
    n_walks = starts.shape[0]
    out = np.full((n_walks, walk_length), -1, dtype=np.int64)
    max_deg = 0
    for i in range(indptr.shape[0] - 1):
        d = indptr[i + 1] - indptr[i]
        if d > max_deg:
            max_deg = d
    cum = np.empty(max(max_deg, 1), dtype=np.float64)
    for w in range(n_walks):
        cur = starts[w]
        out[w, 0] = cur
        prev = -1
        for step in range(1, walk_length):
            lo, hi = indptr[cur], indptr[cur + 1]
            deg = hi - lo
            if deg == 0:
                break  # isolated start; undirected non-isolated nodes never dead-end
            total = 0.0
            for j in range(deg):
                x = nbrs[lo + j]
                f = wts[lo + j]
                if prev >= 0:
                    if x == prev:
                        f /= p
                    elif not _sorted_contains(nbrs, indptr[prev], indptr[prev + 1], x):
                        f /= q
                total += f
                cum[j] = total
            r = rand[w, step - 1] * total
            pick = deg - 1
            for j in range(deg):
                if cum[j] > r:
                    pick = j
                    break
            prev = cur
            cur = nbrs[lo + pick]
            out[w, step] = cur
    return out


def generate_walks(graph: UserGraph, p: float = 1.0, q: float = 1.0,
                   walk_length: int = DEFAULT_WALK_LENGTH,
                   walks_per_node: int = DEFAULT_WALKS_PER_NODE,
                   seed: int = 0) -> list[list[str]]:
    """Biased second-order random walks over edge weights (return p, in-out q).

    Every node starts ``walks_per_node`` walks; isolated nodes emit length-1
    walks. Walk order is rounds over ``graph.nodes``, so the corpus is
    deterministic for a fixed seed.
    """
    if walk_length < 1:
        raise ValueError(f"walk_length must be >= 1, got {walk_length}")
    if p <= 0 or q <= 0:
        raise ValueError(f"p and q must be positive, got p={p}, q={q}")
    if walks_per_node < 1:
        raise ValueError(f"walks_per_node must be >= 1, got {walks_per_node}")
    indptr, nbrs, wts = _graph_csr(graph)
    n = len(graph.nodes)
    starts = np.tile(np.arange(n, dtype=np.int64), walks_per_node)
    rng = np.random.default_rng(stable_hash64("walks", seed))
    rand = rng.random((starts.shape[0], max(walk_length - 1, 1)))
    rows = _walk_kernel(indptr, nbrs, wts, starts, walk_length, float(p), float(q), rand)
    walks: list[list[str]] = []
    for row in rows:
        stop = int(np.argmax(row < 0)) if row[-1] < 0 else walk_length
        walks.append([graph.nodes[i] for i in row[:stop]])
    return walks


def write_walks(walks: Sequence[Sequence[str]], path: str | Path) -> None:
    """One walk per line, node ids space-separated."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for walk in walks:
            fh.write(" ".join(walk) + "\n")


def read_walks(path: str | Path) -> list[list[str]]:
    walks = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                walks.append(line.split(" "))
    return walks


# ---------------------------------------------------------------------------
# skip-gram with negative sampling

@dataclass
class NodeEmbeddings:
    """Per-user embedding rows plus the training configuration that made them."""

    ids: list[str]
    vectors: np.ndarray  # (n, d_emb) float64
    config: dict

    def __post_init__(self) -> None:
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.ids):
            raise ValueError("vectors must be (len(ids), d_emb)")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("non-finite value in node embeddings")
        self._row = {u: i for i, u in enumerate(self.ids)}
        if len(self._row) != len(self.ids):
            raise ValueError("duplicate user id in node embeddings")

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, user_id: str) -> np.ndarray:
        return self.vectors[self._row[user_id]]


@njit(cache=True, inline="always")
def _sgns_pair(w_in: np.ndarray, w_out: np.ndarray, c: int, x: int,
               negs: np.ndarray, off: int, k: int, lr: float) -> None:
    d = w_in.shape[1]
    dot = 0.0
    for j in range(d):
        dot += w_in[c, j] * w_out[x, j]
    if dot > 30.0:
        dot = 30.0
    elif dot < -30.0:
        dot = -30.0
    g = (1.0 / (1.0 + math.exp(-dot)) - 1.0) * lr
    for j in range(d):
        tmp = w_in[c, j]
        w_in[c, j] -= g * w_out[x, j]
        w_out[x, j] -= g * tmp
    for t in range(k):
        nx = negs[off + t]
        if nx == x:
            continue
        dot = 0.0
        for j in range(d):
            dot += w_in[c, j] * w_out[nx, j]
        if dot > 30.0:
            dot = 30.0
        elif dot < -30.0:
            dot = -30.0
        g = (1.0 / (1.0 + math.exp(-dot))) * lr
        for j in range(d):
            tmp = w_in[c, j]
            w_in[c, j] -= g * w_out[nx, j]
            w_out[nx, j] -= g * tmp


@njit(cache=True)
def _sgns_block(w_in: np.ndarray, w_out: np.ndarray, centers: np.ndarray,
                contexts: np.ndarray, negs: np.ndarray, k: int, lr: float) -> None:
    for i in range(centers.shape[0]):
        _sgns_pair(w_in, w_out, centers[i], contexts[i], negs, i * k, k, lr)


@njit(cache=True, parallel=True)
def _sgns_block_hogwild(w_in: np.ndarray, w_out: np.ndarray, centers: np.ndarray,
                        contexts: np.ndarray, negs: np.ndarray, k: int, lr: float) -> None:
    # Lock-free: concurrent row updates may interleave, so results vary run to run.
    for i in prange(centers.shape[0]):
        _sgns_pair(w_in, w_out, centers[i], contexts[i], negs, i * k, k, lr)


def _pairs_for_block(block: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """(center, context) pairs within ``window`` positions, both directions."""
    centers, contexts = [], []
    for off in range(1, window + 1):
        if off >= block.shape[1]:
            break
        a = block[:, :-off].ravel()
        b = block[:, off:].ravel()
        mask = (a >= 0) & (b >= 0)
        centers.append(a[mask])
        contexts.append(b[mask])
        centers.append(b[mask])
        contexts.append(a[mask])
    if not centers:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


def train_node_embeddings(walks: Sequence[Sequence[str]], d_emb: int = DEFAULT_EMB_DIM,
                          window: int = DEFAULT_WINDOW, negatives: int = DEFAULT_NEGATIVES,
                          epochs: int = DEFAULT_EPOCHS, lr: float = DEFAULT_LR,
                          seed: int = 0, workers: int = 1,
                          walk_config: Mapping | None = None) -> NodeEmbeddings:
    """Skip-gram with negative sampling over the walk corpus.

    Negatives follow the unigram^0.75 distribution of walk tokens; the
    learning rate is constant. ``walk_config`` entries (p, q, walk_length,
    walks_per_node) are recorded into the output config for provenance.
    """
    if not walks:
        raise ValueError("walk corpus is empty; generate walks first")
    if d_emb < 1 or window < 1 or negatives < 1 or epochs < 1:
        raise ValueError("d_emb, window, negatives and epochs must all be >= 1")
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    vocab = sorted({node for walk in walks for node in walk})
    index = {u: i for i, u in enumerate(vocab)}
    n = len(vocab)
    max_len = max(len(w) for w in walks)
    corpus = np.full((len(walks), max_len), -1, dtype=np.int64)
    for i, walk in enumerate(walks):
        corpus[i, :len(walk)] = [index[u] for u in walk]

    counts = np.bincount(corpus[corpus >= 0], minlength=n).astype(np.float64)
    noise = counts ** 0.75
    noise_cdf = np.cumsum(noise / noise.sum())

    rng = np.random.default_rng(stable_hash64("sgns", seed))
    w_in = (rng.random((n, d_emb)) - 0.5) / d_emb
    w_out = np.zeros((n, d_emb))
    kernel = _sgns_block if workers == 1 else _sgns_block_hogwild
    if workers > 1:
        logger.info("training with %d workers: updates race, not bit-reproducible", workers)
    for _ in range(epochs):
        for lo in range(0, corpus.shape[0], _TRAIN_BLOCK_WALKS):
            centers, contexts = _pairs_for_block(corpus[lo:lo + _TRAIN_BLOCK_WALKS], window)
            if centers.size == 0:
                continue
            draws = rng.random(centers.size * negatives)
            negs = np.searchsorted(noise_cdf, draws, side="right")
            negs = np.minimum(negs, n - 1).astype(np.int64)  # fp guard at cdf tail
            kernel(w_in, w_out, centers, contexts, negs, negatives, float(lr))

    config = {
        "d_emb": d_emb, "window": window, "negatives": negatives, "epochs": epochs,
        "lr": lr, "seed": seed, "workers": workers,
        "p": None, "q": None, "walk_length": None, "walks_per_node": None,
    }
    for key in ("p", "q", "walk_length", "walks_per_node"):
        if walk_config and key in walk_config:
            config[key] = walk_config[key]
    return NodeEmbeddings(ids=vocab, vectors=w_in, config=config)


def embed_graph(graph: UserGraph, p: float = 1.0, q: float = 1.0,
                walk_length: int = DEFAULT_WALK_LENGTH,
                walks_per_node: int = DEFAULT_WALKS_PER_NODE,
                d_emb: int = DEFAULT_EMB_DIM, window: int = DEFAULT_WINDOW,
                negatives: int = DEFAULT_NEGATIVES, epochs: int = DEFAULT_EPOCHS,
                lr: float = DEFAULT_LR, seed: int = 0, workers: int = 1) -> NodeEmbeddings:
    """Walks + training in one step; every graph node gets a vector."""
    walks = generate_walks(graph, p=p, q=q, walk_length=walk_length,
                           walks_per_node=walks_per_node, seed=seed)
    walk_config = {"p": p, "q": q, "walk_length": walk_length,
                   "walks_per_node": walks_per_node}
    return train_node_embeddings(walks, d_emb=d_emb, window=window,
                                 negatives=negatives, epochs=epochs, lr=lr,
                                 seed=seed, workers=workers, walk_config=walk_config)


def write_node_embeddings(emb: NodeEmbeddings, path: str | Path) -> None:
    """Store rows in the shared binary embedding container (f32)."""
    write_embeddings(EmbeddingMatrix(list(emb.ids), emb.vectors.astype(np.float32)), path)


def read_node_embeddings(path: str | Path, config: Mapping | None = None) -> NodeEmbeddings:
    ids, raw = parse_embeddings_file(path)
    return NodeEmbeddings(ids=ids, vectors=raw.astype(np.float64), config=dict(config or {}))


# ---------------------------------------------------------------------------
# metrics

def macro_f1(y_true: Sequence, y_pred: Sequence) -> float:
    """Mean per-class F1 over classes present in either vector (0 when a class
    has no true or predicted members at all)."""
    if len(y_true) != len(y_pred):
        raise ValueError("y_true and y_pred length mismatch")
    true = list(y_true)
    pred = list(y_pred)
    classes = sorted(set(true) | set(pred), key=repr)
    scores = []
    for c in classes:
        tp = sum(1 for t, p in zip(true, pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(true, pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(true, pred) if t == c and p != c)
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def rank_auc(y_true: Sequence[int] | np.ndarray, scores: Sequence[float] | np.ndarray) -> float:
    """Binary AUC from midranks: ties between a positive and a negative score
    earn half credit, so this equals the all-pairs counting definition."""
    y = np.asarray(y_true, dtype=bool)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        raise ValueError("y_true and scores length mismatch")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    order = np.argsort(s, kind="stable")
    ranks = np.empty(y.size, dtype=np.float64)
    _, inverse, counts = np.unique(s[order], return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    midranks = ends - (counts - 1) / 2.0  # average 1-based rank within each tie group
    ranks[order] = midranks[inverse]
    u = float(ranks[y].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


# ---------------------------------------------------------------------------
# classification harness

@dataclass(frozen=True)
class EvalReport:
    """Cross-validated scores; means with per-fold values for the spread."""

    macro_f1: float
    auc: float
    macro_f1_folds: tuple[float, ...]
    auc_folds: tuple[float, ...]
    folds: int
    seed: int

    def __post_init__(self) -> None:
        for name in ("macro_f1", "auc"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} out of [0, 1]: {v}")
        for mean, per_fold in ((self.macro_f1, self.macro_f1_folds),
                               (self.auc, self.auc_folds)):
            if per_fold and not min(per_fold) - 1e-12 <= mean <= max(per_fold) + 1e-12:
                raise ValueError("fold scores do not bracket their mean")

    @property
    def macro_f1_std(self) -> float:
        return float(np.std(self.macro_f1_folds))

    @property
    def auc_std(self) -> float:
        return float(np.std(self.auc_folds))


def evaluate_classification(embeddings: NodeEmbeddings, labels: Mapping[str, object],
                            folds: int = 5, seed: int = 0) -> EvalReport:
    """Stratified k-fold logistic regression on the embedding rows.

    Macro-F1 comes from argmax-class decisions, AUC from the scores (macro
    one-vs-rest when more than two classes). Users without a label are left
    out of the evaluation.
    """
    if folds < 2:
        raise ValueError(f"folds must be >= 2, got {folds}")
    users = [u for u in embeddings.ids if u in labels]
    if not users:
        raise ValueError("no labeled user has an embedding")
    classes = sorted({labels[u] for u in users}, key=repr)
    if len(classes) < 2:
        raise ValueError("need at least 2 classes to evaluate")
    class_idx = {c: i for i, c in enumerate(classes)}
    y = np.array([class_idx[labels[u]] for u in users], dtype=np.int64)
    smallest = int(np.bincount(y).min())
    if smallest < folds:
        raise ValueError(
            f"smallest class has {smallest} members but folds={folds}; "
            f"reduce folds to at most {smallest} or merge sparse classes")
    x = np.stack([embeddings.row(u) for u in users])

    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    f1_folds, auc_folds = [], []
    for train_ix, test_ix in splitter.split(x, y):
        clf = LogisticRegression(max_iter=1000)
        clf.fit(x[train_ix], y[train_ix])
        y_test = y[test_ix]
        y_pred = clf.predict(x[test_ix])
        proba = clf.predict_proba(x[test_ix])
        col = {c: j for j, c in enumerate(clf.classes_)}
        f1_folds.append(macro_f1(y_test.tolist(), y_pred.tolist()))
        if len(classes) == 2:
            auc_folds.append(rank_auc(y_test == 1, proba[:, col[1]]))
        else:
            per_class = [rank_auc(y_test == c, proba[:, col[c]])
                         for c in np.unique(y_test) if 0 < (y_test == c).sum() < y_test.size]
            auc_folds.append(float(np.mean(per_class)))
    return EvalReport(macro_f1=float(np.mean(f1_folds)), auc=float(np.mean(auc_folds)),
                      macro_f1_folds=tuple(f1_folds), auc_folds=tuple(auc_folds),
                      folds=folds, seed=seed)


def write_eval_report(report: EvalReport, path: str | Path) -> None:
    dump_json({
        "macro_f1": report.macro_f1,
        "auc": report.auc,
        "macro_f1_std": report.macro_f1_std,
        "auc_std": report.auc_std,
        "per_fold": {"macro_f1": list(report.macro_f1_folds),
                     "auc": list(report.auc_folds)},
        "folds": report.folds,
        "seed": report.seed,
    }, path)


# ---------------------------------------------------------------------------
# data-efficiency sweep

@dataclass(frozen=True)
class SweepResult:
    levels: tuple[int, ...]       # retention percentages, ascending
    aucs: tuple[float, ...]       # AUC per level, same order
    efficiency_pct: int           # smallest level with AUC >= 0.95 * max
    step: int
    seed: int


def retention_subsets(posts: PostCollection, step: int, seed: int = 0,
                      ) -> list[tuple[int, PostCollection]]:
    """Nested per-user subsets at step, 2*step, ..., 100 percent.

    Each user's posts are put in a seeded random order once; the n% level
    keeps the first ceil(n% of that user's posts) of it, so every level
    contains the one below. Corpus file order is preserved inside a subset.
    """
    if step < 1 or 100 % step != 0:
        raise ValueError(f"step must divide 100, got {step}")
    order: dict[str, list[int]] = {}
    for user, idxs in posts.by_user.items():
        rng = np.random.default_rng(stable_hash64(f"sweep:{user}", seed))
        order[user] = [idxs[i] for i in rng.permutation(len(idxs))]
    out = []
    for pct in range(step, 101, step):
        keep: list[int] = []
        for user, permuted in order.items():
            keep.extend(permuted[:math.ceil(pct / 100 * len(permuted))])
        keep.sort()
        out.append((pct, PostCollection(posts=[posts.posts[i] for i in keep])))
    return out


def efficiency_point(levels: Sequence[int], aucs: Sequence[float]) -> int:
    """Smallest retention level whose AUC reaches 95% of the maximum AUC."""
    if len(levels) != len(aucs) or not levels:
        raise ValueError("levels and aucs must be equal-length and nonempty")
    threshold = EFFICIENCY_THRESHOLD * max(aucs)
    for lvl, auc in sorted(zip(levels, aucs)):
        if auc >= threshold - 1e-12:
            return int(lvl)
    raise AssertionError("unreachable: the max level always reaches the threshold")


def data_efficiency_sweep(posts: PostCollection, run_level: Callable[[PostCollection], float],
                          step: int = 5, seed: int = 0) -> SweepResult:
    """AUC per nested retention level plus the efficiency point.

    ``run_level`` reruns the full pipeline (cluster -> affiliate -> graph ->
    embed -> evaluate) on one subset and returns its AUC; this function owns
    only the subsetting and the threshold arithmetic, so it stays reproducible
    bit-for-bit whenever ``run_level`` is.
    """
    levels, aucs = [], []
    for pct, subset in retention_subsets(posts, step, seed):
        auc = float(run_level(subset))
        levels.append(pct)
        aucs.append(auc)
        logger.info("retention %3d%%: %d posts, AUC %.4f", pct, len(subset), auc)
    return SweepResult(levels=tuple(levels), aucs=tuple(aucs),
                       efficiency_pct=efficiency_point(levels, aucs),
                       step=step, seed=seed)


def write_sweep(result: SweepResult, path: str | Path) -> None:
    dump_json({
        "levels": list(result.levels),
        "aucs": list(result.aucs),
        "efficiency_pct": result.efficiency_pct,
        "step": result.step,
        "seed": result.seed,
    }, path)


# ---------------------------------------------------------------------------
# degree-preserving rewiring (null-model control)

def rewire_graph(graph: UserGraph, seed: int = 0, attempts: int | None = None) -> UserGraph:
    """Randomize edges with seeded double-edge swaps, preserving every degree.

    A swap takes edges (a, b), (c, d) to (a, d), (c, b) and is skipped if it
    would create a self-loop or a duplicate edge; weights travel with the
    surviving endpoint-pair slots. Default budget: 10 * |E| attempts.
    """
    edges = list(graph.edges.items())
    m = len(edges)
    if m < 2:
        return UserGraph(nodes=list(graph.nodes), edges=dict(graph.edges),
                         meta=replace(graph.meta, method=f"{graph.meta.method}+rewired"),
                         platforms=dict(graph.platforms))
    if attempts is None:
        attempts = REWIRE_ATTEMPTS_PER_EDGE * m
    pairs = [list(key) for key, _ in edges]
    weights = [w for _, w in edges]
    present = {tuple(key) for key, _ in edges}
    rng = np.random.default_rng(stable_hash64("rewire", seed))
    swapped = 0
    for i, j in rng.integers(0, m, size=(attempts, 2)):
        if i == j:
            continue
        a, b = pairs[i]
        c, d = pairs[j]
        if len({a, b, c, d}) < 4:
            continue  # shared endpoint; swap would self-loop or duplicate
        e1 = (a, d) if a < d else (d, a)
        e2 = (c, b) if c < b else (b, c)
        if e1 in present or e2 in present:
            continue
        present.discard((a, b) if a < b else (b, a))
        present.discard((c, d) if c < d else (d, c))
        present.add(e1)
        present.add(e2)
        pairs[i] = list(e1)
        pairs[j] = list(e2)
        swapped += 1
    logger.info("rewired %d/%d attempts on %d edges", swapped, attempts, m)
    new_edges = {(u, v): w for (u, v), w in zip((tuple(p) for p in pairs), weights)}
    return UserGraph(nodes=list(graph.nodes), edges=new_edges,
                     meta=replace(graph.meta, method=f"{graph.meta.method}+rewired"),
                     platforms=dict(graph.platforms))


# ---------------------------------------------------------------------------
# engagement-benchmark export

@dataclass(frozen=True)
class EngagementBenchmark:
    users: list[str]              # graph nodes, sorted
    narrative_ids: list[int]      # all model clusters, ascending
    features: np.ndarray          # (n_users, n_narratives) int8, activity at ts <= cutoff
    labels: np.ndarray            # (n_users, n_narratives) int8, activity in (cutoff, cutoff+horizon]
    cutoff_ts: int
    horizon_days: float


def _write_binary_tsv(path: Path, users: list[str], narrative_ids: list[int],
                      matrix: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("user\t" + "\t".join(str(n) for n in narrative_ids) + "\n")
        for u, row in zip(users, matrix):
            fh.write(u + "\t" + "\t".join(str(int(v)) for v in row) + "\n")


def export_engagement_benchmark(graph: UserGraph, model: ClusterModel,
                                posts: PostCollection, cutoff_ts: int,
                                horizon_days: float,
                                out_dir: str | Path | None = None) -> EngagementBenchmark:
    """Binary user-narrative engagement matrices split at ``cutoff_ts``.

    Features mark narratives a user touched on or before the cutoff; labels
    mark narratives touched in (cutoff, cutoff + horizon]. No post after the
    cutoff can reach the feature side. With ``out_dir`` set, writes
    features.tsv and labels.tsv with a header row of narrative ids.
    """
    if horizon_days <= 0:
        raise ValueError(f"horizon_days must be positive, got {horizon_days}")
    if not len(posts):
        raise ValueError("corpus has no posts")
    ts_values = [p.ts for p in posts]
    lo, hi = min(ts_values), max(ts_values)
    if not lo <= cutoff_ts <= hi:
        raise ValueError(f"cutoff {cutoff_ts} outside corpus time range [{lo}, {hi}]")
    users = sorted(graph.nodes)
    user_row = {u: i for i, u in enumerate(users)}
    narrative_ids = list(range(model.n_clusters))
    features = np.zeros((len(users), len(narrative_ids)), dtype=np.int8)
    labels = np.zeros_like(features)
    horizon_end = cutoff_ts + horizon_days * 86400.0
    for post in posts:
        row = user_row.get(post.user_id)
        if row is None:
            continue
        cluster = model.assignments.get(post.post_id)
        if cluster is None:
            raise ValueError(f"post {post.post_id} has no narrative assignment")
        if post.ts <= cutoff_ts:
            features[row, cluster] = 1
        elif post.ts <= horizon_end:
            labels[row, cluster] = 1
    if int(features.sum()) == 0:
        raise ValueError("empty feature matrix: no graph user engaged any narrative "
                         "on or before the cutoff")
    bench = EngagementBenchmark(users=users, narrative_ids=narrative_ids,
                                features=features, labels=labels,
                                cutoff_ts=cutoff_ts, horizon_days=horizon_days)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_binary_tsv(out / "features.tsv", users, narrative_ids, features)
        _write_binary_tsv(out / "labels.tsv", users, narrative_ids, labels)
    return bench
