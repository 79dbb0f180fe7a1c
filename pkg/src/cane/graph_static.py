"""Static user graph: kNN over affiliation vectors by cosine similarity.

Two routes with one contract: an exact blocked sparse-cosine search (the
oracle) and an approximate search over an HNSW index built on dense seeded
signed-random-projections of the affiliation rows. Either way, every edge
weight stored in the graph is the *true* cosine similarity of the two
affiliation rows; the index only proposes neighbor candidates.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from ._util import format_weight
from .affiliation import AffiliationMatrix, normalized_rows

logger = logging.getLogger(__name__)

DEFAULT_K_CAP = 800  # default k = min(800, n - 1)


def default_k(n_users: int) -> int:
    return min(DEFAULT_K_CAP, n_users - 1)


@dataclass(frozen=True)
class IndexParams:
    m: int = 16
    ef_construction: int = 200
    ef_search: int = 128
    dense_dim: int = 256
    seed: int = 0


@dataclass
class GraphMeta:
    k: int
    min_sim: float
    method: str  # "exact" | "hnsw"
    index_params: IndexParams | None = None
    seed: int = 0


@dataclass
class UserGraph:
    """Undirected weighted graph over users; each unordered pair stored once."""

    nodes: list[str]
    edges: dict[tuple[str, str], float]  # key (u, v) with u < v
    meta: GraphMeta
    platforms: dict[str, str] = field(default_factory=dict)
    _adj: dict[str, list[tuple[str, float]]] | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        for (u, v), w in self.edges.items():
            if u >= v:
                raise ValueError(f"edge key ({u}, {v}) not in canonical u < v order")
            if not 0.0 <= w <= 1.0 + 1e-9:
                raise ValueError(f"edge weight out of [0, 1]: ({u}, {v}) = {w}")

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> dict[str, list[tuple[str, float]]]:
        """Neighbor lists sorted by (weight desc, user_id asc); cached."""
        if self._adj is None:
            adj: dict[str, list[tuple[str, float]]] = {u: [] for u in self.nodes}
            for (u, v), w in self.edges.items():
                adj[u].append((v, w))
                adj[v].append((u, w))
            for u in adj:
                adj[u].sort(key=lambda t: (-t[1], t[0]))
            self._adj = adj
        return self._adj

    def degree(self, u: str) -> int:
        return len(self.adjacency()[u])


# ---------------------------------------------------------------------------
# exact route

def _top_k_rows(sim_block: np.ndarray, row_offset: int, k: int, min_sim: float,
                selections: list[list[int]]) -> None:
    """Per-row top-k column indices (sim desc, index asc), filtered by min_sim."""
    for r in range(sim_block.shape[0]):
        sims = sim_block[r]
        sims[row_offset + r] = -np.inf  # exclude self
        order = np.argsort(-sims, kind="stable")[:k]
        keep = [int(c) for c in order if sims[c] >= min_sim]
        selections.append(keep)


def knn_exact(affil: AffiliationMatrix, k: int, min_sim: float = 0.0,
              platforms: dict[str, str] | None = None) -> UserGraph:
    """Exact top-k cosine neighbors per user, union-symmetrized.

    The union keeps an edge if either endpoint selected it, so per-node degree
    is not capped at 2k (a popular node may be selected by many others);
    the edge count is bounded by n*k, i.e. the bound is on the mean degree.
    """
    _validate_knn_args(affil, k, min_sim)
    users = affil.users
    n = len(users)
    k_eff = min(k, n - 1)
    rows = normalized_rows(affil)
    selections: list[list[int]] = []
    block = max(1, min(1024, (1 << 25) // max(n, 1)))
    for start in range(0, n, block):
        stop = min(start + block, n)
        sim = (rows[start:stop] @ rows.T).toarray()
        _top_k_rows(sim, start, k_eff, min_sim, selections)
    edges: dict[tuple[str, str], float] = {}
    dense = rows.toarray() if n * rows.shape[1] <= (1 << 24) else None
    for i, sel in enumerate(selections):
        for j in sel:
            a, b = (users[i], users[j]) if users[i] < users[j] else (users[j], users[i])
            if (a, b) not in edges:
                if dense is not None:
                    w = float(dense[i] @ dense[j])
                else:
                    w = float((rows[i] @ rows[j].T).toarray()[0, 0])
                edges[(a, b)] = min(max(w, 0.0), 1.0)
    meta = GraphMeta(k=k, min_sim=min_sim, method="exact")
    return UserGraph(nodes=list(users), edges=edges, meta=meta,
                     platforms=dict(platforms or {}))


def _validate_knn_args(affil: AffiliationMatrix, k: int, min_sim: float) -> None:
    if len(affil.users) < 2:
        raise ValueError(f"need at least 2 users to build a graph, got {len(affil.users)}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not 0.0 <= min_sim < 1.0:
        raise ValueError(f"min_sim must be in [0, 1), got {min_sim}")


# ---------------------------------------------------------------------------
# HNSW route

@njit(cache=True)
def _qdist(vecs, i, q):
    s = 0.0
    for d in range(vecs.shape[1]):
        s += vecs[i, d] * q[d]
    return 1.0 - s


@njit(cache=True)
def _heap_push(dist, ids, size, d, i, is_min):
    """Binary heap push; is_min selects min-heap ordering, else max-heap."""
    dist[size] = d
    ids[size] = i
    c = size
    size += 1
    while c > 0:
        p = (c - 1) >> 1
        if (is_min and dist[c] < dist[p]) or (not is_min and dist[c] > dist[p]):
            dist[c], dist[p] = dist[p], dist[c]
            ids[c], ids[p] = ids[p], ids[c]
            c = p
        else:
            break
    return size


@njit(cache=True)
def _heap_pop(dist, ids, size, is_min):
    top_d = dist[0]
    top_i = ids[0]
    size -= 1
    dist[0] = dist[size]
    ids[0] = ids[size]
    p = 0
    while True:
        l = 2 * p + 1
        r = l + 1
        best = p
        if l < size and ((is_min and dist[l] < dist[best]) or (not is_min and dist[l] > dist[best])):
            best = l
        if r < size and ((is_min and dist[r] < dist[best]) or (not is_min and dist[r] > dist[best])):
            best = r
        if best == p:
            break
        dist[p], dist[best] = dist[best], dist[p]
        ids[p], ids[best] = ids[best], ids[p]
        p = best
    return top_d, top_i, size


@njit(cache=True)
def _greedy_descend(vecs, neigh, ncnt, q, ep, epd):
    improved = True
    while improved:
        improved = False
        for j in range(ncnt[ep]):
            e = neigh[ep, j]
            d = _qdist(vecs, e, q)
            if d < epd:
                epd = d
                ep = e
                improved = True
    return ep, epd


@njit(cache=True)
def _search_layer(vecs, neigh, ncnt, q, ep, epd, ef, visited, token):
    """Beam search on one layer; returns (dists, ids, count) of <= ef results."""
    n = vecs.shape[0]
    cd = np.empty(n + 1, np.float64)
    ci = np.empty(n + 1, np.int32)
    cn = 0
    rd = np.empty(ef + 1, np.float64)
    ri = np.empty(ef + 1, np.int32)
    rn = 0
    visited[ep] = token
    cn = _heap_push(cd, ci, cn, epd, ep, True)
    rn = _heap_push(rd, ri, rn, epd, ep, False)
    while cn > 0:
        d_c, c, cn = _heap_pop(cd, ci, cn, True)
        if rn >= ef and d_c > rd[0]:
            break
        for j in range(ncnt[c]):
            e = neigh[c, j]
            if visited[e] == token:
                continue
            visited[e] = token
            d_e = _qdist(vecs, e, q)
            if rn < ef or d_e < rd[0]:
                cn = _heap_push(cd, ci, cn, d_e, e, True)
                rn = _heap_push(rd, ri, rn, d_e, e, False)
                if rn > ef:
                    _, _, rn = _heap_pop(rd, ri, rn, False)
    return rd, ri, rn


@njit(cache=True)
def _select_heuristic(vecs, cand_d, cand_i, cnt, m):
    """Keep candidates closer to the query than to any already-kept neighbor."""
    order = np.argsort(cand_d[:cnt], kind="mergesort")
    sel = np.empty(m, np.int32)
    nsel = 0
    for oi in range(cnt):
        c = cand_i[order[oi]]
        dq = cand_d[order[oi]]
        ok = True
        for s in range(nsel):
            if _qdist(vecs, c, vecs[sel[s]]) < dq:
                ok = False
                break
        if ok:
            sel[nsel] = c
            nsel += 1
            if nsel == m:
                break
    return sel, nsel


class HnswIndex:
    """Seeded, deterministic HNSW over unit vectors under cosine distance.

    Insertion order is the row order of the matrix passed to build(); levels
    are drawn up-front from the seed, so the same inputs give bit-identical
    graphs regardless of thread count.
    """

    def __init__(self, params: IndexParams):
        self.p = params
        self._built = False

    def build(self, vectors: np.ndarray) -> None:
        vecs = np.ascontiguousarray(vectors, dtype=np.float32)
        n = vecs.shape[0]
        m = self.p.m
        ml = 1.0 / math.log(m)
        rng = np.random.Generator(np.random.PCG64(self.p.seed))
        u = rng.random(n)
        levels = np.minimum(np.floor(-np.log(np.maximum(u, 1e-300)) * ml), 48).astype(np.int64)
        n_levels = int(levels.max()) + 1
        widths = [2 * m] + [m] * (n_levels - 1)
        neigh = [np.zeros((n, w), dtype=np.int32) for w in widths]
        ncnt = [np.zeros(n, dtype=np.int32) for _ in widths]
        visited = np.zeros(n, dtype=np.int64)
        token = 0
        entry = -1
        max_level = -1
        efc = self.p.ef_construction
        for i in range(n):
            lvl = int(levels[i])
            q = vecs[i]
            if entry < 0:
                entry, max_level = i, lvl
                continue
            ep = entry
            epd = _qdist(vecs, ep, q)
            for lc in range(max_level, lvl, -1):
                ep, epd = _greedy_descend(vecs, neigh[lc], ncnt[lc], q, ep, epd)
            for lc in range(min(max_level, lvl), -1, -1):
                token += 1
                rd, ri, rn = _search_layer(
                    vecs, neigh[lc], ncnt[lc], q, ep, epd, efc, visited, token
                )
                sel, nsel = _select_heuristic(vecs, rd, ri, rn, min(m, rn))
                for s in range(nsel):
                    j = int(sel[s])
                    self._link(vecs, neigh, ncnt, widths, lc, i, j)
                    self._link(vecs, neigh, ncnt, widths, lc, j, i)
                # continue from the best found result
                best = int(np.argmin(rd[:rn]))
                ep, epd = int(ri[best]), float(rd[best])
            if lvl > max_level:
                entry, max_level = i, lvl
        self._vecs = vecs
        self._neigh = neigh
        self._ncnt = ncnt
        self._visited = visited
        self._token = token
        self._entry = entry
        self._max_level = max_level
        self._built = True

    @staticmethod
    def _link(vecs, neigh, ncnt, widths, layer, src, dst):
        """Add dst to src's layer list, shrinking by the selection heuristic."""
        width = widths[layer]
        cnt = ncnt[layer][src]
        row = neigh[layer][src]
        for j in range(cnt):
            if row[j] == dst:
                return
        if cnt < width:
            row[cnt] = dst
            ncnt[layer][src] = cnt + 1
            return
        cand_i = np.empty(cnt + 1, np.int32)
        cand_i[:cnt] = row[:cnt]
        cand_i[cnt] = dst
        cand_d = 1.0 - (vecs[cand_i] @ vecs[src]).astype(np.float64)
        sel, nsel = _select_heuristic(vecs, cand_d, cand_i, cnt + 1, width)
        row[:nsel] = sel[:nsel]
        ncnt[layer][src] = nsel

    def query(self, q: np.ndarray, k: int, ef_search: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Top-k (ids, cosine distances), sorted by (distance, id)."""
        if not self._built:
            raise RuntimeError("index not built")
        q = np.ascontiguousarray(q, dtype=np.float32)
        ef = max(ef_search or self.p.ef_search, k)
        ep = self._entry
        epd = _qdist(self._vecs, ep, q)
        for lc in range(self._max_level, 0, -1):
            ep, epd = _greedy_descend(self._vecs, self._neigh[lc], self._ncnt[lc], q, ep, epd)
        self._token += 1
        rd, ri, rn = _search_layer(
            self._vecs, self._neigh[0], self._ncnt[0], q, ep, epd, ef,
            self._visited, self._token,
        )
        order = np.lexsort((ri[:rn], rd[:rn]))[:k]
        return ri[order], rd[order]


def project_dense(affil: AffiliationMatrix, dense_dim: int, seed: int) -> np.ndarray:
    """Seeded signed random projection of normalized rows to a fixed width."""
    rows = normalized_rows(affil)
    rng = np.random.Generator(np.random.PCG64(seed))
    signs = rng.integers(0, 2, size=(rows.shape[1], dense_dim)).astype(np.float64)
    proj = (2.0 * signs - 1.0) / math.sqrt(dense_dim)
    dense = np.asarray(rows @ proj)
    norms = np.linalg.norm(dense, axis=1, keepdims=True)
    np.divide(dense, norms, out=dense, where=norms > 0)
    return dense.astype(np.float32)


def knn_hnsw(affil: AffiliationMatrix, k: int, min_sim: float = 0.0,
             index_params: IndexParams | None = None,
             platforms: dict[str, str] | None = None) -> UserGraph:
    """Approximate top-k neighbors from an HNSW index over projected rows.

    Candidates come from the index; edge weights are recomputed as the true
    sparse cosine of the affiliation rows, and min_sim applies to that true
    similarity — so weights carry no projection distortion, only the
    candidate *sets* do (measured by recall_at_k against knn_exact).
    """
    _validate_knn_args(affil, k, min_sim)
    params = index_params or IndexParams()
    users = affil.users
    n = len(users)
    k_eff = min(k, n - 1)
    dense = project_dense(affil, params.dense_dim, params.seed)
    index = HnswIndex(params)
    index.build(dense)
    rows = normalized_rows(affil)
    dense_rows = rows.toarray() if n * rows.shape[1] <= (1 << 24) else None
    edges: dict[tuple[str, str], float] = {}
    ef = max(params.ef_search, k_eff + 1)
    for i in range(n):
        # pull the whole ef-sized beam, then rerank by TRUE cosine before
        # cutting to k — the projection decides candidacy, never rank
        ids, _ = index.query(dense[i], ef, ef)
        cand = ids[ids != i].astype(np.int64)
        if cand.size == 0:
            continue
        if dense_rows is not None:
            sims = dense_rows[i] @ dense_rows[cand].T
        else:
            sims = np.asarray((rows[i] @ rows[cand].T).todense()).ravel()
        for idx in np.lexsort((cand, -sims))[:k_eff]:
            j = int(cand[idx])
            w = float(sims[idx])
            if w < min_sim:
                continue
            a, b = (users[i], users[j]) if users[i] < users[j] else (users[j], users[i])
            if (a, b) not in edges:
                edges[(a, b)] = min(max(w, 0.0), 1.0)
    meta = GraphMeta(k=k, min_sim=min_sim, method="hnsw", index_params=params,
                     seed=params.seed)
    return UserGraph(nodes=list(users), edges=edges, meta=meta,
                     platforms=dict(platforms or {}))


# ---------------------------------------------------------------------------
# recall + files

def recall_at_k(approx: UserGraph, exact: UserGraph, k: int) -> float:
    """Mean over users of |top-k(approx) ∩ top-k(exact)| / k."""
    if approx.nodes != exact.nodes:
        raise ValueError("recall_at_k requires identical node sets")
    adj_a = approx.adjacency()
    adj_e = exact.adjacency()
    total = 0.0
    for u in exact.nodes:
        top_a = {v for v, _ in adj_a[u][:k]}
        top_e = {v for v, _ in adj_e[u][:k]}
        total += len(top_a & top_e) / k
    return total / len(exact.nodes)


def write_edge_dict(edges: dict[tuple[str, str], float], path: str | Path) -> None:
    """TSV `src<TAB>dst<TAB>weight` with src < dst, 6-decimal weights."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (u, v) in sorted(edges):
            fh.write(f"{u}\t{v}\t{format_weight(edges[(u, v)])}\n")


def write_edges(graph: UserGraph, path: str | Path) -> None:
    write_edge_dict(graph.edges, path)


def read_edges(path: str | Path, nodes: list[str] | None = None,
               meta: GraphMeta | None = None) -> UserGraph:
    edges: dict[tuple[str, str], float] = {}
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}: line {line_no}: expected 3 columns")
            u, v, w = parts
            edges[(u, v)] = float(w)
            seen.add(u)
            seen.add(v)
    node_list = nodes if nodes is not None else sorted(seen)
    return UserGraph(nodes=node_list, edges=edges,
                     meta=meta or GraphMeta(k=0, min_sim=0.0, method="exact"))
