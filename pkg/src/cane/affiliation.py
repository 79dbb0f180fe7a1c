"""User x cluster participation counts and affiliation weighting.

A user's affiliation vector holds one weight per content cluster they posted
in. Three weighting schemes: per-user-share TF-IDF (the default), raw counts,
and a row-wise softmax over the user's nonzero counts.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .clustering import ClusterModel
from .corpus import PostCollection

logger = logging.getLogger(__name__)

SCHEMES = ("tfidf", "raw", "softmax")


@dataclass
class CountMatrix:
    """Sparse user x cluster post counts with the derived statistics.

    ``users`` is sorted; row u of ``counts`` holds n_{u,c}. ``totals`` is the
    per-user post total N_u, ``df`` the distinct-user count per cluster, and
    ``n_users`` = |U|.
    """

    users: list[str]
    counts: sparse.csr_matrix  # int64
    totals: np.ndarray  # (|U|,)
    df: np.ndarray  # (|C|,)
    n_clusters: int

    @property
    def n_users(self) -> int:
        return len(self.users)


@dataclass
class AffiliationMatrix:
    users: list[str]
    weights: sparse.csr_matrix  # float64
    scheme: str

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_clusters(self) -> int:
        return int(self.weights.shape[1])

    def user_row(self, user: str) -> dict[int, float]:
        i = self.users.index(user)
        row = self.weights.getrow(i).tocoo()
        return {int(c): float(v) for c, v in zip(row.col, row.data)}


def count_matrix(posts: PostCollection, model: ClusterModel) -> CountMatrix:
    """Exact participation counts n_{u,c} from posts and their assignments."""
    if len(posts) == 0:
        raise ValueError("empty post collection")
    missing = [p.post_id for p in posts if p.post_id not in model.assignments]
    if missing:
        raise ValueError(
            f"{len(missing)} post(s) without a cluster assignment, first: {missing[:5]}"
        )
    users = sorted(posts.by_user)
    uidx = {u: i for i, u in enumerate(users)}
    n_clusters = model.n_clusters
    rows, cols = [], []
    for p in posts:
        rows.append(uidx[p.user_id])
        cols.append(model.assignments[p.post_id])
    data = np.ones(len(rows), dtype=np.int64)
    counts = sparse.coo_matrix(
        (data, (rows, cols)), shape=(len(users), n_clusters), dtype=np.int64
    ).tocsr()
    counts.sum_duplicates()
    totals = np.asarray(counts.sum(axis=1)).ravel()
    df = np.asarray((counts > 0).sum(axis=0)).ravel()
    return CountMatrix(users=users, counts=counts, totals=totals, df=df, n_clusters=n_clusters)


def weight_matrix(counts: CountMatrix, scheme: str = "tfidf",
                  idf_source: CountMatrix | None = None) -> AffiliationMatrix:
    """Turn counts into affiliation weights under the given scheme.

    ``idf_source`` (tfidf only) computes the idf factor from a different count
    matrix — e.g. corpus-wide statistics while tf stays per-window.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme '{scheme}', expected one of {SCHEMES}")
    c = counts.counts
    if scheme == "raw":
        w = c.astype(np.float64)
    elif scheme == "tfidf":
        src = idf_source if idf_source is not None else counts
        if src.n_clusters != counts.n_clusters:
            raise ValueError("idf_source cluster count differs from counts")
        coo = c.tocoo()
        tf = coo.data.astype(np.float64) / counts.totals[coo.row]
        idf = np.log(src.n_users / src.df[coo.col])
        w = sparse.coo_matrix((tf * idf, (coo.row, coo.col)), shape=c.shape).tocsr()
        w.eliminate_zeros()  # clusters with df == |U| carry zero weight everywhere
    else:  # softmax over the user's nonzero counts only
        csr = c.tocsr()
        indptr = csr.indptr
        vals = csr.data.astype(np.float64)
        for u in range(c.shape[0]):
            lo, hi = indptr[u], indptr[u + 1]
            if lo == hi:
                continue
            row = vals[lo:hi]
            e = np.exp(row - row.max())
            vals[lo:hi] = e / e.sum()
        w = sparse.csr_matrix((vals, csr.indices, csr.indptr), shape=c.shape)
        return AffiliationMatrix(users=counts.users, weights=w, scheme=scheme)
    return AffiliationMatrix(users=counts.users, weights=w.tocsr(), scheme=scheme)


def write_affiliations(aff: AffiliationMatrix, path: str | Path) -> None:
    """TSV `user_id<TAB>cluster_id<TAB>weight`; weights round-trip exactly."""
    coo = aff.weights.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in order:
            fh.write(f"{aff.users[coo.row[i]]}\t{coo.col[i]}\t{repr(float(coo.data[i]))}\n")


def read_affiliations(path: str | Path, scheme: str = "tfidf") -> AffiliationMatrix:
    users_seen: dict[str, int] = {}
    rows, cols, data = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}: line {line_no}: expected 3 columns")
            u, cstr, wstr = parts
            rows.append(users_seen.setdefault(u, len(users_seen)))
            cols.append(int(cstr))
            data.append(float(wstr))
    if not rows:
        raise ValueError(f"{path}: empty affiliation file")
    users = list(users_seen)
    if users != sorted(users):
        # re-map to sorted user order for a canonical matrix
        perm = {old: new for new, old in enumerate(sorted(range(len(users)), key=lambda i: users[i]))}
        rows = [perm[r] for r in rows]
        users = sorted(users)
    mat = sparse.coo_matrix(
        (data, (rows, cols)), shape=(len(users), max(cols) + 1), dtype=np.float64
    ).tocsr()
    return AffiliationMatrix(users=users, weights=mat, scheme=scheme)


def normalized_rows(aff: AffiliationMatrix) -> sparse.csr_matrix:
    """Unit-L2 rows for cosine-as-dot similarity; zero rows stay zero."""
    w = aff.weights.tocsr().astype(np.float64)
    norms = np.sqrt(np.asarray(w.multiply(w).sum(axis=1)).ravel())
    inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    return sparse.diags(inv) @ w
