"""DP-Means clustering of post embeddings under cosine distance.

Batch fitting is Lloyd-style alternation with a spawn rule: a point farther
than ``lam`` from every centroid becomes a new centroid. Point processing
order is the stable post_id sort, which makes results deterministic.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._util import dump_json
from .embeddings import EmbeddingMatrix, from_raw, parse_embeddings_file, write_embeddings

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.30


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - dot(a, b) for unit vectors; in [0, 2]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(1.0 - np.dot(a, b))


@dataclass(frozen=True)
class ClusterParams:
    lam: float = DEFAULT_LAMBDA  # cosine-distance threshold
    max_iters: int = 50
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.lam <= 2:
            raise ValueError(f"lambda must be in (0, 2], got {self.lam}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass
class ClusterModel:
    centroids: np.ndarray  # (K, d) float64, unit rows
    assignments: dict[str, int]  # post_id -> dense cluster index
    objective: float
    params: ClusterParams
    objective_trace: list[float] = field(default_factory=list)
    iters: int = 0
    converged: bool = False

    @property
    def n_clusters(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def dim(self) -> int:
        return int(self.centroids.shape[1])


def _unit_rows_f64(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _assignment_pass(
    x: np.ndarray, centroids: np.ndarray, lam: float
) -> tuple[np.ndarray, np.ndarray]:
    """One pass in point order against a frozen centroid snapshot.

    Distances to the snapshot are computed for all points at once; spawning
    is serialized in point order so the result equals the sequential trace.
    Returns (labels, new centroid matrix including spawns).
    """
    n = x.shape[0]
    base_d = 1.0 - x @ centroids.T  # (n, K)
    base_idx = np.argmin(base_d, axis=1)  # first min == lowest index on ties
    base_min = base_d[np.arange(n), base_idx]
    k0 = centroids.shape[0]
    spawned: list[np.ndarray] = []
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        best_d = base_min[i]
        best_k = int(base_idx[i])
        if spawned:
            sd = 1.0 - np.asarray(spawned) @ x[i]
            j = int(np.argmin(sd))
            # strict < : frozen (lower) indices win ties
            if sd[j] < best_d:
                best_d = float(sd[j])
                best_k = k0 + j
        if best_d > lam:
            labels[i] = k0 + len(spawned)
            spawned.append(x[i].copy())
        else:
            labels[i] = best_k
    if spawned:
        centroids = np.vstack([centroids, np.asarray(spawned)])
    return labels, centroids


def _drop_empty(labels: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    used = np.unique(labels)
    if used.shape[0] == centroids.shape[0]:
        return labels, centroids
    remap = -np.ones(centroids.shape[0], dtype=np.int64)
    remap[used] = np.arange(used.shape[0])
    return remap[labels], centroids[used]


def _recenter(x: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    out = np.empty_like(centroids)
    for k in range(centroids.shape[0]):
        members = x[labels == k]
        mean = members.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            # exact cancellation: fall back to the first member, deterministically
            out[k] = members[0]
        else:
            out[k] = mean / norm
    return out


def _capped_objective(x: np.ndarray, centroids: np.ndarray, lam: float) -> float:
    d = 1.0 - x @ centroids.T
    return float(np.minimum(d.min(axis=1), lam).sum())


def dpmeans_fit(embeddings: EmbeddingMatrix, params: ClusterParams) -> ClusterModel:
    if len(embeddings) == 0:
        raise ValueError("cannot fit on an empty embedding matrix")
    ids = embeddings.ids  # already sorted ascending by id bytes
    x = _unit_rows_f64(embeddings.vectors)
    mean = x.mean(axis=0)
    norm = np.linalg.norm(mean)
    init = (mean / norm) if norm >= 1e-12 else x[0]
    centroids = init[None, :].copy()
    labels_prev: np.ndarray | None = None
    trace: list[float] = []
    converged = False
    iters = 0
    for _ in range(params.max_iters):
        labels, centroids = _assignment_pass(x, centroids, params.lam)
        labels, centroids = _drop_empty(labels, centroids)
        iters += 1
        if labels_prev is not None and np.array_equal(labels, labels_prev):
            converged = True
            break
        centroids = _recenter(x, labels, centroids)
        trace.append(_capped_objective(x, centroids, params.lam))
        labels_prev = labels
    if not converged:
        logger.warning("dpmeans_fit hit max_iters=%d before convergence", params.max_iters)
    # recompute rather than trusting the trace: the converged-check pass can
    # have extended the centroid set without a recenter following it
    final_obj = _capped_objective(x, centroids, params.lam)
    assignments = {pid: int(k) for pid, k in zip(ids, labels)}
    return ClusterModel(
        centroids=centroids,
        assignments=assignments,
        objective=final_obj,
        params=params,
        objective_trace=trace,
        iters=iters,
        converged=converged,
    )


def dpmeans_assign(model: ClusterModel, vector: np.ndarray, allow_new: bool = False) -> int:
    """Nearest-centroid assignment for one vector; optionally spawn.

    With ``allow_new`` this is the streaming update and mutates the model by
    appending a centroid; frozen models should pass ``allow_new=False``.
    """
    v = np.asarray(vector, dtype=np.float64)
    if v.shape != (model.dim,):
        raise ValueError(f"dimension mismatch: vector {v.shape} vs model dim {model.dim}")
    d = 1.0 - model.centroids @ v
    k = int(np.argmin(d))
    if d[k] <= model.params.lam or not allow_new:
        return k
    model.centroids = np.vstack([model.centroids, v[None, :]])
    return model.n_clusters - 1


def objective(model: ClusterModel, embeddings: EmbeddingMatrix) -> float:
    """Sum over posts of min(min_k cosine_distance, lambda), from scratch."""
    missing = [pid for pid in embeddings.ids if pid not in model.assignments]
    if missing:
        raise ValueError(f"model does not cover {len(missing)} post(s), first: {missing[:5]}")
    x = _unit_rows_f64(embeddings.vectors)
    return _capped_objective(x, model.centroids, model.params.lam)


# ---------------------------------------------------------------------------
# model / assignment files

def write_assignments(model: ClusterModel, path: str | Path) -> None:
    """TSV `post_id<TAB>cluster_id`, sorted by post_id bytes."""
    items = sorted(model.assignments.items(), key=lambda kv: kv[0].encode("utf-8"))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pid, k in items:
            fh.write(f"{pid}\t{k}\n")


def read_assignments(path: str | Path) -> dict[str, int]:
    out: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}: line {line_no}: expected 2 columns")
            out[parts[0]] = int(parts[1])
    return out


def save_cluster_model(model: ClusterModel, centroids_path: str | Path, header_path: str | Path) -> None:
    """Centroids in the binary embedding container + JSON header."""
    k = model.n_clusters
    width = max(6, len(str(k - 1)))
    ids = [f"{i:0{width}d}" for i in range(k)]
    write_embeddings(from_raw(ids, model.centroids), centroids_path)
    dump_json(
        {
            "lambda": model.params.lam,
            "iters": model.iters,
            "K": k,
            "objective": model.objective,
            "converged": model.converged,
            "seed": model.params.seed,
            "max_iters": model.params.max_iters,
        },
        header_path,
    )


def load_cluster_model(
    centroids_path: str | Path, header_path: str | Path, assignments_path: str | Path | None = None
) -> ClusterModel:
    header = json.loads(Path(header_path).read_text(encoding="utf-8"))
    ids, raw = parse_embeddings_file(centroids_path)
    order = np.argsort(np.array([int(i) for i in ids]))
    centroids = _unit_rows_f64(raw[order])
    if centroids.shape[0] != header["K"]:
        raise ValueError(f"centroid count {centroids.shape[0]} != header K {header['K']}")
    assignments = read_assignments(assignments_path) if assignments_path else {}
    params = ClusterParams(
        lam=header["lambda"], max_iters=header.get("max_iters", 50), seed=header.get("seed", 0)
    )
    return ClusterModel(
        centroids=centroids,
        assignments=assignments,
        objective=header["objective"],
        params=params,
        objective_trace=[],
        iters=header["iters"],
        converged=header.get("converged", True),
    )
