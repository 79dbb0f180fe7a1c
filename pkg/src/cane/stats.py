"""Matched-comparison statistics for treated-vs-control user analysis.

Mann-Whitney U with midranks (exact p for small tie-free samples, normal
approximation with tie correction otherwise), rank-biserial effect size, and
greedy z-normalized nearest-neighbor matching without replacement.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as sps

from ._util import dump_json

logger = logging.getLogger(__name__)

EXACT_MAX_PRODUCT = 400  # exact p when n_a * n_b <= this and no ties


@dataclass(frozen=True)
class MWResult:
    u_a: float  # U of the first sample (pairs where a beats b, ties half)
    u_b: float
    p: float  # two-sided
    method: str  # "exact" | "normal"


@dataclass
class MatchedPairs:
    pairs: list[tuple[str, str, float]]  # (treated, control, z-space distance)
    feature_names: list[str]  # the features actually used (zero-variance dropped)
    means: dict[str, float]
    stds: dict[str, float]

    @property
    def controls(self) -> list[str]:
        return [c for _, c, _ in self.pairs]


def _check_samples(a: Sequence[float], b: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("mann_whitney requires two nonempty samples")
    return a, b


def mann_whitney(a: Sequence[float], b: Sequence[float]) -> MWResult:
    """U statistic (midranks) and a two-sided p-value.

    Exact enumeration when n_a*n_b <= 400 and the pooled values are tie-free;
    otherwise the normal approximation with tie correction. A pooled sample
    with zero rank variance (every value identical) gives p = 1.0.
    """
    a, b = _check_samples(a, b)
    n_a, n_b = len(a), len(b)
    pooled = np.concatenate([a, b])
    has_ties = len(np.unique(pooled)) < len(pooled)
    if np.ptp(pooled) == 0.0:
        # degenerate: all observations identical, U is exactly its null mean
        return MWResult(u_a=n_a * n_b / 2.0, u_b=n_a * n_b / 2.0, p=1.0, method="normal")
    method = "exact" if (n_a * n_b <= EXACT_MAX_PRODUCT and not has_ties) else "normal"
    res = sps.mannwhitneyu(a, b, alternative="two-sided",
                           method="exact" if method == "exact" else "asymptotic")
    u_a = float(res.statistic)
    return MWResult(u_a=u_a, u_b=n_a * n_b - u_a, p=float(res.pvalue), method=method)


def rank_biserial(a: Sequence[float], b: Sequence[float]) -> float:
    """r = 2*U_a/(n_a*n_b) - 1: positive when a tends larger, in [-1, 1]."""
    a, b = _check_samples(a, b)
    res = mann_whitney(a, b)
    return 2.0 * res.u_a / (len(a) * len(b)) - 1.0


def _feature_matrix(rows: Mapping[str, Mapping[str, float]],
                    names: list[str]) -> tuple[list[str], np.ndarray]:
    ids = sorted(rows)
    mat = np.empty((len(ids), len(names)), dtype=np.float64)
    for i, rid in enumerate(ids):
        feats = rows[rid]
        if sorted(feats) != names:
            raise ValueError(f"row '{rid}' does not match the feature schema {names}")
        mat[i] = [float(feats[n]) for n in names]
    return ids, mat


def match_nearest(treated: Mapping[str, Mapping[str, float]],
                  pool: Mapping[str, Mapping[str, float]],
                  k: int = 1) -> MatchedPairs:
    """Greedy nearest-neighbor matching without replacement in z-score space.

    Features are z-normalized with the mean/std of the combined treated+pool
    rows; zero-variance features are dropped with a warning. Every treated
    row gets ``k`` distinct controls; each control is used at most once.
    Pairs are taken in ascending (distance, treated, control) order, so the
    result does not depend on input ordering.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not treated:
        raise ValueError("no treated rows")
    overlap = treated.keys() & pool.keys()
    if overlap:
        raise ValueError(f"rows present in both treated and pool, first: {sorted(overlap)[:5]}")
    if len(pool) < k * len(treated):
        raise ValueError(
            f"pool of {len(pool)} cannot supply {k} controls for {len(treated)} treated rows")
    names = sorted(next(iter(treated.values())))
    t_ids, t_mat = _feature_matrix(treated, names)
    p_ids, p_mat = _feature_matrix(pool, names)
    combined = np.vstack([t_mat, p_mat])
    means = combined.mean(axis=0)
    stds = combined.std(axis=0)
    keep = stds > 0.0
    if not keep.all():
        dropped = [n for n, ok in zip(names, keep) if not ok]
        logger.warning("dropping zero-variance feature(s): %s", ", ".join(dropped))
    if not keep.any():
        raise ValueError("all features have zero variance; nothing to match on")
    used_names = [n for n, ok in zip(names, keep) if ok]
    tz = (t_mat[:, keep] - means[keep]) / stds[keep]
    pz = (p_mat[:, keep] - means[keep]) / stds[keep]

    diffs = tz[:, None, :] - pz[None, :, :]
    dist = np.sqrt((diffs ** 2).sum(axis=2))
    order = sorted(
        ((float(dist[i, j]), t_ids[i], p_ids[j]) for i in range(len(t_ids))
         for j in range(len(p_ids))),
    )
    slots = {t: k for t in t_ids}
    used: set[str] = set()
    pairs: list[tuple[str, str, float]] = []
    for d, t, c in order:
        if slots[t] > 0 and c not in used:
            pairs.append((t, c, d))
            slots[t] -= 1
            used.add(c)
    pairs.sort()
    return MatchedPairs(
        pairs=pairs, feature_names=used_names,
        means={n: float(m) for n, m in zip(names, means) if n in used_names},
        stds={n: float(s) for n, s in zip(names, stds) if n in used_names},
    )


def write_matched_report(per_metric: Mapping[str, tuple[Sequence[float], Sequence[float]]],
                         path: str | Path) -> None:
    """matched_report.json: per metric {U, p, rank_biserial, n_treated, n_control}."""
    report = {}
    for metric in sorted(per_metric):
        a, b = per_metric[metric]
        res = mann_whitney(a, b)
        report[metric] = {
            "U": res.u_a,
            "p": res.p,
            "rank_biserial": 2.0 * res.u_a / (len(a) * len(b)) - 1.0,
            "n_treated": len(a),
            "n_control": len(b),
        }
    dump_json(report, path)
