"""Narrative timelines, simple-migration detection, and transfer entropy.

A narrative is a content cluster viewed over time. Its timeline bins posts
per platform on a shared hourly axis; migration detection applies the
origin-gap rule (one platform's first post precedes the other's by at least
the gap) plus a receiving-side volume threshold. For detected migrations,
transfer entropy origin -> receiving on binarized activity series, with an
add-one permutation test for significance.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._util import dump_json, stable_hash64
from .clustering import ClusterModel
from .corpus import PostCollection

logger = logging.getLogger(__name__)

DEFAULT_BIN = 3600.0  # hourly
DEFAULT_ORIGIN_GAP = 86_400.0  # 24 h
DEFAULT_MIN_POSTS = 10
DEFAULT_HISTORY = 1
DEFAULT_N_PERM = 1000
SIGNIFICANCE_LEVEL = 0.05
EARLY_FRACTION = 0.05
AUTO_PERCENTILE = 35.0


@dataclass
class NarrativeTimeline:
    narrative_id: int
    bin_width: float
    series: dict[str, np.ndarray]  # platform -> counts on a shared axis from t0
    first_ts: dict[str, float]  # platform -> first post timestamp
    participants: list[tuple[str, str, float]]  # (user, platform, ts), time-ordered

    @property
    def platforms(self) -> list[str]:
        return sorted(self.series)

    def post_count(self, platform: str) -> int:
        return int(self.series[platform].sum())


@dataclass
class MigrationRecord:
    narrative_id: int
    origin: str | None
    receiving: str | None
    simple_migrated: bool
    receiving_count: int
    te: float | None = None
    p_value: float | None = None
    significant: bool = False


def build_timeline(posts: PostCollection, model: ClusterModel, narrative_id: int,
                   bin_width: float = DEFAULT_BIN) -> NarrativeTimeline:
    """Bin one narrative's posts per platform on a shared axis from its first post."""
    if bin_width <= 0:
        raise ValueError(f"bin width must be positive, got {bin_width}")
    members = [p for p in posts if model.assignments.get(p.post_id) == narrative_id]
    if not members:
        raise ValueError(f"narrative {narrative_id} has no posts")
    t0 = min(p.ts for p in members)
    n_bins = int((max(p.ts for p in members) - t0) // bin_width) + 1
    series: dict[str, np.ndarray] = {}
    first_ts: dict[str, float] = {}
    for p in members:
        if p.platform not in series:
            series[p.platform] = np.zeros(n_bins, dtype=np.int64)
            first_ts[p.platform] = float(p.ts)
        series[p.platform][int((p.ts - t0) // bin_width)] += 1
        first_ts[p.platform] = min(first_ts[p.platform], float(p.ts))
    # time order with post_id as the tie-break
    order = sorted(range(len(members)), key=lambda i: (members[i].ts, members[i].post_id))
    participants = [(members[i].user_id, members[i].platform, float(members[i].ts))
                    for i in order]
    return NarrativeTimeline(narrative_id=narrative_id, bin_width=bin_width,
                             series=series, first_ts=first_ts,
                             participants=participants)


def detect_simple_migration(tl: NarrativeTimeline,
                            origin_gap: float = DEFAULT_ORIGIN_GAP,
                            min_posts: int = DEFAULT_MIN_POSTS) -> MigrationRecord:
    """Origin-gap rule plus receiving-volume threshold.

    Origin is the platform whose first post precedes the other's by at least
    ``origin_gap``; a narrative present on fewer than two platforms has no
    origin and cannot migrate.
    """
    plats = tl.platforms
    if len(plats) != 2:
        return MigrationRecord(narrative_id=tl.narrative_id, origin=None,
                               receiving=None, simple_migrated=False,
                               receiving_count=0)
    a, b = plats
    gap = tl.first_ts[b] - tl.first_ts[a]
    if gap >= origin_gap:
        origin, receiving = a, b
    elif -gap >= origin_gap:
        origin, receiving = b, a
    else:
        return MigrationRecord(narrative_id=tl.narrative_id, origin=None,
                               receiving=None, simple_migrated=False,
                               receiving_count=0)
    count = tl.post_count(receiving)
    return MigrationRecord(narrative_id=tl.narrative_id, origin=origin,
                           receiving=receiving,
                           simple_migrated=count >= min_posts,
                           receiving_count=count)


def auto_min_posts(timelines: Iterable[NarrativeTimeline],
                   percentile: float = AUTO_PERCENTILE) -> int:
    """Volume threshold as a percentile of all narrative-platform post counts."""
    counts = [tl.post_count(p) for tl in timelines for p in tl.platforms]
    if not counts:
        raise ValueError("no narrative-platform pairs to take a percentile over")
    return int(math.ceil(float(np.percentile(counts, percentile))))


def _window_codes(src01: np.ndarray, dst01: np.ndarray, k: int) -> np.ndarray:
    """Encode (x_{t+1}, x-history, y-history) windows as integers for counting."""
    n = len(dst01)
    codes = dst01[k:n].astype(np.int64)  # x_{t+1} in bit 0
    shift = 1
    for j in range(k):  # x_{t-j} then y_{t-j}, oldest bits highest
        codes |= dst01[k - 1 - j: n - 1 - j].astype(np.int64) << shift
        shift += 1
    for j in range(k):
        codes |= src01[k - 1 - j: n - 1 - j].astype(np.int64) << shift
        shift += 1
    return codes


def transfer_entropy(src: Sequence[float] | np.ndarray, dst: Sequence[float] | np.ndarray,
                     history: int = DEFAULT_HISTORY) -> float:
    """Plug-in transfer entropy src -> dst in bits, on binarized activity.

    TE = I(x_{t+1} ; y-history | x-history) under the empirical joint of all
    length-(history+1) windows; counts above zero map to 1.
    """
    src = np.asarray(src)
    dst = np.asarray(dst)
    if src.shape != dst.shape or src.ndim != 1:
        raise ValueError("src and dst must be equal-length 1-d series")
    k = history
    if k < 1:
        raise ValueError(f"history must be >= 1, got {k}")
    if len(dst) <= k + 1:
        raise ValueError(f"series of length {len(dst)} too short for history {k}")
    codes = _window_codes((src > 0).astype(np.int64), (dst > 0).astype(np.int64), k)
    joint = np.bincount(codes, minlength=1 << (2 * k + 1)).astype(np.float64)
    total = joint.sum()

    xh_bits = k  # layout: [y-history | x-history | x_next]
    n_xh = 1 << xh_bits
    full = joint.reshape(1 << k, n_xh, 2)  # [yh, xh, x_next]
    c_xh_yh = full.sum(axis=2)  # (yh, xh)
    c_xnext_xh = full.sum(axis=0)  # (xh, x_next)
    c_xh = c_xh_yh.sum(axis=0)  # (xh,)

    te = 0.0
    for yh in range(1 << k):
        for xh in range(n_xh):
            for xn in range(2):
                c = full[yh, xh, xn]
                if c == 0:
                    continue
                te += (c / total) * math.log2(
                    (c * c_xh[xh]) / (c_xh_yh[yh, xh] * c_xnext_xh[xh, xn])
                )
    return max(float(te), 0.0)  # conditional MI; clamp fp noise


def permutation_significance(src, dst, history: int = DEFAULT_HISTORY,
                             n_perm: int = DEFAULT_N_PERM, seed: int = 0) -> float:
    """Add-one permutation p-value: p = (1 + #{TE_perm >= TE_obs}) / (n_perm + 1)."""
    if n_perm < 1:
        raise ValueError(f"n_perm must be >= 1, got {n_perm}")
    src = np.asarray(src)
    observed = transfer_entropy(src, dst, history)
    rng = np.random.Generator(np.random.PCG64(seed))
    exceed = sum(
        transfer_entropy(rng.permutation(src), dst, history) >= observed
        for _ in range(n_perm)
    )
    return float(1 + exceed) / (n_perm + 1)


def annotate_te(tl: NarrativeTimeline, record: MigrationRecord,
                history: int = DEFAULT_HISTORY, n_perm: int = DEFAULT_N_PERM,
                seed: int = 0) -> MigrationRecord:
    """Fill TE and significance for a simple-migrated record; no-op otherwise.

    TE runs origin -> receiving only, so `significant` can never hold without
    `simple_migrated`.
    """
    if not record.simple_migrated:
        return record
    src = tl.series[record.origin]
    dst = tl.series[record.receiving]
    if len(dst) <= history + 1:
        logger.warning("narrative %d: series too short for TE, leaving unset",
                       tl.narrative_id)
        return record
    record.te = transfer_entropy(src, dst, history)
    record.p_value = permutation_significance(src, dst, history, n_perm, seed)
    record.significant = record.p_value < SIGNIFICANCE_LEVEL
    return record


def early_participants(tl: NarrativeTimeline, fraction: float = EARLY_FRACTION) -> list[str]:
    """First ceil(fraction * #distinct participants) distinct users, in time order."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    seen: list[str] = []
    seen_set: set[str] = set()
    for user, _, _ in tl.participants:
        if user not in seen_set:
            seen.append(user)
            seen_set.add(user)
    return seen[: math.ceil(fraction * len(seen))]


def first_introducer(tl: NarrativeTimeline, receiving: str) -> str | None:
    for user, platform, _ in tl.participants:
        if platform == receiving:
            return user
    return None


@dataclass
class IntroductionStats:
    shares: dict[int, float]  # n -> share of migrations with a bridge in first n
    first_introducers: dict[str, int]  # user -> #migrations they introduced
    n_migrated: int

    @property
    def top1_bridge_share(self) -> float:
        return self.shares.get(1, 0.0)


def introduction_rank_stats(timelines: Mapping[int, NarrativeTimeline],
                            migrations: Iterable[MigrationRecord],
                            bridge_users: Iterable[str],
                            max_n: int = 5) -> IntroductionStats:
    """Bridge presence among the first n receiving-platform posts, n = 1..max_n."""
    bridge = set(bridge_users)
    migrated = [m for m in migrations if m.simple_migrated]
    hits = {n: 0 for n in range(1, max_n + 1)}
    introducers: Counter[str] = Counter()
    for m in migrated:
        tl = timelines[m.narrative_id]
        recv_users = [u for u, plat, _ in tl.participants if plat == m.receiving]
        if recv_users:
            introducers[recv_users[0]] += 1
        for n in range(1, max_n + 1):
            if any(u in bridge for u in recv_users[:n]):
                hits[n] += 1
    total = len(migrated)
    shares = {n: (hits[n] / total if total else 0.0) for n in hits}
    return IntroductionStats(shares=shares, first_introducers=dict(introducers),
                             n_migrated=total)


def analyze_migrations(posts: PostCollection, model: ClusterModel,
                       bin_width: float = DEFAULT_BIN,
                       origin_gap: float = DEFAULT_ORIGIN_GAP,
                       min_posts: int | str = DEFAULT_MIN_POSTS,
                       history: int = DEFAULT_HISTORY,
                       n_perm: int = DEFAULT_N_PERM,
                       seed: int = 0) -> tuple[dict[int, NarrativeTimeline], list[MigrationRecord]]:
    """Timelines + migration records (TE annotated) for every narrative.

    ``min_posts="auto"`` derives the threshold as the 35th percentile of all
    narrative-platform post counts.
    """
    narrative_ids = sorted(set(model.assignments.values()))
    timelines = {nid: build_timeline(posts, model, nid, bin_width)
                 for nid in narrative_ids
                 if any(model.assignments.get(p.post_id) == nid for p in posts)}
    if min_posts == "auto":
        min_posts = auto_min_posts(timelines.values())
        logger.info("auto volume threshold: %d posts", min_posts)
    elif not isinstance(min_posts, int):
        raise ValueError(f"min_posts must be an integer or 'auto', got {min_posts!r}")
    records = []
    for nid, tl in timelines.items():
        rec = detect_simple_migration(tl, origin_gap, min_posts)
        rec = annotate_te(tl, rec, history, n_perm,
                          seed=stable_hash64(f"te:{nid}", seed))
        records.append(rec)
    return timelines, records


def write_migrations(timelines: Mapping[int, NarrativeTimeline],
                     records: Iterable[MigrationRecord],
                     bridge_users: Iterable[str], path: str | Path,
                     max_n: int = 5, early_fraction: float = EARLY_FRACTION) -> None:
    records = sorted(records, key=lambda r: r.narrative_id)
    stats = introduction_rank_stats(timelines, records, bridge_users, max_n)
    per_narrative = []
    for r in records:
        tl = timelines[r.narrative_id]
        per_narrative.append({
            "narrative": r.narrative_id,
            "origin": r.origin,
            "simple": r.simple_migrated,
            "te": r.te,
            "p": r.p_value,
            "significant": r.significant,
            "first_introducer": (first_introducer(tl, r.receiving)
                                 if r.receiving else None),
            "early_users": early_participants(tl, early_fraction),
        })
    dump_json({
        "narratives": per_narrative,
        "summary": {
            "n_narratives": len(records),
            "n_simple_migrated": sum(r.simple_migrated for r in records),
            "n_significant": sum(r.significant for r in records),
            "bridge_introduction_shares": {str(n): s for n, s in stats.shares.items()},
            "top_first_introducers": dict(sorted(
                stats.first_introducers.items(), key=lambda kv: (-kv[1], kv[0]))[:20]),
        },
    }, path)
