"""Seeded generator of cross-platform corpora with planted ground truth.

The generator plants, in one corpus: content communities with one home
platform each, a bridge community whose members post on both platforms,
narratives as well-separated Gaussian bumps in embedding space, and
narrative migrations whose receiving-platform series is lag-coupled to the
origin series (so the transfer-entropy detector has real signal to find).

Timeline mechanics: every narrative gets an hourly activity template over a
fixed horizon; each active hour becomes at least one post (a "slot"), and
leftover per-user post budget is spread over already-active hours so the
binarized per-hour series — what the migration detector consumes — is exactly
the planted template. The first receiving-platform post of a migrated
narrative is authored by its designated seeder and strictly precedes every
other receiving post.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from ._util import dump_json, stable_hash64
from .clustering import ClusterParams
from .community import platform_entropy
from .corpus import PostCollection, PostRecord, normalize_text
from .embeddings import EmbeddingMatrix, from_raw

logger = logging.getLogger(__name__)

PLATFORMS = ("alpha", "beta")
TIMELINE_HOURS = 96          # per-narrative activity horizon
MIGRATION_GAP_HOURS = 24     # origin leads the receiving platform by at least this
MIN_RECEIVING_BINS = 10      # enough receiving activity to trip the migration rule
BRIDGE_HOME_SHARE = 0.55     # bridge users keep a strict majority on their home platform
NARRATIVE_STAGGER = 21_600   # narrative start times offset by 6h each
BASE_TS = 1_600_000_000
_BIN = 3600
_MAX_POSTS_PER_BIN = 400     # keeps every jittered timestamp inside its hour bin


@dataclass(frozen=True)
class SynthConfig:
    users_per_community: int = 30
    n_communities: int = 4
    bridge_users: int = 12
    bridge_mix: tuple[float, float] = (0.5, 0.5)  # share of bridge users homed per platform
    n_narratives: int = 20
    posts_per_user: int = 20
    emb_dim: int = 64
    noise: float = 0.1
    migration_fraction: float = 0.5
    bridge_intro_share: float = 0.7
    coupling_lag: int = 1
    coupling_strength: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("users_per_community", "n_communities", "n_narratives",
                     "posts_per_user", "emb_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.bridge_users < 0:
            raise ValueError(f"bridge_users must be >= 0, got {self.bridge_users}")
        if self.noise < 0:
            raise ValueError(f"noise must be >= 0, got {self.noise}")
        for name in ("migration_fraction", "bridge_intro_share", "coupling_strength"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {getattr(self, name)}")
        if self.coupling_lag < 1:
            raise ValueError(f"coupling_lag must be >= 1, got {self.coupling_lag}")
        if len(self.bridge_mix) != len(PLATFORMS) or any(m < 0 for m in self.bridge_mix):
            raise ValueError("bridge_mix needs one nonnegative share per platform")
        if abs(sum(self.bridge_mix) - 1.0) > 1e-9:
            raise ValueError(f"bridge_mix must sum to 1, got {sum(self.bridge_mix)}")
        if self.n_narratives < self.n_communities:
            raise ValueError("n_narratives must be >= n_communities so every "
                             "community has a narrative pool")
        if self.bridge_users > 0 and self.n_communities < 2:
            raise ValueError("bridge users need >= 2 communities (two platforms)")
        if self.bridge_users > 0 and self.posts_per_user < 3:
            raise ValueError("posts_per_user must be >= 3 with bridge users so each "
                             "can post on both platforms with a strict home majority")
        if self.migration_fraction > 0 and self.n_communities < 2:
            raise ValueError("migrations need >= 2 communities (two platforms)")

    @property
    def n_users(self) -> int:
        return self.n_communities * self.users_per_community + self.bridge_users

    @property
    def n_posts(self) -> int:
        return self.n_users * self.posts_per_user


@dataclass(frozen=True)
class NarrativeTruth:
    community: int
    origin: str
    migrated: bool
    receiving: str | None     # platform the narrative migrated to
    seeder: str               # first receiving-platform poster (first poster overall if not migrated)
    bridge_introduced: bool


@dataclass(frozen=True)
class GroundTruth:
    communities: dict[str, int]          # bridge members get community id n_communities
    bridge_users: list[str]
    narratives: dict[int, NarrativeTruth]
    assignments: dict[str, int]          # post_id -> planted narrative
    config: SynthConfig


# ---------------------------------------------------------------------------
# primitives

def gen_coupled_series(length: int, lag: int, strength: float,
                       seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """src i.i.d. Bernoulli(0.5); dst_t copies src_{t-lag} with probability
    ``strength`` and is an independent Bernoulli(0.5) otherwise (always
    independent for t < lag)."""
    if not length > lag >= 1:
        raise ValueError(f"need length > lag >= 1, got length={length}, lag={lag}")
    if not 0.0 <= strength <= 1.0:
        raise ValueError(f"strength must be in [0, 1], got {strength}")
    rng = np.random.default_rng(stable_hash64("coupled", seed))
    src = (rng.random(length) < 0.5).astype(np.int64)
    noise = (rng.random(length) < 0.5).astype(np.int64)
    coupled = rng.random(length) < strength
    shifted = np.concatenate([noise[:lag], src[:-lag]])
    dst = np.where(coupled, shifted, noise)
    dst[:lag] = noise[:lag]
    return src, dst


def _sample_centroids(rng: np.random.Generator, n: int, dim: int,
                      min_distance: float) -> np.ndarray:
    """Unit centroids with pairwise cosine distance above ``min_distance``,
    by rejection; fails fast when the requested packing cannot fit."""
    centroids: list[np.ndarray] = []
    attempts_per = 1000
    for i in range(n):
        for _ in range(attempts_per):
            v = rng.normal(size=dim)
            v /= np.linalg.norm(v)
            if all(1.0 - float(v @ c) > min_distance for c in centroids):
                centroids.append(v)
                break
        else:
            raise ValueError(
                f"cannot pack {n} narrative centroids at pairwise cosine distance "
                f"> {min_distance:.2f} in dimension {dim} (placed {i}); "
                "increase emb_dim or reduce n_narratives")
    return np.stack(centroids)


# ---------------------------------------------------------------------------
# corpus generation

class _Budgets:
    """Per-user post budgets; bridge users carry a separate per-platform split."""

    def __init__(self, pure_users: Iterable[str], ppu: int,
                 bridge_home: dict[str, str], home_quota: int, other_quota: int):
        self.pure = {u: ppu for u in pure_users}
        self.bridge = {u: {home: home_quota, _other(home): other_quota}
                       for u, home in bridge_home.items()}

    def take_pure(self, user: str) -> bool:
        if self.pure.get(user, 0) > 0:
            self.pure[user] -= 1
            return True
        return False

    def take_bridge(self, user: str, platform: str) -> bool:
        if self.bridge.get(user, {}).get(platform, 0) > 0:
            self.bridge[user][platform] -= 1
            return True
        return False


def _other(platform: str) -> str:
    return PLATFORMS[1] if platform == PLATFORMS[0] else PLATFORMS[0]


class _Cycle:
    """Round-robin over a fixed user list, skipping exhausted budgets."""

    def __init__(self, users: list[str]):
        self.users = users
        self.pos = 0

    def next(self, can_take) -> str | None:
        for _ in range(len(self.users)):
            u = self.users[self.pos]
            self.pos = (self.pos + 1) % len(self.users)
            if can_take(u):
                return u
        return None


def gen_planted_corpus(config: SynthConfig,
                       ) -> tuple[PostCollection, EmbeddingMatrix, GroundTruth]:
    """Emit a corpus realizing every planted fact; deterministic per seed.

    Raises when the configuration cannot be realized: centroid packing
    impossible at the embedding dim, or the per-user post budget too small to
    give every planted active hour its post.
    """
    rng = np.random.default_rng(stable_hash64("synth", config.seed))
    lam = ClusterParams().lam
    centroids = _sample_centroids(rng, config.n_narratives, config.emb_dim, 2 * lam)

    # --- users
    community_platform = {c: PLATFORMS[c % 2] for c in range(config.n_communities)}
    pure: dict[int, list[str]] = {
        c: [f"c{c}u{i:03d}" for i in range(config.users_per_community)]
        for c in range(config.n_communities)}
    n_home_first = round(config.bridge_mix[0] * config.bridge_users)
    bridge_home = {f"bridge{i:02d}": (PLATFORMS[0] if i < n_home_first else PLATFORMS[1])
                   for i in range(config.bridge_users)}
    pure_of_platform = {p: [u for c, users in pure.items()
                            if community_platform[c] == p for u in users]
                        for p in PLATFORMS}
    bridge_of_home = {p: [u for u, h in bridge_home.items() if h == p]
                      for p in PLATFORMS}

    # --- narrative activity templates
    narrative_community = {j: j % config.n_communities for j in range(config.n_narratives)}
    n_migrated = int(round(config.migration_fraction * config.n_narratives))
    migrated_ids = sorted(rng.permutation(config.n_narratives)[:n_migrated].tolist())
    migrated_set = set(migrated_ids)
    n_bridge_intro = (int(round(config.bridge_intro_share * n_migrated))
                      if config.bridge_users else 0)
    intro_order = [migrated_ids[i] for i in rng.permutation(len(migrated_ids))]
    bridge_intro_ids = set(intro_order[:n_bridge_intro])

    origin_bins: dict[int, list[int]] = {}
    recv_bins: dict[int, list[int]] = {}
    recv_start = MIGRATION_GAP_HOURS + config.coupling_lag
    for j in range(config.n_narratives):
        for attempt in range(50):
            series_seed = stable_hash64(f"narrative:{j}:{attempt}", config.seed)
            src, dst = gen_coupled_series(TIMELINE_HOURS, config.coupling_lag,
                                          config.coupling_strength, seed=series_seed)
            src[0] = 1  # the narrative's first post anchors its timeline
            dst[:recv_start] = 0
            bins_r = np.flatnonzero(dst).tolist()
            if j not in migrated_set or len(bins_r) >= MIN_RECEIVING_BINS:
                origin_bins[j] = np.flatnonzero(src).tolist()
                recv_bins[j] = bins_r if j in migrated_set else []
                break
        else:
            raise ValueError(f"could not draw >= {MIN_RECEIVING_BINS} receiving-side "
                             f"active hours for narrative {j}; raise coupling_strength")

    total_slots = sum(len(origin_bins[j]) + len(recv_bins[j])
                      for j in range(config.n_narratives))
    if total_slots > config.n_posts:
        raise ValueError(
            f"config cannot realize the planted timelines: {total_slots} active "
            f"hours need one post each but only {config.n_posts} posts are "
            "budgeted; increase posts_per_user or users_per_community")

    # --- budgets and author cycles
    other_quota = int(np.floor((1.0 - BRIDGE_HOME_SHARE) * config.posts_per_user))
    home_quota = config.posts_per_user - other_quota
    budgets = _Budgets([u for users in pure.values() for u in users],
                       config.posts_per_user, bridge_home, home_quota, other_quota)
    pure_cycle = {c: _Cycle(pure[c]) for c in range(config.n_communities)}
    platform_pure_cycle = {p: _Cycle(pure_of_platform[p]) for p in PLATFORMS
                           if pure_of_platform[p]}
    bridge_cycle = {p: _Cycle(bridge_of_home[p]) for p in PLATFORMS if bridge_of_home[p]}

    raw_posts: list[tuple[str, str, int, int, str]] = []  # (user, platform, narr, bin, side)
    bin_fill: dict[tuple[int, str, int], int] = {}
    receiving_post_keys: set[int] = set()  # raw_posts indices on a receiving side

    def emit(user: str, platform: str, narr: int, b: int, side: str) -> None:
        key = (narr, side, b)
        if bin_fill.get(key, 0) >= _MAX_POSTS_PER_BIN:
            raise ValueError(f"generator self-check failed: hour bin {key} overflowed")
        bin_fill[key] = bin_fill.get(key, 0) + 1
        if side == "receiving":
            receiving_post_keys.add(len(raw_posts))
        raw_posts.append((user, platform, narr, b, side))

    def author_origin(narr: int) -> str | None:
        c = narrative_community[narr]
        p = community_platform[c]
        u = pure_cycle[c].next(budgets.take_pure)
        if u is None and p in bridge_cycle:
            u = bridge_cycle[p].next(lambda b: budgets.take_bridge(b, p))
        return u

    def author_receiving(platform: str, bridge_first: bool) -> str | None:
        u = None
        if bridge_first and platform in bridge_cycle:
            u = bridge_cycle[platform].next(lambda b: budgets.take_bridge(b, platform))
        if u is None and platform in platform_pure_cycle:
            u = platform_pure_cycle[platform].next(budgets.take_pure)
        if u is None and not bridge_first and platform in bridge_cycle:
            u = bridge_cycle[platform].next(lambda b: budgets.take_bridge(b, platform))
        return u

    # --- 1) seeders claim the first receiving-platform post of each migration
    seeders: dict[int, str] = {}
    for j in migrated_ids:
        receiving = _other(community_platform[narrative_community[j]])
        if j in bridge_intro_ids:
            seeder = bridge_cycle[receiving].next(
                lambda b: budgets.take_bridge(b, receiving))
        else:
            seeder = (platform_pure_cycle[receiving].next(budgets.take_pure)
                      if receiving in platform_pure_cycle else None)
        if seeder is None:
            raise ValueError("generator self-check failed: no budget left for a "
                             f"seeder on platform {receiving}")
        seeders[j] = seeder
        emit(seeder, receiving, j, recv_bins[j][0], "receiving")

    # --- 2) origin slots, then 3) remaining receiving slots
    for j in range(config.n_narratives):
        platform = community_platform[narrative_community[j]]
        for b in origin_bins[j]:
            user = author_origin(j)
            if user is None:
                raise ValueError("generator self-check failed: origin slot unfilled "
                                 f"for narrative {j}; not enough post budget")
            emit(user, platform, j, b, "origin")
    recv_slots_of = {p: sorted(((j, b) for j in migrated_ids
                                if _other(community_platform[narrative_community[j]]) == p
                                for b in recv_bins[j][1:]), key=lambda t: (t[1], t[0]))
                     for p in PLATFORMS}
    for receiving in PLATFORMS:  # bin-major order spreads authors over narratives
        for j, b in recv_slots_of[receiving]:
            user = author_receiving(receiving, bridge_first=True)
            if user is None:
                raise ValueError("generator self-check failed: receiving slot "
                                 f"unfilled for narrative {j}")
            emit(user, receiving, j, b, "receiving")

    # --- 4) bridge leftovers pile onto already-active hours (series unchanged);
    # bin-major order interleaves narratives so short runs still span communities
    recv_targets = {p: sorted(((j, b) for j in migrated_ids
                               if _other(community_platform[narrative_community[j]]) == p
                               for b in recv_bins[j]), key=lambda t: (t[1], t[0]))
                    for p in PLATFORMS}
    origin_targets = {p: sorted(((j, b) for j in range(config.n_narratives)
                                 if community_platform[narrative_community[j]] == p
                                 for b in origin_bins[j]), key=lambda t: (t[1], t[0]))
                      for p in PLATFORMS}
    for user in sorted(bridge_home):
        for platform in (bridge_home[user], _other(bridge_home[user])):
            targets = recv_targets[platform] or origin_targets[platform]
            side = "receiving" if recv_targets[platform] else "origin"
            i = stable_hash64(f"extra:{user}:{platform}", config.seed) % max(len(targets), 1)
            while budgets.take_bridge(user, platform):
                j, b = targets[i % len(targets)]
                emit(user, platform, j, b, side)
                i += 1

    # --- 5) pure leftovers stay inside the home pool (bin-major, staggered starts)
    for c in range(config.n_communities):
        pool = sorted(((j, b) for j in range(config.n_narratives)
                       if narrative_community[j] == c for b in origin_bins[j]),
                      key=lambda t: (t[1], t[0]))
        platform = community_platform[c]
        for k, user in enumerate(pure[c]):
            i = k * len(pool) // max(len(pure[c]), 1)
            while budgets.take_pure(user):
                j, b = pool[i % len(pool)]
                emit(user, platform, j, b, "origin")
                i += 1

    # --- materialize posts: stable ids, hour-bin timestamps, jitter by fill order
    t0 = {j: BASE_TS + j * NARRATIVE_STAGGER for j in range(config.n_narratives)}
    offset_seen: dict[tuple[int, str, int], int] = {}
    posts: list[PostRecord] = []
    assignments: dict[str, int] = {}
    for user, platform, j, b, side in raw_posts:
        key = (j, side, b)
        off = offset_seen.get(key, 0)
        offset_seen[key] = off + 1
        ts = t0[j] + b * _BIN + 600 + off * 7
        pid = f"p{len(posts):06d}"
        text = f"narrative {j} voice {stable_hash64(pid, config.seed) % 97}"
        posts.append(PostRecord(post_id=pid, user_id=user, platform=platform, ts=ts,
                                text_raw=text, text_norm=normalize_text(text)))
        assignments[pid] = j
    collection = PostCollection(posts=posts)

    vectors = np.empty((len(posts), config.emb_dim))
    for i, post in enumerate(posts):
        bump = rng.normal(size=config.emb_dim) / np.sqrt(config.emb_dim)
        vectors[i] = centroids[assignments[post.post_id]] + config.noise * bump
    embeddings = from_raw([p.post_id for p in posts], vectors)

    communities = {u: c for c, users in pure.items() for u in users}
    communities.update({u: config.n_communities for u in bridge_home})
    narratives = {}
    first_poster = {}
    for p in sorted(posts, key=lambda p: (p.ts, p.post_id)):
        first_poster.setdefault(assignments[p.post_id], p.user_id)
    for j in range(config.n_narratives):
        origin = community_platform[narrative_community[j]]
        migrated = j in migrated_set
        narratives[j] = NarrativeTruth(
            community=narrative_community[j], origin=origin, migrated=migrated,
            receiving=_other(origin) if migrated else None,
            seeder=seeders[j] if migrated else first_poster[j],
            bridge_introduced=j in bridge_intro_ids)
    truth = GroundTruth(communities=communities, bridge_users=sorted(bridge_home),
                        narratives=narratives, assignments=assignments, config=config)
    _self_check(collection, embeddings, truth, receiving_post_keys)
    logger.info("planted corpus: %d users, %d posts, %d narratives (%d migrated)",
                config.n_users, len(posts), config.n_narratives, n_migrated)
    return collection, embeddings, truth


def _self_check(posts: PostCollection, embeddings: EmbeddingMatrix, truth: GroundTruth,
                receiving_indices: set[int]) -> None:
    """Verify every planted fact against the emitted corpus by direct scan."""
    config = truth.config

    def fail(msg: str) -> None:
        raise ValueError(f"generator self-check failed: {msg}")

    if len(posts.users) != config.n_users or len(posts) != config.n_posts:
        fail(f"count mismatch: {len(posts.users)} users / {len(posts)} posts")
    counts = posts.user_post_counts()
    if any(c != config.posts_per_user for c in counts.values()):
        fail("a user's post count differs from posts_per_user")
    if set(embeddings.ids) != {p.post_id for p in posts}:
        fail("embedding ids do not cover the post ids")

    receiving_pids = {f"p{i:06d}" for i in receiving_indices}
    by_narr: dict[int, list[PostRecord]] = {}
    for p in posts:
        by_narr.setdefault(truth.assignments[p.post_id], []).append(p)
    for j, nt in truth.narratives.items():
        members = sorted(by_narr.get(j, []), key=lambda p: p.ts)
        if not members:
            fail(f"narrative {j} emitted no posts")
        platforms = {p.platform for p in members}
        if nt.migrated:
            recv = [p for p in members if p.platform == nt.receiving]
            orig = [p for p in members if p.platform == nt.origin]
            if platforms != {nt.origin, nt.receiving}:
                fail(f"migrated narrative {j} not on exactly its two platforms")
            if recv[0].ts - orig[0].ts < MIGRATION_GAP_HOURS * _BIN:
                fail(f"narrative {j} origin lead below the migration gap")
            if len(recv) < MIN_RECEIVING_BINS:
                fail(f"narrative {j} has {len(recv)} receiving posts")
            if recv[0].user_id != nt.seeder:
                fail(f"narrative {j} first receiving post not by its seeder")
            if nt.bridge_introduced and nt.seeder not in set(truth.bridge_users):
                fail(f"narrative {j} marked bridge-introduced but seeded by "
                     f"{nt.seeder}")
        elif platforms != {nt.origin}:
            fail(f"single-platform narrative {j} leaked onto {platforms}")

    bridge = set(truth.bridge_users)
    user_platforms = posts.user_platforms()
    for u in sorted(bridge):
        mine = [p for p in posts if p.user_id == u]
        if len({p.platform for p in mine}) != 2:
            fail(f"bridge user {u} did not post on both platforms")
        if config.n_communities >= 2:
            narr_communities = {truth.narratives[truth.assignments[p.post_id]].community
                                for p in mine}
            if len(narr_communities) < 2:
                fail(f"bridge user {u} posted within a single community's narratives")
    platform_of_community = {c: PLATFORMS[c % 2] for c in range(config.n_communities)}
    for p in posts:
        u = p.user_id
        if u in bridge:
            continue
        c = truth.communities[u]
        if p.platform != platform_of_community[c]:
            fail(f"pure user {u} posted on a foreign platform")
        if (truth.narratives[truth.assignments[p.post_id]].community != c
                and p.post_id not in receiving_pids):
            fail(f"pure user {u} posted outside its pool on the origin side")

    members = {c: [u for u, cc in truth.communities.items() if cc == c]
               for c in set(truth.communities.values())}
    for c, users in members.items():
        h = platform_entropy(users, user_platforms)
        if c == config.n_communities:  # the bridge community
            if h < 0.9:
                fail(f"bridge community entropy {h:.3f} below 0.9")
        elif h > 0.1:
            fail(f"pure community {c} entropy {h:.3f} above 0.1")


# ---------------------------------------------------------------------------
# ground-truth file round trip

def write_ground_truth(truth: GroundTruth, path: str | Path) -> None:
    dump_json({
        "communities": truth.communities,
        "bridge_users": truth.bridge_users,
        "narratives": {str(j): asdict(nt) for j, nt in sorted(truth.narratives.items())},
        "assignments": truth.assignments,
        "config": asdict(truth.config),
    }, path)


def read_ground_truth(path: str | Path) -> GroundTruth:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    cfg = dict(data["config"])
    cfg["bridge_mix"] = tuple(cfg["bridge_mix"])
    return GroundTruth(
        communities={u: int(c) for u, c in data["communities"].items()},
        bridge_users=list(data["bridge_users"]),
        narratives={int(j): NarrativeTruth(**nt)
                    for j, nt in data["narratives"].items()},
        assignments={pid: int(j) for pid, j in data["assignments"].items()},
        config=SynthConfig(**cfg))
