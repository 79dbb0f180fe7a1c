"""Community structure over the user graph.

Louvain partitions (seeded, weighted), Newman modularity, per-community
platform entropy, and the bridge-community selection that flags large
platform-mixed communities. Entropy is Shannon entropy in bits normalized by
log2 of the number of platforms in the whole corpus, so a perfectly balanced
mix scores 1.0 regardless of how many platforms exist.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import networkx as nx

from ._util import dump_json
from .graph_static import UserGraph

logger = logging.getLogger(__name__)

DEFAULT_ENTROPY_MIN = 0.6
DEFAULT_MIN_SIZE = 10


@dataclass
class CommunityPartition:
    assignment: dict[str, int]  # user -> community id, ids dense from 0
    members: dict[int, list[str]]  # sorted member lists
    platform_counts: dict[int, dict[str, int]]
    q: float
    resolution: float
    seed: int

    @property
    def n_communities(self) -> int:
        return len(self.members)

    def sizes(self) -> dict[int, int]:
        return {c: len(m) for c, m in self.members.items()}


@dataclass
class BridgeReport:
    bridge_ids: list[int]
    bridge_users: list[str]  # sorted union of bridge-community members
    entropy: dict[int, float]  # per community, all communities
    entropy_min: float
    min_size: int
    user_share: float  # |bridge users| / |all users|
    post_share: float | None  # bridge posts / all posts, when counts given


def _graph_to_nx(graph: UserGraph) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(graph.nodes)
    g.add_weighted_edges_from((u, v, w) for (u, v), w in graph.edges.items())
    return g


def _partition_from_sets(graph: UserGraph, comm_sets, resolution: float,
                         seed: int) -> CommunityPartition:
    # deterministic dense ids: communities ordered by their smallest member
    ordered = sorted((sorted(c) for c in comm_sets), key=lambda m: m[0])
    assignment = {u: cid for cid, mem in enumerate(ordered) for u in mem}
    members = {cid: mem for cid, mem in enumerate(ordered)}
    plat = graph.platforms
    platform_counts = {
        cid: dict(Counter(plat[u] for u in mem if u in plat))
        for cid, mem in members.items()
    }
    part = CommunityPartition(assignment=assignment, members=members,
                              platform_counts=platform_counts, q=0.0,
                              resolution=resolution, seed=seed)
    part.q = modularity(graph, part)
    return part


def louvain_partition(graph: UserGraph, resolution: float = 1.0,
                      seed: int = 0) -> CommunityPartition:
    """Seeded weighted Louvain. An edgeless graph degrades to singletons."""
    if resolution <= 0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    if graph.n_edges == 0:
        logger.warning("edgeless graph: returning the singleton partition (Q = 0)")
        return _partition_from_sets(graph, [{u} for u in graph.nodes],
                                    resolution, seed)
    comm_sets = nx.community.louvain_communities(
        _graph_to_nx(graph), weight="weight", resolution=resolution, seed=seed)
    return _partition_from_sets(graph, comm_sets, resolution, seed)


def modularity(graph: UserGraph, partition: CommunityPartition | Mapping[str, int]) -> float:
    """Weighted Newman modularity Q = sum_c (in_c / 2m - (tot_c / 2m)^2)."""
    assignment = partition.assignment if isinstance(partition, CommunityPartition) else partition
    missing = [u for u in graph.nodes if u not in assignment]
    if missing:
        raise ValueError(f"partition does not cover {len(missing)} node(s), first: {missing[:5]}")
    two_m = 2.0 * sum(graph.edges.values())
    if two_m == 0.0:
        return 0.0
    internal: dict[int, float] = {}  # sum over ordered intra-pairs = 2 * edge weight
    total: dict[int, float] = {}  # sum of weighted degrees
    for (u, v), w in graph.edges.items():
        cu, cv = assignment[u], assignment[v]
        if cu == cv:
            internal[cu] = internal.get(cu, 0.0) + 2.0 * w
        total[cu] = total.get(cu, 0.0) + w
        total[cv] = total.get(cv, 0.0) + w
    return sum(
        internal.get(c, 0.0) / two_m - (tot / two_m) ** 2
        for c, tot in total.items()
    )


def platform_entropy(members: list[str], platforms: Mapping[str, str]) -> float:
    """Normalized Shannon entropy (bits) of the members' platform mix."""
    if not members:
        raise ValueError("platform_entropy of an empty member list")
    missing = [u for u in members if u not in platforms]
    if missing:
        raise ValueError(f"member(s) without a platform, first: {missing[:5]}")
    n_platforms = len(set(platforms.values()))
    if n_platforms < 2:
        return 0.0
    counts = Counter(platforms[u] for u in members)
    n = len(members)
    h = -sum((c / n) * math.log2(c / n) for c in counts.values())
    return h / math.log2(n_platforms)


def select_bridge_users(partition: CommunityPartition, platforms: Mapping[str, str],
                        entropy_min: float = DEFAULT_ENTROPY_MIN,
                        min_size: int = DEFAULT_MIN_SIZE,
                        post_counts: Mapping[str, int] | None = None) -> BridgeReport:
    """Flag large high-entropy communities and collect their members.

    ``post_counts`` (user -> #posts) enables the report's post-share figure;
    user share is always computed over the partition's node universe.
    """
    if not 0.0 <= entropy_min <= 1.0:
        raise ValueError(f"entropy_min must be in [0, 1], got {entropy_min}")
    entropy = {cid: platform_entropy(mem, platforms)
               for cid, mem in partition.members.items()}
    bridge_ids = sorted(
        cid for cid, mem in partition.members.items()
        if len(mem) >= min_size and entropy[cid] >= entropy_min
    )
    bridge_users = sorted({u for cid in bridge_ids for u in partition.members[cid]})
    n_users = len(partition.assignment)
    user_share = len(bridge_users) / n_users if n_users else 0.0
    post_share = None
    if post_counts is not None:
        total_posts = sum(post_counts.get(u, 0) for u in partition.assignment)
        bridge_posts = sum(post_counts.get(u, 0) for u in bridge_users)
        post_share = bridge_posts / total_posts if total_posts else 0.0
    return BridgeReport(bridge_ids=bridge_ids, bridge_users=bridge_users,
                        entropy=entropy, entropy_min=entropy_min,
                        min_size=min_size, user_share=user_share,
                        post_share=post_share)


def adjusted_rand_index(labels_a: Mapping[str, int], labels_b: Mapping[str, int]) -> float:
    """ARI between two labelings of the same key set (chance-corrected overlap)."""
    if labels_a.keys() != labels_b.keys():
        raise ValueError("labelings cover different key sets")
    keys = list(labels_a)
    n = len(keys)
    if n == 0:
        raise ValueError("empty labelings")
    contingency: dict[tuple[int, int], int] = {}
    row: dict[int, int] = {}
    col: dict[int, int] = {}
    for u in keys:
        a, b = labels_a[u], labels_b[u]
        contingency[(a, b)] = contingency.get((a, b), 0) + 1
        row[a] = row.get(a, 0) + 1
        col[b] = col.get(b, 0) + 1

    def c2(x: int) -> float:
        return x * (x - 1) / 2.0

    sum_ij = sum(c2(v) for v in contingency.values())
    sum_a = sum(c2(v) for v in row.values())
    sum_b = sum(c2(v) for v in col.values())
    expected = sum_a * sum_b / c2(n) if n > 1 else 0.0
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:  # both partitions trivial (all-one-cluster or all-singletons)
        return 1.0
    return (sum_ij - expected) / (max_index - expected)


def write_communities(partition: CommunityPartition, report: BridgeReport,
                      path: str | Path) -> None:
    dump_json({
        "communities": [
            {
                "id": cid,
                "users": partition.members[cid],
                "platform_counts": dict(sorted(partition.platform_counts[cid].items())),
                "entropy": report.entropy[cid],
                "size": len(partition.members[cid]),
            }
            for cid in sorted(partition.members)
        ],
        "modularity": partition.q,
        "bridge_ids": report.bridge_ids,
    }, path)


def read_communities(path: str | Path) -> dict:
    import json

    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
