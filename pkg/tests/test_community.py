import itertools
import json
import math

import numpy as np
import pytest

from cane.community import (
    BridgeReport,
    CommunityPartition,
    adjusted_rand_index,
    louvain_partition,
    modularity,
    platform_entropy,
    select_bridge_users,
    write_communities,
)
from cane.graph_static import GraphMeta, UserGraph


def _graph(edge_spec, nodes=None, platforms=None):
    edges = {}
    seen = set()
    for u, v, w in edge_spec:
        a, b = sorted((u, v))
        edges[(a, b)] = w
        seen.update((a, b))
    nodes = sorted(seen | set(nodes or []))
    return UserGraph(nodes=nodes, edges=edges,
                     meta=GraphMeta(k=1, min_sim=0.0, method="exact"),
                     platforms=platforms or {})


def _clique(names, w=1.0):
    return [(u, v, w) for u, v in itertools.combinations(names, 2)]


def _all_partitions(items):
    """Every set partition, via restricted growth strings."""
    items = list(items)
    n = len(items)

    def rec(i, labels, k):
        if i == n:
            blocks = {}
            for item, lab in zip(items, labels):
                blocks.setdefault(lab, []).append(item)
            yield list(blocks.values())
            return
        for lab in range(k + 1):
            labels.append(lab)
            yield from rec(i + 1, labels, max(k, lab + 1))
            labels.pop()

    yield from rec(0, [], 0)


def _modularity_oracle(graph, assignment):
    """Direct double-loop over ordered node pairs: (1/2m) sum (A_ij - d_i d_j / 2m) delta."""
    nodes = graph.nodes
    a = {pair: w for pair, w in graph.edges.items()}
    deg = {u: 0.0 for u in nodes}
    for (u, v), w in graph.edges.items():
        deg[u] += w
        deg[v] += w
    two_m = sum(graph.edges.values()) * 2.0
    q = 0.0
    for u in nodes:
        for v in nodes:
            if assignment[u] != assignment[v]:
                continue
            if u == v:
                w = 0.0
            else:
                key = (u, v) if u < v else (v, u)
                w = a.get(key, 0.0)
            q += w - deg[u] * deg[v] / two_m
    return q / two_m


class TestModularity:
    def test_all_one_community_is_zero(self):
        g = _graph(_clique(["a", "b", "c", "d"]))
        assert modularity(g, {u: 0 for u in g.nodes}) == pytest.approx(0.0, abs=1e-12)

    def test_two_disconnected_cliques_split_is_half(self):
        g = _graph(_clique(["a1", "a2", "a3", "a4"]) + _clique(["b1", "b2", "b3", "b4"]))
        assignment = {u: 0 if u.startswith("a") else 1 for u in g.nodes}
        assert modularity(g, assignment) == pytest.approx(0.5, abs=1e-12)

    def test_matches_direct_formula_on_random_graphs(self):
        rng = np.random.default_rng(11)
        for trial in range(5):
            names = [f"n{i}" for i in range(10)]
            spec = [(u, v, float(rng.random()))
                    for u, v in itertools.combinations(names, 2) if rng.random() < 0.3]
            if not spec:
                continue
            g = _graph(spec, nodes=names)
            assignment = {u: int(rng.integers(0, 3)) for u in names}
            assert modularity(g, assignment) == pytest.approx(
                _modularity_oracle(g, assignment), abs=1e-12)

    def test_uncovered_node_fatal(self):
        g = _graph([("a", "b", 1.0)])
        with pytest.raises(ValueError, match="cover"):
            modularity(g, {"a": 0})


class TestLouvain:
    def test_two_cliques_bridged_matches_exhaustive_argmax(self):
        a = ["a1", "a2", "a3", "a4"]
        b = ["b1", "b2", "b3", "b4"]
        g = _graph(_clique(a) + _clique(b) + [("a1", "b1", 1.0)])
        best_q, best_blocks = -1.0, None
        for blocks in _all_partitions(g.nodes):
            assignment = {u: i for i, blk in enumerate(blocks) for u in blk}
            q = modularity(g, assignment)
            if q > best_q:
                best_q, best_blocks = q, blocks
        assert {frozenset(blk) for blk in best_blocks} == {frozenset(a), frozenset(b)}
        part = louvain_partition(g, seed=0)
        assert {frozenset(m) for m in part.members.values()} == {frozenset(a), frozenset(b)}
        assert part.q == pytest.approx(best_q, abs=1e-12)

    def test_single_clique_one_community(self):
        g = _graph(_clique(["a", "b", "c", "d", "e"]))
        part = louvain_partition(g, seed=1)
        assert part.n_communities == 1

    def test_no_community_spans_components(self):
        rng = np.random.default_rng(5)
        left = [f"l{i}" for i in range(8)]
        right = [f"r{i}" for i in range(8)]
        spec = [(u, v, float(rng.random()) * 0.9 + 0.1)
                for grp in (left, right)
                for u, v in itertools.combinations(grp, 2) if rng.random() < 0.5]
        g = _graph(spec, nodes=left + right)
        part = louvain_partition(g, seed=2)
        for mem in part.members.values():
            sides = {u[0] for u in mem}
            assert len(sides) == 1

    def test_never_below_singleton_q(self):
        rng = np.random.default_rng(17)
        names = [f"n{i}" for i in range(12)]
        spec = [(u, v, float(rng.random()))
                for u, v in itertools.combinations(names, 2) if rng.random() < 0.25]
        g = _graph(spec, nodes=names)
        singleton_q = modularity(g, {u: i for i, u in enumerate(g.nodes)})
        assert louvain_partition(g, seed=3).q >= singleton_q - 1e-12

    def test_stored_q_matches_recomputation(self):
        g = _graph(_clique(["a", "b", "c"]) + _clique(["d", "e", "f"]) + [("c", "d", 0.2)])
        part = louvain_partition(g, seed=4)
        assert part.q == pytest.approx(modularity(g, part), abs=1e-9)

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(23)
        names = [f"n{i}" for i in range(20)]
        spec = [(u, v, float(rng.random()))
                for u, v in itertools.combinations(names, 2) if rng.random() < 0.2]
        g = _graph(spec, nodes=names)
        p1 = louvain_partition(g, seed=9)
        p2 = louvain_partition(g, seed=9)
        assert p1.assignment == p2.assignment

    def test_edgeless_graph_singletons_with_warning(self, caplog):
        g = _graph([], nodes=["a", "b", "c"])
        with caplog.at_level("WARNING", logger="cane.community"):
            part = louvain_partition(g)
        assert "edgeless" in caplog.text
        assert part.n_communities == 3
        assert part.q == 0.0

    def test_dense_ids_partition_nodes_exactly(self):
        g = _graph(_clique(["a", "b"]) + _clique(["c", "d"]))
        part = louvain_partition(g, seed=0)
        assert sorted(part.members) == list(range(part.n_communities))
        covered = sorted(u for mem in part.members.values() for u in mem)
        assert covered == g.nodes

    def test_bad_resolution(self):
        g = _graph([("a", "b", 1.0)])
        with pytest.raises(ValueError, match="resolution"):
            louvain_partition(g, resolution=0.0)


class TestPlatformEntropy:
    def test_single_platform_zero(self):
        plats = {"a": "x", "b": "x", "c": "x"}
        assert platform_entropy(["a", "b", "c"], plats) == 0.0

    def test_even_split_one(self):
        plats = {"a": "x", "b": "y"}
        assert platform_entropy(["a", "b"], plats) == pytest.approx(1.0)

    def test_20_80_split(self):
        plats = {f"u{i}": ("x" if i < 2 else "y") for i in range(10)}
        h = platform_entropy(list(plats), plats)
        closed_form = -(0.2 * math.log2(0.2) + 0.8 * math.log2(0.8))
        assert h == pytest.approx(closed_form, abs=1e-12)
        assert h == pytest.approx(0.7219, abs=1e-4)

    def test_normalization_uses_corpus_platform_count(self):
        # corpus knows 3 platforms; a 50/50 community over 2 of them
        plats = {"a": "x", "b": "y", "c": "z", "d": "x", "e": "y"}
        h = platform_entropy(["a", "b"], plats)
        assert h == pytest.approx(1.0 / math.log2(3), abs=1e-12)

    def test_permutation_and_label_invariance(self):
        plats = {"a": "x", "b": "y", "c": "x", "d": "y", "e": "x"}
        members = ["a", "b", "c", "d", "e"]
        h1 = platform_entropy(members, plats)
        h2 = platform_entropy(members[::-1], plats)
        renamed = {u: {"x": "q", "y": "r"}[p] for u, p in plats.items()}
        h3 = platform_entropy(members, renamed)
        assert h1 == pytest.approx(h2) == pytest.approx(h3)

    def test_missing_platform_fatal(self):
        with pytest.raises(ValueError, match="without a platform"):
            platform_entropy(["a", "b"], {"a": "x"})

    def test_empty_members_fatal(self):
        with pytest.raises(ValueError, match="empty"):
            platform_entropy([], {"a": "x"})


def _hand_partition():
    """Three communities: 0 mixed 6/6, 1 pure (12), 2 pure but small (4)."""
    members = {
        0: [f"m{i:02d}" for i in range(12)],
        1: [f"p{i:02d}" for i in range(12)],
        2: [f"s{i}" for i in range(4)],
    }
    assignment = {u: cid for cid, mem in members.items() for u in mem}
    platforms = {}
    for i, u in enumerate(members[0]):
        platforms[u] = "x" if i < 6 else "y"
    for u in members[1]:
        platforms[u] = "x"
    for u in members[2]:
        platforms[u] = "y"
    part = CommunityPartition(assignment=assignment, members=members,
                              platform_counts={}, q=0.3, resolution=1.0, seed=0)
    return part, platforms


class TestSelectBridgeUsers:
    def test_planted_mixed_community_flagged(self):
        part, platforms = _hand_partition()
        report = select_bridge_users(part, platforms, entropy_min=0.6, min_size=10)
        assert report.bridge_ids == [0]
        assert report.bridge_users == part.members[0]
        assert report.entropy[0] == pytest.approx(1.0)
        assert report.entropy[1] == pytest.approx(0.0)
        assert report.user_share == pytest.approx(12 / 28)

    def test_min_size_excludes_small_mixed(self):
        part, platforms = _hand_partition()
        for u in part.members[2][:2]:
            platforms[u] = "x"  # make community 2 mixed but small
        report = select_bridge_users(part, platforms, entropy_min=0.6, min_size=10)
        assert report.bridge_ids == [0]

    def test_no_community_qualifies(self):
        part, platforms = _hand_partition()
        report = select_bridge_users(part, platforms, entropy_min=0.99999, min_size=100)
        assert report.bridge_ids == []
        assert report.bridge_users == []
        assert report.user_share == 0.0

    def test_vacuous_thresholds_flag_everything(self):
        part, platforms = _hand_partition()
        report = select_bridge_users(part, platforms, entropy_min=0.0, min_size=1)
        assert report.bridge_ids == [0, 1, 2]
        assert report.bridge_users == sorted(part.assignment)

    def test_post_share(self):
        part, platforms = _hand_partition()
        post_counts = {u: 2 for u in part.assignment}
        for u in part.members[0]:
            post_counts[u] = 10
        report = select_bridge_users(part, platforms, entropy_min=0.6,
                                     min_size=10, post_counts=post_counts)
        assert report.post_share == pytest.approx(120 / (120 + 32))

    def test_bad_entropy_min(self):
        part, platforms = _hand_partition()
        with pytest.raises(ValueError, match="entropy_min"):
            select_bridge_users(part, platforms, entropy_min=1.5)


class TestAdjustedRandIndex:
    def test_identical_is_one(self):
        labels = {f"u{i}": i % 3 for i in range(12)}
        assert adjusted_rand_index(labels, dict(labels)) == pytest.approx(1.0)

    def test_label_renaming_is_one(self):
        a = {f"u{i}": i % 3 for i in range(12)}
        b = {u: (lab + 7) * 13 for u, lab in a.items()}
        assert adjusted_rand_index(a, b) == pytest.approx(1.0)

    def test_matches_sklearn_on_random_labelings(self):
        from sklearn.metrics import adjusted_rand_score
        rng = np.random.default_rng(31)
        keys = [f"u{i}" for i in range(40)]
        for _ in range(10):
            a = {u: int(rng.integers(0, 4)) for u in keys}
            b = {u: int(rng.integers(0, 4)) for u in keys}
            expected = adjusted_rand_score([a[u] for u in keys], [b[u] for u in keys])
            assert adjusted_rand_index(a, b) == pytest.approx(expected, abs=1e-12)

    def test_trivial_partitions(self):
        keys = [f"u{i}" for i in range(6)]
        all_one = {u: 0 for u in keys}
        singletons = {u: i for i, u in enumerate(keys)}
        assert adjusted_rand_index(all_one, {u: 1 for u in keys}) == 1.0
        assert adjusted_rand_index(all_one, singletons) == 0.0

    def test_key_mismatch_fatal(self):
        with pytest.raises(ValueError, match="key sets"):
            adjusted_rand_index({"a": 0}, {"b": 0})


class TestCommunitiesFile:
    def test_shape_and_round_trip(self, tmp_path):
        g = _graph(
            _clique(["a1", "a2", "a3"]) + _clique(["b1", "b2", "b3"]) + [("a1", "b1", 0.1)],
            platforms={"a1": "x", "a2": "x", "a3": "y", "b1": "y", "b2": "y", "b3": "y"},
        )
        part = louvain_partition(g, seed=0)
        report = select_bridge_users(part, g.platforms, entropy_min=0.5, min_size=2)
        path = tmp_path / "communities.json"
        write_communities(part, report, path)
        data = json.loads(path.read_text())
        assert set(data) == {"communities", "modularity", "bridge_ids"}
        assert data["modularity"] == pytest.approx(part.q)
        assert [c["id"] for c in data["communities"]] == sorted(part.members)
        for c in data["communities"]:
            assert set(c) == {"id", "users", "platform_counts", "entropy", "size"}
            assert c["size"] == len(c["users"])
