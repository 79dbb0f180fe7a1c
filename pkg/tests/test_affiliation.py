import math

import numpy as np
import pytest

from cane.affiliation import (
    count_matrix,
    normalized_rows,
    read_affiliations,
    weight_matrix,
    write_affiliations,
)
from cane.clustering import ClusterModel, ClusterParams
from cane.corpus import PostCollection, PostRecord


def _collection(post_specs):
    """post_specs: list of (post_id, user, cluster). Returns (posts, model)."""
    posts = PostCollection([
        PostRecord(pid, user, "x", 100 + i, "t", "t")
        for i, (pid, user, _) in enumerate(post_specs)
    ])
    n_clusters = max(c for _, _, c in post_specs) + 1
    model = ClusterModel(
        centroids=np.eye(max(n_clusters, 2))[:n_clusters],
        assignments={pid: c for pid, _, c in post_specs},
        objective=0.0,
        params=ClusterParams(lam=0.3),
    )
    return posts, model


class TestCountMatrix:
    def test_hand_counts(self):
        posts, model = _collection([
            ("p1", "A", 1), ("p2", "A", 1), ("p3", "A", 2),
            ("p4", "B", 1),
        ])
        cm = count_matrix(posts, model)
        a = cm.users.index("A")
        assert cm.counts[a, 1] == 2 and cm.counts[a, 2] == 1
        assert cm.totals[a] == 3
        assert cm.df[1] == 2  # touched by A and B
        assert cm.df[0] == 0
        assert cm.n_users == 2

    def test_missing_assignment_fatal(self):
        posts, model = _collection([("p1", "A", 0), ("p2", "B", 0)])
        del model.assignments["p2"]
        with pytest.raises(ValueError, match="without a cluster assignment"):
            count_matrix(posts, model)

    def test_empty_collection_fatal(self):
        posts, model = _collection([("p1", "A", 0)])
        with pytest.raises(ValueError, match="empty"):
            count_matrix(PostCollection([]), model)


class TestWeightMatrix:
    def test_tfidf_hand_value(self):
        # |U|=4, n_{A,c}=2, N_A=4, df_c=2 -> 0.5*ln(2)
        posts, model = _collection([
            ("a1", "A", 0), ("a2", "A", 0), ("a3", "A", 1), ("a4", "A", 2),
            ("b1", "B", 0),
            ("c1", "C", 1), ("c2", "C", 2),
            ("d1", "D", 1), ("d2", "D", 2),
        ])
        cm = count_matrix(posts, model)
        assert cm.n_users == 4 and cm.df[0] == 2 and cm.totals[cm.users.index("A")] == 4
        aff = weight_matrix(cm, "tfidf")
        a = aff.users.index("A")
        assert aff.weights[a, 0] == pytest.approx(0.5 * math.log(2), abs=1e-12)
        assert aff.weights[a, 0] == pytest.approx(0.34657359, abs=1e-6)

    def test_ubiquitous_cluster_zeroed(self):
        posts, model = _collection([
            ("a1", "A", 0), ("b1", "B", 0),  # cluster 0 touched by everyone
            ("a2", "A", 1), ("b2", "B", 2),
        ])
        aff = weight_matrix(count_matrix(posts, model), "tfidf")
        col0 = aff.weights[:, 0].toarray().ravel()
        assert np.all(col0 == 0.0)
        # and the entries are dropped from the sparsity pattern entirely
        assert aff.weights[:, 0].nnz == 0

    def test_raw_equals_counts(self):
        posts, model = _collection([
            ("p1", "A", 0), ("p2", "A", 0), ("p3", "B", 1),
        ])
        cm = count_matrix(posts, model)
        aff = weight_matrix(cm, "raw")
        assert (aff.weights != cm.counts.astype(float)).nnz == 0

    def test_softmax_rows_sum_to_one(self):
        posts, model = _collection([
            ("p1", "A", 0), ("p2", "A", 0), ("p3", "A", 3),
            ("p4", "B", 1), ("p5", "B", 2),
            ("p6", "C", 2),
        ])
        aff = weight_matrix(count_matrix(posts, model), "softmax")
        sums = np.asarray(aff.weights.sum(axis=1)).ravel()
        assert np.all(np.abs(sums - 1.0) < 1e-9)
        # softmax over nonzero counts only: A has counts {0:2, 3:1}
        a = aff.users.index("A")
        expected = math.exp(2) / (math.exp(2) + math.exp(1))
        assert aff.weights[a, 0] == pytest.approx(expected, abs=1e-12)

    def test_unknown_scheme_fatal(self):
        posts, model = _collection([("p1", "A", 0)])
        with pytest.raises(ValueError, match="unknown scheme"):
            weight_matrix(count_matrix(posts, model), "bm25")

    def test_tfidf_invariant_under_post_duplication(self):
        specs = [
            ("p1", "A", 0), ("p2", "A", 1), ("p3", "B", 0), ("p4", "C", 2),
        ]
        posts, model = _collection(specs)
        doubled_specs = specs + [(f"{pid}x", u, c) for pid, u, c in specs]
        posts2, model2 = _collection(doubled_specs)
        w1 = weight_matrix(count_matrix(posts, model), "tfidf").weights.toarray()
        w2 = weight_matrix(count_matrix(posts2, model2), "tfidf").weights.toarray()
        assert np.allclose(w1, w2, atol=1e-12)

    def test_weight_strictly_decreasing_in_df(self):
        # fixed n_{A,0}=1, N_A=1, |U|=6; df_0 swept 1..6 by adding touchers
        weights = []
        for df in range(1, 7):
            specs = [("a1", "A", 0)]
            for j in range(1, df):
                specs.append((f"t{j}", f"T{j}", 0))
            for j in range(df, 6):
                specs.append((f"o{j}", f"T{j}", 1))
            posts, model = _collection(specs)
            cm = count_matrix(posts, model)
            assert cm.n_users == 6 and cm.df[0] == df
            aff = weight_matrix(cm, "tfidf")
            weights.append(aff.weights[aff.users.index("A"), 0])
        for a, b in zip(weights, weights[1:]):
            assert b < a

    def test_sparsity_pattern_matches_counts_minus_ubiquitous(self):
        posts, model = _collection([
            ("p1", "A", 0), ("p2", "A", 1), ("p3", "B", 0), ("p4", "B", 2),
        ])
        cm = count_matrix(posts, model)
        for scheme in ("tfidf", "raw"):
            aff = weight_matrix(cm, scheme)
            counts_pattern = set(zip(*cm.counts.nonzero()))
            if scheme == "tfidf":
                counts_pattern = {(u, c) for u, c in counts_pattern if cm.df[c] < cm.n_users}
            assert set(zip(*aff.weights.nonzero())) == counts_pattern


class TestAffiliationIO:
    def test_tsv_round_trip(self, tmp_path):
        posts, model = _collection([
            ("p1", "A", 0), ("p2", "A", 2), ("p3", "B", 1), ("p4", "C", 1),
        ])
        aff = weight_matrix(count_matrix(posts, model), "tfidf")
        path = tmp_path / "aff.tsv"
        write_affiliations(aff, path)
        back = read_affiliations(path, scheme="tfidf")
        assert back.users == aff.users
        assert np.allclose(back.weights.toarray(), aff.weights.toarray()[:, :back.n_clusters], atol=0)

    def test_normalized_rows_unit_norm(self):
        posts, model = _collection([
            ("p1", "A", 0), ("p2", "A", 1), ("p3", "B", 1),
        ])
        aff = weight_matrix(count_matrix(posts, model), "tfidf")
        norms = np.linalg.norm(normalized_rows(aff).toarray(), axis=1)
        for n in norms:
            assert n == pytest.approx(1.0, abs=1e-9) or n == 0.0


def test_scheme_f1_ordering_on_planted_corpus():
    """Downstream macro-F1 keeps the ordering tfidf >= raw >= softmax."""
    from cane.downstream import embed_graph, evaluate_classification
    from cane.graph_static import knn_exact
    from cane.synth import SynthConfig, gen_planted_corpus
    from cane.clustering import dpmeans_fit

    posts, emb, truth = gen_planted_corpus(SynthConfig(noise=0.3, seed=2))
    model = dpmeans_fit(emb, ClusterParams(lam=0.3, seed=0))
    counts = count_matrix(posts, model)
    f1 = {}
    for scheme in ("tfidf", "raw", "softmax"):
        graph = knn_exact(weight_matrix(counts, scheme=scheme), k=10)
        vecs = embed_graph(graph, walk_length=15, walks_per_node=4, d_emb=16,
                           epochs=2, seed=0, workers=1)
        f1[scheme] = evaluate_classification(vecs, truth.communities,
                                             folds=3, seed=0).macro_f1
    assert f1["tfidf"] >= f1["raw"] >= f1["softmax"], f1
