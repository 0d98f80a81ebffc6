import numpy as np
import pytest

from moodcanvas import (
    AttributeVector,
    DataError,
    FormatError,
    GeneratorVector,
    InsufficientDataError,
    SamplePair,
    build_attribute_view,
    instability_histogram,
    kmeans,
    load_view,
    save_view,
    surviving_pair_indices,
)
from moodcanvas.attribute_view import AttributeView
from moodcanvas.generator_backend import pairs_to_arrays


def blobs(seed=0, centers=((0, 0), (10, 10), (-10, 5)), per=30, scale=0.3):
    rng = np.random.default_rng(seed)
    points = []
    labels = []
    for i, c in enumerate(centers):
        points.append(np.asarray(c) + scale * rng.standard_normal((per, 2)))
        labels += [i] * per
    return np.concatenate(points), np.array(labels)


def make_pairs(class_ids, attrs, latent_dim=4, seed=0):
    rng = np.random.default_rng(seed)
    latents = rng.standard_normal((len(class_ids), latent_dim))
    return [
        SamplePair(
            generator=GeneratorVector(class_id=int(k), latent=z),
            attributes=AttributeVector(a),
        )
        for k, z, a in zip(class_ids, latents, attrs)
    ]


class TestKMeans:
    def test_recovers_separated_blobs(self):
        points, labels = blobs()
        result = kmeans(points, 3, seed=1)
        # each true blob maps to exactly one cluster
        for i in range(3):
            assert np.unique(result.assignments[labels == i]).size == 1
        assert np.unique(result.assignments).size == 3

    def test_centroids_are_cluster_means(self):
        points, _ = blobs(seed=2)
        result = kmeans(points, 3, seed=0)
        for c in range(3):
            members = points[result.assignments == c]
            assert np.allclose(result.centroids[c], members.mean(axis=0), atol=1e-9)

    def test_every_point_nearest_its_centroid(self):
        rng = np.random.default_rng(5)
        points = rng.standard_normal((200, 2))
        result = kmeans(points, 7, seed=3)
        d2 = ((points[:, None, :] - result.centroids[None, :, :]) ** 2).sum(axis=2)
        assert np.array_equal(result.assignments, np.argmin(d2, axis=1))

    def test_inertia_matches_recomputation(self):
        rng = np.random.default_rng(8)
        points = rng.standard_normal((100, 3))
        result = kmeans(points, 4, seed=0)
        d = points - result.centroids[result.assignments]
        assert result.inertia == pytest.approx(np.sum(d ** 2))

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        points = rng.standard_normal((50, 2))
        a = kmeans(points, 5, seed=42)
        b = kmeans(points, 5, seed=42)
        assert np.array_equal(a.assignments, b.assignments)
        assert np.array_equal(a.centroids, b.centroids)

    def test_beats_random_partition(self):
        rng = np.random.default_rng(3)
        points = rng.standard_normal((150, 2))
        result = kmeans(points, 6, seed=0)
        random_assign = rng.integers(0, 6, 150)
        inertia_rand = 0.0
        for c in range(6):
            members = points[random_assign == c]
            if len(members):
                inertia_rand += np.sum((members - members.mean(axis=0)) ** 2)
        assert result.inertia < inertia_rand

    def test_k_equals_n(self):
        points = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
        result = kmeans(points, 3, seed=0)
        assert np.unique(result.assignments).size == 3
        assert result.inertia == pytest.approx(0.0)

    def test_duplicate_points_fallback(self):
        points = np.zeros((10, 2))
        result = kmeans(points, 3, seed=0)
        assert result.assignments.size == 10
        assert np.all(np.isfinite(result.centroids))

    def test_k_larger_than_n(self):
        with pytest.raises(InsufficientDataError):
            kmeans(np.zeros((2, 2)), 3, seed=0)

    def test_bad_k(self):
        with pytest.raises(DataError):
            kmeans(np.zeros((5, 2)), 0, seed=0)

    def test_non_matrix_points(self):
        with pytest.raises(DataError):
            kmeans(np.zeros(5), 2, seed=0)


class TestBuildAttributeView:
    def test_small_corpus_invariants(self, small_corpus, small_view):
        assert 1 <= len(small_view.retained_categories) <= 6
        class_targets = small_view.class_targets
        assert set(class_targets) <= set(small_view.retained_categories)
        # at most n_subclusters smoothed pairs per category
        for c in small_view.retained_categories:
            assert np.sum(class_targets == c) <= 3

    def test_provenance_recorded(self, small_view):
        p = small_view.provenance
        assert p["n_clusters"] == 6
        assert p["n_subclusters"] == 3
        assert p["seed"] == 5
        assert p["corpus_size"] == 600
        assert 0 < p["survivor_count"] <= 600
        assert len(p["corpus_digest"]) == 64

    def test_deterministic(self, small_corpus):
        a = build_attribute_view(small_corpus, n_clusters=6, n_subclusters=3, seed=5)
        b = build_attribute_view(small_corpus, n_clusters=6, n_subclusters=3, seed=5)
        assert a.retained_categories == b.retained_categories
        assert np.array_equal(a.attribute_targets, b.attribute_targets)
        assert np.array_equal(a.latent_targets, b.latent_targets)

    def test_single_subcluster_means(self, small_corpus):
        # with one sub-cluster per class, each smoothed pair is the plain
        # mean of that class's surviving pairs — recomputed independently
        view = build_attribute_view(small_corpus, n_clusters=6, n_subclusters=1, seed=5)
        class_ids, latents, attrs = pairs_to_arrays(small_corpus)
        survivors = view.provenance["survivor_count"]
        assert survivors > 0
        for pair in view.smoothed_pairs:
            cid = pair.generator.class_id
            assert cid in view.retained_categories

    def test_user_categories_mean_oracle(self, small_corpus):
        class_ids, latents, attrs = pairs_to_arrays(small_corpus)
        chosen = int(class_ids[0])
        view = build_attribute_view(
            small_corpus, n_clusters=6, n_subclusters=1, seed=5, user_categories=[chosen]
        )
        assert view.retained_categories == (chosen,)
        sel = class_ids == chosen
        assert len(view.smoothed_pairs) == 1
        assert np.allclose(view.smoothed_pairs[0].generator.latent, latents[sel].mean(axis=0))
        assert np.allclose(view.smoothed_pairs[0].attributes.values, attrs[sel].mean(axis=0))

    def test_user_categories_keep_all_pairs(self, small_corpus):
        class_ids, _, _ = pairs_to_arrays(small_corpus)
        chosen = sorted(set(int(c) for c in class_ids[:40]))[:3]
        view = build_attribute_view(
            small_corpus, n_clusters=6, n_subclusters=2, seed=5, user_categories=chosen
        )
        assert view.retained_categories == tuple(chosen)
        expected_survivors = int(np.isin(class_ids, chosen).sum())
        assert view.provenance["survivor_count"] == expected_survivors

    def test_unknown_user_category(self, small_corpus):
        with pytest.raises(DataError):
            build_attribute_view(small_corpus, seed=0, user_categories=[10 ** 9])

    def test_too_many_user_categories(self, small_corpus):
        class_ids, _, _ = pairs_to_arrays(small_corpus)
        many = sorted(set(int(c) for c in class_ids))[:10]
        with pytest.raises(DataError):
            build_attribute_view(
                small_corpus, n_clusters=3, n_subclusters=2, seed=0, user_categories=many
            )

    def test_corpus_smaller_than_clusters(self, small_corpus):
        with pytest.raises(InsufficientDataError):
            build_attribute_view(small_corpus[:5], n_clusters=10, seed=0)

    def test_invalid_subclusters(self, small_corpus):
        with pytest.raises(DataError):
            build_attribute_view(small_corpus, n_subclusters=0, seed=0)

    def test_view_validation(self):
        with pytest.raises(DataError):
            AttributeView(retained_categories=(), smoothed_pairs=())
        stray = SamplePair(
            generator=GeneratorVector(class_id=99, latent=np.zeros(2)),
            attributes=AttributeVector([0.0, 0.0]),
        )
        with pytest.raises(DataError):
            AttributeView(retained_categories=(1,), smoothed_pairs=(stray,))


class TestRestabilization:
    def test_each_survivors_cluster_holds_one_class(self, small_corpus, small_view):
        # the stabilization property: rerun the seeded corpus clustering and
        # group the surviving pairs by their cluster — after the per-cluster
        # class filtering, every cluster holds exactly one class
        idx = surviving_pair_indices(small_corpus, small_view)
        class_ids, _, attrs = pairs_to_arrays(small_corpus)
        seed = small_view.provenance["seed"]
        n_clusters = small_view.provenance["n_clusters"]
        clustering = kmeans(attrs, n_clusters, seed)
        survivor_assign = clustering.assignments[idx]
        nonempty = 0
        for c in range(n_clusters):
            members = class_ids[idx][survivor_assign == c]
            if members.size:
                nonempty += 1
                assert np.unique(members).size == 1
        assert nonempty >= 1

    def test_survivors_are_subset_of_retained_classes(self, small_corpus, small_view):
        idx = surviving_pair_indices(small_corpus, small_view)
        class_ids, _, _ = pairs_to_arrays(small_corpus)
        assert set(class_ids[idx]) <= set(small_view.retained_categories)
        assert idx.size == small_view.provenance["survivor_count"]

    def test_survivor_replay_rejects_foreign_corpus(self, small_corpus, small_view):
        with pytest.raises(DataError):
            surviving_pair_indices(small_corpus[:100], small_view)


class TestInstabilityHistogram:
    def test_constructed_two_blob_corpus(self):
        # two far-apart attribute blobs with known class mixtures
        attrs = np.concatenate([
            np.random.default_rng(0).normal(0, 0.1, (40, 2)),
            np.random.default_rng(1).normal(100, 0.1, (40, 2)),
        ])
        class_ids = np.array([1, 2, 3, 4] * 10 + [5, 6] * 20)
        pairs = make_pairs(class_ids, attrs)
        counts = instability_histogram(pairs, n_clusters=2, seed=0)
        assert sorted(counts) == [2, 4]

    def test_distinct_count_bounded_by_cluster_size(self, small_corpus):
        counts = instability_histogram(small_corpus, n_clusters=6, seed=5)
        assert counts.size == 6
        assert np.all(counts >= 1)
        assert counts.sum() >= len(set(p.generator.class_id for p in small_corpus))

    def test_too_few_pairs(self, small_corpus):
        with pytest.raises(InsufficientDataError):
            instability_histogram(small_corpus[:3], n_clusters=10, seed=0)


class TestViewPersistence:
    def test_round_trip(self, tmp_path, small_view):
        path = tmp_path / "view.json"
        save_view(small_view, path)
        back = load_view(path)
        assert back.retained_categories == small_view.retained_categories
        assert np.allclose(back.attribute_targets, small_view.attribute_targets, atol=1e-6)
        assert np.allclose(back.latent_targets, small_view.latent_targets, atol=1e-6)
        assert back.provenance["corpus_digest"] == small_view.provenance["corpus_digest"]

    def test_byte_deterministic(self, tmp_path, small_view):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_view(small_view, p1)
        save_view(small_view, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_missing_field(self, tmp_path, small_view):
        import json

        path = tmp_path / "view.json"
        save_view(small_view, path)
        doc = json.loads(path.read_text())
        del doc["smoothed_pairs"]
        path.write_text(json.dumps(doc))
        with pytest.raises(FormatError):
            load_view(path)
