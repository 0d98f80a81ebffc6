"""Stable attribute views: prune the generator space to one class per
attribute cluster, then smooth each retained class into sub-cluster
centroid pairs.  Also provides the instability diagnostic (distinct-class
counts per attribute cluster) that motivates the pruning.

Construction (auto mode):
  1. k-means the corpus attribute vectors into ``n_clusters`` clusters;
  2. in each cluster, draw one class with probability proportional to its
     share of the cluster, and keep only that class's pairs from that
     cluster (classes drawn in several clusters are merged into one set);
  3. for every retained class, k-means its surviving attribute vectors
     into at most ``n_subclusters`` sub-clusters and emit one smoothed
     pair per sub-cluster: (mean attribute vector, (class id, mean latent)).

With an explicit ``user_categories`` list the clustering/draw steps are
skipped and exactly those classes are retained (all their pairs survive).

Seed scheme: ``seed`` drives the main clustering, ``seed + 1`` the class
draws, ``seed + 10 + class_id`` each per-class sub-clustering.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core_types import AttributeVector, GeneratorVector, SamplePair
from .errors import (
    DataError,
    FormatError,
    InsufficientDataError,
)
from .generator_backend import _f32_list, corpus_digest, pairs_to_arrays
from .estimators import read_json_artifact

VIEW_FORMAT_VERSION = 1


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    iterations: int
    inertia: float

    def __post_init__(self):
        object.__setattr__(self, "centroids", np.asarray(self.centroids, dtype=np.float64))
        object.__setattr__(self, "assignments", np.asarray(self.assignments, dtype=np.int64))


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, shape (n_points, n_centroids)."""
    p2 = np.sum(points ** 2, axis=1, keepdims=True)
    c2 = np.sum(centroids ** 2, axis=1)
    d2 = p2 + c2 - 2.0 * points @ centroids.T
    return np.maximum(d2, 0.0)


def _seed_centroids(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centroids by squared distance."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    chosen = np.zeros(n, dtype=bool)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    chosen[first] = True
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # all remaining points coincide with chosen centroids
            idx = int(np.argmin(chosen))
        centroids[i] = points[idx]
        chosen[idx] = True
        d2 = np.minimum(d2, np.sum((points - centroids[i]) ** 2, axis=1))
    return centroids


def kmeans(points: np.ndarray, k: int, seed: int, max_iter: int = 100) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Deterministic for a fixed seed.  Ties in the nearest-centroid choice go
    to the lowest centroid index; a cluster left empty steals the point
    currently farthest from its assigned centroid.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise DataError(f"points must be a 2-D matrix, got shape {points.shape}")
    n = points.shape[0]
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if n < k:
        raise InsufficientDataError(f"need at least k={k} points, got {n}")
    rng = np.random.default_rng(seed)
    centroids = _seed_centroids(points, k, rng)
    assignments = None
    iterations = 0
    converged = False
    for _ in range(max_iter):
        iterations += 1
        d2 = _squared_distances(points, centroids)
        new_assign = np.argmin(d2, axis=1)
        for c in range(k):
            if not np.any(new_assign == c):
                farthest = int(np.argmax(d2[np.arange(n), new_assign]))
                new_assign[farthest] = c
                centroids[c] = points[farthest]
                d2[:, c] = np.sum((points - centroids[c]) ** 2, axis=1)
        if assignments is not None and np.array_equal(new_assign, assignments):
            converged = True
            break
        assignments = new_assign
        for c in range(k):
            members = assignments == c
            if members.any():
                centroids[c] = points[members].mean(axis=0)
    if not converged:
        # max_iter hit: restore the nearest-centroid invariant for the
        # final centroids with one plain assignment pass
        d2 = _squared_distances(points, centroids)
        assignments = np.argmin(d2, axis=1)
    d2 = _squared_distances(points, centroids)
    inertia = float(d2[np.arange(n), assignments].sum())
    return KMeansResult(
        centroids=centroids, assignments=assignments, iterations=iterations, inertia=inertia
    )


@dataclass(frozen=True)
class AttributeView:
    """The pruned, smoothed generator-space map produced by the pipeline above."""

    retained_categories: tuple
    smoothed_pairs: tuple
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        retained = tuple(int(c) for c in self.retained_categories)
        object.__setattr__(self, "retained_categories", retained)
        object.__setattr__(self, "smoothed_pairs", tuple(self.smoothed_pairs))
        if not retained:
            raise DataError("attribute view retains no categories")
        retained_set = set(retained)
        counts = {}
        for p in self.smoothed_pairs:
            cid = p.generator.class_id
            if cid not in retained_set:
                raise DataError(f"smoothed pair class {cid} not in retained categories")
            counts[cid] = counts.get(cid, 0) + 1
        n_sub = self.provenance.get("n_subclusters")
        if n_sub is not None and counts and max(counts.values()) > n_sub:
            raise DataError("a category has more smoothed pairs than n_subclusters")
        n_clusters = self.provenance.get("n_clusters")
        if (
            n_clusters is not None
            and not self.provenance.get("user_categories")
            and len(retained) > n_clusters
        ):
            raise DataError("more retained categories than clusters")

    @property
    def attribute_targets(self) -> np.ndarray:
        return np.stack([p.attributes.values for p in self.smoothed_pairs])

    @property
    def latent_targets(self) -> np.ndarray:
        return np.stack([p.generator.latent for p in self.smoothed_pairs])

    @property
    def class_targets(self) -> np.ndarray:
        return np.array([p.generator.class_id for p in self.smoothed_pairs], dtype=np.int64)


def _select_classes_per_cluster(class_ids, assignments, n_clusters, rng):
    """Draw one class per cluster (probability = share of the cluster)."""
    keep = np.zeros(class_ids.size, dtype=bool)
    retained = set()
    for c in range(n_clusters):
        members = np.where(assignments == c)[0]
        if members.size == 0:
            warnings.warn(f"attribute cluster {c} is empty; skipped", stacklevel=3)
            continue
        classes, counts = np.unique(class_ids[members], return_counts=True)
        pick = int(rng.choice(classes, p=counts / counts.sum()))
        retained.add(pick)
        keep[members[class_ids[members] == pick]] = True
    return retained, keep


def build_attribute_view(
    pairs,
    n_clusters: int = 20,
    n_subclusters: int = 16,
    seed: int = 0,
    user_categories=None,
) -> AttributeView:
    """Construct a stable attribute view from a sampled pair corpus."""
    if n_subclusters < 1:
        raise DataError(f"n_subclusters must be >= 1, got {n_subclusters}")
    class_ids, latents, attrs = pairs_to_arrays(pairs)

    if user_categories is None:
        if class_ids.size < n_clusters:
            raise InsufficientDataError(
                f"need at least n_clusters={n_clusters} pairs, got {class_ids.size}"
            )
        clustering = kmeans(attrs, n_clusters, seed)
        draw_rng = np.random.default_rng(seed + 1)
        retained, keep = _select_classes_per_cluster(
            class_ids, clustering.assignments, n_clusters, draw_rng
        )
    else:
        retained = set()
        present = set(int(c) for c in np.unique(class_ids))
        for c in user_categories:
            c = int(c)
            if c not in present:
                raise DataError(f"user category {c} does not appear in the pair corpus")
            retained.add(c)
        if not retained:
            raise DataError("user_categories must name at least one class")
        if len(retained) > n_clusters:
            raise DataError(
                f"user_categories lists {len(retained)} classes, more than "
                f"n_clusters={n_clusters}"
            )
        keep = np.isin(class_ids, sorted(retained))

    survivors = np.where(keep)[0]
    smoothed = []
    for category in sorted(retained):
        idx = survivors[class_ids[survivors] == category]
        if idx.size == 0:
            warnings.warn(f"retained category {category} has no surviving pairs; skipped",
                          stacklevel=2)
            continue
        k_sub = min(n_subclusters, idx.size)
        sub = kmeans(attrs[idx], k_sub, seed + 10 + category)
        for s in range(k_sub):
            members = idx[sub.assignments == s]
            if members.size == 0:
                continue
            smoothed.append(
                SamplePair(
                    generator=GeneratorVector(
                        class_id=category, latent=latents[members].mean(axis=0)
                    ),
                    attributes=AttributeVector(attrs[members].mean(axis=0)),
                )
            )

    provenance = {
        "n_clusters": int(n_clusters),
        "n_subclusters": int(n_subclusters),
        "seed": int(seed),
        "corpus_digest": corpus_digest(pairs),
        "corpus_size": int(class_ids.size),
        "survivor_count": int(survivors.size),
        "user_categories": sorted(int(c) for c in user_categories) if user_categories else None,
    }
    return AttributeView(
        retained_categories=tuple(sorted(retained)),
        smoothed_pairs=tuple(smoothed),
        provenance=provenance,
    )


def surviving_pair_indices(pairs, view: AttributeView) -> np.ndarray:
    """Indices of corpus pairs that survive the view's filtering.

    For a view built from explicit user categories every pair of a retained
    class survives.  In auto mode the seeded construction is replayed:
    a pair survives only if the class draw in its own attribute cluster
    picked that pair's class.  Each survivor's cluster therefore contains
    exactly one retained class.
    """
    class_ids, _latents, attrs = pairs_to_arrays(pairs)
    digest = view.provenance.get("corpus_digest")
    if digest is not None and digest != corpus_digest(pairs):
        raise DataError("pair corpus does not match the view's source corpus")
    if view.provenance.get("user_categories"):
        return np.where(np.isin(class_ids, view.retained_categories))[0]
    n_clusters = view.provenance.get("n_clusters")
    seed = view.provenance.get("seed")
    if n_clusters is None or seed is None:
        raise DataError("view provenance lacks n_clusters/seed; cannot replay filtering")
    clustering = kmeans(attrs, int(n_clusters), int(seed))
    draw_rng = np.random.default_rng(int(seed) + 1)
    _retained, keep = _select_classes_per_cluster(
        class_ids, clustering.assignments, int(n_clusters), draw_rng
    )
    return np.where(keep)[0]


def instability_histogram(pairs, n_clusters: int, seed: int) -> np.ndarray:
    """Distinct-class count per attribute cluster on the raw corpus."""
    class_ids, _latents, attrs = pairs_to_arrays(pairs)
    if class_ids.size < n_clusters:
        raise InsufficientDataError(
            f"need at least n_clusters={n_clusters} pairs, got {class_ids.size}"
        )
    clustering = kmeans(attrs, n_clusters, seed)
    counts = np.zeros(n_clusters, dtype=np.int64)
    for c in range(n_clusters):
        members = clustering.assignments == c
        counts[c] = np.unique(class_ids[members]).size if members.any() else 0
    return counts


# ---------------------------------------------------------------------------
# Persistence


def save_view(view: AttributeView, path) -> None:
    doc = {
        "version": VIEW_FORMAT_VERSION,
        "kind": "attribute_view",
        "provenance": view.provenance,
        "retained_categories": list(view.retained_categories),
        "smoothed_pairs": [
            {
                "class_id": p.generator.class_id,
                "latent": _f32_list(p.generator.latent),
                "attributes": _f32_list(p.attributes.values),
            }
            for p in view.smoothed_pairs
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_view(path) -> AttributeView:
    doc = read_json_artifact(path, "attribute_view")
    try:
        smoothed = tuple(
            SamplePair(
                generator=GeneratorVector(
                    class_id=int(e["class_id"]),
                    latent=np.asarray(e["latent"], dtype=np.float64),
                ),
                attributes=AttributeVector(np.asarray(e["attributes"], dtype=np.float64)),
            )
            for e in doc["smoothed_pairs"]
        )
        return AttributeView(
            retained_categories=tuple(int(c) for c in doc["retained_categories"]),
            smoothed_pairs=smoothed,
            provenance=doc.get("provenance", {}),
        )
    except KeyError as exc:
        raise FormatError(f"attribute view file {path} is missing field {exc}") from exc
