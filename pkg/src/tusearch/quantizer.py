"""K-means codebook over the aggregate vector pool, plus the two flat
inverted indexes the engine is built on: centroid -> member vectors, and
set -> per-centroid occupancy counts.

Training is plain Lloyd iteration with seeded k-means++ initialization.
Empty clusters are re-seeded with the point currently farthest from its
assigned centroid.  Everything is deterministic given (inputs, seed); ties
in nearest-centroid assignment go to the lowest centroid id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, UsageError
from .repository import VectorSetRepository

# Train on a subsample when the pool is much larger than the codebook;
# assignment still covers every vector.
TRAIN_POINTS_PER_CENTROID = 256


@dataclass
class Codebook:
    """Centroid matrix produced by k-means.  Centroids are not re-normalized,
    so centroids of unit vectors have norm <= 1 and centroid similarities
    slightly underestimate member similarities."""

    centroids: np.ndarray  # (n_c, d) float32
    train_seed: int
    inertia_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.centroids = np.ascontiguousarray(self.centroids, dtype=np.float32)
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise DataError("codebook needs at least one centroid")
        if not np.isfinite(self.centroids).all():
            raise DataError("codebook contains non-finite centroids")

    @property
    def n_c(self) -> int:
        return self.centroids.shape[0]

    @property
    def dimension(self) -> int:
        return self.centroids.shape[1]

    def centroids64(self) -> np.ndarray:
        return self.centroids.astype(np.float64)


@dataclass
class ClusterAssignment:
    """Owner centroid of every vector, aligned with the repository's global
    row order (set offsets give the per-set slices)."""

    flat: np.ndarray  # (total_vectors,) int32
    offsets: np.ndarray  # (n_sets + 1,) int64

    def owner(self, set_id: int, index: int) -> int:
        return int(self.flat[self.offsets[set_id] + index])

    def set_owners(self, set_id: int) -> np.ndarray:
        return self.flat[self.offsets[set_id] : self.offsets[set_id + 1]]

    @property
    def total(self) -> int:
        return len(self.flat)


@dataclass
class VectorInvertedIndex:
    """Centroid -> member vector handles, each list sorted by (set_id, index).

    ``lists[c]`` is an (n, 2) int32 array of (set_id, index) pairs.  The lists
    partition the handle universe.
    """

    lists: dict[int, np.ndarray]
    n_c: int

    def size_of(self, centroid_id: int) -> int:
        arr = self.lists.get(centroid_id)
        return 0 if arr is None else len(arr)


@dataclass
class SetWeightIndex:
    """Set -> {centroid id: member count}.  Zero counts are omitted, so every
    stored count is >= 1 and each set's counts sum to its size."""

    weights: dict[int, dict[int, int]]

    def count(self, set_id: int, centroid_id: int) -> int:
        return self.weights.get(set_id, {}).get(centroid_id, 0)


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # (n, k) squared Euclidean distances, float64 throughout.
    p2 = np.einsum("ij,ij->i", points, points)
    c2 = np.einsum("ij,ij->i", centroids, centroids)
    d2 = p2[:, None] - 2.0 * points @ centroids.T + c2[None, :]
    np.maximum(d2, 0.0, out=d2)
    return d2


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = _sq_dists(points, centroids[0:1])[:, 0]
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = points[idx]
        d2 = np.minimum(d2, _sq_dists(points, centroids[j : j + 1])[:, 0])
    return centroids


def train_kmeans(points: np.ndarray, k: int, max_iters: int = 25, seed: int = 0) -> Codebook:
    """Lloyd's algorithm with k-means++ initialization.

    Stops at ``max_iters`` or when no assignment changes.  Inertia is checked
    to be non-increasing across iterations.  Deterministic given
    (points, k, max_iters, seed).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or len(points) == 0:
        raise UsageError("k-means needs a non-empty 2-d point array")
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    if k > len(points):
        raise UsageError(f"k = {k} exceeds the number of points ({len(points)})")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(points, k, rng)
    labels = None
    history: list[float] = []
    for _ in range(max_iters):
        d2 = _sq_dists(points, centroids)
        new_labels = np.argmin(d2, axis=1)  # argmin takes the lowest id on ties
        inertia = float(d2[np.arange(len(points)), new_labels].sum())
        if history and inertia > history[-1] * (1.0 + 1e-12) + 1e-12:
            raise DataError(f"k-means inertia increased: {history[-1]} -> {inertia}")
        history.append(inertia)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, points)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if len(empty):
            assigned_d2 = d2[np.arange(len(points)), labels].copy()
            for c in empty:
                far = int(np.argmax(assigned_d2))
                centroids[c] = points[far]
                assigned_d2[far] = -1.0  # keep later empties from reusing it
    cb = Codebook(centroids.astype(np.float32), train_seed=seed)
    cb.inertia_history = history
    return cb


def default_n_c(total_vectors: int) -> int:
    return int(np.ceil(np.sqrt(total_vectors)))


def train_codebook(
    repo: VectorSetRepository,
    n_c: int | None = None,
    max_iters: int = 25,
    seed: int = 0,
) -> Codebook:
    """Train the codebook over the whole repository pool, subsampling to at
    most ``TRAIN_POINTS_PER_CENTROID * n_c`` points when the pool is larger."""
    if n_c is None:
        n_c = default_n_c(repo.total_vectors)
    if n_c > repo.total_vectors:
        raise UsageError(f"n_c = {n_c} exceeds total vectors ({repo.total_vectors})")
    points = repo.matrix
    cap = TRAIN_POINTS_PER_CENTROID * n_c
    if repo.total_vectors > cap:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(repo.total_vectors, size=cap, replace=False))
        points = points[pick]
    return train_kmeans(points, n_c, max_iters=max_iters, seed=seed)


def assign_all(repo: VectorSetRepository, cb: Codebook, chunk: int = 8192) -> ClusterAssignment:
    """Map every vector to its nearest centroid by Euclidean distance,
    ties broken by the lowest centroid id."""
    if repo.dimension != cb.dimension:
        raise DataError(f"dimension mismatch: {repo.dimension} vs {cb.dimension}")
    cents = cb.centroids64()
    flat = np.empty(repo.total_vectors, dtype=np.int32)
    for start in range(0, repo.total_vectors, chunk):
        block = repo.matrix[start : start + chunk].astype(np.float64)
        flat[start : start + len(block)] = np.argmin(_sq_dists(block, cents), axis=1)
    return ClusterAssignment(flat, repo.offsets.copy())


def build_indexes(repo: VectorSetRepository, assignment: ClusterAssignment, n_c: int):
    """Build the centroid->vectors and set->counts indexes from an assignment.

    Rebuilding from the same assignment is idempotent, and the two outputs
    are consistent by construction: the per-set counts are exactly the
    multiplicities of that set in each centroid's list.
    """
    if assignment.total != repo.total_vectors:
        raise DataError("assignment does not cover the repository")
    sizes = repo.sizes()
    set_ids = np.repeat(np.arange(repo.n_sets, dtype=np.int32), sizes)
    within = np.concatenate([np.arange(s, dtype=np.int32) for s in sizes])
    order = np.argsort(assignment.flat, kind="stable")  # stable keeps (set, index) order
    sorted_owner = assignment.flat[order]
    handles = np.stack([set_ids[order], within[order]], axis=1)
    lists: dict[int, np.ndarray] = {}
    bounds = np.searchsorted(sorted_owner, np.arange(n_c + 1))
    for c in range(n_c):
        lo, hi = bounds[c], bounds[c + 1]
        if hi > lo:
            lists[c] = np.ascontiguousarray(handles[lo:hi])
    weights: dict[int, dict[int, int]] = {}
    for sid in range(repo.n_sets):
        owners = assignment.set_owners(sid)
        cids, counts = np.unique(owners, return_counts=True)
        weights[sid] = {int(c): int(n) for c, n in zip(cids, counts)}
    return VectorInvertedIndex(lists, n_c=n_c), SetWeightIndex(weights)
