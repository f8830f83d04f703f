"""Bag-of-binary-words baseline: k-majority codebook and histogram encoding."""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .bitdesc import FeatureSet, nearest, pack_bits
from .errors import DimensionError, ValidationError

DEFAULT_K = 1024


@dataclass(frozen=True)
class BinaryCodebook:
    centroids: FeatureSet

    @property
    def K(self) -> int:
        return self.centroids.T

    @property
    def D(self) -> int:
        return self.centroids.D


@dataclass(frozen=True, eq=False)
class BowVector:
    values: np.ndarray
    norm_state: str = "l2"
    zero_blocks: tuple[int, ...] = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1 or np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValidationError("values", "must be a finite non-negative 1-d vector")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def n_components(self) -> int:
        return len(self.values)

    @property
    def dims(self) -> int:
        return 1


@dataclass
class KMajorityResult:
    codebook: BinaryCodebook
    assignment: np.ndarray
    objective_trace: list[int] = field(default_factory=list)
    iterations: int = 0
    reseeds: int = 0


@numba.njit(cache=True)
def _bit_counts(packed, idx, k, dims):
    counts = np.zeros((k, dims), dtype=np.int64)
    sizes = np.zeros(k, dtype=np.int64)
    for t in range(packed.shape[0]):
        c = idx[t]
        sizes[c] += 1
        for d in range(dims):
            counts[c, d] += (packed[t, d >> 3] >> (d & 7)) & 1
    return counts, sizes


def k_majority(data: FeatureSet, K: int, seed: int = 0, max_iters: int = 50) -> KMajorityResult:
    """k-means in Hamming space with bitwise-majority centroids.

    Centroids start at ``K`` distinct data rows.  Assignment is to the
    nearest centroid (lowest index on ties); each centroid becomes the
    per-bit majority of its members, a tie giving 1.  An empty cluster is
    moved to a random data point.  Stops when assignments stop changing or
    after ``max_iters`` rounds.
    """
    if K < 1:
        raise ValidationError("K", "must be >= 1")
    if data.T < K:
        raise ValueError(f"need at least K={K} data points, got {data.T}")
    if max_iters < 1:
        raise ValidationError("max_iters", "must be >= 1")
    rng = np.random.default_rng(seed)
    centroids = data.take(np.sort(rng.choice(data.T, size=K, replace=False)))
    assign, dist = nearest(data, centroids)
    trace = [int(dist.sum())]
    reseeds = 0
    it = 0
    for it in range(1, max_iters + 1):
        counts, sizes = _bit_counts(data.packed, assign, K, data.D)
        bits = (2 * counts >= sizes[:, None]).astype(np.uint8)
        packed = pack_bits(bits)
        for c in np.flatnonzero(sizes == 0):
            packed[c] = data.packed[rng.integers(data.T)]
            reseeds += 1
        centroids = FeatureSet(packed, data.D)
        new_assign, dist = nearest(data, centroids)
        trace.append(int(dist.sum()))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return KMajorityResult(BinaryCodebook(centroids), assign, trace, it, reseeds)


def train_codebook(data: FeatureSet, K: int = DEFAULT_K, seed: int = 0, max_iters: int = 50) -> BinaryCodebook:
    return k_majority(data, K, seed, max_iters).codebook


def encode_bow(cb: BinaryCodebook, X: FeatureSet) -> BowVector:
    """l2-normalized histogram of nearest-centroid assignments."""
    if X.D != cb.D:
        raise DimensionError(f"features have D={X.D}, codebook has D={cb.D}")
    if X.T == 0:
        return BowVector(np.zeros(cb.K), "l2", zero_blocks=tuple(range(cb.K)))
    idx, _ = nearest(X, cb.centroids)
    counts = np.bincount(idx, minlength=cb.K).astype(np.float64)
    return BowVector(counts / np.linalg.norm(counts), "l2")
