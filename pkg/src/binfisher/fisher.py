"""Fisher vectors of binary features under a Bernoulli mixture model.

The gradient is taken with respect to the Bernoulli means only.  The exact
encoder uses soft posteriors; the approximate encoder replaces them with a
one-hot assignment to the nearest representative bit vector (Hamming
distance), which is much cheaper.  Diagnostics for the closed-form Fisher
information live at the bottom of the module.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

from . import bmm
from .bitdesc import FeatureSet, nearest, pack_bits
from .bmm import BmmModel
from .errors import DimensionError, ValidationError

NORM_STATES = ("raw", "l2", "power", "power_l2", "intra")


@dataclass(frozen=True, eq=False)
class FisherVec:
    """Length ``N*D`` vector laid out component-major (block ``i`` is ``mu[i, :]``).

    ``zero_blocks`` lists the component blocks that were all-zero when a
    normalization skipped them (a zero vector lists every block).
    """

    values: np.ndarray
    n_components: int
    dims: int
    norm_state: str = "raw"
    zero_blocks: tuple[int, ...] = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (self.n_components * self.dims,):
            raise ValidationError(
                "values", f"expected length {self.n_components * self.dims}, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValidationError("values", "entries must be finite")
        if self.norm_state not in NORM_STATES:
            raise ValidationError("norm_state", f"unknown state {self.norm_state!r}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def blocks(self) -> np.ndarray:
        return self.values.reshape(self.n_components, self.dims)

    def __len__(self):
        return len(self.values)


def _check(model: BmmModel, X: FeatureSet):
    if X.D != model.D:
        raise DimensionError(f"features have D={X.D}, model has D={model.D}")
    if X.T == 0:
        raise ValueError("cannot encode an empty FeatureSet")


def _score_from_stats(model: BmmModel, ones: np.ndarray, occ: np.ndarray, T: int) -> np.ndarray:
    """Fisher score from ``ones[i, d] = sum_t g_t(i) x_td`` and ``occ[i] = sum_t g_t(i)``.

    Uses ``ones/mu - (occ - ones)/(1 - mu) = ones*(1/mu + 1/(1-mu)) - occ/(1-mu)``.
    """
    out = ones * model.inv_mu_sum
    out -= occ[:, None] * model.inv_1mmu
    out *= 1.0 / T
    return out


def fisher_score(model: BmmModel, X: FeatureSet) -> np.ndarray:
    """Gradient of the mean log-likelihood w.r.t. ``mu``, flattened to ``N*D``.

    Entry ``(i, d)`` averages ``gamma_t(i) / mu_id`` over descriptors with bit
    ``d`` set and ``-gamma_t(i) / (1 - mu_id)`` over the others.
    """
    _check(model, X)
    bits = X.bits().astype(np.float64)
    gamma, _ = bmm.normalize_log(bits @ model._logit_t + model._log_offset)
    return _score_from_stats(model, gamma.T @ bits, gamma.sum(axis=0), X.T).ravel()


def fisher_information_unit(model: BmmModel) -> np.ndarray:
    """Closed-form diagonal Fisher information for a single descriptor, shape ``(N, D)``.

    ``w_i * (sum_j w_j mu_jd / mu_id**2 + sum_j w_j (1 - mu_jd) / (1 - mu_id)**2)``
    """
    p1 = model.weights @ model.mu
    p0 = model.weights @ (1.0 - model.mu)
    return model.weights[:, None] * (p1 / model.mu**2 + p0 / (1.0 - model.mu) ** 2)


def fisher_information_diag(model: BmmModel, T: int) -> np.ndarray:
    """Diagonal Fisher information for ``T`` descriptors, flattened to ``N*D``."""
    if T < 1:
        raise ValidationError("T", "must be >= 1")
    return T * fisher_information_unit(model).ravel()


def _inv_sqrt_info(model: BmmModel) -> np.ndarray:
    # cached on the (immutable) model instance
    cache = model.__dict__.get("_inv_sqrt_info")
    if cache is None:
        cache = 1.0 / np.sqrt(fisher_information_unit(model))
        model.__dict__["_inv_sqrt_info"] = cache
    return cache


def _finish(model: BmmModel, score: np.ndarray, T: int, info_t: str) -> FisherVec:
    if info_t == "image":
        scale = _inv_sqrt_info(model) / np.sqrt(T)
    elif info_t == "unit":
        scale = _inv_sqrt_info(model)
    else:
        raise ValidationError("info_t", f"expected 'image' or 'unit', got {info_t!r}")
    score *= scale
    return FisherVec(score.ravel(), model.N, model.D, "raw")


def encode(model: BmmModel, X: FeatureSet, info_t: str = "image") -> FisherVec:
    """Exact Fisher vector: score scaled by the inverse square root of the information.

    ``info_t="image"`` uses the image's own ``T`` in the information term;
    ``info_t="unit"`` fixes ``T = 1``.  The two differ by the global factor
    ``sqrt(T)``, which any l2-final normalization removes.
    """
    _check(model, X)
    bits = X.bits().astype(np.float64)
    gamma, _ = bmm.normalize_log(bits @ model._logit_t + model._log_offset)
    score = _score_from_stats(model, gamma.T @ bits, gamma.sum(axis=0), X.T)
    return _finish(model, score, X.T, info_t)


# approximate encoder ----------------------------------------------------------


@dataclass(frozen=True)
class RepresentativeCodebook:
    """One representative bit vector per component: bit set iff ``mu >= 0.5``."""

    y: FeatureSet

    @property
    def N(self) -> int:
        return self.y.T

    @property
    def D(self) -> int:
        return self.y.D


def representative_codebook(model: BmmModel) -> RepresentativeCodebook:
    return RepresentativeCodebook(FeatureSet(pack_bits(model.mu >= 0.5), model.D))


@numba.njit(cache=True)
def _accumulate_assigned(bits, idx, n_comp):
    dims = bits.shape[1]
    ones = np.zeros((n_comp, dims))
    occ = np.zeros(n_comp)
    for t in range(bits.shape[0]):
        i = idx[t]
        occ[i] += 1.0
        for d in range(dims):
            ones[i, d] += bits[t, d]
    return ones, occ


def hard_assign(codebook: RepresentativeCodebook, X: FeatureSet) -> np.ndarray:
    """Nearest representative vector per descriptor (lowest index on ties)."""
    idx, _ = nearest(X, codebook.y)
    return idx


def encode_approx(model: BmmModel, codebook: RepresentativeCodebook, X: FeatureSet,
                  info_t: str = "image") -> FisherVec:
    """Fisher vector with posteriors replaced by one-hot Hamming assignments."""
    _check(model, X)
    if codebook.N != model.N or codebook.D != model.D:
        raise DimensionError("codebook does not match the model")
    idx = hard_assign(codebook, X)
    ones, occ = _accumulate_assigned(X.bits(), idx, model.N)
    score = _score_from_stats(model, ones, occ, X.T)
    return _finish(model, score, X.T, info_t)


# diagnostics -------------------------------------------------------------------


class PeakednessReport(NamedTuple):
    counts: np.ndarray       # histogram of max_i gamma_t(i)
    edges: np.ndarray
    agreement: float         # P[argmin Hamming == argmax gamma]
    max_gamma: np.ndarray


def posterior_peakedness(model: BmmModel, X: FeatureSet, bins: int = 20,
                         codebook: RepresentativeCodebook | None = None) -> PeakednessReport:
    """How one-hot the posteriors are, and how often the Hamming shortcut agrees."""
    _check(model, X)
    codebook = codebook or representative_codebook(model)
    gamma = bmm.posteriors(model, X)
    top = gamma.max(axis=1)
    counts, edges = np.histogram(top, bins=bins, range=(0.0, 1.0))
    agree = float(np.mean(hard_assign(codebook, X) == gamma.argmax(axis=1)))
    return PeakednessReport(counts, edges, agree, top)


class IntegralIdentity(NamedTuple):
    enumerated_bit1: float
    enumerated_bit0: float
    printed_rhs_bit1: float
    printed_rhs_bit0: float


MAX_ENUM_DIMS = 16


def integral_identity_oracle(model: BmmModel, i: int, d: int) -> IntegralIdentity:
    """Brute-force ``sum_{x: x_d=b} p(x) gamma_x(i)`` over all ``2**D`` bit vectors.

    Also returns the closed-form right-hand sides ``w_i sum_j w_j mu_jd`` and
    ``w_i sum_j w_j (1 - mu_jd)`` that the Fisher information formula is
    built on.  Nothing is asserted; the caller compares.
    """
    if model.D > MAX_ENUM_DIMS:
        raise ValidationError("D", f"enumeration needs D <= {MAX_ENUM_DIMS}, got {model.D}")
    if not (0 <= i < model.N and 0 <= d < model.D):
        raise IndexError((i, d))
    D = model.D
    codes = np.arange(2**D, dtype=np.int64)
    x = ((codes[:, None] >> np.arange(D)) & 1).astype(np.float64)
    # plain products, no log-space tricks
    comp = np.prod(np.where(x[:, None, :] == 1, model.mu[None], 1.0 - model.mu[None]), axis=2)
    px = comp @ model.weights
    gamma_i = model.weights[i] * comp[:, i] / px
    mass = px * gamma_i
    on = x[:, d] == 1
    rhs1 = model.weights[i] * float(model.weights @ model.mu[:, d])
    rhs0 = model.weights[i] * float(model.weights @ (1.0 - model.mu[:, d]))
    return IntegralIdentity(float(mass[on].sum()), float(mass[~on].sum()), rhs1, rhs0)


def fisher_information_empirical(model: BmmModel, i: int, d: int, sample_count: int,
                                 seed: int = 0, return_stderr: bool = False):
    """Monte-Carlo estimate of ``E[(d log p(x) / d mu_id)**2]`` for one descriptor."""
    if sample_count < 1:
        raise ValidationError("sample_count", "must be >= 1")
    rng = np.random.default_rng(seed)
    bits, _ = model.sample(sample_count, rng)
    gamma = bmm.posteriors(model, bits)[:, i]
    xd = bits[:, d]
    g = np.where(xd == 1, gamma / model.mu[i, d], -gamma / (1.0 - model.mu[i, d]))
    sq = g * g
    est = float(sq.mean())
    if not return_stderr:
        return est
    se = float(sq.std(ddof=1) / np.sqrt(sample_count)) if sample_count > 1 else float("inf")
    return est, se
