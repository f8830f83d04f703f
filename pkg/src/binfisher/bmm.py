"""Bernoulli mixture model over bit vectors: density, posteriors and EM."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .bitdesc import BinaryDescriptor, FeatureSet
from .errors import DimensionError, ValidationError

log = logging.getLogger(__name__)

RNG_NAME = "numpy.random.PCG64"
DEFAULT_EPS = 1e-4
# rows per E-step block; fixed so the reduction order never changes
EM_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class BmmModel:
    """Mixture weights ``w[i]`` and per-bit Bernoulli means ``mu[i, d]``.

    Arrays are copied and frozen on construction.  The invariants (weights on
    the simplex, ``eps <= mu <= 1 - eps``) are checked here, so every model
    in circulation is valid.
    """

    weights: np.ndarray
    mu: np.ndarray
    eps: float = DEFAULT_EPS
    seed: int | None = None
    rng_name: str = RNG_NAME
    iterations: int = 0
    log_likelihood: float | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        mu = np.array(self.mu, dtype=np.float64)
        if w.ndim != 1 or len(w) < 1:
            raise ValidationError("weights", f"expected a non-empty 1-d array, got shape {w.shape}")
        if mu.ndim != 2 or mu.shape[0] != len(w):
            raise ValidationError("mu", f"expected shape ({len(w)}, D), got {mu.shape}")
        if not 0 < self.eps < 0.5:
            raise ValidationError("eps", f"must be in (0, 0.5), got {self.eps}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValidationError("weights", "must be finite and non-negative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValidationError("weights", f"must sum to 1 (got {w.sum()!r})")
        if not np.all(np.isfinite(mu)) or mu.min() < self.eps or mu.max() > 1 - self.eps:
            raise ValidationError("mu", f"entries must lie in [eps, 1 - eps] with eps={self.eps}")
        w.flags.writeable = False
        mu.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "mu", mu)

    @classmethod
    def clamped(cls, weights, mu, eps=DEFAULT_EPS, **kw) -> "BmmModel":
        """Build a model after clipping ``mu`` into ``[eps, 1 - eps]``."""
        mu = np.clip(np.asarray(mu, dtype=np.float64), eps, 1 - eps)
        return cls(weights, mu, eps=eps, **kw)

    @property
    def N(self) -> int:
        return len(self.weights)

    @property
    def D(self) -> int:
        return self.mu.shape[1]

    @cached_property
    def log_mu(self) -> np.ndarray:
        return np.log(self.mu)

    @cached_property
    def log_1mmu(self) -> np.ndarray:
        return np.log1p(-self.mu)

    @cached_property
    def inv_1mmu(self) -> np.ndarray:
        return 1.0 / (1.0 - self.mu)

    @cached_property
    def inv_mu_sum(self) -> np.ndarray:
        """``1/mu + 1/(1 - mu)``."""
        return 1.0 / self.mu + self.inv_1mmu

    @cached_property
    def _logit_t(self) -> np.ndarray:
        # (D, N) so that bits @ _logit_t gives the x-dependent part of log p_i
        return np.ascontiguousarray((self.log_mu - self.log_1mmu).T)

    @cached_property
    def _log_offset(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.weights) + self.log_1mmu.sum(axis=1)

    def truncate(self, d_prime: int) -> "BmmModel":
        """Marginal model over the first ``d_prime`` bits."""
        if not 1 <= d_prime <= self.D:
            raise ValidationError("d_prime", f"must be in [1, {self.D}], got {d_prime}")
        return BmmModel(self.weights, self.mu[:, :d_prime], eps=self.eps, seed=self.seed,
                        rng_name=self.rng_name, iterations=self.iterations)

    def same_params(self, other: "BmmModel") -> bool:
        return (self.eps == other.eps and np.array_equal(self.weights, other.weights)
                and np.array_equal(self.mu, other.mu))

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``n`` bit vectors; returns ``(bits, component)``."""
        comp = rng.choice(self.N, size=n, p=self.weights)
        bits = (rng.random((n, self.D)) < self.mu[comp]).astype(np.uint8)
        return bits, comp


def _check_dims(model: BmmModel, dims: int):
    if dims != model.D:
        raise DimensionError(f"descriptor has D={dims}, model has D={model.D}")


def _bits_of(x) -> np.ndarray:
    if isinstance(x, FeatureSet):
        return x.bits()
    if isinstance(x, BinaryDescriptor):
        return x.bits()[None, :]
    return np.asarray(x)


def log_joint(model: BmmModel, bits: np.ndarray) -> np.ndarray:
    """``log w_i + log p_i(x_t)`` for a ``(T, D)`` bit array, shape ``(T, N)``."""
    _check_dims(model, bits.shape[1])
    return bits.astype(np.float64) @ model._logit_t + model._log_offset


def log_component_density(model: BmmModel, i: int, x: BinaryDescriptor) -> float:
    """``log p_i(x)``: sum over bits of ``x_d log mu_id + (1 - x_d) log(1 - mu_id)``."""
    _check_dims(model, x.D)
    if not 0 <= i < model.N:
        raise IndexError(i)
    b = x.bits().astype(bool)
    return float(model.log_mu[i, b].sum() + model.log_1mmu[i, ~b].sum())


def normalize_log(lj: np.ndarray, pivot: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalize unnormalized log weights.

    Returns ``(gamma, log_norm)`` where ``log_norm`` is the per-row
    log-sum-exp.  ``pivot`` overrides the usual row maximum that is
    subtracted before exponentiating; any finite choice near the maximum
    gives the same result, which the tests exploit.
    """
    if pivot is None:
        pivot = lj.max(axis=1)
    e = np.exp(lj - pivot[:, None])
    s = e.sum(axis=1)
    return e / s[:, None], pivot + np.log(s)


def posteriors(model: BmmModel, X) -> np.ndarray:
    """Occupancy probabilities ``gamma[t, i]`` for every descriptor of ``X``."""
    gamma, _ = normalize_log(log_joint(model, _bits_of(X)))
    return gamma


def posterior(model: BmmModel, x: BinaryDescriptor) -> np.ndarray:
    """Occupancy probabilities of one descriptor, shape ``(N,)``."""
    _check_dims(model, x.D)
    return posteriors(model, x)[0]


def mean_log_likelihood(model: BmmModel, X: FeatureSet) -> float:
    """``(1/T) sum_t log sum_i w_i p_i(x_t)``."""
    if X.T == 0:
        raise ValueError("mean log-likelihood of an empty FeatureSet")
    _check_dims(model, X.D)
    _, lse = normalize_log(log_joint(model, X.bits()))
    return float(lse.mean())


# EM ------------------------------------------------------------------------


@dataclass
class EmConfig:
    max_iters: int = 100
    rel_tol: float = 1e-5
    seed: int = 0
    min_component_mass: float = 1e-6
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValidationError("max_iters", "must be >= 1")
        if self.rel_tol < 0:
            raise ValidationError("rel_tol", "must be >= 0")
        if self.min_component_mass < 0:
            raise ValidationError("min_component_mass", "must be >= 0")
        if not 0 < self.eps < 0.5:
            raise ValidationError("eps", "must be in (0, 0.5)")


@dataclass
class EmReport:
    iterations_run: int = 0
    log_likelihood_trace: list[float] = field(default_factory=list)
    # (iteration, component, data index) for every reseeded component
    reseed_events: list[tuple[int, int, int]] = field(default_factory=list)
    converged: bool = False


def _e_step(weights, mu, bits):
    """Expected sufficient statistics, accumulated block by block in a fixed order."""
    n, d = mu.shape
    logit_t = (np.log(mu) - np.log1p(-mu)).T
    with np.errstate(divide="ignore"):
        offset = np.log(weights) + np.log1p(-mu).sum(axis=1)
    occ = np.zeros(n)
    ones = np.zeros((n, d))
    total_ll = 0.0
    for start in range(0, len(bits), EM_CHUNK):
        xb = bits[start:start + EM_CHUNK]
        gamma, lse = normalize_log(xb @ logit_t + offset)
        occ += gamma.sum(axis=0)
        ones += gamma.T @ xb
        total_ll += lse.sum()
    return occ, ones, total_ll / len(bits)


def fit_em(data: FeatureSet, n_components: int, cfg: EmConfig | None = None) -> tuple[BmmModel, EmReport]:
    """Maximum-likelihood BMM by expectation-maximization.

    Weights start at ``1/N`` and means are drawn from ``U(0.25, 0.75)``.
    Each M-step sets ``w_i = S_i / S`` and ``mu_id = sum_s gamma_s(i) x_sd / S_i``,
    then clips ``mu`` to ``[eps, 1 - eps]``.  Iteration stops after
    ``cfg.max_iters`` M-steps or once the relative gain in mean
    log-likelihood drops below ``cfg.rel_tol``.

    A component whose mass ``S_i / S`` falls under ``cfg.min_component_mass``
    is moved onto a uniformly drawn data point with weight ``1/N`` (weights
    are then renormalized).  Steps with a reseed may lower the likelihood;
    they are listed in ``EmReport.reseed_events``.
    """
    cfg = cfg or EmConfig()
    n_components = int(n_components)
    if n_components < 1:
        raise ValidationError("n_components", "must be >= 1")
    if data.T < n_components:
        raise ValueError(f"need at least {n_components} data points, got {data.T}")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    bits = data.bits().astype(np.float64)
    s_total = float(len(bits))
    eps = cfg.eps

    weights = np.full(n_components, 1.0 / n_components)
    mu = rng.uniform(0.25, 0.75, size=(n_components, data.D))
    report = EmReport()

    occ, ones, ll = _e_step(weights, mu, bits)
    report.log_likelihood_trace.append(float(ll))
    for it in range(1, cfg.max_iters + 1):
        safe = np.where(occ > 0, occ, 1.0)
        mu = np.clip(ones / safe[:, None], eps, 1 - eps)
        weights = occ / s_total
        dead = np.flatnonzero(weights < cfg.min_component_mass)
        for i in dead:
            s = int(rng.integers(len(bits)))
            mu[i] = np.clip(bits[s], eps, 1 - eps)
            weights[i] = 1.0 / n_components
            report.reseed_events.append((it, int(i), s))
        if len(dead):
            log.info("EM iteration %d: reseeded components %s", it, dead.tolist())
        weights = weights / weights.sum()

        occ, ones, ll_new = _e_step(weights, mu, bits)
        report.log_likelihood_trace.append(float(ll_new))
        report.iterations_run = it
        gain = (ll_new - ll) / abs(ll) if ll != 0 else ll_new - ll
        ll = ll_new
        if not len(dead) and gain < cfg.rel_tol:
            report.converged = True
            break

    model = BmmModel(weights, mu, eps=eps, seed=cfg.seed, rng_name=RNG_NAME,
                     iterations=report.iterations_run, log_likelihood=float(ll))
    return model, report
