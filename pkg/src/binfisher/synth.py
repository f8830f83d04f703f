"""Seeded synthetic retrieval benchmark built from planted Bernoulli mixtures.

Every class owns a BMM whose components are class-specific variants of a
small pool of shared prototype bit patterns, so classes overlap in Hamming
space the way images of different objects share local structure.  Bit
reliability decays along the string (later bits are noisier), mimicking
descriptors whose tests are sorted by informativeness.  Each image draws
its own bursty component weights around the class weights; queries are
further corrupted by independent bit flips.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bitdesc import FeatureSet
from .bmm import BmmModel
from .errors import ValidationError


@dataclass
class SynthConfig:
    n_classes: int = 8
    refs_per_class: int = 12
    queries_per_class: int = 4
    T: int = 200
    D: int = 64
    flip_rate: float = 0.05
    seed: int = 0
    n_distractors: int = 0
    # generator shape
    n_prototypes: int = 16
    class_variation: float = 0.3
    class_shift: float = 0.2
    noise_first: float = 0.05
    noise_last: float = 0.25
    weight_concentration: float = 20.0
    burstiness: float = 1.0
    background_fraction: float = 0.2

    def __post_init__(self):
        for name in ("n_classes", "refs_per_class", "queries_per_class", "T", "D", "n_prototypes"):
            if getattr(self, name) < 1:
                raise ValidationError(name, "must be >= 1")
        if self.n_distractors < 0:
            raise ValidationError("n_distractors", "must be >= 0")
        if not 0 <= self.flip_rate < 0.5:
            raise ValidationError("flip_rate", "must be in [0, 0.5)")
        if not 0 <= self.background_fraction < 1:
            raise ValidationError("background_fraction", "must be in [0, 1)")
        if not 0 <= self.noise_first <= self.noise_last < 0.5:
            raise ValidationError("noise_last", "need 0 <= noise_first <= noise_last < 0.5")
        if not 0 <= self.class_variation <= 1:
            raise ValidationError("class_variation", "must be in [0, 1]")
        if not 0 <= self.class_shift <= 1:
            raise ValidationError("class_shift", "must be in [0, 1]")
        for name in ("burstiness", "weight_concentration"):
            if getattr(self, name) <= 0:
                raise ValidationError(name, "must be > 0")


@dataclass
class SynthDataset:
    config: SynthConfig
    references: dict[str, FeatureSet]
    queries: dict[str, FeatureSet]
    distractors: dict[str, FeatureSet]
    truth: dict[str, list[str]]
    classes: dict[str, str]
    class_models: list[BmmModel] = field(default_factory=list)

    def database(self) -> dict[str, FeatureSet]:
        return {**self.references, **self.distractors}

    def training_features(self) -> FeatureSet:
        """Reference descriptors pooled; distractors are left out so they never move the vocabulary."""
        sets = list(self.references.values())
        out = sets[0]
        for fs in sets[1:]:
            out = out.concat(fs)
        return out


class _Planter:
    def __init__(self, cfg: SynthConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        centers = rng.random((cfg.n_prototypes, cfg.D)) < 0.5
        noise = np.linspace(cfg.noise_first, cfg.noise_last, cfg.D)
        self.base_mu = np.where(centers, 1.0 - noise, noise)
        uniform = np.full(cfg.n_prototypes, 1.0 / cfg.n_prototypes)
        self.background = BmmModel.clamped(uniform, self.base_mu)

    def new_class(self) -> BmmModel:
        """Shift a random subset of the shared means towards their opposite bit."""
        cfg, rng = self.cfg, self.rng
        shifted = rng.random(self.base_mu.shape) < cfg.class_variation
        direction = np.where(self.base_mu >= 0.5, -1.0, 1.0)
        mu = self.base_mu + shifted * direction * cfg.class_shift
        weights = rng.dirichlet(np.full(cfg.n_prototypes, cfg.weight_concentration))
        return BmmModel.clamped(weights / weights.sum(), mu)

    def image(self, model: BmmModel) -> np.ndarray:
        cfg, rng = self.cfg, self.rng
        w = rng.dirichlet(cfg.burstiness * model.weights * model.N)
        n_bg = rng.binomial(cfg.T, cfg.background_fraction)
        comp = rng.choice(model.N, size=cfg.T - n_bg, p=w)
        fg = rng.random((len(comp), cfg.D)) < model.mu[comp]
        bg, _ = self.background.sample(n_bg, rng)
        bits = np.vstack([fg.astype(np.uint8), bg])
        return bits[rng.permutation(cfg.T)]


def synth_dataset(cfg: SynthConfig | None = None, **overrides) -> SynthDataset:
    """Generate references, queries, optional distractors and relevance truth.

    References of class ``c`` are relevant to every query of class ``c``.
    Distractors come from extra planted classes and are relevant to nothing.
    Identical configs give identical datasets.
    """
    if cfg is None:
        cfg = SynthConfig(**overrides)
    elif overrides:
        cfg = SynthConfig(**{**cfg.__dict__, **overrides})
    rng = np.random.default_rng(cfg.seed)
    planter = _Planter(cfg, rng)
    models = [planter.new_class() for _ in range(cfg.n_classes)]

    refs, queries, classes, truth = {}, {}, {}, {}
    for c, model in enumerate(models):
        label = f"c{c:02d}"
        rids = []
        for r in range(cfg.refs_per_class):
            rid = f"{label}_ref{r:03d}"
            refs[rid] = FeatureSet.from_bits(planter.image(model))
            classes[rid] = label
            rids.append(rid)
        for q in range(cfg.queries_per_class):
            qid = f"{label}_qry{q:03d}"
            bits = planter.image(model)
            flips = rng.random(bits.shape) < cfg.flip_rate
            queries[qid] = FeatureSet.from_bits(bits ^ flips)
            classes[qid] = label
            truth[qid] = list(rids)

    # distractors use their own stream so adding them leaves the rest unchanged
    drng = np.random.default_rng([cfg.seed, 1])
    dplanter = _Planter(cfg, drng)
    dplanter.base_mu = planter.base_mu
    dplanter.background = planter.background
    distractors = {}
    per_class = max(1, cfg.refs_per_class)
    n_dclasses = -(-cfg.n_distractors // per_class)
    dmodels = [dplanter.new_class() for _ in range(n_dclasses)]
    for n in range(cfg.n_distractors):
        did = f"dis{n:05d}"
        distractors[did] = FeatureSet.from_bits(dplanter.image(dmodels[n // per_class]))
        classes[did] = "distractor"
    return SynthDataset(cfg, refs, queries, distractors, truth, classes, models)
