"""End-to-end helpers: encode image collections and score retrieval."""
from __future__ import annotations

from typing import Mapping

from .bitdesc import FeatureSet
from .bmm import BmmModel, EmConfig, fit_em
from .bovw import BinaryCodebook, encode_bow, train_codebook
from .evaluation import EvalResult, RetrievalIndex, evaluate
from .fisher import encode, encode_approx, representative_codebook
from .normalize import DEFAULT_ALPHA, apply_norm
from .synth import SynthDataset


class FisherEncoder:
    """Callable turning a FeatureSet into a normalized Fisher vector.

    ``bits`` truncates both model and descriptors to their leading bits.
    """

    def __init__(self, model: BmmModel, norm: str = "intra", alpha: float = DEFAULT_ALPHA,
                 approx: bool = False, bits: int | None = None, info_t: str = "image"):
        if bits is not None and bits != model.D:
            model = model.truncate(bits)
        self.model = model
        self.bits = bits
        self.norm = norm
        self.alpha = alpha
        self.approx = approx
        self.info_t = info_t
        self.codebook = representative_codebook(model) if approx else None

    def __call__(self, X: FeatureSet):
        if self.bits is not None and self.bits != X.D:
            X = X.truncate(self.bits)
        if self.approx:
            v = encode_approx(self.model, self.codebook, X, info_t=self.info_t)
        else:
            v = encode(self.model, X, info_t=self.info_t)
        return apply_norm(v, self.norm, self.alpha)


class BowEncoder:
    def __init__(self, codebook: BinaryCodebook):
        self.codebook = codebook

    def __call__(self, X: FeatureSet):
        return encode_bow(self.codebook, X)


def encode_all(encoder, sets: Mapping[str, FeatureSet]) -> dict:
    return {k: encoder(fs) for k, fs in sets.items()}


def retrieval_map(encoder, ds: SynthDataset, with_distractors: bool = True) -> EvalResult:
    db = ds.database() if with_distractors else ds.references
    db_vecs = encode_all(encoder, db)
    index = RetrievalIndex.from_vectors(list(db_vecs), list(db_vecs.values()))
    queries = [(q, encoder(fs)) for q, fs in ds.queries.items()]
    return evaluate(index, queries, ds.truth, {q: ds.classes[q] for q in ds.queries})


def train_benchmark_model(ds: SynthDataset, n_components: int, cfg: EmConfig | None = None) -> BmmModel:
    model, _ = fit_em(ds.training_features(), n_components, cfg or EmConfig())
    return model


def train_benchmark_codebook(ds: SynthDataset, K: int, seed: int = 0, max_iters: int = 50) -> BinaryCodebook:
    return train_codebook(ds.training_features(), K, seed=seed, max_iters=max_iters)
