"""Fisher vectors of binary local features under a Bernoulli mixture model."""

from .bitdesc import BinaryDescriptor, FeatureSet, hamming, hamming_matrix, nearest, truncate
from .bmm import (BmmModel, EmConfig, EmReport, fit_em, log_component_density,
                  mean_log_likelihood, posterior, posteriors)
from .bovw import BinaryCodebook, BowVector, encode_bow, train_codebook
from .errors import (BinFisherError, DimensionError, FormatError, ValidationError)
from .evaluation import EvalResult, RetrievalIndex, average_precision, evaluate, rank
from .fisher import (FisherVec, RepresentativeCodebook, encode, encode_approx,
                     fisher_information_diag, fisher_score, representative_codebook)
from .normalize import apply_norm, intra_normalize, l2_normalize, power_normalize
from .synth import SynthConfig, SynthDataset, synth_dataset

__version__ = "0.1.0"
