import numpy as np
import pytest
from hypothesis import settings

from binfisher.bitdesc import FeatureSet
from binfisher.bmm import BmmModel

settings.register_profile("default", deadline=None)
settings.load_profile("default")


def random_model(rng, n, d, lo=0.05, hi=0.95):
    w = rng.dirichlet(np.ones(n))
    return BmmModel(w / w.sum(), rng.uniform(lo, hi, size=(n, d)))


def random_features(rng, t, d):
    return FeatureSet.from_bits(rng.integers(0, 2, size=(t, d)))


def planted_two_clusters(seed=0, d=8, per=500, noise=0.05):
    """Centers 0...0 and 1...1, each bit flipped with probability ``noise``."""
    rng = np.random.default_rng(seed)
    centers = np.repeat([[0] * d, [1] * d], per, axis=0)
    flips = rng.random(centers.shape) < noise
    bits = centers ^ flips
    return FeatureSet.from_bits(bits[rng.permutation(len(bits))])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, shown in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, name: str, ok: bool, detail: str = ""):
    ACCEPTANCE_LINES[number] = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip()
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
