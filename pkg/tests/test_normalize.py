import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from binfisher.errors import ValidationError
from binfisher.fisher import FisherVec
from binfisher.normalize import (apply_norm, intra_normalize, l2_normalize, power_normalize)


def fv(values, n=1):
    values = np.asarray(values, dtype=float)
    return FisherVec(values, n, len(values) // n)


def test_power_examples():
    assert power_normalize(fv([-4.0, 0.0, 9.0]), 0.5).values.tolist() == [-2.0, 0.0, 3.0]
    v = fv([-1.5, 0.2, 3.0])
    out = power_normalize(v, 1.0)
    assert np.array_equal(out.values, v.values) and out.norm_state == "power"


@pytest.mark.parametrize("alpha", [0.0, -0.5, 1.5])
def test_power_alpha_range(alpha):
    with pytest.raises(ValidationError):
        power_normalize(fv([1.0]), alpha)


def test_l2_examples():
    assert l2_normalize(fv([3.0, 4.0, 0.0])).values.tolist() == [0.6, 0.8, 0.0]
    unit = fv([0.6, 0.8])
    np.testing.assert_allclose(l2_normalize(unit).values, unit.values, rtol=1e-15)
    assert apply_norm(fv([3.0, 4.0]), "l2").values.tolist() == [0.6, 0.8]


def test_l2_zero_vector_flagged():
    out = l2_normalize(fv([0.0, 0.0, 0.0, 0.0], n=2))
    assert out.values.tolist() == [0.0] * 4 and out.zero_blocks == (0, 1)


def test_state_transitions():
    v = fv([1.0, -2.0])
    assert l2_normalize(v).norm_state == "l2"
    assert l2_normalize(power_normalize(v)).norm_state == "power_l2"
    assert intra_normalize(v).norm_state == "intra"
    for bad in (l2_normalize(v), intra_normalize(v)):
        with pytest.raises(ValidationError):
            l2_normalize(bad)
        with pytest.raises(ValidationError):
            power_normalize(bad)


def test_intra_examples():
    out = intra_normalize(fv([3.0, 4.0, 0.0, 0.0], n=2))
    assert out.values.tolist() == [0.6, 0.8, 0.0, 0.0]
    assert out.zero_blocks == (1,)
    v = fv([1.0, -2.0, 0.5])
    np.testing.assert_allclose(intra_normalize(v).values, l2_normalize(v).values, rtol=1e-15)


def test_apply_norm_dispatch():
    v = fv([2.0, -8.0, 1.0])
    assert apply_norm(v, "none") is v
    for name in ("power-l2", "power_l2"):
        np.testing.assert_array_equal(apply_norm(v, name, 0.5).values,
                                      l2_normalize(power_normalize(v, 0.5)).values)
    with pytest.raises(ValidationError):
        apply_norm(v, "l1")


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_subnormal=False)
vectors = st.integers(1, 6).flatmap(
    lambda n: st.integers(1, 8).flatmap(
        lambda d: arrays(np.float64, n * d, elements=finite).map(lambda a: FisherVec(a, n, d))))


@given(vectors, st.sampled_from(["l2", "power-l2", "intra"]))
def test_unit_norm_after_l2_final(v, scheme):
    out = apply_norm(v, scheme)
    if np.any(out.values):
        assert abs(np.linalg.norm(out.values) - 1) <= 1e-6
    else:
        assert out.zero_blocks == tuple(range(v.n_components)) or scheme == "intra"


@given(vectors, st.floats(0.05, 1.0))
def test_power_preserves_sign_and_zeros(v, alpha):
    out = power_normalize(v, alpha).values
    assert np.array_equal(np.sign(out), np.sign(v.values))


@given(vectors, st.data())
def test_intra_block_scale_invariance(v, data):
    scales = np.array(data.draw(st.lists(st.floats(1e-3, 1e3), min_size=v.n_components,
                                         max_size=v.n_components)))
    scaled = FisherVec((v.blocks() * scales[:, None]).ravel(), v.n_components, v.dims)
    np.testing.assert_allclose(intra_normalize(scaled).values, intra_normalize(v).values,
                               rtol=1e-9, atol=1e-12)


@given(vectors, st.floats(1e-3, 1e3))
def test_l2_scale_invariance(v, c):
    np.testing.assert_allclose(l2_normalize(FisherVec(v.values * c, v.n_components, v.dims)).values,
                               l2_normalize(v).values, rtol=1e-9, atol=1e-12)
