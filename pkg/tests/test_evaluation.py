import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from binfisher.errors import DimensionError, ValidationError
from binfisher.evaluation import RetrievalIndex, average_precision, evaluate, rank
from binfisher.fisher import FisherVec
from binfisher.synth import SynthConfig, synth_dataset


def index_of(d):
    return RetrievalIndex(tuple(d), np.array(list(d.values()), dtype=float))


def test_rank_hand_case():
    idx = index_of({"a": [0, 0], "b": [1, 0], "c": [3, 4]})
    r = rank(idx, [1, 1])
    assert [i for i, _ in r] == ["b", "a", "c"]
    np.testing.assert_allclose([d for _, d in r], [1, math.sqrt(2), math.sqrt(13)], rtol=1e-15)


def test_rank_orthonormal_ties():
    eye = np.eye(4)
    idx = RetrievalIndex(("d", "b", "a", "c"), eye)
    r = rank(idx, eye[2])
    assert r[0] == ("a", 0.0)
    assert [i for i, _ in r[1:]] == ["b", "c", "d"]
    np.testing.assert_allclose([d for _, d in r[1:]], math.sqrt(2))


def test_rank_length_mismatch():
    with pytest.raises(DimensionError):
        rank(index_of({"a": [0, 0]}), [1, 2, 3])


def test_index_validation():
    with pytest.raises(ValidationError):
        RetrievalIndex(("a", "a"), np.zeros((2, 3)))
    a = FisherVec(np.ones(2), 1, 2, "l2")
    b = FisherVec(np.ones(2), 1, 2, "raw")
    with pytest.raises(ValidationError):
        RetrievalIndex.from_vectors(["a", "b"], [a, b])


def test_ap_examples():
    assert average_precision(["x", "y", "z"], {"x", "y"}) == 1.0
    assert average_precision(["x", "n", "y", "m"], {"x", "y"}) == pytest.approx(5 / 6, abs=1e-15)
    for r in range(1, 8):
        ranking = [f"n{k}" for k in range(10)]
        ranking[r - 1] = "hit"
        assert average_precision(ranking, {"hit"}) == 1 / r
    with pytest.raises(ValueError):
        average_precision(["x"], set())


@given(st.permutations(list(range(8))), st.data())
def test_ap_invariant_below_last_hit(perm, data):
    ranking = [f"i{k}" for k in perm]
    last = data.draw(st.integers(0, 7))
    relevant = {ranking[k] for k in data.draw(st.sets(st.integers(0, last), min_size=1))} | {ranking[last]}
    tail = ranking[last + 1:]
    shuffled = ranking[:last + 1] + data.draw(st.permutations(tail))
    ap = average_precision(ranking, relevant)
    assert 0 <= ap <= 1
    assert average_precision(shuffled, relevant) == ap


def test_evaluate_map_and_records():
    idx = index_of({"r1": [0.0, 0.0], "r2": [10.0, 0.0]})
    queries = [("q1", np.array([0.0, 0.1])), ("q2", np.array([0.0, 0.1]))]
    res = evaluate(idx, queries, {"q1": ["r1"], "q2": ["r2"]}, {"q1": "a", "q2": "b"})
    assert res.per_query == {"q1": 1.0, "q2": 0.5}
    assert res.map == 0.75
    assert res.per_class == {"a": 1.0, "b": 0.5}
    recs = [json.loads(line) for line in res.to_records().splitlines()]
    assert recs[0] == {"query": "q1", "ap": 1.0} and recs[-1] == {"map": 0.75}
    assert "MAP 0.7500" in res.to_table()


def test_evaluate_errors():
    idx = index_of({"r1": [0.0]})
    with pytest.raises(KeyError):
        evaluate(idx, [("q", np.zeros(1))], {})
    with pytest.raises(ValidationError):
        evaluate(idx, [("q", np.zeros(1))], {"q": ["nope"]})


@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_rank_invariant_to_zero_padding(seed, pad):
    rng = np.random.default_rng(seed)
    vecs = rng.normal(size=(12, 4)).round(1)  # rounding forces some ties
    ids = tuple(f"v{k:02d}" for k in rng.permutation(12))
    q = rng.normal(size=4).round(1)
    a = rank(RetrievalIndex(ids, vecs), q)
    b = rank(RetrievalIndex(ids, np.hstack([vecs, np.zeros((12, pad))])), np.r_[q, np.zeros(pad)])
    assert [i for i, _ in a] == [i for i, _ in b]


def test_identity_experiment_map_one():
    rng = np.random.default_rng(0)
    vecs = rng.normal(size=(10, 6))
    ids = [f"r{k}" for k in range(10)]
    res = evaluate(RetrievalIndex(tuple(ids), vecs), list(zip(ids, vecs)), {i: [i] for i in ids})
    assert res.map == 1.0


# synthetic generator -----------------------------------------------------------


def test_synth_shapes_and_truth():
    ds = synth_dataset(n_classes=3, refs_per_class=4, queries_per_class=2, T=30, D=20, seed=5)
    assert len(ds.references) == 12 and len(ds.queries) == 6 and not ds.distractors
    assert all(fs.T == 30 and fs.D == 20 for fs in ds.references.values())
    assert ds.truth["c01_qry001"] == [f"c01_ref{r:03d}" for r in range(4)]
    assert ds.classes["c02_ref003"] == "c02"
    assert ds.training_features().T == 12 * 30


def test_synth_deterministic():
    a = synth_dataset(n_classes=2, T=20, D=16, seed=3, n_distractors=5)
    b = synth_dataset(n_classes=2, T=20, D=16, seed=3, n_distractors=5)
    assert all(a.references[k] == b.references[k] for k in a.references)
    assert all(a.queries[k] == b.queries[k] for k in a.queries)
    assert all(a.distractors[k] == b.distractors[k] for k in a.distractors)


def test_synth_distractors_leave_rest_unchanged():
    a = synth_dataset(n_classes=2, T=20, D=16, seed=3)
    b = synth_dataset(n_classes=2, T=20, D=16, seed=3, n_distractors=30)
    assert all(a.references[k] == b.references[k] for k in a.references)
    assert all(a.queries[k] == b.queries[k] for k in a.queries)
    assert len(b.distractors) == 30 and set(b.database()) == set(b.references) | set(b.distractors)


@pytest.mark.parametrize("field,value", [("flip_rate", 0.5), ("flip_rate", -0.1), ("T", 0),
                                         ("n_distractors", -1), ("D", 2000)])
def test_synth_validation(field, value):
    with pytest.raises(ValidationError):
        synth_dataset(**{field: value})
