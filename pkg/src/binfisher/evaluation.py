"""Euclidean retrieval and mean average precision."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numba
import numpy as np

from .errors import DimensionError, ValidationError


@dataclass(frozen=True, eq=False)
class RetrievalIndex:
    """Database vectors with their ids; one length and one norm state throughout."""

    ids: tuple[str, ...]
    vectors: np.ndarray
    norm_state: str = "raw"
    n_blocks: int = 1

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        vecs = np.array(self.vectors, dtype=np.float64, ndmin=2)
        if len(ids) != len(set(ids)):
            raise ValidationError("ids", "must be unique")
        if vecs.shape[0] != len(ids):
            raise ValidationError("vectors", f"{vecs.shape[0]} vectors for {len(ids)} ids")
        if self.n_blocks < 1 or vecs.shape[1] % self.n_blocks:
            raise ValidationError("n_blocks", f"vector length {vecs.shape[1]} is not a multiple of {self.n_blocks}")
        vecs.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "vectors", vecs)

    @classmethod
    def from_vectors(cls, ids: Sequence[str], vecs: Sequence) -> "RetrievalIndex":
        """Stack FisherVec/BowVector objects, rejecting mixed norm states or lengths."""
        vecs = list(vecs)
        if not vecs:
            raise ValueError("empty index")
        states = {v.norm_state for v in vecs}
        if len(states) > 1:
            raise ValidationError("norm_state", f"mixed norm states in one index: {sorted(states)}")
        lengths = {len(v.values) for v in vecs}
        if len(lengths) > 1:
            raise DimensionError(f"mixed vector lengths in one index: {sorted(lengths)}")
        return cls(tuple(ids), np.stack([v.values for v in vecs]), states.pop(), vecs[0].n_components)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.ids)

    def subset(self, ids: Sequence[str]) -> "RetrievalIndex":
        pos = {k: n for n, k in enumerate(self.ids)}
        return RetrievalIndex(tuple(ids), self.vectors[[pos[i] for i in ids]], self.norm_state, self.n_blocks)

    def vector(self, id_: str) -> np.ndarray:
        return self.vectors[self.ids.index(id_)]


def _distances(index: RetrievalIndex, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.dim,):
        raise DimensionError(f"query has shape {q.shape}, index vectors have length {index.dim}")
    return np.sqrt(_sq_dist(index.vectors, q))


@numba.njit(cache=True)
def _sq_dist(vecs, q):
    # strict left-to-right sum per row: trailing zero dims cannot change a
    # result, unlike numpy's length-dependent pairwise summation
    out = np.empty(vecs.shape[0])
    for r in range(vecs.shape[0]):
        s = 0.0
        for j in range(vecs.shape[1]):
            d = vecs[r, j] - q[j]
            s += d * d
        out[r] = s
    return out


def _order(index: RetrievalIndex, dist: np.ndarray) -> np.ndarray:
    # ascending distance, then ascending id
    id_rank = np.argsort(np.array(index.ids, dtype=object), kind="stable")
    tiebreak = np.empty(len(id_rank), dtype=np.int64)
    tiebreak[id_rank] = np.arange(len(id_rank))
    return np.lexsort((tiebreak, dist))


def rank(index: RetrievalIndex, q) -> list[tuple[str, float]]:
    """Database ids sorted by Euclidean distance to ``q`` (ties: ascending id)."""
    dist = _distances(index, q)
    return [(index.ids[k], float(dist[k])) for k in _order(index, dist)]


def average_precision(ranking: Sequence[str], relevant) -> float:
    """Non-interpolated AP: mean of precision@k over the ranks k of relevant items.

    Relevant items missing from ``ranking`` count as never retrieved.
    """
    relevant = set(relevant)
    if not relevant:
        raise ValueError("relevant set is empty")
    hits = 0
    total = 0.0
    for k, item in enumerate(ranking, start=1):
        if item in relevant:
            hits += 1
            total += hits / k
    return total / len(relevant)


@dataclass
class EvalResult:
    per_query: dict[str, float]
    map: float
    per_class: dict[str, float] = field(default_factory=dict)

    def to_records(self) -> str:
        """One JSON record per query, then a footer with the MAP."""
        lines = [json.dumps({"query": q, "ap": ap}) for q, ap in self.per_query.items()]
        lines += [json.dumps({"class": c, "map": m}) for c, m in self.per_class.items()]
        lines.append(json.dumps({"map": self.map}))
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        width = max([len("query")] + [len(q) for q in self.per_query])
        out = [f"{'query':<{width}}  AP"]
        out += [f"{q:<{width}}  {ap:.4f}" for q, ap in self.per_query.items()]
        if self.per_class:
            out.append("")
            cw = max(len("class"), *(len(c) for c in self.per_class))
            out.append(f"{'class':<{cw}}  MAP")
            out += [f"{c:<{cw}}  {m:.4f}" for c, m in self.per_class.items()]
        out.append(f"MAP {self.map:.4f} over {len(self.per_query)} queries")
        return "\n".join(out) + "\n"


def evaluate(index: RetrievalIndex, queries: Sequence[tuple[str, object]],
             truth: Mapping[str, Sequence[str]],
             classes: Mapping[str, str] | None = None) -> EvalResult:
    """MAP of ``queries`` against ``index``; optional per-class means keyed by query class."""
    known = set(index.ids)
    per_query = {}
    for qid, vec in queries:
        if qid not in truth:
            raise KeyError(f"no relevance truth for query {qid!r}")
        rel = set(truth[qid])
        missing = rel - known
        if missing:
            raise ValidationError("truth", f"query {qid!r} lists ids not in the index: {sorted(missing)[:5]}")
        values = getattr(vec, "values", vec)
        ranking = [i for i, _ in rank(index, values)]
        per_query[qid] = average_precision(ranking, rel)
    if not per_query:
        raise ValueError("no queries")
    result = EvalResult(per_query, float(np.mean(list(per_query.values()))))
    if classes:
        groups: dict[str, list[float]] = {}
        for qid, ap in per_query.items():
            groups.setdefault(classes[qid], []).append(ap)
        result.per_class = {c: float(np.mean(v)) for c, v in sorted(groups.items())}
    return result
