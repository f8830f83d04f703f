"""Packed binary descriptors and Hamming-space kernels.

Bit ``d`` of a descriptor lives in byte ``d // 8`` at bit position ``d % 8``
(least significant first), which is ``np.packbits(..., bitorder="little")``.
Padding bits past ``D`` are always zero, so whole-word XOR + popcount gives
the Hamming distance without masking.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numba
import numpy as np
from numba import types
from numba.extending import intrinsic

from .errors import DimensionError, ValidationError

MAX_DIMS = 1024


def n_bytes(dims: int) -> int:
    return (dims + 7) // 8


def _check_dims(dims: int) -> int:
    dims = int(dims)
    if not 1 <= dims <= MAX_DIMS:
        raise ValidationError("D", f"must be in [1, {MAX_DIMS}], got {dims}")
    return dims


def _pad_mask(dims: int) -> int:
    """Mask of the valid bits in the last byte."""
    rem = dims % 8
    return 0xFF if rem == 0 else (1 << rem) - 1


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack a ``(T, D)`` array of 0/1 values into ``(T, ceil(D/8))`` uint8."""
    bits = np.asarray(bits)
    if bits.ndim != 2:
        raise ValueError(f"expected a 2-d bit array, got shape {bits.shape}")
    if bits.size and not np.all((bits == 0) | (bits == 1)):
        raise ValidationError("bits", "values must be 0 or 1")
    return np.packbits(bits.astype(np.uint8), axis=1, bitorder="little")


def unpack_bits(packed: np.ndarray, dims: int) -> np.ndarray:
    """Inverse of :func:`pack_bits`; returns uint8 of shape ``(T, D)``."""
    return np.unpackbits(packed, axis=1, count=dims, bitorder="little")


def to_words(packed: np.ndarray) -> np.ndarray:
    """Reinterpret packed rows as uint64 words, zero-padding to 8 bytes."""
    t, nb = packed.shape
    nw = max(1, (nb + 7) // 8)
    buf = np.zeros((t, nw * 8), dtype=np.uint8)
    buf[:, :nb] = packed
    return buf.view(np.uint64)


@dataclass(frozen=True)
class BinaryDescriptor:
    """One ``D``-bit binary feature.  Immutable and hashable."""

    data: bytes
    D: int

    def __post_init__(self):
        _check_dims(self.D)
        if len(self.data) != n_bytes(self.D):
            raise ValidationError("bits", f"expected {n_bytes(self.D)} bytes, got {len(self.data)}")
        if self.data[-1] & ~_pad_mask(self.D) & 0xFF:
            raise ValidationError("bits", "padding bits beyond D must be zero")

    @classmethod
    def from_bits(cls, bits: Iterable[int]) -> "BinaryDescriptor":
        arr = np.asarray(list(bits), dtype=np.uint8)
        return cls(pack_bits(arr[None, :])[0].tobytes(), len(arr))

    @classmethod
    def from_string(cls, s: str) -> "BinaryDescriptor":
        """Build from a string such as ``"1011"`` (bit 0 first)."""
        if not s or set(s) - {"0", "1"}:
            raise ValueError(f"not a bit string: {s!r}")
        return cls.from_bits(int(c) for c in s)

    def bit(self, d: int) -> int:
        if not 0 <= d < self.D:
            raise IndexError(d)
        return (self.data[d >> 3] >> (d & 7)) & 1

    def bits(self) -> np.ndarray:
        return unpack_bits(np.frombuffer(self.data, dtype=np.uint8)[None, :], self.D)[0]

    def __str__(self):
        return "".join(str(b) for b in self.bits())

    def __len__(self):
        return self.D


def hamming(a: BinaryDescriptor, b: BinaryDescriptor) -> int:
    """Number of differing bits between two descriptors of equal length."""
    if a.D != b.D:
        raise DimensionError(f"dimension mismatch: {a.D} != {b.D}")
    return (int.from_bytes(a.data, "little") ^ int.from_bytes(b.data, "little")).bit_count()


def truncate(x: BinaryDescriptor, d_prime: int) -> BinaryDescriptor:
    """Keep the first ``d_prime`` bits of ``x``."""
    if not 1 <= d_prime <= x.D:
        raise ValidationError("d_prime", f"must be in [1, {x.D}], got {d_prime}")
    data = bytearray(x.data[: n_bytes(d_prime)])
    data[-1] &= _pad_mask(d_prime)
    return BinaryDescriptor(bytes(data), d_prime)


class FeatureSet:
    """The ``T`` descriptors extracted from one image, stored packed.

    ``D`` is validated once here; downstream code never re-checks it per
    descriptor.  The packed array is read-only.
    """

    def __init__(self, packed: np.ndarray, dims: int):
        dims = _check_dims(dims)
        packed = np.array(packed, dtype=np.uint8, copy=True)
        if packed.ndim != 2 or packed.shape[1] != n_bytes(dims):
            raise ValidationError(
                "packed", f"expected shape (T, {n_bytes(dims)}), got {packed.shape}"
            )
        mask = _pad_mask(dims)
        if mask != 0xFF and len(packed) and np.any(packed[:, -1] & ~np.uint8(mask)):
            raise ValidationError("packed", "padding bits beyond D must be zero")
        packed.flags.writeable = False
        self._packed = packed
        self._dims = dims

    @classmethod
    def from_bits(cls, bits) -> "FeatureSet":
        bits = np.asarray(bits)
        if bits.ndim != 2:
            raise ValueError(f"expected (T, D) bits, got shape {bits.shape}")
        return cls(pack_bits(bits), bits.shape[1])

    @classmethod
    def from_descriptors(cls, descs: Sequence[BinaryDescriptor], dims: int | None = None) -> "FeatureSet":
        descs = list(descs)
        if not descs:
            if dims is None:
                raise ValueError("dims is required for an empty FeatureSet")
            return cls.empty(dims)
        d0 = descs[0].D if dims is None else dims
        for x in descs:
            if x.D != d0:
                raise DimensionError(f"descriptor has D={x.D}, expected {d0}")
        packed = np.frombuffer(b"".join(x.data for x in descs), dtype=np.uint8)
        return cls(packed.reshape(len(descs), n_bytes(d0)), d0)

    @classmethod
    def empty(cls, dims: int) -> "FeatureSet":
        return cls(np.zeros((0, n_bytes(dims)), dtype=np.uint8), dims)

    @property
    def D(self) -> int:
        return self._dims

    @property
    def T(self) -> int:
        return self._packed.shape[0]

    @property
    def packed(self) -> np.ndarray:
        return self._packed

    @cached_property
    def words(self) -> np.ndarray:
        """Packed rows as uint64 words (read-only), for popcount kernels."""
        w = to_words(self._packed)
        w.flags.writeable = False
        return w

    @cached_property
    def words_t(self) -> np.ndarray:
        """``words`` transposed to ``(n_words, T)``, contiguous."""
        w = np.ascontiguousarray(self.words.T)
        w.flags.writeable = False
        return w

    def bits(self) -> np.ndarray:
        """Unpacked ``(T, D)`` uint8 array of 0/1."""
        return unpack_bits(self._packed, self._dims)

    def __len__(self):
        return self.T

    def __getitem__(self, t: int) -> BinaryDescriptor:
        return BinaryDescriptor(self._packed[t].tobytes(), self._dims)

    def __iter__(self) -> Iterator[BinaryDescriptor]:
        for t in range(self.T):
            yield self[t]

    def __eq__(self, other):
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return self._dims == other._dims and np.array_equal(self._packed, other._packed)

    def __repr__(self):
        return f"FeatureSet(T={self.T}, D={self.D})"

    def truncate(self, d_prime: int) -> "FeatureSet":
        """Keep the first ``d_prime`` bits of every descriptor."""
        if not 1 <= d_prime <= self._dims:
            raise ValidationError("d_prime", f"must be in [1, {self._dims}], got {d_prime}")
        packed = self._packed[:, : n_bytes(d_prime)].copy()
        if len(packed):
            packed[:, -1] &= np.uint8(_pad_mask(d_prime))
        return FeatureSet(packed, d_prime)

    def concat(self, other: "FeatureSet") -> "FeatureSet":
        if other.D != self.D:
            raise DimensionError(f"dimension mismatch: {self.D} != {other.D}")
        return FeatureSet(np.vstack([self._packed, other._packed]), self._dims)

    def take(self, index) -> "FeatureSet":
        return FeatureSet(self._packed[np.asarray(index)], self._dims)


# popcount kernels -----------------------------------------------------------

@intrinsic
def _popcount(typingctx, x):
    """Hardware population count (LLVM ``ctpop``) of a uint64."""
    if x != types.uint64:
        return None

    def codegen(context, builder, signature, args):
        return builder.ctpop(args[0])

    return types.uint64(types.uint64), codegen


# Centers are passed word-major (nw, m) so the innermost loop runs over
# contiguous centers and vectorizes.


@numba.njit(cache=True)
def _hamming_rows(a, bt, r, acc):
    acc[:] = 0
    for k in range(a.shape[1]):
        w = a[r, k]
        for c in range(bt.shape[1]):
            acc[c] += _popcount(w ^ bt[k, c])


@numba.njit(cache=True)
def _hamming_matrix(a, bt):
    n = a.shape[0]
    m = bt.shape[1]
    out = np.empty((n, m), dtype=np.int32)
    acc = np.empty(m, dtype=np.uint64)
    for r in range(n):
        _hamming_rows(a, bt, r, acc)
        for c in range(m):
            out[r, c] = acc[c]
    return out


@numba.njit(cache=True)
def _hamming_argmin(a, bt):
    n = a.shape[0]
    m = bt.shape[1]
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.int64)
    acc = np.empty(m, dtype=np.uint64)
    for r in range(n):
        _hamming_rows(a, bt, r, acc)
        best = acc[0]
        bi = 0
        for c in range(1, m):
            # strict < keeps the lowest index on ties
            if acc[c] < best:
                best = acc[c]
                bi = c
        idx[r] = bi
        dist[r] = best
    return idx, dist


def hamming_matrix(a: FeatureSet, b: FeatureSet) -> np.ndarray:
    """All-pairs Hamming distances, shape ``(a.T, b.T)``."""
    if a.D != b.D:
        raise DimensionError(f"dimension mismatch: {a.D} != {b.D}")
    return _hamming_matrix(a.words, b.words_t)


def nearest(x: FeatureSet, centers: FeatureSet) -> tuple[np.ndarray, np.ndarray]:
    """Index and distance of the closest center for every row of ``x``.

    Ties go to the lowest center index.
    """
    if x.D != centers.D:
        raise DimensionError(f"dimension mismatch: {x.D} != {centers.D}")
    if centers.T == 0:
        raise ValueError("no centers")
    return _hamming_argmin(x.words, centers.words_t)
