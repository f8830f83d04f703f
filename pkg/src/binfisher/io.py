"""On-disk formats: features, codebooks, vectors (binary) and models, manifests (JSON).

Binary layouts, all integers little-endian:

features  ``b"BFVF"`` | version u32 | D u32 | T u64 | T rows of ceil(D/8) bytes
codebook  same as features with magic ``b"BFVC"`` (rows are centroids)
vectors   ``b"BFVV"`` | version u32 | n_blocks u32 | block_dim u32 | count u64 |
          count records of: norm code u8 | id length u16 | utf-8 id |
          n_blocks*block_dim float64

Text formats are JSON; floats go through ``repr`` so they round-trip exactly.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bitdesc import BinaryDescriptor, FeatureSet, n_bytes
from .bmm import BmmModel
from .bovw import BinaryCodebook
from .errors import (BadMagicError, DimensionError, FormatError, PaddingError, TruncatedFileError,
                     UnsupportedVersionError, ValidationError)
from .evaluation import RetrievalIndex
from .fisher import NORM_STATES

FEATURE_MAGIC = b"BFVF"
CODEBOOK_MAGIC = b"BFVC"
VECTOR_MAGIC = b"BFVV"
FORMAT_VERSION = 1
MODEL_SCHEMA = 1
MANIFEST_SCHEMA = 1
MODEL_FORMAT = "binfisher-bmm"
MANIFEST_FORMAT = "binfisher-manifest"

_BITS_HEADER = struct.Struct("<4sIIQ")
_VEC_HEADER = struct.Struct("<4sIIIQ")
_NORM_CODES = {name: code for code, name in enumerate(NORM_STATES)}
_UNIT_STATES = {"l2", "power_l2", "intra"}
ROLES = ("reference", "query", "distractor")


def _write_atomic(path, data: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


# features / codebooks ----------------------------------------------------------


def encode_features(fs: FeatureSet, magic: bytes = FEATURE_MAGIC) -> bytes:
    return _BITS_HEADER.pack(magic, FORMAT_VERSION, fs.D, fs.T) + fs.packed.tobytes()


def decode_features(buf: bytes, magic: bytes = FEATURE_MAGIC) -> FeatureSet:
    if len(buf) < _BITS_HEADER.size:
        raise TruncatedFileError(f"header needs {_BITS_HEADER.size} bytes, got {len(buf)}")
    got, version, dims, count = _BITS_HEADER.unpack_from(buf)
    if got != magic:
        raise BadMagicError(f"expected magic {magic!r}, got {got!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"format version {version} (supported: {FORMAT_VERSION})")
    if not 1 <= dims <= 1024:
        raise FormatError(f"D={dims} out of range")
    row = n_bytes(dims)
    payload = len(buf) - _BITS_HEADER.size
    if count > payload // row:
        raise TruncatedFileError(f"header promises {count} rows of {row} bytes, payload has {payload} bytes")
    if payload != count * row:
        raise FormatError(f"{payload - count * row} trailing bytes after payload")
    packed = np.frombuffer(buf, dtype=np.uint8, offset=_BITS_HEADER.size).reshape(count, row)
    rem = dims % 8
    if rem and count and np.any(packed[:, -1] >> rem):
        raise PaddingError("nonzero padding bits beyond D")
    return FeatureSet(packed, dims)


def write_features(path, fs: FeatureSet):
    _write_atomic(path, encode_features(fs))


def read_features(path) -> FeatureSet:
    return decode_features(Path(path).read_bytes())


def save_codebook(path, cb: BinaryCodebook):
    _write_atomic(path, encode_features(cb.centroids, CODEBOOK_MAGIC))


def load_codebook(path) -> BinaryCodebook:
    centroids = decode_features(Path(path).read_bytes(), CODEBOOK_MAGIC)
    if centroids.T < 1:
        raise ValidationError("K", "codebook has no centroids")
    return BinaryCodebook(centroids)


def read_hex_lines(path, dims: int) -> FeatureSet:
    """One descriptor per line as hex bytes (byte 0 first, bit 0 = LSB of byte 0)."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            data = bytes.fromhex(line)
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
        if len(data) < n_bytes(dims):
            raise FormatError(f"line {lineno}: {len(data)} bytes, need {n_bytes(dims)} for D={dims}")
        desc = BinaryDescriptor.from_bits(np.unpackbits(np.frombuffer(data, np.uint8), bitorder="little")[:dims])
        rows.append(desc)
    return FeatureSet.from_descriptors(rows, dims)


# models ----------------------------------------------------------------------


def model_to_json(model: BmmModel) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "schema_version": MODEL_SCHEMA,
        "N": model.N,
        "D": model.D,
        "eps": model.eps,
        "seed": model.seed,
        "rng": model.rng_name,
        "weights": model.weights.tolist(),
        "mu": model.mu.tolist(),
        "training": {"iterations": model.iterations, "final_log_likelihood": model.log_likelihood},
    }
    return json.dumps(doc, indent=1) + "\n"


def _field(doc, name, kind):
    if name not in doc:
        raise ValidationError(name, "missing")
    value = doc[name]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ValidationError(name, f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def model_from_json(text: str) -> BmmModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise BadMagicError(f"not a {MODEL_FORMAT} document")
    if doc.get("schema_version") != MODEL_SCHEMA:
        raise UnsupportedVersionError(f"model schema {doc.get('schema_version')!r}")
    n = _field(doc, "N", int)
    d = _field(doc, "D", int)
    weights = np.array(_field(doc, "weights", list), dtype=np.float64)
    try:
        mu = np.array(_field(doc, "mu", list), dtype=np.float64)
    except ValueError:
        raise ValidationError("mu", "rows have unequal lengths") from None
    if weights.shape != (n,):
        raise ValidationError("weights", f"expected {n} entries, got {weights.shape}")
    if mu.shape != (n, d):
        raise ValidationError("mu", f"expected shape ({n}, {d}), got {mu.shape}")
    training = doc.get("training") or {}
    seed = doc.get("seed")
    if seed is not None and not isinstance(seed, int):
        raise ValidationError("seed", "expected an integer or null")
    return BmmModel(weights, mu, eps=_field(doc, "eps", float), seed=seed,
                    rng_name=str(doc.get("rng", "")), iterations=int(training.get("iterations", 0)),
                    log_likelihood=training.get("final_log_likelihood"))


def save_model(path, model: BmmModel):
    _write_atomic(path, model_to_json(model).encode())


def load_model(path) -> BmmModel:
    return model_from_json(Path(path).read_text())


# vectors -----------------------------------------------------------------------


def encode_vectors(ids, vecs, check: bool = True) -> bytes:
    vecs = list(vecs)
    ids = [str(i) for i in ids]
    if len(ids) != len(vecs):
        raise ValueError(f"{len(ids)} ids for {len(vecs)} vectors")
    if not vecs:
        raise ValueError("no vectors to save")
    n_blocks = vecs[0].n_components
    length = len(vecs[0].values)
    if check:
        RetrievalIndex.from_vectors(ids, vecs)
    out = [_VEC_HEADER.pack(VECTOR_MAGIC, FORMAT_VERSION, n_blocks, length // n_blocks, len(vecs))]
    for i, v in zip(ids, vecs):
        raw = i.encode()
        if len(raw) > 0xFFFF:
            raise ValidationError("id", "longer than 65535 bytes")
        if len(v.values) != length:
            raise DimensionError("vectors differ in length")
        out.append(struct.pack("<BH", _NORM_CODES[v.norm_state], len(raw)) + raw)
        out.append(np.asarray(v.values, dtype="<f8").tobytes())
    return b"".join(out)


def decode_vectors(buf: bytes) -> RetrievalIndex:
    if len(buf) < _VEC_HEADER.size:
        raise TruncatedFileError("vectors header truncated")
    magic, version, n_blocks, block_dim, count = _VEC_HEADER.unpack_from(buf)
    if magic != VECTOR_MAGIC:
        raise BadMagicError(f"expected magic {VECTOR_MAGIC!r}, got {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"format version {version} (supported: {FORMAT_VERSION})")
    if n_blocks < 1 or block_dim < 1:
        raise FormatError("n_blocks and block_dim must be positive")
    length = n_blocks * block_dim
    rec_min = 3 + 8 * length
    if count > (len(buf) - _VEC_HEADER.size) // rec_min:
        raise TruncatedFileError(f"header promises {count} records, file is too short")
    pos = _VEC_HEADER.size
    ids, rows, states = [], [], set()
    for _ in range(count):
        if pos + 3 > len(buf):
            raise TruncatedFileError("record header truncated")
        code, id_len = struct.unpack_from("<BH", buf, pos)
        pos += 3
        end = pos + id_len + 8 * length
        if end > len(buf):
            raise TruncatedFileError("record truncated")
        if code >= len(NORM_STATES):
            raise ValidationError("norm_state", f"unknown code {code}")
        try:
            ids.append(buf[pos:pos + id_len].decode())
        except UnicodeDecodeError:
            raise FormatError("id is not valid utf-8") from None
        rows.append(np.frombuffer(buf, dtype="<f8", count=length, offset=pos + id_len))
        states.add(NORM_STATES[code])
        pos = end
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after last record")
    if len(states) > 1:
        raise ValidationError("norm_state", f"mixed norm states in one index: {sorted(states)}")
    state = states.pop() if states else "raw"
    vectors = np.array(rows, dtype=np.float64).reshape(count, length)
    if not np.all(np.isfinite(vectors)):
        raise ValidationError("values", "non-finite entries")
    if state in _UNIT_STATES and count:
        norms = np.linalg.norm(vectors, axis=1)
        bad = (np.abs(norms - 1) > 1e-6) & (norms != 0)
        if np.any(bad):
            raise ValidationError("values", f"{state} vectors must have unit norm")
    return RetrievalIndex(tuple(ids), vectors, state, n_blocks)


def save_vectors(path, ids, vecs):
    _write_atomic(path, encode_vectors(ids, vecs))


def load_vectors(path) -> RetrievalIndex:
    return decode_vectors(Path(path).read_bytes())


def save_index(path, index: RetrievalIndex):
    """Write an already-stacked index in the vectors format."""
    from .fisher import FisherVec

    dims = index.dim // index.n_blocks
    vecs = [FisherVec(row, index.n_blocks, dims, index.norm_state) for row in index.vectors]
    save_vectors(path, index.ids, vecs)


# manifests ---------------------------------------------------------------------


@dataclass
class ManifestEntry:
    id: str
    label: str
    path: str
    role: str


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    truth: dict[str, list[str]] = field(default_factory=dict)
    base_dir: Path | None = None

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise ValidationError("entries", "image ids must be unique")
        for e in self.entries:
            if e.role not in ROLES:
                raise ValidationError("role", f"{e.id!r} has unknown role {e.role!r}")
        roles = {e.id: e.role for e in self.entries}
        for q, rel in self.truth.items():
            if roles.get(q) != "query":
                raise ValidationError("truth", f"{q!r} is not a query in this manifest")
            for r in rel:
                if roles.get(r) != "reference":
                    raise ValidationError("truth", f"{r!r} (relevant to {q!r}) is not a reference")

    def __eq__(self, other):
        if not isinstance(other, Manifest):
            return NotImplemented
        return self.entries == other.entries and self.truth == other.truth

    def by_role(self, role: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.role == role]

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() or self.base_dir is None else self.base_dir / p

    @property
    def classes(self) -> dict[str, str]:
        return {e.id: e.label for e in self.entries}


def manifest_to_json(m: Manifest) -> str:
    doc = {
        "format": MANIFEST_FORMAT,
        "schema_version": MANIFEST_SCHEMA,
        "images": [{"id": e.id, "class": e.label, "features": e.path, "role": e.role} for e in m.entries],
        "truth": {q: list(rel) for q, rel in m.truth.items()},
    }
    return json.dumps(doc, indent=1, ensure_ascii=False) + "\n"


def manifest_from_json(text: str, base_dir=None, check_paths: bool = False) -> Manifest:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != MANIFEST_FORMAT:
        raise BadMagicError(f"not a {MANIFEST_FORMAT} document")
    if doc.get("schema_version") != MANIFEST_SCHEMA:
        raise UnsupportedVersionError(f"manifest schema {doc.get('schema_version')!r}")
    entries = []
    for n, item in enumerate(_field(doc, "images", list)):
        if not isinstance(item, dict):
            raise ValidationError(f"images[{n}]", "expected an object")
        entries.append(ManifestEntry(str(_field(item, "id", str)), str(_field(item, "class", str)),
                                     str(_field(item, "features", str)), str(_field(item, "role", str))))
    truth = doc.get("truth", {})
    if not isinstance(truth, dict) or not all(isinstance(v, list) for v in truth.values()):
        raise ValidationError("truth", "expected a mapping of query id to a list of reference ids")
    m = Manifest(entries, {str(k): [str(x) for x in v] for k, v in truth.items()},
                 Path(base_dir) if base_dir is not None else None)
    if check_paths:
        for e in m.entries:
            if not m.resolve(e).is_file():
                raise ValidationError("features", f"{e.id!r}: no such file {m.resolve(e)}")
    return m


def save_manifest(path, m: Manifest):
    _write_atomic(path, manifest_to_json(m).encode())


def load_manifest(path, check_paths: bool = True) -> Manifest:
    path = Path(path)
    return manifest_from_json(path.read_text(), base_dir=path.parent, check_paths=check_paths)
