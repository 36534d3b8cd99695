"""Flat sentence-level vector index with exact inner-product search.

On-disk layout (all little-endian)::

    magic "DIDX" | version u32 | dim u32 | N u64
    N x ( id_len u16 | id utf-8 | ordinal u32 | dim x f32 )

External embedding files use the identical layout under the magic "DVEC".
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import Passage
from .encoder import EncoderParams, passage_matrix, project
from .errors import DimensionError, IndexFormatError, NumericalError

INDEX_MAGIC = b"DIDX"
VECTORS_MAGIC = b"DVEC"
INDEX_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
_ID_LEN = struct.Struct("<H")
_ORDINAL = struct.Struct("<I")


class SentenceKey(NamedTuple):
    passage_id: str
    ordinal: int


@dataclass
class SentenceIndex:
    keys: list
    vectors: np.ndarray  # N x dim, float32
    _vec64: np.ndarray = field(init=False, repr=False)
    key_rank: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.keys = [SentenceKey(str(p), int(o)) for p, o in self.keys]
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or len(self.vectors) != len(self.keys):
            raise ValueError("need exactly one vector row per key")
        if len(set(self.keys)) != len(self.keys):
            raise ValueError("duplicate sentence keys in index")
        self._vec64 = self.vectors.astype(np.float64)
        order = sorted(range(len(self.keys)), key=self.keys.__getitem__)
        self.key_rank = np.empty(len(self.keys), dtype=np.int64)
        self.key_rank[order] = np.arange(len(self.keys))

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def passage_ids(self) -> list:
        return list(dict.fromkeys(k.passage_id for k in self.keys))

    @property
    def avg_sentences_per_passage(self) -> float:
        return len(self.keys) / len(self.passage_ids) if self.keys else 0.0

    def default_depth(self, passages: int = 100) -> int:
        """Sentences to retrieve for ``passages`` passages: ceil(passages * avg sentences)."""
        return max(1, math.ceil(passages * self.avg_sentences_per_passage - 1e-9))

    def scores(self, query: np.ndarray) -> np.ndarray:
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.dim,):
            raise DimensionError(f"query has shape {q.shape}, index dim is {self.dim}")
        return self._vec64 @ q

    def same_as(self, other: "SentenceIndex") -> bool:
        return self.keys == other.keys and np.array_equal(self.vectors, other.vectors)


def build(passages: Sequence[Passage], params: EncoderParams) -> SentenceIndex:
    """One row per sentence, in passage order then sentence order."""
    if not passages:
        raise ValueError("cannot build an index from zero passages")
    keys, blocks = [], []
    for p in passages:
        try:
            X = passage_matrix(p, params.context_blend, params.feature_space_size)
        except Exception as exc:
            raise type(exc)(f"passage {p.id}: {exc}") from exc
        keys.extend(SentenceKey(p.id, s.ordinal) for s in p.sentences)
        blocks.append(X)
    X = sp.vstack(blocks, format="csr")
    return SentenceIndex(keys, project(params.context_projection, X))


def from_vectors(keys, vectors) -> SentenceIndex:
    return SentenceIndex(list(keys), np.asarray(vectors))


def search(index: SentenceIndex, query: np.ndarray, top_m: int) -> list:
    """Exact top-``top_m`` rows by inner product.

    Returns ``[(SentenceKey, score)]`` with scores non-increasing; equal
    scores are ordered by key ascending.
    """
    if top_m < 1:
        raise ValueError("top_m must be at least 1")
    if not np.all(np.isfinite(query)):
        raise ValueError("query has non-finite entries")
    scores = index.scores(query)
    if not np.all(np.isfinite(scores)):
        raise NumericalError("non-finite similarity scores")
    N = len(scores)
    m = min(top_m, N)
    if m < N:
        threshold = np.partition(scores, N - m)[N - m]
        cand = np.flatnonzero(scores >= threshold)
    else:
        cand = np.arange(N)
    order = cand[np.lexsort((index.key_rank[cand], -scores[cand]))][:m]
    return [(index.keys[i], float(scores[i])) for i in order]


def passage_mean_index(index: SentenceIndex) -> SentenceIndex:
    """One row per passage: the mean of its sentence vectors (passage-level baseline)."""
    groups: dict = {}
    for row, key in enumerate(index.keys):
        groups.setdefault(key.passage_id, []).append(row)
    keys = [SentenceKey(pid, 0) for pid in groups]
    vecs = np.stack([index._vec64[rows].mean(axis=0) for rows in groups.values()])
    return SentenceIndex(keys, vecs)


# ---------------------------------------------------------------------------
# persistence

def _write(index: SentenceIndex, path, magic: bytes) -> None:
    vec = index.vectors.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, INDEX_VERSION, index.dim, len(index)))
        for key, row in zip(index.keys, vec):
            pid = key.passage_id.encode("utf-8")
            if len(pid) > 0xFFFF:
                raise ValueError(f"passage id too long: {key.passage_id[:40]}...")
            fh.write(_ID_LEN.pack(len(pid)))
            fh.write(pid)
            fh.write(_ORDINAL.pack(key.ordinal))
            fh.write(row.tobytes())


def _read(path, magic: bytes) -> SentenceIndex:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise IndexFormatError(f"{path}: file too short for header")
    got, version, dim, n = _HEADER.unpack_from(raw)
    if got != magic:
        raise IndexFormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    if version != INDEX_VERSION:
        raise IndexFormatError(f"{path}: unsupported version {version}")
    if dim < 1:
        raise IndexFormatError(f"{path}: bad dimension {dim}")
    if n * (_ID_LEN.size + _ORDINAL.size + 4 * dim) > len(raw) - _HEADER.size:
        raise IndexFormatError(f"{path}: header claims {n} rows, file is too short")
    keys, vecs = [], np.empty((n, dim), dtype=np.float32)
    off, width = _HEADER.size, 4 * dim
    try:
        for i in range(n):
            (ln,) = _ID_LEN.unpack_from(raw, off)
            off += _ID_LEN.size
            pid = raw[off:off + ln]
            if len(pid) != ln:
                raise IndexFormatError(f"{path}: truncated at row {i}")
            off += ln
            (ordinal,) = _ORDINAL.unpack_from(raw, off)
            off += _ORDINAL.size
            if off + width > len(raw):
                raise IndexFormatError(f"{path}: truncated at row {i}")
            vecs[i] = np.frombuffer(raw, dtype="<f4", count=dim, offset=off)
            off += width
            keys.append(SentenceKey(pid.decode("utf-8"), ordinal))
    except (struct.error, UnicodeDecodeError) as exc:
        raise IndexFormatError(f"{path}: corrupt row data ({exc})") from None
    if off != len(raw):
        raise IndexFormatError(f"{path}: {len(raw) - off} trailing bytes")
    try:
        return SentenceIndex(keys, vecs)
    except ValueError as exc:
        raise IndexFormatError(f"{path}: {exc}") from None


def save(index: SentenceIndex, path) -> None:
    _write(index, path, INDEX_MAGIC)


def load(path) -> SentenceIndex:
    return _read(path, INDEX_MAGIC)


def export_vectors(index: SentenceIndex, path) -> None:
    _write(index, path, VECTORS_MAGIC)


def import_vectors(path) -> SentenceIndex:
    """Load externally produced sentence embeddings (magic "DVEC")."""
    return _read(path, VECTORS_MAGIC)
