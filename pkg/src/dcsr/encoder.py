"""Bi-encoder over hashed character trigrams, and the contrastive loss.

Questions and contextual sentences are embedded by two independent linear
towers::

    question  ->  Q @ f(q)
    sentence  ->  C @ (alpha * f(sentence) + (1 - alpha) * f(passage))

where ``f`` is the L2-normalised count vector of hashed character trigrams
and ``alpha`` trades sentence-local against passage-global content
(``alpha = 1`` switches context off). Similarity is the inner product.
"""

from __future__ import annotations

import struct
import zlib
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import Passage, normalize_text
from .errors import DimensionError, EmptyText, IncompatibleCheckpoint, NumericalError

IN_BATCH_GOLD = "in_batch_gold"
BM25_NEGATIVE = "bm25_negative"
IN_PASSAGE_NEGATIVE = "in_passage_negative"
ORIGINS = (IN_BATCH_GOLD, BM25_NEGATIVE, IN_PASSAGE_NEGATIVE)

CHECKPOINT_MAGIC = b"DCSR"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIId")


@dataclass
class EncoderParams:
    question_projection: np.ndarray  # dim x F
    context_projection: np.ndarray  # dim x F
    context_blend: float = 0.7
    feature_space_size: int = 2**15
    seed: Optional[int] = None

    def __post_init__(self):
        F = self.feature_space_size
        if F < 1 or F & (F - 1):
            raise ValueError(f"feature_space_size must be a power of two, got {F}")
        if not 0.0 <= self.context_blend <= 1.0:
            raise ValueError(f"context_blend must lie in [0, 1], got {self.context_blend}")
        for name in ("question_projection", "context_projection"):
            # column-major: feature columns are gathered and updated in blocks
            m = np.asfortranarray(getattr(self, name), dtype=np.float64)
            setattr(self, name, m)
            if m.ndim != 2 or m.shape[1] != F:
                raise DimensionError(f"{name} must be dim x {F}, got {m.shape}")
            if not np.all(np.isfinite(m)):
                raise NumericalError(f"{name} has non-finite entries")
        if self.question_projection.shape != self.context_projection.shape:
            raise DimensionError("question and context projections differ in shape")

    @property
    def dim(self) -> int:
        return self.question_projection.shape[0]

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.question_projection.copy(order="F"),
                             self.context_projection.copy(order="F"),
                             self.context_blend, self.feature_space_size, self.seed)


@dataclass
class EncoderGradient:
    question_projection: np.ndarray
    context_projection: np.ndarray


def init_params(dim: int = 64, feature_space_size: int = 2**15, context_blend: float = 0.7,
                seed: int = 0, scale: Optional[float] = None) -> EncoderParams:
    """Independent Gaussian towers; default scale keeps embedding norms near 1."""
    if dim < 1:
        raise ValueError("dim must be positive")
    scale = 1.0 / np.sqrt(dim) if scale is None else scale
    rng = np.random.default_rng(seed)
    q = rng.normal(0.0, scale, size=(dim, feature_space_size))
    c = rng.normal(0.0, scale, size=(dim, feature_space_size))
    return EncoderParams(q, c, context_blend, feature_space_size, seed)


# ---------------------------------------------------------------------------
# features

@lru_cache(maxsize=200_000)
def _trigram_features(text: str, F: int) -> tuple[np.ndarray, np.ndarray]:
    padded = f" {normalize_text(text)} "
    counts = Counter(
        zlib.crc32(padded[i:i + 3].encode("utf-8")) & (F - 1) for i in range(len(padded) - 2)
    )
    idx = np.fromiter(counts.keys(), dtype=np.int64, count=len(counts))
    val = np.fromiter(counts.values(), dtype=np.float64, count=len(counts))
    order = np.argsort(idx)
    idx, val = idx[order], val[order]
    val /= np.sqrt(np.dot(val, val))
    idx.flags.writeable = False
    val.flags.writeable = False
    return idx, val


def text_features(text: str, F: int) -> tuple[np.ndarray, np.ndarray]:
    """Sparse unit-norm hashed trigram vector of ``text`` as (indices, values)."""
    if not text or not text.strip():
        raise EmptyText("cannot featurize empty text")
    return _trigram_features(text, F)


def sentence_features(sentence_text: str, passage_text: str, alpha: float, F: int):
    li, lv = text_features(sentence_text, F)
    if alpha == 1.0:
        return li, lv
    ci, cv = text_features(passage_text, F)
    if alpha == 0.0:
        return ci, cv
    return np.concatenate([li, ci]), np.concatenate([alpha * lv, (1.0 - alpha) * cv])


def rows_to_csr(rows: Sequence[tuple[np.ndarray, np.ndarray]], F: int) -> sp.csr_matrix:
    """Stack sparse (indices, values) rows; duplicate indices are summed."""
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(i) for i, _ in rows])
    if rows:
        indices = np.concatenate([i for i, _ in rows])
        data = np.concatenate([v for _, v in rows])
    else:
        indices = np.zeros(0, dtype=np.int64)
        data = np.zeros(0)
    X = sp.csr_matrix((data, indices, indptr), shape=(len(rows), F))
    X.sum_duplicates()
    return X


def question_matrix(questions: Sequence[str], F: int) -> sp.csr_matrix:
    return rows_to_csr([text_features(q, F) for q in questions], F)


def passage_matrix(passage: Passage, alpha: float, F: int) -> sp.csr_matrix:
    context = passage.text
    return rows_to_csr([sentence_features(s.text, context, alpha, F)
                        for s in passage.sentences], F)


def _project(W: np.ndarray, X: sp.csr_matrix):
    """X @ W.T restricted to the columns X touches; returns (V, cols, dense X[:, cols])."""
    cols = np.unique(X.indices)
    Xsub = X[:, cols].toarray()
    return Xsub @ W[:, cols].T, cols, Xsub


def project(W: np.ndarray, X: sp.csr_matrix) -> np.ndarray:
    return _project(W, X)[0]


# ---------------------------------------------------------------------------
# encoding

def encode_question(q: str, params: EncoderParams) -> np.ndarray:
    if not q or not q.strip():
        raise EmptyText("question is empty")
    return project(params.question_projection, question_matrix([q], params.feature_space_size))[0]


def encode_questions(questions: Sequence[str], params: EncoderParams) -> np.ndarray:
    if not questions:
        return np.zeros((0, params.dim))
    return project(params.question_projection, question_matrix(questions, params.feature_space_size))


def encode_passage(p: Passage, params: EncoderParams) -> np.ndarray:
    """One contextual vector per sentence, shape (len(p.sentences), dim)."""
    if not p.sentences:
        raise ValueError(f"passage {p.id} has no sentences")
    X = passage_matrix(p, params.context_blend, params.feature_space_size)
    return project(params.context_projection, X)


def sim(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a, b))


# ---------------------------------------------------------------------------
# contrastive loss

@dataclass
class LossBatch:
    """n questions against m shared candidates; row i's gold is ``gold_index[i]``.

    Features are optional; they are needed only for gradients w.r.t. the
    projections.
    """

    question_vecs: np.ndarray
    candidate_vecs: np.ndarray
    gold_index: np.ndarray
    candidate_origin: tuple
    question_features: Optional[sp.csr_matrix] = None
    candidate_features: Optional[sp.csr_matrix] = None
    metadata: Optional[dict] = None

    def __post_init__(self):
        self.question_vecs = np.atleast_2d(np.asarray(self.question_vecs, dtype=np.float64))
        self.candidate_vecs = np.atleast_2d(np.asarray(self.candidate_vecs, dtype=np.float64))
        self.gold_index = np.asarray(self.gold_index, dtype=np.int64)
        self.candidate_origin = tuple(self.candidate_origin)
        n, m = len(self.question_vecs), len(self.candidate_vecs)
        if self.question_vecs.shape[1] != self.candidate_vecs.shape[1]:
            raise DimensionError("question and candidate vectors differ in dimension")
        if self.gold_index.shape != (n,):
            raise ValueError("need exactly one gold index per question")
        if m < n or len(self.candidate_origin) != m:
            raise ValueError("need at least one candidate per question and one origin per candidate")
        if len(set(self.gold_index.tolist())) != n:
            raise ValueError("gold indices must be distinct")
        if np.any(self.gold_index < 0) or np.any(self.gold_index >= m):
            raise ValueError("gold index out of range")
        if any(self.candidate_origin[g] != IN_BATCH_GOLD for g in self.gold_index):
            raise ValueError("gold candidates must have origin in_batch_gold")

    @property
    def n(self) -> int:
        return len(self.question_vecs)

    @property
    def m(self) -> int:
        return len(self.candidate_vecs)

    @classmethod
    def from_features(cls, question_features, candidate_features, gold_index, candidate_origin,
                      params: EncoderParams, metadata=None) -> "LossBatch":
        return cls(
            project(params.question_projection, question_features),
            project(params.context_projection, candidate_features),
            gold_index, candidate_origin, question_features, candidate_features, metadata,
        )

    def similarities(self) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            S = self.question_vecs @ self.candidate_vecs.T
        if not np.all(np.isfinite(S)):
            raise NumericalError("non-finite similarity in batch")
        return S


def _loss_from_similarities(S: np.ndarray, gold: np.ndarray) -> tuple[float, np.ndarray]:
    if not np.all(np.isfinite(S)):
        raise NumericalError("non-finite similarity in batch")
    rows = np.arange(len(S))
    mx = S.max(axis=1, keepdims=True)
    e = np.exp(S - mx)
    z = e.sum(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(z[:, 0])
    # per-row loss is >= 0 mathematically; clip rounding below zero
    per_q = np.maximum(lse - S[rows, gold], 0.0)
    residual = e / z
    residual[rows, gold] -= 1.0
    return float(per_q.mean()), residual / len(S)


def loss(batch: LossBatch) -> float:
    """Mean over questions of -log softmax(gold) across all m candidates."""
    return _loss_from_similarities(batch.similarities(), batch.gold_index)[0]


def similarity_gradient(batch: LossBatch) -> np.ndarray:
    """d loss / d sim(q_i, c_j), shape (n, m)."""
    return _loss_from_similarities(batch.similarities(), batch.gold_index)[1]


def loss_and_sparse_gradient(batch: LossBatch, params: EncoderParams):
    """Loss plus projection gradients restricted to touched feature columns.

    Returns ``(loss, (q_cols, q_block), (c_cols, c_block))`` where the full
    gradient of the question projection is zero except ``[:, q_cols] = q_block``.
    """
    if batch.question_features is None or batch.candidate_features is None:
        raise ValueError("loss gradient needs a batch carrying features")
    return features_loss_and_gradient(batch.question_features, batch.candidate_features,
                                      batch.gold_index, params)


def features_loss_and_gradient(question_features: sp.csr_matrix,
                               candidate_features: sp.csr_matrix, gold_index,
                               params: EncoderParams):
    """Same as ``loss_and_sparse_gradient`` but straight from feature matrices."""
    Vq, qcols, Xq = _project(params.question_projection, question_features)
    Vc, ccols, Xc = _project(params.context_projection, candidate_features)
    with np.errstate(over="ignore", invalid="ignore"):
        S = Vq @ Vc.T
    value, R = _loss_from_similarities(S, np.asarray(gold_index))
    gVq = R @ Vc      # n x dim
    gVc = R.T @ Vq    # m x dim
    return value, (qcols, gVq.T @ Xq), (ccols, gVc.T @ Xc)


def loss_gradient(batch: LossBatch, params: EncoderParams) -> EncoderGradient:
    """Exact gradient of ``loss`` w.r.t. both projection matrices."""
    _, (qc, qb), (cc, cb) = loss_and_sparse_gradient(batch, params)
    gq = np.zeros_like(params.question_projection)
    gc = np.zeros_like(params.context_projection)
    gq[:, qc] = qb
    gc[:, cc] = cb
    return EncoderGradient(gq, gc)


def batch_loss(batch: LossBatch, params: EncoderParams) -> float:
    """Loss with vectors recomputed from the batch features under ``params``."""
    return loss(LossBatch.from_features(batch.question_features, batch.candidate_features,
                                        batch.gold_index, batch.candidate_origin, params))


# ---------------------------------------------------------------------------
# checkpoints

def save_params(params: EncoderParams, path) -> None:
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, params.dim,
                          params.feature_space_size, float(params.context_blend))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(params.question_projection, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(params.context_projection, dtype="<f8").tobytes())


def load_params(path, dim: Optional[int] = None,
                feature_space_size: Optional[int] = None) -> EncoderParams:
    """Read a checkpoint; optional ``dim`` / ``feature_space_size`` must match."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise IncompatibleCheckpoint(f"{path}: truncated header")
    magic, version, d, F, alpha = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise IncompatibleCheckpoint(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise IncompatibleCheckpoint(f"{path}: unsupported version {version}")
    if dim is not None and d != dim:
        raise IncompatibleCheckpoint(f"{path}: dim {d}, expected {dim}")
    if feature_space_size is not None and F != feature_space_size:
        raise IncompatibleCheckpoint(f"{path}: feature space {F}, expected {feature_space_size}")
    size = d * F
    if len(raw) != _HEADER.size + 2 * size * 8:
        raise IncompatibleCheckpoint(f"{path}: expected {2 * size * 8} payload bytes")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    try:
        return EncoderParams(body[:size].reshape(d, F).copy(), body[size:].reshape(d, F).copy(),
                             alpha, F, None)
    except (ValueError, ArithmeticError) as exc:
        raise IncompatibleCheckpoint(f"{path}: {exc}") from None
