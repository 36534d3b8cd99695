"""Positive / negative sentence sampling and training-batch construction.

Randomness comes from numpy's PCG64 bit generator seeded through a
``SeedSequence``; independent streams (epochs, validation, ...) are derived
with ``make_rng(seed, *stream)`` so results do not depend on call order
across streams.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .corpus import Passage, QAExample
from .encoder import (BM25_NEGATIVE, IN_BATCH_GOLD, IN_PASSAGE_NEGATIVE, EncoderParams, LossBatch,
                      question_matrix, rows_to_csr, sentence_features)
from .errors import InsufficientNegatives


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """PCG64 generator for ``seed``; ``stream`` selects an independent substream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=stream)))


class Variant(enum.Enum):
    OneBM25Random = "bm25x1"
    TwoBM25Random = "bm25x2"
    InPassagePlusBM25 = "inpassage+bm25"

    @property
    def k(self) -> int:
        return 1 if self is Variant.OneBM25Random else 2


@dataclass(frozen=True)
class SamplingStrategy:
    variant: Variant = Variant.InPassagePlusBM25
    seed: int = 0

    @classmethod
    def parse(cls, name: str, seed: int = 0) -> "SamplingStrategy":
        if name in Variant.__members__:
            return cls(Variant[name], seed)
        try:
            return cls(Variant(name), seed)
        except ValueError:
            choices = ", ".join(v.value for v in Variant)
            raise ValueError(f"unknown strategy {name!r} (choose from {choices})") from None

    @property
    def k(self) -> int:
        return self.variant.k


@dataclass(frozen=True)
class SentenceRef:
    passage: Passage
    ordinal: int

    @property
    def key(self) -> tuple[str, int]:
        return self.passage.id, self.ordinal

    @property
    def sentence(self):
        return self.passage.sentences[self.ordinal]

    @property
    def text(self) -> str:
        return self.sentence.text

    @property
    def contains_answer(self) -> bool:
        return self.sentence.contains_answer


@dataclass(frozen=True)
class DrawnSample:
    positive: SentenceRef
    hard_negatives: tuple[tuple[SentenceRef, str], ...]
    fallback_used: bool = False


def _negative_pool(example: QAExample):
    pos_ids = {p.id for p in example.positives}
    return [(p, f) for p, f in zip(example.bm25_negatives, example.negative_focus)
            if p.id not in pos_ids]


def is_drawable(example: QAExample) -> bool:
    return any(p.answer_ordinals for p in example.positives) and bool(_negative_pool(example))


def _draw_bm25(pool, count: int, rng: np.random.Generator) -> list[SentenceRef]:
    picks = rng.choice(len(pool), size=count, replace=len(pool) < count)
    out = []
    for i in picks:
        passage, focus = pool[int(i)]
        ordinal = focus if focus is not None else int(rng.integers(len(passage.sentences)))
        out.append(SentenceRef(passage, ordinal))
    return out


def draw(example: QAExample, strategy: SamplingStrategy, rng: np.random.Generator) -> DrawnSample:
    """Sample the gold sentence and the hard negatives for one question.

    The positive is a uniform answer-bearing sentence of a uniform positive
    passage. Easy negatives are uniform sentences of uniform BM25 passages
    (distinct passages while enough exist). The in-passage negative is a
    uniform non-answer sibling of the positive; without one it is replaced
    by another BM25 sentence and ``fallback_used`` is set.
    """
    candidates = [p for p in example.positives if p.answer_ordinals]
    if not candidates:
        raise ValueError("example has no answer-bearing positive sentence")
    pool = _negative_pool(example)
    if not pool:
        raise InsufficientNegatives(f"no BM25 negatives for question {example.question!r}")

    if example.gold_sentence is not None:
        pid, ordinal = example.gold_sentence
        passage = next((p for p in candidates if p.id == pid), None)
        if passage is None or not passage.sentences[ordinal].contains_answer:
            raise ValueError(f"pinned gold sentence {example.gold_sentence} is not answer-bearing")
    else:
        passage = candidates[int(rng.integers(len(candidates)))]
        answers = passage.answer_ordinals
        ordinal = answers[int(rng.integers(len(answers)))]
    positive = SentenceRef(passage, ordinal)

    if strategy.variant is Variant.InPassagePlusBM25:
        siblings = passage.non_answer_ordinals
        if siblings:
            inside = SentenceRef(passage, siblings[int(rng.integers(len(siblings)))])
            outside = _draw_bm25(pool, 1, rng)
            negatives = [(inside, IN_PASSAGE_NEGATIVE), (outside[0], BM25_NEGATIVE)]
            return DrawnSample(positive, tuple(negatives), False)
        refs = _draw_bm25(pool, 2, rng)
        return DrawnSample(positive, tuple((r, BM25_NEGATIVE) for r in refs), True)

    refs = _draw_bm25(pool, strategy.k, rng)
    return DrawnSample(positive, tuple((r, BM25_NEGATIVE) for r in refs), False)


@dataclass
class TrainingBatch:
    """Text-level batch: questions, shared candidates and gold positions."""

    questions: list[str]
    candidates: list[SentenceRef]
    gold_index: list[int]
    candidate_origin: list[str]
    samples: list[DrawnSample] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def features(self, params: EncoderParams):
        """(question feature matrix, candidate feature matrix) under ``params``."""
        F, alpha = params.feature_space_size, params.context_blend
        qX = question_matrix(self.questions, F)
        cX = rows_to_csr([sentence_features(r.text, r.passage.text, alpha, F)
                          for r in self.candidates], F)
        return qX, cX

    def encode(self, params: EncoderParams) -> LossBatch:
        qX, cX = self.features(params)
        return LossBatch.from_features(qX, cX, self.gold_index, self.candidate_origin, params,
                                       metadata=self.metadata)


def build_batch(examples: Sequence[QAExample], strategy: SamplingStrategy,
                rng: np.random.Generator) -> TrainingBatch:
    """Candidates are the n positives in example order, then every hard negative.

    Questions whose drawn positives share a passage are kept; the shared
    passage ids are recorded in ``metadata["shared_positive_passages"]``.
    """
    if not examples:
        raise ValueError("build_batch needs at least one example")
    samples = [draw(ex, strategy, rng) for ex in examples]
    candidates = [s.positive for s in samples]
    origins = [IN_BATCH_GOLD] * len(samples)
    for s in samples:
        for ref, origin in s.hard_negatives:
            candidates.append(ref)
            origins.append(origin)
    counts = Counter(s.positive.passage.id for s in samples)
    shared = sorted(pid for pid, c in counts.items() if c > 1)
    metadata = {
        "shared_positive_passages": shared,
        "questions_with_shared_positive": sum(counts[pid] for pid in shared),
        "fallbacks": sum(s.fallback_used for s in samples),
    }
    return TrainingBatch(
        questions=[ex.question for ex in examples],
        candidates=candidates,
        gold_index=list(range(len(samples))),
        candidate_origin=origins,
        samples=samples,
        metadata=metadata,
    )
