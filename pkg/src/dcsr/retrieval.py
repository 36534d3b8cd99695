"""Question-time pipeline: sentence search, score normalisation, passage ranking.

Retrieved sentence scores are softmax-normalised into probabilities over
the retrieved set only; a passage's probability of holding the answer is
the noisy-OR of its retrieved sentences, ``1 - prod(1 - p)``. Unretrieved
siblings contribute nothing.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .corpus import Passage, QAExample, contains_answer, label_answers, normalize_text
from .encoder import EncoderParams, encode_questions
from .errors import NumericalError, RangeError
from .index import SentenceIndex, search
from .sampler import make_rng

logger = logging.getLogger(__name__)

DEFAULT_KS = (1, 5, 20, 100)


def normalize_scores(scores: Sequence[float]) -> np.ndarray:
    """Softmax with max-subtraction."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("need a non-empty 1-d score list")
    if not np.all(np.isfinite(s)):
        raise NumericalError("scores must be finite")
    e = np.exp(s - s.max())
    return e / e.sum()


def has_ans(sentence_probs: Sequence[float]) -> float:
    """Probability that at least one sentence holds the answer: 1 - prod(1 - p).

    Accumulated as h <- h + p(1 - h), which equals the product form but
    returns a lone probability unchanged (1 - (1 - p) can be off by an ulp).
    """
    h = 0.0
    for p in sentence_probs:
        p = float(p)
        if not 0.0 <= p <= 1.0:
            raise RangeError(f"probability {p} outside [0, 1]")
        h += p * (1.0 - h)
    return h


@dataclass(frozen=True)
class PassageScore:
    passage_id: str
    probability: float
    sentences: tuple  # ((ordinal, probability), ...) in retrieval order


@dataclass
class RankedPassageList:
    entries: list
    question_id: Optional[str] = None
    retrieved_sentences: int = 0
    shortfall: bool = False

    @property
    def passage_ids(self) -> list:
        return [e.passage_id for e in self.entries]

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "retrieved_sentences": self.retrieved_sentences,
            "shortfall": self.shortfall,
            "passages": [
                {"passage_id": e.passage_id, "has_ans": e.probability,
                 "sentences": [{"ordinal": o, "p": p} for o, p in e.sentences]}
                for e in self.entries
            ],
        }


def rank_passages(index: SentenceIndex, query_vec: np.ndarray, top_m: Optional[int] = None,
                  max_passages: Optional[int] = None,
                  question_id: Optional[str] = None) -> RankedPassageList:
    """Retrieve ``top_m`` sentences and rank their passages by noisy-OR probability.

    ``top_m`` defaults to ceil(100 x average sentences per passage). When
    ``max_passages`` is given the list is cut to that length and
    ``shortfall`` records whether fewer passages were available.
    """
    if len(index) == 0:
        raise ValueError("index is empty")
    top_m = index.default_depth() if top_m is None else top_m
    hits = search(index, query_vec, top_m)
    probs = normalize_scores([s for _, s in hits])
    groups: dict = {}
    for (key, _), p in zip(hits, probs):
        groups.setdefault(key.passage_id, []).append((key.ordinal, float(p)))
    entries = [PassageScore(pid, has_ans([p for _, p in sents]), tuple(sents))
               for pid, sents in groups.items()]
    entries.sort(key=lambda e: (-e.probability, e.passage_id))
    shortfall = False
    if max_passages is not None:
        shortfall = len(entries) < max_passages
        if shortfall:
            logger.debug("only %d passages retrieved, %d requested", len(entries), max_passages)
        entries = entries[:max_passages]
    return RankedPassageList(entries, question_id, len(hits), shortfall)


@dataclass
class EvalReport:
    top_k_accuracy: dict
    questions: int
    corpus_sentences: int

    def to_dict(self) -> dict:
        return {"k": {str(k): v for k, v in sorted(self.top_k_accuracy.items())},
                "questions": self.questions, "corpus_sentences": self.corpus_sentences}

    @classmethod
    def from_dict(cls, obj: dict) -> "EvalReport":
        return cls({int(k): float(v) for k, v in obj["k"].items()},
                   int(obj["questions"]), int(obj["corpus_sentences"]))


def first_hit_ranks(dataset: Sequence[QAExample], index: SentenceIndex, params: EncoderParams,
                    passage_texts: Mapping[str, str], max_k: int = 100,
                    top_m: Optional[int] = None) -> list:
    """0-based rank of the first answer-bearing passage per question (None if absent)."""
    normalized = {pid: normalize_text(t) for pid, t in passage_texts.items()}
    depth = top_m if top_m is not None else index.default_depth(max(100, max_k))
    qvecs = encode_questions([ex.question for ex in dataset], params)
    ranks = []
    for ex, qv in zip(dataset, qvecs):
        needles = [a for a in (normalize_text(x) for x in ex.answers) if a]
        ranked = rank_passages(index, qv, depth, max_passages=max_k)
        hit = None
        for r, pid in enumerate(ranked.passage_ids):
            text = normalized[pid]
            if any(a in text for a in needles):
                hit = r
                break
        ranks.append(hit)
    return ranks


def evaluate(dataset: Sequence[QAExample], index: SentenceIndex, params: EncoderParams,
             passage_texts: Mapping[str, str], ks: Sequence[int] = DEFAULT_KS,
             top_m: Optional[int] = None) -> EvalReport:
    """Top-k accuracy: a question counts if any of its top-k passages contains an answer."""
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] < 1:
        raise ValueError("ks must be positive integers")
    if not dataset:
        return EvalReport({k: 0.0 for k in ks}, 0, len(index))
    ranks = first_hit_ranks(dataset, index, params, passage_texts, ks[-1], top_m)
    acc = {k: sum(r is not None and r < k for r in ranks) / len(ranks) for k in ks}
    return EvalReport(acc, len(ranks), len(index))


@dataclass
class MiningReport:
    mined: int = 0
    unchanged: int = 0


def mine_hard_negatives(dataset: Sequence[QAExample], index: SentenceIndex, params: EncoderParams,
                        passages: Mapping[str, Passage], per_question: int,
                        top_m: Optional[int] = None, replace: bool = False):
    """Turn the best-scoring non-answer sentences into pinned hard negatives.

    A retrieved sentence is skipped when its passage is a positive or its
    passage text contains any gold answer; at most one sentence per passage
    is taken. Mined negatives go in front of the existing ones (or replace
    them with ``replace=True``). Questions with nothing to mine keep their
    negatives unchanged. Returns ``(examples, MiningReport)``.
    """
    if per_question < 0:
        raise ValueError("per_question must be non-negative")
    report = MiningReport()
    if per_question == 0:
        return list(dataset), report
    depth = top_m if top_m is not None else index.default_depth()
    qvecs = encode_questions([ex.question for ex in dataset], params)
    out = []
    for ex, qv in zip(dataset, qvecs):
        skip = {p.id for p in ex.positives}
        mined = []
        for key, _ in search(index, qv, depth):
            if key.passage_id in skip:
                continue
            skip.add(key.passage_id)
            passage = passages[key.passage_id]
            if contains_answer(passage.source_text, ex.answers):
                continue
            mined.append((label_answers(passage, ex.answers), key.ordinal))
            if len(mined) == per_question:
                break
        if not mined:
            report.unchanged += 1
            out.append(ex)
            continue
        report.mined += len(mined)
        old_p = () if replace else ex.bm25_negatives
        old_f = () if replace else ex.negative_focus
        out.append(QAExample(
            question=ex.question, answers=ex.answers, positives=ex.positives,
            bm25_negatives=tuple(p for p, _ in mined) + old_p,
            negative_focus=tuple(o for _, o in mined) + old_f,
        ))
    if report.unchanged:
        logger.info("%d question(s) had no minable negative", report.unchanged)
    return out, report


def subsample_corpus(passages: Sequence[Passage], first_n: Optional[int] = None,
                     fraction: Optional[float] = None, seed: int = 0) -> list:
    """Either the first ``first_n`` passages, or a seeded uniform ``fraction`` in corpus order."""
    N = len(passages)
    if (first_n is None) == (fraction is None):
        raise ValueError("give exactly one of first_n or fraction")
    if first_n is not None:
        if not 0 < first_n <= N:
            raise RangeError(f"first_n={first_n} outside 1..{N}")
        return list(passages[:first_n])
    if not 0.0 < fraction <= 1.0:
        raise RangeError(f"fraction={fraction} outside (0, 1]")
    n = max(1, int(round(fraction * N)))
    picked = np.sort(make_rng(seed).choice(N, size=n, replace=False))
    return [passages[i] for i in picked]
