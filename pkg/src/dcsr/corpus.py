"""Passages, QA examples, sentence segmentation and dataset diagnostics.

Dataset files are UTF-8 JSON lines in the usual DPR training layout::

    {"question": str, "answers": [str],
     "positive_ctxs": [{"title": str, "text": str}],
     "negative_ctxs": [{"title": str, "text": str}]}

A negative ctx may additionally carry ``"sentence_index": int`` to pin a
specific sentence (written by hard-negative mining).
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import EmptyText, ParseError, SchemaError

logger = logging.getLogger(__name__)

# Tokens ending in "." that never close a sentence.
ABBREVIATIONS = frozenset(
    {"dr.", "mr.", "mrs.", "ms.", "st.", "u.s.", "e.g.", "i.e.", "etc.",
     "prof.", "jr.", "sr.", "vs.", "mt."}
)

_BOUNDARY = re.compile(r"[.!?]+[\"')\]]*(\s+)")
_WS = re.compile(r"\s+")


def normalize_text(text: str) -> str:
    """Lowercase, NFC-normalize and collapse runs of whitespace."""
    return _WS.sub(" ", unicodedata.normalize("NFC", text).lower()).strip()


def text_id(text: str) -> str:
    """Stable passage identifier: hash of the normalized text."""
    return hashlib.sha1(normalize_text(text).encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class Sentence:
    ordinal: int
    text: str
    contains_answer: bool = False


@dataclass(frozen=True)
class Passage:
    id: str
    title: str
    sentences: tuple[Sentence, ...]
    source_text: str

    @classmethod
    def from_text(cls, text: str, title: str = "", id: Optional[str] = None) -> "Passage":
        return cls(
            id=id if id is not None else text_id(text),
            title=title,
            sentences=tuple(segment(text)),
            source_text=text,
        )

    @property
    def text(self) -> str:
        return " ".join(s.text for s in self.sentences)

    @property
    def answer_ordinals(self) -> list[int]:
        return [s.ordinal for s in self.sentences if s.contains_answer]

    @property
    def non_answer_ordinals(self) -> list[int]:
        return [s.ordinal for s in self.sentences if not s.contains_answer]


@dataclass(frozen=True)
class QAExample:
    question: str
    answers: tuple[str, ...]
    positives: tuple[Passage, ...]
    bm25_negatives: tuple[Passage, ...] = ()
    gold_sentence: Optional[tuple[str, int]] = None
    # Parallel to bm25_negatives; a pinned sentence ordinal or None.
    negative_focus: tuple[Optional[int], ...] = ()

    def __post_init__(self):
        if not self.negative_focus and self.bm25_negatives:
            object.__setattr__(self, "negative_focus", (None,) * len(self.bm25_negatives))


class Dataset(list):
    """A list of QAExample that remembers how many input lines were dropped."""

    def __init__(self, examples: Iterable[QAExample] = (), dropped: int = 0):
        super().__init__(examples)
        self.dropped = dropped


@dataclass(frozen=True)
class ConflictStats:
    histogram: dict = field(default_factory=dict)
    average: float = 0.0

    def to_dict(self) -> dict:
        return {"histogram": dict(self.histogram), "average": self.average}


def segment(text: str) -> list[Sentence]:
    """Split text into sentences.

    A boundary is ``.``, ``!`` or ``?`` (optionally followed by closing
    quotes/brackets) then whitespace then an uppercase letter or digit. A
    period ending one of ``ABBREVIATIONS`` is not a boundary. Whitespace
    inside each sentence is collapsed to single spaces.
    """
    if not text or not text.strip():
        raise EmptyText("cannot segment empty text")
    pieces = []
    start = 0
    for m in _BOUNDARY.finditer(text):
        nxt = m.end()
        if nxt >= len(text):
            continue
        ch = text[nxt]
        if not (ch.isupper() or ch.isdigit()):
            continue
        if text[m.start()] == "." and _ends_with_abbreviation(text, start, m.start() + 1):
            continue
        pieces.append(text[start:m.start(1)])
        start = nxt
    pieces.append(text[start:])
    out = []
    for piece in pieces:
        piece = _WS.sub(" ", piece).strip()
        if piece:
            out.append(Sentence(ordinal=len(out), text=piece))
    return out


def _ends_with_abbreviation(text: str, start: int, end: int) -> bool:
    words = text[start:end].split()
    if not words:
        return False
    return words[-1].lstrip("(\"'[").lower() in ABBREVIATIONS


def label_answers(passage: Passage, answers: Iterable[str]) -> Passage:
    """Flag every sentence whose normalized text contains a normalized answer."""
    needles = [a for a in (normalize_text(x) for x in answers) if a]
    sentences = tuple(
        replace(s, contains_answer=any(a in normalize_text(s.text) for a in needles))
        for s in passage.sentences
    )
    return replace(passage, sentences=sentences)


def contains_answer(text: str, answers: Iterable[str]) -> bool:
    haystack = normalize_text(text)
    return any(a and a in haystack for a in (normalize_text(x) for x in answers))


def _ctx_passage(ctx, lineno: int, what: str) -> Passage:
    if not isinstance(ctx, dict):
        raise SchemaError(f"{what} entry must be an object", lineno)
    text = ctx.get("text")
    if not isinstance(text, str):
        raise SchemaError(f"{what} entry missing 'text'", lineno)
    title = ctx.get("title", "")
    if not isinstance(title, str):
        raise SchemaError(f"{what} entry has non-string 'title'", lineno)
    try:
        return Passage.from_text(text, title=title)
    except EmptyText:
        raise SchemaError(f"{what} entry has empty 'text'", lineno) from None


def parse_example(obj, lineno: int = 0) -> Optional[QAExample]:
    """Build a labeled QAExample from one decoded JSON object.

    Returns None when no positive passage has an answer-bearing sentence.
    """
    if not isinstance(obj, dict):
        raise SchemaError("record must be a JSON object", lineno)
    for key in ("question", "answers", "positive_ctxs", "negative_ctxs"):
        if key not in obj:
            raise SchemaError(f"missing required field '{key}'", lineno)
    question = obj["question"]
    if not isinstance(question, str) or not question.strip():
        raise SchemaError("'question' must be a non-empty string", lineno)
    answers = obj["answers"]
    if (not isinstance(answers, list) or not answers
            or not all(isinstance(a, str) for a in answers)):
        raise SchemaError("'answers' must be a non-empty list of strings", lineno)
    if not isinstance(obj["positive_ctxs"], list) or not isinstance(obj["negative_ctxs"], list):
        raise SchemaError("ctx fields must be lists", lineno)

    positives = []
    for ctx in obj["positive_ctxs"]:
        p = label_answers(_ctx_passage(ctx, lineno, "positive_ctxs"), answers)
        if p.answer_ordinals:
            positives.append(p)
    if not positives:
        return None

    negatives, focus = [], []
    for ctx in obj["negative_ctxs"]:
        p = label_answers(_ctx_passage(ctx, lineno, "negative_ctxs"), answers)
        idx = ctx.get("sentence_index")
        if idx is not None and (not isinstance(idx, int) or not 0 <= idx < len(p.sentences)):
            raise SchemaError("'sentence_index' out of range", lineno)
        negatives.append(p)
        focus.append(idx)
    return QAExample(
        question=question,
        answers=tuple(answers),
        positives=tuple(positives),
        bm25_negatives=tuple(negatives),
        negative_focus=tuple(focus),
    )


def load_dataset(path) -> Dataset:
    """Read a JSON-lines dataset file; segment and answer-label its passages."""
    examples, dropped = [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON: {exc.msg}", lineno) from None
            ex = parse_example(obj, lineno)
            if ex is None:
                dropped += 1
            else:
                examples.append(ex)
    if dropped:
        logger.warning("%s: dropped %d example(s) without an answer-bearing positive", path, dropped)
    return Dataset(examples, dropped=dropped)


def example_to_dict(ex: QAExample) -> dict:
    negs = []
    for p, idx in zip(ex.bm25_negatives, ex.negative_focus):
        ctx = {"title": p.title, "text": p.source_text}
        if idx is not None:
            ctx["sentence_index"] = idx
        negs.append(ctx)
    return {
        "question": ex.question,
        "answers": list(ex.answers),
        "positive_ctxs": [{"title": p.title, "text": p.source_text} for p in ex.positives],
        "negative_ctxs": negs,
    }


def dump_dataset(examples: Iterable[QAExample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(example_to_dict(ex), ensure_ascii=False) + "\n")


def load_passages(path) -> list[Passage]:
    """Read a passages file: JSON lines of ``{"id"?, "title", "text"}``."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON: {exc.msg}", lineno) from None
            p = _ctx_passage(obj, lineno, "passage")
            if obj.get("id") is not None:
                p = replace(p, id=str(obj["id"]))
            out.append(p)
    return out


def dump_passages(passages: Iterable[Passage], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in passages:
            fh.write(json.dumps({"id": p.id, "title": p.title, "text": p.source_text},
                                ensure_ascii=False) + "\n")


def unique_passages(dataset: Iterable[QAExample], negatives: bool = True) -> list[Passage]:
    """All distinct passages referenced by a dataset, first-seen order, unlabeled."""
    seen = {}
    for ex in dataset:
        for p in ex.positives + (ex.bm25_negatives if negatives else ()):
            if p.id not in seen:
                seen[p.id] = Passage.from_text(p.source_text, title=p.title, id=p.id)
    return list(seen.values())


def conflict_stats(dataset: Sequence[QAExample]) -> ConflictStats:
    """Questions-per-positive-passage histogram (the one-to-many measurement).

    ``average`` is the mean number of questions per distinct positive
    passage. A question listing the same passage twice counts once.
    """
    if not dataset:
        raise ValueError("conflict_stats needs a non-empty dataset")
    counts = Counter()
    for ex in dataset:
        for pid in {p.id for p in ex.positives}:
            counts[pid] += 1
    hist = {"1": 0, "2": 0, "3": 0, "4plus": 0}
    for c in counts.values():
        hist[str(c) if c < 4 else "4plus"] += 1
    average = sum(counts.values()) / len(counts) if counts else 0.0
    return ConflictStats(histogram=hist, average=average)


def overlap_stats(train: Sequence[QAExample], dev: Sequence[QAExample]) -> tuple[float, float]:
    """Fraction of dev questions whose positive title / passage appears in train positives."""
    if not train or not dev:
        raise ValueError("overlap_stats needs two non-empty datasets")
    titles = {normalize_text(p.title) for ex in train for p in ex.positives}
    ids = {p.id for ex in train for p in ex.positives}
    eligible = [ex for ex in dev if ex.positives]
    if not eligible:
        return 0.0, 0.0
    by_title = sum(any(normalize_text(p.title) in titles for p in ex.positives) for ex in eligible)
    by_text = sum(any(p.id in ids for p in ex.positives) for ex in eligible)
    return by_title / len(eligible), by_text / len(eligible)
