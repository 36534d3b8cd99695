"""Synthetic, conflict-controlled QA corpora.

Every passage is a handful of sentences, each drawn from its own topic
vocabulary of pseudo-words, so one passage naturally attracts several
unrelated questions. Each question paraphrases exactly one sentence (a
subset of its content words) and its answer is a unique entity name
embedded in that sentence. The BM25 negatives are other passages, chosen
among those lacking the gold sentence's topic whenever possible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .corpus import Passage, dump_passages
from .errors import SpecError
from .sampler import make_rng

_CONSONANTS = list("bdfgklmnprstvz")
_VOWELS = list("aeiou")


@dataclass
class SynthSpec:
    passages: int = 500
    sentences_per_passage: int = 3
    topics: int = 3
    questions_per_passage: dict = field(default_factory=lambda: {3: 1.0})
    seed: int = 0
    vocab_per_topic: int = 120
    words_per_sentence: int = 8
    question_words: int = 4
    negatives_per_question: int = 2
    dev_fraction: float = 0.0

    def validate(self) -> None:
        for name in ("passages", "sentences_per_passage", "topics", "vocab_per_topic",
                     "words_per_sentence", "question_words", "negatives_per_question"):
            if getattr(self, name) < 1:
                raise SpecError(f"{name} must be >= 1")
        if self.passages < 2:
            raise SpecError("need at least two passages to draw negatives from")
        if self.question_words > self.words_per_sentence:
            raise SpecError("question_words cannot exceed words_per_sentence")
        if self.words_per_sentence > self.vocab_per_topic:
            raise SpecError("words_per_sentence cannot exceed vocab_per_topic")
        dist = self.questions_per_passage
        if not dist or any(int(k) < 1 or v < 0 for k, v in dist.items()):
            raise SpecError("questions_per_passage needs counts >= 1 with non-negative mass")
        if abs(sum(dist.values()) - 1.0) > 1e-9:
            raise SpecError(f"questions_per_passage sums to {sum(dist.values())}, not 1")
        if not 0.0 <= self.dev_fraction < 1.0:
            raise SpecError("dev_fraction must lie in [0, 1)")


@dataclass
class SynthCorpus:
    passages: list
    records: list          # dataset-file dicts, one per question
    sentence_topics: list  # per passage, the topic of each sentence
    gold: list             # per record, (passage index, sentence ordinal)


def _pseudo_words(rng, count: int, taken: set) -> list:
    out = []
    while len(out) < count:
        n = int(rng.integers(2, 4))
        w = "".join(_CONSONANTS[int(rng.integers(len(_CONSONANTS)))]
                    + _VOWELS[int(rng.integers(len(_VOWELS)))] for _ in range(n))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def generate(spec: SynthSpec) -> SynthCorpus:
    spec.validate()
    rng = make_rng(spec.seed, 7)
    taken: set = set()
    vocab = [_pseudo_words(rng, spec.vocab_per_topic, taken) for _ in range(spec.topics)]
    names = _pseudo_words(rng, 400, taken)
    spp = spec.sentences_per_passage

    passages, sentence_topics, sentence_words, answers = [], [], [], []
    serial = 0
    for i in range(spec.passages):
        if spec.topics >= spp:
            topics = [int(t) for t in rng.choice(spec.topics, size=spp, replace=False)]
        else:
            topics = [int(t) for t in rng.integers(spec.topics, size=spp)]
        texts, words_i, answers_i = [], [], []
        for t in topics:
            words = [vocab[t][int(j)] for j in
                     rng.choice(spec.vocab_per_topic, size=spec.words_per_sentence, replace=False)]
            answer = f"{names[int(rng.integers(len(names)))].capitalize()} {serial:05d}"
            serial += 1
            cut = int(rng.integers(2, spec.words_per_sentence + 1))
            body = words[:cut] + [answer] + words[cut:]
            texts.append(" ".join(body)[0].upper() + " ".join(body)[1:] + ".")
            words_i.append(words)
            answers_i.append(answer)
        passages.append(Passage.from_text(" ".join(texts), title=f"Synthetic document {i}"))
        sentence_topics.append(topics)
        sentence_words.append(words_i)
        answers.append(answers_i)

    counts = sorted(int(k) for k in spec.questions_per_passage)
    probs = np.array([spec.questions_per_passage[k] if k in spec.questions_per_passage
                      else spec.questions_per_passage[str(k)] for k in counts], dtype=float)
    probs /= probs.sum()

    records, gold = [], []
    for i, p in enumerate(passages):
        q = counts[int(rng.choice(len(counts), p=probs))]
        order = [int(o) for o in rng.permutation(spp)]
        for j in range(q):
            s = order[j % spp]
            words = sentence_words[i][s]
            picked = [words[int(x)] for x in
                      rng.choice(len(words), size=spec.question_words, replace=False)]
            question = "what " + " ".join(picked) + "?"
            topic = sentence_topics[i][s]
            others = [k for k in range(spec.passages) if k != i and topic not in sentence_topics[k]]
            if len(others) < spec.negatives_per_question:
                others = [k for k in range(spec.passages) if k != i]
            negs = rng.choice(others, size=min(spec.negatives_per_question, len(others)),
                              replace=False)
            records.append({
                "question": question,
                "answers": [answers[i][s]],
                "positive_ctxs": [{"title": p.title, "text": p.source_text}],
                "negative_ctxs": [{"title": passages[int(k)].title,
                                   "text": passages[int(k)].source_text} for k in negs],
            })
            gold.append((i, s))
    return SynthCorpus(passages, records, sentence_topics, gold)


def split(corpus: SynthCorpus, dev_fraction: float, seed: int):
    """Seeded question-level split into (train_records, dev_records)."""
    n = len(corpus.records)
    n_dev = int(round(dev_fraction * n))
    perm = make_rng(seed, 8).permutation(n)
    dev_idx = set(int(i) for i in perm[:n_dev])
    train = [r for i, r in enumerate(corpus.records) if i not in dev_idx]
    dev = [r for i, r in enumerate(corpus.records) if i in dev_idx]
    return train, dev


def _write_records(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")


def write(spec: SynthSpec, out_dir) -> dict:
    """Write passages.jsonl, train.jsonl and (if dev_fraction > 0) dev.jsonl."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = generate(spec)
    paths = {"passages": out / "passages.jsonl", "train": out / "train.jsonl"}
    dump_passages(corpus.passages, paths["passages"])
    if spec.dev_fraction > 0:
        train, dev = split(corpus, spec.dev_fraction, spec.seed)
        paths["dev"] = out / "dev.jsonl"
        _write_records(dev, paths["dev"])
    else:
        train = corpus.records
    _write_records(train, paths["train"])
    return paths
