import json

import pytest

from dcsr.corpus import conflict_stats, load_dataset, load_passages, parse_example
from dcsr.errors import SpecError
from dcsr.synth import SynthSpec, generate, split, write


@pytest.fixture(scope="module")
def small():
    return generate(SynthSpec(passages=60, seed=4))


def test_shape_and_topic_distinct_sentences(small):
    assert len(small.passages) == 60
    for p, topics in zip(small.passages, small.sentence_topics):
        assert len(p.sentences) == 3
        assert len(set(topics)) == 3


def test_answers_unique_to_gold_sentence(small):
    for rec, (i, s) in zip(small.records, small.gold):
        ex = parse_example(rec)
        assert ex is not None
        assert ex.positives[0].answer_ordinals == [s]
        for neg in ex.bm25_negatives:
            assert not neg.answer_ordinals


def _negative_indices(corpus, rec):
    titles = {n["title"] for n in rec["negative_ctxs"]}
    return [k for k, p in enumerate(corpus.passages) if p.title in titles]


def test_negatives_are_topic_mismatched():
    c = generate(SynthSpec(passages=60, topics=6, seed=2))
    for rec, (i, s) in zip(c.records, c.gold):
        topic = c.sentence_topics[i][s]
        negs = _negative_indices(c, rec)
        assert len(negs) == 2
        for k in negs:
            assert k != i and topic not in c.sentence_topics[k]


def test_negatives_fall_back_when_every_passage_covers_every_topic(small):
    # 3 topics over 3 topic-distinct sentences: no mismatched passage exists
    for rec, (i, _) in zip(small.records, small.gold):
        negs = _negative_indices(small, rec)
        assert len(negs) == 2 and i not in negs


def test_three_questions_per_passage_average_exact(small):
    stats = conflict_stats([parse_example(r) for r in small.records])
    assert stats.average == 3.0
    assert stats.histogram == {"1": 0, "2": 0, "3": 60, "4plus": 0}


def test_mixed_distribution():
    c = generate(SynthSpec(passages=200, questions_per_passage={1: 0.5, 4: 0.5}, seed=1))
    hist = conflict_stats([parse_example(r) for r in c.records]).histogram
    assert hist["2"] == hist["3"] == 0
    assert hist["1"] + hist["4plus"] == 200 and 60 < hist["1"] < 140


def test_deterministic():
    a, b = generate(SynthSpec(passages=20, seed=9)), generate(SynthSpec(passages=20, seed=9))
    assert a.records == b.records
    assert generate(SynthSpec(passages=20, seed=10)).records != a.records


def test_split_partitions(small):
    train, dev = split(small, 0.25, 0)
    assert len(dev) == 45 and len(train) + len(dev) == len(small.records)
    assert not {json.dumps(r) for r in train} & {json.dumps(r) for r in dev}


@pytest.mark.parametrize("kw", [
    {"passages": 1}, {"topics": 0}, {"questions_per_passage": {3: 0.5}},
    {"questions_per_passage": {0: 1.0}}, {"question_words": 20}, {"dev_fraction": 1.0},
])
def test_invalid_spec(kw):
    with pytest.raises(SpecError):
        generate(SynthSpec(**kw))


def test_write_files(tmp_path):
    paths = write(SynthSpec(passages=10, dev_fraction=0.2), tmp_path)
    assert len(load_passages(paths["passages"])) == 10
    assert len(load_dataset(paths["train"])) + len(load_dataset(paths["dev"])) == 30


def test_single_topic_hard_mode():
    c = generate(SynthSpec(passages=20, topics=1, seed=0))
    assert all(t == [0, 0, 0] for t in c.sentence_topics)
    assert len(c.records) == 60
