import json

import pytest
from hypothesis import given, strategies as st

from dcsr.corpus import (Passage, conflict_stats, contains_answer, dump_dataset, dump_passages,
                         example_to_dict, label_answers, load_dataset, load_passages,
                         normalize_text, overlap_stats, parse_example, segment, text_id,
                         unique_passages)
from dcsr.errors import EmptyText, ParseError, SchemaError

from conftest import make_example


def _texts(sentences):
    return [s.text for s in sentences]


# -- segmentation -----------------------------------------------------------

def test_segmentation_gold_set(fixtures_dir):
    groups = json.loads((fixtures_dir / "segmentation_gold.json").read_text())
    assert sum(len(g["sentences"]) for g in groups) >= 50
    for g in groups:
        assert _texts(segment(" ".join(g["sentences"]))) == g["sentences"]


def test_segment_ordinals_and_flags_default():
    sents = segment("One. Two! Three?")
    assert [s.ordinal for s in sents] == [0, 1, 2]
    assert not any(s.contains_answer for s in sents)


def test_segment_no_punctuation_is_one_sentence():
    assert _texts(segment("london is large")) == ["london is large"]


def test_segment_lowercase_after_period_does_not_split():
    assert len(segment("It cost 3 vs. 4 points. then it ended.")) == 1


def test_segment_decimal_numbers():
    assert _texts(segment("Pi is 3.14 roughly. Next.")) == ["Pi is 3.14 roughly.", "Next."]


def test_segment_closing_quote_stays_with_sentence():
    assert _texts(segment('He said "Stop." Then he left.')) == ['He said "Stop."', "Then he left."]


def test_segment_collapses_internal_whitespace():
    assert _texts(segment("A  b\n\tc.   D e.")) == ["A b c.", "D e."]


@pytest.mark.parametrize("text", ["", "   ", "\n\t"])
def test_segment_rejects_empty(text):
    with pytest.raises(EmptyText):
        segment(text)


_word = st.text(alphabet="abcdefgh", min_size=1, max_size=6)
_sentence = st.builds(lambda first, rest, end: " ".join([first.capitalize()] + rest) + end,
                      _word, st.lists(_word, max_size=5), st.sampled_from([".", "!", "?"]))


@given(st.lists(_sentence, min_size=1, max_size=8))
def test_segment_idempotent(sentences):
    once = _texts(segment(" ".join(sentences)))
    assert _texts(segment(" ".join(once))) == once
    assert once == sentences


@given(st.lists(_sentence, min_size=1, max_size=8))
def test_segment_preserves_characters(sentences):
    text = "  ".join(sentences)
    assert "".join(_texts(segment(text))).replace(" ", "") == text.replace(" ", "")


# -- normalization & labeling ------------------------------------------------

def test_normalize_text_nfc_case_whitespace():
    assert normalize_text("Café  Au\tLAIT") == "café au lait"
    assert text_id("A b") == text_id("  a   B ")


def test_label_answers_case_insensitive_substring():
    p = label_answers(Passage.from_text("The sky is BLUE. Grass is green."), ["blue"])
    assert [s.contains_answer for s in p.sentences] == [True, False]
    assert p.answer_ordinals == [0] and p.non_answer_ordinals == [1]


def test_contains_answer_unicode_forms():
    assert contains_answer("Visit the Café today", ["café"])
    assert not contains_answer("nothing here", ["x y"])


@given(st.lists(_sentence, min_size=1, max_size=6),
       st.lists(_word, min_size=1, max_size=3), st.lists(_word, max_size=3))
def test_label_answers_monotone_in_answer_set(sentences, answers, extra):
    p = Passage.from_text(" ".join(sentences))
    small = label_answers(p, answers)
    big = label_answers(p, answers + extra)
    assert set(small.answer_ordinals) <= set(big.answer_ordinals)


# -- dataset I/O -------------------------------------------------------------

def test_three_example_golden(fixtures_dir):
    ds = load_dataset(fixtures_dir / "three_examples.jsonl")
    golden = json.loads((fixtures_dir / "three_examples_golden.json").read_text())
    assert len(ds) == 3 and ds.dropped == 0
    for ex, gold in zip(ds, golden):
        assert ex.question == gold["question"]
        assert list(ex.answers) == gold["answers"]
        for group, key in ((ex.positives, "positives"), (ex.bm25_negatives, "negatives")):
            assert len(group) == len(gold[key])
            for p, g in zip(group, gold[key]):
                assert p.title == g["title"]
                assert _texts(p.sentences) == g["sentences"]
                assert [s.contains_answer for s in p.sentences] == g["flags"]


def test_dataset_drops_unanswerable(tmp_path, caplog):
    path = tmp_path / "d.jsonl"
    rows = [
        {"question": "q1", "answers": ["x"], "positive_ctxs": [{"title": "", "text": "Has x."}],
         "negative_ctxs": []},
        {"question": "q2", "answers": ["zzz"], "positive_ctxs": [{"title": "", "text": "No."}],
         "negative_ctxs": []},
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    ds = load_dataset(path)
    assert len(ds) == 1 and ds.dropped == 1
    assert "dropped 1" in caplog.text


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"question": "a", "answers": ["a"], "positive_ctxs": [], "negative_ctxs": []}\n{oops\n')
    with pytest.raises(ParseError) as err:
        load_dataset(path)
    assert err.value.line == 2


@pytest.mark.parametrize("obj", [
    {"answers": ["a"], "positive_ctxs": [], "negative_ctxs": []},
    {"question": "q", "answers": [], "positive_ctxs": [], "negative_ctxs": []},
    {"question": "q", "answers": ["a"], "positive_ctxs": [{"title": "t", "text": "  "}],
     "negative_ctxs": []},
    {"question": "q", "answers": ["a"], "positive_ctxs": [{"title": "t", "text": "a."}],
     "negative_ctxs": [{"title": "n", "text": "B.", "sentence_index": 3}]},
])
def test_schema_errors(obj):
    with pytest.raises(SchemaError):
        parse_example(obj, 7)


def test_dataset_round_trip(tmp_path, fixtures_dir):
    ds = load_dataset(fixtures_dir / "three_examples.jsonl")
    out = tmp_path / "rt.jsonl"
    dump_dataset(ds, out)
    again = load_dataset(out)
    assert [example_to_dict(e) for e in again] == [example_to_dict(e) for e in ds]


@given(st.lists(st.tuples(_word, st.lists(_sentence, min_size=1, max_size=4)), min_size=1,
                max_size=5))
def test_dataset_round_trip_property(tmp_path_factory, rows):
    examples = []
    for q, sents in rows:
        answer = sents[0].split()[0]
        examples.append(make_example(q, [answer], [" ".join(sents)], [" ".join(reversed(sents))]))
    path = tmp_path_factory.mktemp("rt") / "d.jsonl"
    dump_dataset(examples, path)
    assert [example_to_dict(e) for e in load_dataset(path)] == [example_to_dict(e) for e in examples]


def test_passages_round_trip(tmp_path):
    ps = [Passage.from_text("A b. C d.", title="t1"), Passage.from_text("E.", title="t2")]
    dump_passages(ps, tmp_path / "p.jsonl")
    back = load_passages(tmp_path / "p.jsonl")
    assert [(p.id, p.title, _texts(p.sentences)) for p in back] == \
        [(p.id, p.title, _texts(p.sentences)) for p in ps]


def test_unique_passages_dedupes(fixtures_dir):
    ds = load_dataset(fixtures_dir / "conflict20.jsonl")
    ids = [p.id for p in unique_passages(ds)]
    assert len(ids) == len(set(ids))


# -- conflict statistics -----------------------------------------------------

def test_conflict_stats_hand_counted_fixture(fixtures_dir):
    ds = load_dataset(fixtures_dir / "conflict20.jsonl")
    assert len(ds) == 20
    stats = conflict_stats(ds)
    # hand count: 5,3,3,2,2,2,1,1,1 questions over 9 passages
    assert stats.histogram == {"1": 3, "2": 3, "3": 2, "4plus": 1}
    assert stats.average == 20 / 9


def test_conflict_stats_two_questions_one_passage():
    a = make_example("q1", ["x"], ["Has x. And y."])
    b = make_example("q2", ["y"], ["Has x. And y."])
    stats = conflict_stats([a, b])
    assert stats.histogram["2"] == 1 and sum(stats.histogram.values()) == 1
    assert stats.average == 2.0


def test_conflict_stats_empty_raises():
    with pytest.raises(ValueError):
        conflict_stats([])


def test_overlap_stats():
    train = [make_example("q", ["x"], ["Has x."])]
    dev = [make_example("r", ["x"], ["Has x."]), make_example("s", ["z"], ["Other z."])]
    title, passage = overlap_stats(train, dev)
    assert passage == 0.5
    assert title == 1.0  # both dev positives carry the title "pos0"
