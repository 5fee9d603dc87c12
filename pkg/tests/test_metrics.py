import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intention_tuning.errors import SchemaError, ValidationError
from intention_tuning.kernels import lcs_length
from intention_tuning.metrics import (EvalTriple, MetricReport, corpus_gleu, evaluate_by_intention, evaluate_corpus,
                                      gleu, metric_tokens, read_triples, rouge_l_f1, sari, update_rouge,
                                      write_examples_csv, write_report_json, write_triples)

from oracles import HAND_SUITE, gleu_oracle, lcs_oracle, sari_oracle, update_r_oracle

words = st.lists(st.sampled_from(["a", "b", "c", "d", "the", "cat", "."]), min_size=0, max_size=9)


def text(ws):
    return " ".join(ws)


def test_tokenization():
    assert metric_tokens("The Cat, <edit>sat.</edit>") == ["the", "cat", ",", "sat", "."]


@pytest.mark.parametrize("case", HAND_SUITE)
def test_hand_suite_matches_oracles(case):
    src, hyp, refs = case
    t = EvalTriple(src, hyp, refs)
    assert sari(t) == pytest.approx(sari_oracle(src, hyp, refs), abs=1e-9)
    assert gleu(t) == pytest.approx(gleu_oracle([case]), abs=1e-9)
    assert update_rouge(t) == pytest.approx(update_r_oracle(src, hyp, refs), abs=1e-9)


def test_corpus_gleu_matches_oracle():
    triples = [EvalTriple(*c) for c in HAND_SUITE]
    assert corpus_gleu(triples) == pytest.approx(gleu_oracle(HAND_SUITE), abs=1e-9)


def test_sari_hand_values():
    # reference shares nothing with the source and the hypothesis equals it
    assert sari(EvalTriple("x y", "a b", ["a b"])) == pytest.approx(100.0)
    assert sari(EvalTriple("a b c", "a b c", ["a b c"])) == pytest.approx(100.0)
    # copying the source when the reference rewrites everything: keep and add
    # score 0 at orders 1-2, orders 3-4 are vacuous
    assert sari(EvalTriple("x y", "x y", ["a b"])) == pytest.approx(200 / 3, abs=1e-9)


def test_gleu_hand_values():
    assert gleu(EvalTriple("x y", "the cat sat", ["the cat sat"])) == 100.0
    assert gleu(EvalTriple("x y", "p q r", ["the cat sat"])) == 0.0
    # 5 tokens: precisions 4/5, 3/4, 2/3, 1/2, no brevity penalty
    assert gleu(EvalTriple("x", "a b c d e", ["a b c d f"])) == pytest.approx(100 * 0.2 ** 0.25, abs=1e-9)
    # "e" is copied from the source but absent from the reference: one unigram penalty
    assert gleu(EvalTriple("e z", "a b c d e", ["a b c d f"])) == pytest.approx(100 * 0.15 ** 0.25, abs=1e-9)


def test_update_rouge_hand_values():
    assert update_rouge(EvalTriple("A. B.", "A. C d.", ["A. C d."])) == 100.0
    assert update_rouge(EvalTriple("A. B.", "A. B.", ["A. C d."])) == 0.0
    assert update_rouge(EvalTriple("A. B.", "A. B.", ["A. B."])) == 100.0
    # updates "x y ." vs "x z . d .": LCS 2, P 2/3, R 2/5
    assert update_rouge(EvalTriple("A. B. C.", "A. X y. C.", ["A. X z. D."])) == pytest.approx(50.0, abs=1e-9)


def test_update_rouge_uses_edit_tags_when_present():
    src = "Keep this. Old line."
    ref = "<edit>Keep this.</edit> New line."
    # the tags mark the first sentence as the update even though it is verbatim in the source
    assert update_rouge(EvalTriple(src, "<edit>Keep this.</edit> Old line.", [ref])) == 100.0
    # an untagged hypothesis falls back to membership and updates nothing
    assert update_rouge(EvalTriple(src, "Keep this. Old line.", [ref])) == 0.0


@settings(max_examples=200, deadline=None)
@given(words, words)
def test_lcs_kernel_matches_enumeration(a, b):
    assert lcs_length([hash(x) % 97 for x in a], [hash(x) % 97 for x in b]) == lcs_oracle(
        [hash(x) % 97 for x in a], [hash(x) % 97 for x in b])


def test_rouge_l_edge_cases():
    assert rouge_l_f1([], ["a"]) == 0.0
    assert rouge_l_f1(["a", "b"], ["a", "b"]) == 1.0


@settings(max_examples=150, deadline=None)
@given(words, words, st.lists(words, min_size=1, max_size=3))
def test_scores_bounded(src, hyp, refs):
    t = EvalTriple(text(src), text(hyp), [text(r) for r in refs])
    for score in (sari(t), gleu(t), update_rouge(t)):
        assert 0.0 <= score <= 100.0 + 1e-9


@settings(max_examples=100, deadline=None)
@given(words, words)
def test_gleu_identity(src, ref):
    assert gleu(EvalTriple(text(src), text(ref), [text(ref)])) == pytest.approx(100.0)


@settings(max_examples=100, deadline=None)
@given(words, words, st.lists(words, min_size=2, max_size=4), st.randoms())
def test_sari_reference_order_invariant(src, hyp, refs, rnd):
    refs = [text(r) for r in refs]
    shuffled = refs[:]
    rnd.shuffle(shuffled)
    a = sari(EvalTriple(text(src), text(hyp), refs))
    b = sari(EvalTriple(text(src), text(hyp), shuffled))
    assert a == pytest.approx(b, abs=1e-12)


def test_empty_reference_list_rejected():
    with pytest.raises(ValidationError):
        EvalTriple("a", "b", [])
    with pytest.raises(ValidationError):
        evaluate_corpus([])


def test_report_average():
    r = MetricReport(30.0, 60.0, 90.0, 2)
    assert r.average == 60.0
    report = evaluate_corpus([EvalTriple(*c) for c in HAND_SUITE[:5]])
    assert report.average == pytest.approx((report.sari + report.gleu + report.update_r) / 3)
    assert report.count == 5


def test_per_intention_grouping():
    triples = [EvalTriple("a b.", "a c.", ["a c."], "fluency"), EvalTriple("a b.", "a b.", ["a c."], "clarity"),
               EvalTriple("x.", "y.", ["y."], "fluency")]
    groups = evaluate_by_intention(triples)
    assert list(groups) == ["clarity", "fluency"]
    assert groups["fluency"].count == 2


def test_triples_file_round_trip(tmp_path):
    triples = [EvalTriple(*c, intention="style") for c in HAND_SUITE[:3]]
    path = write_triples(tmp_path / "h.jsonl", triples)
    back = read_triples(path)
    assert [(t.source, t.hypothesis, t.references, t.intention) for t in back] == \
           [(t.source, t.hypothesis, t.references, t.intention) for t in triples]
    report = evaluate_corpus(back)
    out = json.loads(write_report_json(tmp_path / "m.json", report, evaluate_by_intention(back)).read_text())
    assert out["count"] == 3 and "style" in out["by_intention"]
    rows = write_examples_csv(tmp_path / "e.csv", back).read_text().splitlines()
    assert rows[0] == "index,intention,sari,gleu,update_r" and len(rows) == 4


def test_read_triples_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"source": "a", "hypothesis": "b", "references": ["c"]}\n{"source": "a"}\n')
    with pytest.raises(SchemaError) as err:
        read_triples(path)
    assert err.value.line == 2
    path.write_text("not json\n")
    with pytest.raises(SchemaError):
        read_triples(path)
