import json
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from intention_tuning.corpus import (ARGREVISION, EDIT_CLOSE, EDIT_OPEN, ITERATER, LEVELS, RevisionExample, Vocab,
                                     build_generation_prompt, build_prediction_prompt, build_vocab,
                                     convert_iterater_record, generate_synthetic, generate_synthetic_corpus,
                                     generation_text, load_jsonl, oracle_intentions, parse_record, prediction_text,
                                     pretraining_documents, prompt_texts, split_sentences_tagged, strip_edit_tags,
                                     tokenize, write_jsonl)
from intention_tuning.errors import SchemaError, TaxonomyError, ValidationError

FIXTURES = Path(__file__).parent / "fixtures"


def golden_sections():
    sections, name = {}, None
    for line in (FIXTURES / "prompts.golden.txt").read_text().splitlines():
        if line.startswith("["):
            name = line.strip("[]")
        else:
            sections[name] = line
    return sections


SINGLE = RevisionExample("The team basically uses the tools.", "The team uses the tools.", ("clarity",))
MULTI = RevisionExample("A editor checks the data. The plan works.",
                        "<edit> An editor checks the data. </edit> <edit> However, the plan works. </edit>",
                        ("fluency", "coherence"), "document")
ARG = RevisionExample("Cars pollute.", "<edit> Cars pollute cities. </edit>", ("LCE", "repeated"), "document")


def test_prompts_match_golden_file():
    golden = golden_sections()
    assert prediction_text(SINGLE) == golden["prediction single iterater"]
    assert generation_text(SINGLE) == golden["generation single"]
    assert prediction_text(MULTI) == golden["prediction multi iterater"]
    assert generation_text(MULTI) == golden["generation multi"]
    assert prediction_text(ARG, ARGREVISION) == golden["prediction multi argrevision"]
    assert generation_text(ARG) == golden["generation multi argrevision"]


def test_prediction_prompt_targets():
    vocab = build_vocab(prompt_texts([SINGLE, MULTI]))
    single = build_prediction_prompt(SINGLE, vocab)
    assert single.target == ITERATER.index("clarity")
    assert single.tokens[0] == vocab.bos_id
    multi = build_prediction_prompt(MULTI, vocab)
    np.testing.assert_array_equal(multi.target, [0, 1, 1, 0, 0])
    with pytest.raises(ValidationError):
        build_prediction_prompt(MULTI, vocab, multi_label=False)


def test_generation_prompt_masks_only_revision():
    vocab = build_vocab(prompt_texts([SINGLE]))
    inst = build_generation_prompt(SINGLE, vocab)
    assert vocab.decode(inst.target) == SINGLE.revised
    assert inst.target[-1] == vocab.eos_id
    assert inst.loss_mask.sum() == len(inst.target)
    assert not inst.loss_mask[: inst.prompt_len].any()
    assert vocab.decode(inst.prompt).endswith("Revised Text:")
    with pytest.raises(ValidationError):
        build_generation_prompt(RevisionExample("gone.", " ", ("clarity",)), vocab)


def test_vocab_round_trip_and_unknown(tmp_path):
    examples = generate_synthetic(0, 200, "document")
    vocab = build_vocab(prompt_texts(examples))
    for ex in examples[:50]:
        for text in (ex.original, ex.revised, prediction_text(ex)):
            assert vocab.decode(vocab.encode(text)) == text
    assert vocab.encode("zebra")[0] == vocab.unk_id
    assert Vocab.load(vocab.save(tmp_path / "v.json")).tokens == vocab.tokens
    assert vocab.tokens[:6] == ["<pad>", "<bos>", "<eos>", "<unk>", EDIT_OPEN, EDIT_CLOSE]


def test_build_vocab_min_count():
    vocab = build_vocab(["a a b"], min_count=2)
    assert "a" in vocab.index and "b" not in vocab.index


def test_tokenize():
    assert tokenize("An editor's re-check, <edit>done.</edit>") == [
        "An", "editor's", "re-check", ",", EDIT_OPEN, "done", ".", EDIT_CLOSE]


def test_load_jsonl(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"original":"a","revised":"b","intentions":["fluency"]}\n\n'
                    '{"original":"c","revised":"d","intentions":["others"]}\n')
    examples = load_jsonl(path)
    assert examples == [RevisionExample("a", "b", ("fluency",), "sentence")]


@pytest.mark.parametrize("line,error", [
    ('{"original":"a","revised":"b"}', SchemaError),
    ('{"original":"a","revised":"b","intentions":["vibes"]}', TaxonomyError),
    ('{"original":1,"revised":"b","intentions":["clarity"]}', SchemaError),
    ('{"original":"a","revised":"b","intentions":["clarity"],"level":"para"}', SchemaError),
    ("[1, 2]", SchemaError),
    ("{broken", SchemaError),
])
def test_load_jsonl_errors_carry_line_number(tmp_path, line, error):
    path = tmp_path / "c.jsonl"
    path.write_text('{"original":"a","revised":"b","intentions":["fluency"]}\n' + line + "\n")
    with pytest.raises(error) as err:
        load_jsonl(path)
    assert "line 2" in str(err.value)


def test_taxonomies_exclude_others():
    assert len(ITERATER.labels) == 5 and len(ARGREVISION.labels) == 6
    assert "others" not in ITERATER.labels + ARGREVISION.labels
    assert parse_record({"original": "a", "revised": "b", "intentions": ["LCE"]}, "argrevision").intentions == ("LCE",)


def test_convert_iterater_records():
    sent = {"before_sent": "a b.", "after_sent": "a c.", "labels": "fluency"}
    assert convert_iterater_record(sent) == {"original": "a b.", "revised": "a c.", "intentions": ["fluency"],
                                             "level": "sentence"}
    doc = {"before_revision": "x.", "after_revision": "y.",
           "edit_actions": [{"intention": "clarity"}, {"intention": "others"}, {"intention": "clarity"}]}
    assert convert_iterater_record(doc, "document")["intentions"] == ["clarity"]
    assert convert_iterater_record({"before_sent": "a", "after_sent": "b", "labels": ["others"]}) is None


@pytest.mark.parametrize("level", LEVELS)
def test_synthetic_labels_are_exactly_the_applied_rules(level):
    for ex in generate_synthetic(11, 2000, level):
        assert ex.original != strip_edit_tags(ex.revised)
        assert oracle_intentions(ex.original, ex.revised) == ex.intentions
        assert ex.level == level


def test_document_examples_tag_every_edited_sentence():
    for ex in generate_synthetic(2, 200, "document"):
        tagged = [s for s, flag in split_sentences_tagged(ex.revised) if flag]
        assert len(tagged) == len(ex.intentions)
        assert 2 <= len(ex.intentions) <= 3


def test_synthetic_corpus_files_are_deterministic(tmp_path):
    a = generate_synthetic_corpus(tmp_path / "a", seed=5, size=60)
    b = generate_synthetic_corpus(tmp_path / "b", seed=5, size=60)
    for split in ("train", "val", "test"):
        assert a[split].read_bytes() == b[split].read_bytes()
    assert len(load_jsonl(a["train"])) == 48
    c = generate_synthetic_corpus(tmp_path / "c", seed=6, size=60)
    assert c["train"].read_bytes() != a["train"].read_bytes()


def test_synthetic_mixture_frequencies():
    mixture = [0.4, 0.1, 0.2, 0.2, 0.1]
    counts = Counter(ex.intentions[0] for ex in generate_synthetic(0, 10_000, mixture=mixture))
    for label, p in zip(ITERATER.labels, mixture):
        assert abs(counts[label] / 10_000 - p) < 0.05


def test_write_jsonl_round_trip(tmp_path):
    examples = generate_synthetic(1, 20, "document")
    assert load_jsonl(write_jsonl(tmp_path / "x.jsonl", examples)) == examples
    first = json.loads((tmp_path / "x.jsonl").read_text().splitlines()[0])
    assert set(first) == {"original", "revised", "intentions", "level"}


def test_sentence_splitting_with_tags():
    parts = split_sentences_tagged("One. <edit> Two two. </edit> Three!")
    assert parts == [("One.", False), ("Two two.", True), ("Three!", False)]


def test_pretraining_text_has_no_prompts_or_labels():
    docs = pretraining_documents(0)
    sample = [next(docs) for _ in range(300)]
    again = pretraining_documents(0)
    assert sample == [next(again) for _ in range(300)]
    joined = " ".join(sample)
    for marker in ("Original Text", "Revised Text", "intention", EDIT_OPEN):
        assert marker not in joined
    # each sentence is followed by a verbatim copy
    for doc in sample[:50]:
        sents = split_sentences_tagged(doc)
        assert all(sents[i][0] == sents[i + 1][0] for i in range(0, len(sents), 2))
