"""SARI, GLEU and Update-ROUGE over source / hypothesis / reference triples.

All three work on the same tokenization: lowercase, punctuation split off
as separate tokens, ``<edit>`` tags removed. Scores are on a 0-100 scale.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .corpus import EDIT_CLOSE, EDIT_OPEN, split_sentences_tagged, tokenize
from .errors import SchemaError, ValidationError
from .kernels import lcs_length

MAX_ORDER = 4


def metric_tokens(text: str) -> list[str]:
    return [t.lower() for t in tokenize(text) if t not in (EDIT_OPEN, EDIT_CLOSE)]


@dataclass
class EvalTriple:
    """Raw texts for one example; ``references`` holds one or more strings."""

    source: str
    hypothesis: str
    references: list
    intention: str | None = None

    def __post_init__(self):
        if isinstance(self.references, str):
            self.references = [self.references]
        self.references = list(self.references)
        if not self.references:
            raise ValidationError("an evaluation triple needs at least one reference")

    @property
    def source_tokens(self):
        return metric_tokens(self.source)

    @property
    def hypothesis_tokens(self):
        return metric_tokens(self.hypothesis)

    @property
    def reference_tokens(self):
        return [metric_tokens(r) for r in self.references]


@dataclass
class MetricReport:
    sari: float
    gleu: float
    update_r: float
    count: int = 0
    average: float = field(init=False)

    def __post_init__(self):
        self.average = (self.sari + self.gleu + self.update_r) / 3.0

    def to_dict(self) -> dict:
        return asdict(self)


def ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------- SARI


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _sari_order(src, hyp, refs, n):
    """(keep F1, delete precision, add F1) at one n-gram order.

    Source and hypothesis counts are replicated once per reference so that
    they are comparable with reference counts summed over all references.
    """
    num_refs = len(refs)
    s = Counter({g: c * num_refs for g, c in ngram_counts(src, n).items()})
    c = Counter({g: k * num_refs for g, k in ngram_counts(hyp, n).items()})
    r = Counter()
    for ref in refs:
        r.update(ngram_counts(ref, n))

    keep = s & c
    keep_good = keep & r
    keep_all = s & r
    keep_p = sum(keep_good[g] / keep[g] for g in keep) / len(keep) if keep else 1.0
    keep_r = sum(keep_good[g] / keep_all[g] for g in keep_all) / len(keep_all) if keep_all else 1.0

    deleted = s - c
    del_good = deleted - r
    del_p = sum(del_good[g] / deleted[g] for g in deleted) / len(deleted) if deleted else 1.0

    added = set(c) - set(s)
    add_good = added & set(r)
    add_all = set(r) - set(s)
    add_p = len(add_good) / len(added) if added else 1.0
    add_r = len(add_good) / len(add_all) if add_all else 1.0

    return _f1(keep_p, keep_r), del_p, _f1(add_p, add_r)


def sari_tokens(src, hyp, refs, max_order: int = MAX_ORDER) -> float:
    if not refs:
        raise ValidationError("SARI needs at least one reference")
    total = 0.0
    for n in range(1, max_order + 1):
        keep, delete, add = _sari_order(src, hyp, refs, n)
        total += (keep + delete + add) / 3.0
    return 100.0 * total / max_order


def sari(triple: EvalTriple) -> float:
    return sari_tokens(triple.source_tokens, triple.hypothesis_tokens, triple.reference_tokens)


# ---------------------------------------------------------------- GLEU


def gleu_stats(src, hyp, ref, max_order: int = MAX_ORDER) -> list:
    """``[hyp_len, ref_len, num_1, den_1, ..., num_N, den_N]`` for one pair.

    The numerator counts hypothesis n-grams matched in the reference, minus
    those copied from source n-grams that the reference does not contain.
    """
    stats = [len(hyp), len(ref)]
    for n in range(1, max_order + 1):
        h = ngram_counts(hyp, n)
        r = ngram_counts(ref, n)
        s = ngram_counts(src, n)
        source_only = Counter({g: k for g, k in s.items() if g not in r})
        matched = sum((h & r).values())
        penalty = sum((h & source_only).values())
        stats += [max(matched - penalty, 0), max(len(hyp) + 1 - n, 0)]
    return stats


def gleu_from_stats(stats) -> float:
    """Geometric mean of the n-gram precisions times the brevity penalty.

    Orders with no hypothesis n-grams at all (texts shorter than ``n``) are
    left out of the mean rather than zeroing the score.
    """
    hyp_len, ref_len = stats[0], stats[1]
    if hyp_len == 0:
        return 100.0 if ref_len == 0 else 0.0
    logs = []
    for num, den in zip(stats[2::2], stats[3::2]):
        if den == 0:
            continue
        if num == 0:
            return 0.0
        logs.append(math.log(num / den))
    bp = min(0.0, 1.0 - ref_len / hyp_len)
    return 100.0 * math.exp(bp + sum(logs) / len(logs))


def corpus_gleu(triples, max_order: int = MAX_ORDER) -> float:
    """Corpus GLEU; with several references, the mean over reference index.

    Round ``j`` pairs every example with its reference ``j mod len(refs)``.
    """
    triples = list(triples)
    if not triples:
        raise ValidationError("GLEU needs at least one example")
    toks = [(t.source_tokens, t.hypothesis_tokens, t.reference_tokens) for t in triples]
    rounds = max(len(refs) for _, _, refs in toks)
    scores = []
    for j in range(rounds):
        total = [0] * (2 + 2 * max_order)
        for src, hyp, refs in toks:
            for i, v in enumerate(gleu_stats(src, hyp, refs[j % len(refs)], max_order)):
                total[i] += v
        scores.append(gleu_from_stats(total))
    return sum(scores) / rounds


def gleu(triple: EvalTriple) -> float:
    return corpus_gleu([triple])


# ---------------------------------------------------------------- Update-ROUGE


def updated_sentences(text: str, source_sentences) -> list[list[str]]:
    """Token lists of the sentences in ``text`` that count as updated.

    When ``text`` carries edit tags, the tagged sentences are the updates;
    otherwise a sentence is updated when it does not occur verbatim among
    ``source_sentences``.
    """
    tagged = split_sentences_tagged(text)
    if any(flag for _, flag in tagged):
        chosen = [s for s, flag in tagged if flag]
    else:
        known = {tuple(metric_tokens(s)) for s in source_sentences}
        chosen = [s for s, _ in tagged if tuple(metric_tokens(s)) not in known]
    return [metric_tokens(s) for s in chosen]


def rouge_l_f1(hyp, ref) -> float:
    if not hyp or not ref:
        return 0.0
    vocab: dict = {}
    a = [vocab.setdefault(t, len(vocab)) for t in hyp]
    b = [vocab.setdefault(t, len(vocab)) for t in ref]
    lcs = lcs_length(a, b)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(hyp), lcs / len(ref)
    return 2 * p * r / (p + r)


def update_rouge(triple: EvalTriple) -> float:
    """ROUGE-L F1 between the updated hypothesis and reference sentences.

    If neither side updates anything the score is 100; if only one side
    does, it is 0. With several references the best one is used.
    """
    src_sents = [s for s, _ in split_sentences_tagged(triple.source)]
    hyp = [t for sent in updated_sentences(triple.hypothesis, src_sents) for t in sent]
    best = 0.0
    for ref_text in triple.references:
        ref = [t for sent in updated_sentences(ref_text, src_sents) for t in sent]
        score = 100.0 if not hyp and not ref else 100.0 * rouge_l_f1(hyp, ref)
        best = max(best, score)
    return best


# ---------------------------------------------------------------- corpus level


def evaluate_corpus(triples) -> MetricReport:
    """SARI and Update-R averaged per example, GLEU at corpus level."""
    triples = list(triples)
    if not triples:
        raise ValidationError("cannot evaluate an empty corpus")
    s = sum(sari(t) for t in triples) / len(triples)
    u = sum(update_rouge(t) for t in triples) / len(triples)
    return MetricReport(s, corpus_gleu(triples), u, len(triples))


def evaluate_by_intention(triples) -> dict:
    """Reports per intention label (multi-label strings kept as-is)."""
    groups: dict = {}
    for t in triples:
        groups.setdefault(t.intention or "", []).append(t)
    return {k: evaluate_corpus(v) for k, v in sorted(groups.items())}


def read_triples(path) -> list[EvalTriple]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", line=lineno) from None
            for key in ("source", "hypothesis", "references"):
                if key not in rec:
                    raise SchemaError(f"missing field {key!r}", line=lineno)
            refs = rec["references"]
            if isinstance(refs, str):
                refs = [refs]
            if not refs:
                raise SchemaError("references must be non-empty", line=lineno)
            intention = rec.get("intention")
            if isinstance(intention, list):
                intention = ", ".join(intention)
            out.append(EvalTriple(rec["source"], rec["hypothesis"], refs, intention))
    return out


def write_triples(path, triples) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for t in triples:
            rec = {"source": t.source, "hypothesis": t.hypothesis, "references": t.references}
            if t.intention is not None:
                rec["intention"] = t.intention
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    return path


def write_report_json(path, report: MetricReport, by_intention: dict | None = None) -> Path:
    path = Path(path)
    payload = report.to_dict()
    if by_intention:
        payload["by_intention"] = {k: v.to_dict() for k, v in by_intention.items()}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_examples_csv(path, triples) -> Path:
    """Per-example scores; GLEU here is the sentence-level value."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "intention", "sari", "gleu", "update_r"])
        for i, t in enumerate(triples):
            w.writerow([i, t.intention or "", repr(sari(t)), repr(gleu(t)), repr(update_rouge(t))])
    return path
