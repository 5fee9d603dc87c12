"""Revision corpora: JSONL I/O, tokenisation, prompts and a synthetic generator."""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SchemaError, TaxonomyError, ValidationError
from .seeding import derive_rng

log = logging.getLogger(__name__)

LEVELS = ("sentence", "document")


@dataclass(frozen=True)
class IntentionTaxonomy:
    name: str
    labels: tuple
    excluded: tuple = ("others",)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise TaxonomyError(f"{label!r} is not an intention of {self.name}") from None


ITERATER = IntentionTaxonomy("iterater", ("clarity", "fluency", "coherence", "style", "meaning-changed"),
                             ("others", "other"))
ARGREVISION = IntentionTaxonomy("argrevision", ("relevant", "irrelevant", "repeated", "LCE", "not LCE", "commentary"),
                                ("others", "other"))
TAXONOMIES = {t.name: t for t in (ITERATER, ARGREVISION)}

# Train/val/test sizes of the public corpora, for sanity reports when loading them.
REFERENCE_SPLITS = {
    "iterater-sent": (3215, 385, 360),
    "iterater-doc": (481, 27, 51),
    "argrevision": (528, 66, 66),
}


@dataclass(frozen=True)
class RevisionExample:
    original: str
    revised: str
    intentions: tuple
    level: str = "sentence"

    def __post_init__(self):
        object.__setattr__(self, "intentions", tuple(self.intentions))
        if not self.intentions:
            raise ValidationError("an example needs at least one intention")
        if self.level not in LEVELS:
            raise ValidationError(f"level must be one of {LEVELS}, got {self.level!r}")

    @property
    def multi_intent(self) -> bool:
        return len(self.intentions) > 1

    def to_json(self) -> dict:
        return {"original": self.original, "revised": self.revised,
                "intentions": list(self.intentions), "level": self.level}


def get_taxonomy(name_or_taxonomy) -> IntentionTaxonomy:
    if isinstance(name_or_taxonomy, IntentionTaxonomy):
        return name_or_taxonomy
    try:
        return TAXONOMIES[str(name_or_taxonomy).lower()]
    except KeyError:
        raise ValidationError(f"unknown taxonomy {name_or_taxonomy!r}") from None


def parse_record(record, taxonomy=ITERATER, line=None) -> RevisionExample | None:
    """Validate one JSON object. Returns None if only excluded labels remain."""
    taxonomy = get_taxonomy(taxonomy)
    if not isinstance(record, dict):
        raise SchemaError("record is not a JSON object", line)
    for key in ("original", "revised", "intentions"):
        if key not in record:
            raise SchemaError(f"missing field {key!r}", line)
    if not isinstance(record["original"], str) or not isinstance(record["revised"], str):
        raise SchemaError("original and revised must be strings", line)
    labels = record["intentions"]
    if isinstance(labels, str):
        labels = [labels]
    if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
        raise SchemaError("intentions must be a list of strings", line)
    kept = [x for x in labels if x not in taxonomy.excluded]
    for label in kept:
        if label not in taxonomy.labels:
            where = f"line {line}: " if line is not None else ""
            raise TaxonomyError(f"{where}{label!r} is not an intention of {taxonomy.name}")
    if not kept:
        return None
    level = record.get("level", "sentence")
    if level not in LEVELS:
        raise SchemaError(f"level must be one of {LEVELS}", line)
    return RevisionExample(record["original"], record["revised"], tuple(kept), level)


def load_jsonl(path, taxonomy=ITERATER, reference: str | None = None) -> list[RevisionExample]:
    """Read and validate a corpus file.

    ``reference`` names an entry of ``REFERENCE_SPLITS`` plus split, e.g.
    ``"iterater-sent/train"``; the loaded size is logged against it.
    """
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", lineno) from None
            ex = parse_record(record, taxonomy, lineno)
            if ex is not None:
                examples.append(ex)
    if reference:
        corpus, _, split = reference.partition("/")
        expected = dict(zip(("train", "val", "test"), REFERENCE_SPLITS[corpus])).get(split)
        log.info("%s: loaded %d examples (reference %s)", reference, len(examples), expected)
    return examples


def write_jsonl(path, examples) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_json(), ensure_ascii=False) + "\n")
    return path


def convert_iterater_record(record: dict, level: str = "sentence") -> dict | None:
    """Map one record of the public ITERATER release onto our schema.

    Sentence-level records carry ``before_sent``/``after_sent``/``labels``;
    document-level ones ``before_revision``/``after_revision`` and a list of
    ``edit_actions`` with an ``intention`` each.
    """
    if level == "sentence":
        labels = record.get("labels")
        labels = [labels] if isinstance(labels, str) else list(labels or [])
        original, revised = record.get("before_sent"), record.get("after_sent")
    else:
        labels = []
        for action in record.get("edit_actions", []):
            lab = action.get("intention")
            if lab and lab not in labels:
                labels.append(lab)
        original, revised = record.get("before_revision"), record.get("after_revision")
    labels = [x for x in labels if x not in ITERATER.excluded]
    if original is None or revised is None or not labels:
        return None
    return {"original": original, "revised": revised, "intentions": labels, "level": level}


# ---------------------------------------------------------------- tokenisation

PAD, BOS, EOS, UNK, EDIT_OPEN, EDIT_CLOSE = "<pad>", "<bos>", "<eos>", "<unk>", "<edit>", "</edit>"
SPECIALS = (PAD, BOS, EOS, UNK, EDIT_OPEN, EDIT_CLOSE)

_TOKEN_RE = re.compile(r"</?edit>|[A-Za-z0-9]+(?:[-'][A-Za-z0-9]+)*|[^\sA-Za-z0-9]")
_NO_SPACE_BEFORE = set(".,;:!?)]}%")
_NO_SPACE_AFTER = set("([{")


def tokenize(text: str) -> list[str]:
    """Words (hyphen/apostrophe compounds kept whole), single punctuation marks, edit tags."""
    return _TOKEN_RE.findall(text)


def detokenize(tokens) -> str:
    out = []
    for tok in tokens:
        if out and tok not in _NO_SPACE_BEFORE and out[-1] not in _NO_SPACE_AFTER:
            out.append(" ")
        elif out and tok in _NO_SPACE_BEFORE and out[-1] in SPECIALS and out[-1] != EDIT_CLOSE:
            out.append(" ")
        out.append(tok)
    return "".join(out)


@dataclass
class Vocab:
    tokens: list
    index: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    pad_id = property(lambda self: self.index[PAD])
    bos_id = property(lambda self: self.index[BOS])
    eos_id = property(lambda self: self.index[EOS])
    unk_id = property(lambda self: self.index[UNK])

    def encode(self, text: str) -> list[int]:
        unk = self.unk_id
        return [self.index.get(t, unk) for t in tokenize(text)]

    def decode(self, ids, skip_special: bool = True) -> str:
        drop = {self.pad_id, self.bos_id, self.eos_id} if skip_special else set()
        return detokenize(self.tokens[i] for i in ids if i not in drop)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps({"tokens": self.tokens}, ensure_ascii=False) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls(json.loads(Path(path).read_text(encoding="utf-8"))["tokens"])


def build_vocab(texts, min_count: int = 1) -> Vocab:
    """Specials first, then tokens by descending count, ties alphabetical."""
    counts = Counter()
    for text in texts:
        counts.update(tokenize(text))
    words = sorted((t for t, c in counts.items() if c >= min_count and t not in SPECIALS),
                   key=lambda t: (-counts[t], t))
    return Vocab(list(SPECIALS) + words)


# ---------------------------------------------------------------- prompts

PREDICTION_TEMPLATE = (
    "Identify the intention of the revision between the original text and the revised text. "
    "The possible intentions include: {intentions}. Original Text: {original}. Revised Text: {revised}."
)
GENERATION_TEMPLATE = "Revise the original text based on the intention {intentions}. Original Text: {original}. Revised Text:"


def prompt_texts(examples, taxonomy=ITERATER):
    """Every string the model will ever see for these examples (for vocab building)."""
    taxonomy = get_taxonomy(taxonomy)
    for ex in examples:
        yield prediction_text(ex, taxonomy)
        yield generation_text(ex)
        yield ex.revised


def prediction_text(example: RevisionExample, taxonomy=ITERATER) -> str:
    taxonomy = get_taxonomy(taxonomy)
    return PREDICTION_TEMPLATE.format(intentions=", ".join(taxonomy.labels),
                                      original=example.original, revised=example.revised)


def generation_text(example: RevisionExample) -> str:
    return GENERATION_TEMPLATE.format(intentions=", ".join(example.intentions), original=example.original)


@dataclass
class PredictionInstance:
    tokens: np.ndarray
    target: object  # class index (single-intent) or multi-hot float vector


@dataclass
class GenerationInstance:
    tokens: np.ndarray
    prompt_len: int
    loss_mask: np.ndarray

    @property
    def prompt(self) -> np.ndarray:
        return self.tokens[: self.prompt_len]

    @property
    def target(self) -> np.ndarray:
        return self.tokens[self.prompt_len:]


def intention_target(example: RevisionExample, taxonomy=ITERATER, multi_label: bool | None = None):
    taxonomy = get_taxonomy(taxonomy)
    if multi_label is None:
        multi_label = example.multi_intent
    if not multi_label:
        if example.multi_intent:
            raise ValidationError("single-label target requested for a multi-intent example")
        return taxonomy.index(example.intentions[0])
    vec = np.zeros(len(taxonomy.labels))
    for label in example.intentions:
        vec[taxonomy.index(label)] = 1.0
    return vec


def build_prediction_prompt(example, vocab: Vocab, taxonomy=ITERATER, multi_label=None) -> PredictionInstance:
    ids = [vocab.bos_id] + vocab.encode(prediction_text(example, taxonomy))
    return PredictionInstance(np.asarray(ids, dtype=np.int64), intention_target(example, taxonomy, multi_label))


def build_generation_prompt(example, vocab: Vocab) -> GenerationInstance:
    """Prompt followed by the revised text and EOS; only the latter is scored."""
    if not example.revised.strip():
        raise ValidationError("revised text is empty; pure deletions are not used for generation")
    prompt = [vocab.bos_id] + vocab.encode(generation_text(example))
    target = vocab.encode(example.revised) + [vocab.eos_id]
    tokens = np.asarray(prompt + target, dtype=np.int64)
    mask = np.zeros(tokens.size, dtype=bool)
    mask[len(prompt):] = True
    return GenerationInstance(tokens, len(prompt), mask)


# ---------------------------------------------------------------- synthetic corpus

_NOUNS = [("student", "students"), ("teacher", "teachers"), ("researcher", "researchers"),
          ("company", "companies"), ("committee", "committees"), ("engineer", "engineers"),
          ("editor", "editors"), ("team", "teams"), ("doctor", "doctors"), ("farmer", "farmers")]
_ADJECTIVES = ["new", "local", "young", "senior", "national", "small"]
# (informal 3sg, informal base, formal 3sg, formal base)
_VERBS = [("gets", "get", "obtains", "obtain"), ("shows", "show", "demonstrates", "demonstrate"),
          ("helps", "help", "assists", "assist"), ("buys", "buy", "purchases", "purchase"),
          ("needs", "need", "requires", "require"), ("checks", "check", "examines", "examine"),
          ("uses", "use", "employs", "employ"), ("starts", "start", "begins", "begin")]
_OBJECTS = ["data", "results", "tools", "funding", "books", "equipment", "records", "plans", "samples", "reports"]
_TAILS = ["", "", " in the lab", " for the project", " at the school", " during the week", " with the group"]
_FILLERS = ["basically", "really", "actually", "kind of", "sort of"]
_CONNECTIVES = ["however", "therefore", "moreover", "meanwhile", "consequently"]
_FACTS = ["in 2019", "in 2020", "in 2021", "last year", "last month", "every week"]

SYNTHETIC_INTENTIONS = ITERATER.labels


@dataclass
class _Sentence:
    det: str
    adj: str
    noun: str
    plural: bool
    verb: int
    obj: str
    tail: str

    def render(self, verb_form=None, filler=None, connective=None, fact=None, det=None) -> str:
        v = _VERBS[self.verb]
        if verb_form is None:
            verb_form = v[1] if self.plural else v[0]
        words = []
        if connective:
            words += [connective, ","]
        words += [det or self.det] + ([self.adj] if self.adj else []) + [self.noun]
        if filler:
            words.append(filler)
        words += [verb_form, "the", self.obj]
        text = " ".join(words) + self.tail
        if fact:
            text += " " + fact
        return detokenize(tokenize(text + " ."))


    def wrong_article(self) -> str:
        """The indefinite article that is ungrammatical before this noun phrase."""
        nxt = self.adj or self.noun
        if self.plural:
            return "an" if nxt[0] in "aeiou" else "a"
        return "a" if nxt[0] in "aeiou" else "an"


def _random_sentence(rng) -> _Sentence:
    plural = bool(rng.integers(2))
    sing, plur = _NOUNS[rng.integers(len(_NOUNS))]
    det = ("the", "these")[rng.integers(2)] if plural else ("the", "this")[rng.integers(2)]
    adj = _ADJECTIVES[rng.integers(len(_ADJECTIVES))] if rng.random() < 0.5 else ""
    return _Sentence(det, adj, plur if plural else sing, plural, int(rng.integers(len(_VERBS))),
                     _OBJECTS[rng.integers(len(_OBJECTS))], _TAILS[rng.integers(len(_TAILS))])


def _apply_rule(sent: _Sentence, rule: str, rng) -> tuple[str, str]:
    """(original, revised) realisation of one intention on one sentence."""
    v = _VERBS[sent.verb]
    clean = sent.render()
    if rule == "fluency":
        return sent.render(det=sent.wrong_article()), clean
    if rule == "clarity":
        return sent.render(filler=_FILLERS[rng.integers(len(_FILLERS))]), clean
    if rule == "coherence":
        return clean, sent.render(connective=_CONNECTIVES[rng.integers(len(_CONNECTIVES))])
    if rule == "style":
        return clean, sent.render(verb_form=v[3] if sent.plural else v[2])
    if rule == "meaning-changed":
        return clean, sent.render(fact=_FACTS[rng.integers(len(_FACTS))])
    raise ValidationError(f"no synthetic rule for intention {rule!r}")


def synthetic_example(rng, level="sentence", mixture=None) -> RevisionExample:
    labels = SYNTHETIC_INTENTIONS
    weights = np.asarray(mixture if mixture is not None else np.ones(len(labels)), dtype=float)
    weights = weights / weights.sum()
    if level == "sentence":
        rule = labels[rng.choice(len(labels), p=weights)]
        x, y = _apply_rule(_random_sentence(rng), rule, rng)
        return RevisionExample(x, y, (rule,), "sentence")
    n_sent = 3
    n_rules = int(rng.integers(2, 4))
    rules = list(rng.choice(len(labels), size=n_rules, replace=False, p=weights))
    slots = sorted(rng.choice(n_sent, size=n_rules, replace=False).tolist())
    by_slot = dict(zip(slots, (labels[i] for i in rules)))
    xs, ys, applied = [], [], []
    for i in range(n_sent):
        sent = _random_sentence(rng)
        if i in by_slot:
            x, y = _apply_rule(sent, by_slot[i], rng)
            xs.append(x)
            ys.append(f"{EDIT_OPEN} {y} {EDIT_CLOSE}")
            applied.append(by_slot[i])
        else:
            xs.append(sent.render())
            ys.append(sent.render())
    return RevisionExample(" ".join(xs), " ".join(ys), tuple(applied), "document")


def generate_synthetic(seed: int, size: int, level: str = "sentence", mixture=None) -> list[RevisionExample]:
    if level not in LEVELS:
        raise ValidationError(f"level must be one of {LEVELS}")
    rng = derive_rng(seed, "synthetic", level)
    return [synthetic_example(rng, level, mixture) for _ in range(size)]


def generate_synthetic_corpus(out_dir, seed: int = 0, size: int = 1000, level: str = "sentence",
                              mixture=None, fractions=(0.8, 0.1, 0.1)) -> dict:
    """Write ``train/val/test.jsonl`` under ``out_dir``; returns split -> path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    examples = generate_synthetic(seed, size, level, mixture)
    n_train = int(round(fractions[0] * size))
    n_val = int(round(fractions[1] * size))
    parts = {"train": examples[:n_train], "val": examples[n_train:n_train + n_val],
             "test": examples[n_train + n_val:]}
    return {name: write_jsonl(out / f"{name}.jsonl", exs) for name, exs in parts.items()}


def _free_sentence(rng) -> str:
    """A sentence in any register, with every optional element drawn freely."""
    sent = _random_sentence(rng)
    v = _VERBS[sent.verb]
    form = v[(1 if sent.plural else 0) + (2 if rng.random() < 0.5 else 0)]

    def maybe(options, p=0.2):
        return options[rng.integers(len(options))] if rng.random() < p else None

    det = sent.wrong_article() if rng.random() < 0.1 else None
    return sent.render(verb_form=form, filler=maybe(_FILLERS), connective=maybe(_CONNECTIVES),
                       fact=maybe(_FACTS), det=det)


def pretraining_documents(seed: int, repeat_p: float = 1.0):
    """Endless unlabelled running text in the synthetic language.

    Each document holds one to three freely generated sentences, each
    followed with probability ``repeat_p`` by a verbatim repeat of itself,
    so a model trained on it learns to continue a passage it has already
    seen. There are no revision pairs, intention labels or prompts.
    """
    rng = derive_rng(seed, "pretraining_text")
    while True:
        parts = []
        for _ in range(int(rng.integers(1, 4))):
            sentence = _free_sentence(rng)
            parts.append(sentence)
            if rng.random() < repeat_p:
                parts.append(sentence)
        yield " ".join(parts)


def strip_edit_tags(text: str) -> str:
    return detokenize(t for t in tokenize(text) if t not in (EDIT_OPEN, EDIT_CLOSE))


def oracle_intentions(original: str, revised: str) -> tuple:
    """Recover the synthetic rules that turn ``original`` into ``revised``.

    Works sentence by sentence, so it labels document-level examples too.
    """
    xs = split_sentences(strip_edit_tags(original))
    ys = split_sentences(strip_edit_tags(revised))
    found = []
    for x, y in zip(xs, ys):
        if x == y:
            continue
        xt, yt = tokenize(x), tokenize(y)
        if yt[0] in _CONNECTIVES and yt[2:] == xt:
            found.append("coherence")
        elif len(yt) > len(xt) and yt[: len(xt) - 1] == xt[:-1]:
            found.append("meaning-changed")
        elif len(xt) > len(yt):
            found.append("clarity")
        elif any(a != b and b in {v[2] for v in _VERBS} | {v[3] for v in _VERBS} for a, b in zip(xt, yt)):
            found.append("style")
        else:
            found.append("fluency")
    return tuple(found)


_TERMINALS = {".", "!", "?"}


def split_sentences_tagged(text: str) -> list[tuple[str, bool]]:
    """Sentences of ``text`` paired with whether they sit inside edit tags.

    A sentence ends at a terminal punctuation token; a closing tag right
    after it belongs to the same sentence.
    """
    out = []
    current: list[str] = []
    tagged = inside = False
    for tok in tokenize(text):
        if tok == EDIT_OPEN:
            inside = tagged = True
            continue
        if tok == EDIT_CLOSE:
            inside = False
            if not current:
                tagged = False
            continue
        current.append(tok)
        tagged = tagged or inside
        if tok in _TERMINALS:
            out.append((detokenize(current), tagged))
            current, tagged = [], inside
    if current:
        out.append((detokenize(current), tagged))
    return out


def split_sentences(text: str) -> list[str]:
    return [s for s, _ in split_sentences_tagged(text)]
