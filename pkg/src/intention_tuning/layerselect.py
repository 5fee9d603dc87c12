"""Gradient-norm layer scoring and important/redundant layer splitting.

Layers are numbered 1..L throughout. A split puts every layer whose score
exceeds a threshold into the important set and the rest into the redundant
set; the threshold is the one minimising the summed population variance of
the two sides.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import StateError, ValidationError
from .kernels import variance_split
from .seeding import derive_rng

STRATEGIES = ("intention-tuning", "ir", "lisa", "ist", "full")
DEFAULT_COUNTS = {"lisa": 4, "ist": 8}


@dataclass(frozen=True)
class LayerScores:
    step: int
    scores: tuple

    def __post_init__(self):
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        for s in self.scores:
            if not math.isfinite(s) or s < 0:
                raise ValidationError(f"layer scores must be finite and non-negative, got {s}")

    @property
    def num_layers(self):
        return len(self.scores)


@dataclass(frozen=True)
class LayerSplit:
    important: frozenset
    redundant: frozenset
    threshold: float
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "important", frozenset(self.important))
        object.__setattr__(self, "redundant", frozenset(self.redundant))
        if self.important & self.redundant:
            raise ValidationError("important and redundant sets overlap")
        n = len(self.important) + len(self.redundant)
        if self.important | self.redundant != set(range(1, n + 1)):
            raise ValidationError("split must cover layers 1..L exactly")

    @property
    def num_layers(self) -> int:
        return len(self.important) + len(self.redundant)

    @classmethod
    def from_important(cls, important, num_layers, threshold=-math.inf, degenerate=False):
        important = frozenset(important)
        return cls(important, frozenset(range(1, num_layers + 1)) - important, threshold, degenerate)

    @classmethod
    def full(cls, num_layers):
        return cls.from_important(range(1, num_layers + 1), num_layers)


@dataclass(frozen=True)
class FrequencyTable:
    counts: tuple
    total_steps: int

    @property
    def num_layers(self):
        return len(self.counts)


@dataclass(frozen=True)
class SelectionStrategy:
    name: str = "intention-tuning"
    count: int | None = None
    seed: int = 0

    def __post_init__(self):
        name = normalize_strategy(self.name)
        object.__setattr__(self, "name", name)
        if self.count is None and name in DEFAULT_COUNTS:
            object.__setattr__(self, "count", DEFAULT_COUNTS[name])


def normalize_strategy(name: str) -> str:
    key = "".join(ch for ch in name.lower() if ch.isalnum())
    aliases = {"intentiontuning": "intention-tuning", "fullfinetuning": "full"}
    key = aliases.get(key, key)
    if key not in STRATEGIES:
        raise ValidationError(f"unknown strategy {name!r}; expected one of {STRATEGIES}")
    return key


def population_variance(values) -> float:
    values = list(values)
    if not values:
        return 0.0
    return float(np.var(np.asarray(values, dtype=np.float64)))


def gradient_norms(model, step: int = 0) -> LayerScores:
    """L2 norm of each layer's adapter gradients after ``backward``.

    Frozen layers receive no gradient and score 0.
    """
    scores = []
    for layer in model.layers:
        params = layer.adapter_parameters()
        if not layer.active:
            scores.append(0.0)
            continue
        if any(p.grad is None for p in params):
            raise StateError(f"layer {layer.index} is active but has no gradient; run backward first")
        scores.append(math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))
    return LayerScores(step, tuple(scores))


def split_layers(scores) -> LayerSplit:
    """Variance-minimising threshold split of per-layer scores.

    All boundaries between distinct values in sorted order are scored by
    ``Var(low side) + Var(high side)``; ties go to the split that freezes
    more layers. If every score is equal, or the best split fails to reduce
    variance below that of the whole set, every layer is returned as
    important with ``degenerate=True``.
    """
    if isinstance(scores, LayerScores):
        scores = scores.scores
    a = np.asarray(scores, dtype=np.float64)
    n = a.size
    if a.ndim != 1 or n < 2:
        raise ValidationError("split_layers needs at least 2 layer scores")
    if not np.all(np.isfinite(a)):
        raise ValidationError("layer scores must be finite")
    order = np.argsort(a, kind="stable")
    ordered = a[order]
    k, cost = variance_split(ordered.tolist())
    total = population_variance(a)
    if k == 0 or cost > total * (1 + 1e-12):
        return LayerSplit.from_important(range(1, n + 1), n, degenerate=True)
    threshold = 0.5 * (ordered[k - 1] + ordered[k])
    important = {int(i) + 1 for i in order[k:]}
    return LayerSplit.from_important(important, n, threshold=float(threshold))


def accumulate_frequency(splits, num_layers: int | None = None) -> FrequencyTable:
    """Count, per layer, the steps at which it was important."""
    splits = list(splits)
    if num_layers is None:
        num_layers = splits[0].num_layers if splits else 0
    counts = [0] * num_layers
    for split in splits:
        if split.num_layers != num_layers:
            raise ValidationError(f"split over {split.num_layers} layers, expected {num_layers}")
        for i in split.important:
            counts[i - 1] += 1
    return FrequencyTable(tuple(counts), len(splits))


def finalize_layers(freq: FrequencyTable) -> LayerSplit:
    if freq.total_steps < 1:
        raise ValidationError("frequency table has no steps")
    return split_layers([float(c) for c in freq.counts])


def alignment_ratio(s_pre, s_gen) -> float:
    """Fraction of the generation-stage important layers shared with prediction."""
    s_pre, s_gen = set(s_pre), set(s_gen)
    if not s_gen:
        raise ValidationError("alignment ratio undefined for an empty generation layer set")
    return len(s_pre & s_gen) / len(s_gen)


def select_baseline(strategy: SelectionStrategy, scores=None, num_layers: int | None = None) -> LayerSplit:
    """Fixed layer mask for the LISA, IST and Full baselines.

    LISA draws ``count`` layers uniformly from the strategy seed; IST keeps
    the ``count`` highest scores (lower index wins ties).
    """
    if scores is not None:
        scores = scores.scores if isinstance(scores, LayerScores) else tuple(scores)
        num_layers = len(scores)
    if num_layers is None:
        raise ValidationError("select_baseline needs scores or num_layers")
    name = strategy.name
    if name == "full":
        return LayerSplit.full(num_layers)
    if name not in DEFAULT_COUNTS:
        raise ValidationError(f"{name} is not a fixed-mask baseline")
    count = strategy.count
    if count < 1 or count > num_layers:
        raise ValidationError(f"{name} asks for {count} layers but the model has {num_layers}")
    if name == "lisa":
        rng = derive_rng(strategy.seed, "lisa")
        chosen = rng.choice(num_layers, size=count, replace=False) + 1
        return LayerSplit.from_important({int(i) for i in chosen}, num_layers)
    if scores is None:
        raise ValidationError("IST needs layer scores")
    ranked = sorted(range(num_layers), key=lambda i: (-scores[i], i))
    return LayerSplit.from_important({i + 1 for i in ranked[:count]}, num_layers)


# ---------------------------------------------------------------- CSV


def _fmt(x: float) -> str:
    return repr(float(x))


def write_scores_csv(path, score_rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "layer", "score"])
        for row in score_rows:
            for i, s in enumerate(row.scores, 1):
                w.writerow([row.step, i, _fmt(s)])
    return path


def write_frequency_csv(path, freq: FrequencyTable) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "count"])
        for i, c in enumerate(freq.counts, 1):
            w.writerow([i, c])
    return path


def write_split_csv(path, split: LayerSplit) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "member"])
        for i in range(1, split.num_layers + 1):
            w.writerow([i, "important" if i in split.important else "redundant"])
    return path


def write_splits_csv(path, splits) -> Path:
    """Per-step splits as ``step,layer,member``."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "layer", "member"])
        for step, split in enumerate(splits):
            for i in range(1, split.num_layers + 1):
                w.writerow([step, i, "important" if i in split.important else "redundant"])
    return path


def read_scores_csv(path) -> list[LayerScores]:
    rows: dict[int, list] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.setdefault(int(rec["step"]), []).append((int(rec["layer"]), float(rec["score"])))
    return [LayerScores(step, [s for _, s in sorted(vals)]) for step, vals in sorted(rows.items())]


def read_frequency_csv(path) -> FrequencyTable:
    with open(path, newline="") as fh:
        recs = sorted((int(r["layer"]), int(r["count"])) for r in csv.DictReader(fh))
    counts = tuple(c for _, c in recs)
    return FrequencyTable(counts, max(counts) if counts else 0)
