"""Experiment orchestration behind the command-line interface.

Every command takes an :class:`ExperimentConfig` and writes into
``config.out_dir``. Layout::

    out_dir/
      config.txt  vocab.json  base/base.npz       shared by all strategies
      probe_scores.csv  probe_splits.csv  frequency.csv   (probe)
      <strategy>/  adapters.bin weights.npz report.json losses.csv ...
      <strategy>/hypotheses.jsonl  metrics.json  examples.csv  per_intention.csv
      comparison.csv  alignment.json               (compare)
      heatmap.csv                                   (heatmap)

Outputs depend only on the config and seed, so re-running a command
reproduces them byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .config import ExperimentConfig
from .corpus import RevisionExample, Vocab, build_vocab, generate_synthetic, get_taxonomy, load_jsonl, prompt_texts
from .errors import StateError, ValidationError
from .layerselect import (LayerSplit, SelectionStrategy, read_scores_csv, write_frequency_csv, write_scores_csv,
                          write_split_csv, write_splits_csv)
from .metrics import (EvalTriple, evaluate_by_intention, evaluate_corpus, read_triples, write_examples_csv,
                      write_report_json, write_triples)
from .model import (DualHeadModel, export_adapters, import_adapters, load_snapshot, load_weights, save_snapshot,
                    save_weights, set_layer_mask)
from .seeding import derive_rng
from .training import (generate_revisions, pretrain_base, run_baseline, run_intention_tuning, stage_summary)

log = logging.getLogger(__name__)

STRATEGY_ORDER = ("intention-tuning", "ir", "lisa", "ist", "full")
COPY_ROW = "copy"
COMPARISON_COLUMNS = ("strategy", "sari", "gleu", "update_r", "average", "trainable_params")


@dataclass
class Corpus:
    train: list
    val: list
    test: list
    origin: str


# ---------------------------------------------------------------- inputs


def load_corpus(cfg: ExperimentConfig) -> Corpus:
    """The JSONL splits under ``corpus_dir``, or an in-memory synthetic corpus."""
    tax = get_taxonomy(cfg.taxonomy)
    if cfg.corpus_dir:
        root = Path(cfg.corpus_dir)
        splits = {}
        for name in ("train", "val", "test"):
            path = root / f"{name}.jsonl"
            if not path.is_file():
                if name == "val":
                    splits[name] = []
                    continue
                raise ValidationError(f"corpus split not found: {path}")
            splits[name] = load_jsonl(path, tax)
        return Corpus(splits["train"], splits["val"], splits["test"], str(root))
    examples = generate_synthetic(cfg.seed, cfg.synth_size, cfg.level)
    n_val = int(round(cfg.synth_val_fraction * len(examples)))
    n_test = int(round(cfg.synth_test_fraction * len(examples)))
    n_train = len(examples) - n_val - n_test
    return Corpus(examples[:n_train], examples[n_train:n_train + n_val], examples[n_train + n_val:], "synthetic")


def experiment_vocab(cfg: ExperimentConfig, data: Corpus) -> Vocab:
    """Vocabulary over every prompt the training split produces."""
    if not data.train:
        raise ValidationError("training split is empty")
    return build_vocab(prompt_texts(data.train, cfg.taxonomy))


def _pretraining_stream(cfg: ExperimentConfig, data: Corpus):
    if cfg.pretrain_text == "synthetic":
        return corpus_mod.pretraining_documents(cfg.seed, cfg.pretrain_repeat_p)
    # The raw training texts, without labels or prompts, reshuffled each pass.
    texts = [t for ex in data.train for t in (corpus_mod.strip_edit_tags(ex.original),
                                              corpus_mod.strip_edit_tags(ex.revised)) if t]

    def cycle():
        for epoch in itertools.count():
            for i in derive_rng(cfg.seed, "pretraining_order", epoch).permutation(len(texts)):
                yield texts[i]

    return cycle()


def _base_key(cfg: ExperimentConfig, vocab: Vocab) -> str:
    payload = {"model": cfg.model_config(len(vocab)).to_dict(), "pretrain": cfg.pretrain_config().__dict__,
               "text": [cfg.pretrain_text, cfg.pretrain_repeat_p],
               "vocab": vocab.tokens, "seed": cfg.seed}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def prepare_base(cfg: ExperimentConfig, data: Corpus, vocab: Vocab) -> Path:
    """Build (or reuse) the shared base weights under ``out_dir/base``.

    With ``pretrain_steps = 0`` the base is the seeded random initialisation.
    A cached file is reused only if its recorded key matches this config.
    """
    out = Path(cfg.out_dir) / "base"
    out.mkdir(parents=True, exist_ok=True)
    weights, meta = out / "base.npz", out / "base.json"
    key = _base_key(cfg, vocab)
    if weights.is_file() and meta.is_file():
        if json.loads(meta.read_text()).get("key") == key:
            return weights
    model = DualHeadModel(cfg.model_config(len(vocab)), cfg.seed)
    losses = []
    if cfg.pretrain_steps:
        start = time.perf_counter()
        losses = pretrain_base(model, _pretraining_stream(cfg, data), vocab, cfg.pretrain_config())
        log.info("pretrained base for %d steps in %.1fs", cfg.pretrain_steps, time.perf_counter() - start)
    save_weights(model, weights)
    meta.write_text(json.dumps({"key": key, "steps": cfg.pretrain_steps, "loss": stage_summary(losses)},
                               indent=2, sort_keys=True) + "\n")
    return weights


def load_base(cfg: ExperimentConfig, vocab: Vocab, weights: Path) -> DualHeadModel:
    model = DualHeadModel(cfg.model_config(len(vocab)), cfg.seed)
    load_weights(model, weights)
    return model


def _setup(cfg: ExperimentConfig):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.txt")
    data = load_corpus(cfg)
    vocab = experiment_vocab(cfg, data)
    vocab.save(out / "vocab.json")
    return out, data, vocab


def _strategy(cfg: ExperimentConfig, name: str) -> SelectionStrategy:
    count = {"lisa": cfg.lisa_count, "ist": cfg.ist_count}.get(name)
    return SelectionStrategy(name, count, cfg.seed)


def _eval_examples(cfg: ExperimentConfig, data: Corpus) -> list:
    test = [ex for ex in data.test if ex.revised.strip()]
    return test[: cfg.eval_limit] if cfg.eval_limit else test


# ---------------------------------------------------------------- commands


def cmd_synth(cfg: ExperimentConfig) -> dict:
    """Write a synthetic corpus to ``corpus_dir`` (or ``out_dir/corpus``)."""
    target = Path(cfg.corpus_dir) if cfg.corpus_dir else Path(cfg.out_dir) / "corpus"
    train = 1.0 - cfg.synth_val_fraction - cfg.synth_test_fraction
    return corpus_mod.generate_synthetic_corpus(target, cfg.seed, cfg.synth_size, cfg.level,
                                                fractions=(train, cfg.synth_val_fraction, cfg.synth_test_fraction))


def cmd_probe(cfg: ExperimentConfig) -> dict:
    """Stage 1 only: per-step scores and splits plus the frequency table."""
    out, data, vocab = _setup(cfg)
    base = load_base(cfg, vocab, prepare_base(cfg, data, vocab))
    model, report = run_intention_tuning(data.train, data.train, base.config, cfg.train_config(), vocab,
                                         taxonomy=cfg.taxonomy, probe_only=True, base=base,
                                         eval_pre=data.test)
    paths = {
        "scores": write_scores_csv(out / "probe_scores.csv", report.pre_scores),
        "splits": write_splits_csv(out / "probe_splits.csv", report.pre_splits),
        "frequency": write_frequency_csv(out / "frequency.csv", report.frequency),
    }
    summary = {"s_pre": list(report.s_pre), "s_gen": list(report.s_gen), "alignment_ratio": report.alignment,
               "frequency": list(report.frequency.counts), "steps": report.frequency.total_steps,
               "test_accuracy": report.pre_accuracy, "loss": stage_summary(report.pre_losses)}
    paths["summary"] = _write_json(out / "probe.json", summary)
    return paths


def _train_one(cfg: ExperimentConfig, name: str, data: Corpus, vocab: Vocab, base_path: Path):
    base = load_base(cfg, vocab, base_path)
    tcfg = cfg.train_config()
    if name == "intention-tuning":
        return run_intention_tuning(data.train, data.train, base.config, tcfg, vocab, taxonomy=cfg.taxonomy,
                                    base=base, eval_pre=data.test)
    return run_baseline(_strategy(cfg, name), data.train, base.config, tcfg, vocab, base=base)


def _save_run(run_dir: Path, model: DualHeadModel, report) -> dict:
    run_dir.mkdir(parents=True, exist_ok=True)
    paths = report.save(run_dir)
    paths["adapters"] = save_snapshot(export_adapters(model), run_dir / "adapters.bin", model.config)
    paths["weights"] = save_weights(model, run_dir / "weights.npz")
    mask = LayerSplit.from_important(model.active_layers, model.config.num_layers)
    paths["mask"] = write_split_csv(run_dir / "mask.csv", mask)
    if report.frequency is not None:
        paths["frequency"] = write_frequency_csv(run_dir / "frequency.csv", report.frequency)
    return paths


def cmd_train(cfg: ExperimentConfig) -> dict:
    out, data, vocab = _setup(cfg)
    base_path = prepare_base(cfg, data, vocab)
    model, report = _train_one(cfg, cfg.strategy, data, vocab, base_path)
    return _save_run(out / cfg.strategy, model, report)


def load_trained(cfg: ExperimentConfig, name: str | None = None):
    """Rebuild the model a previous ``train`` left in ``out_dir/<strategy>``."""
    name = name or cfg.strategy
    run_dir = Path(cfg.out_dir) / name
    vocab_path = Path(cfg.out_dir) / "vocab.json"
    if not (run_dir / "weights.npz").is_file() or not vocab_path.is_file():
        raise StateError(f"no trained model under {run_dir}; run `train` first")
    vocab = Vocab.load(vocab_path)
    model = DualHeadModel(cfg.model_config(len(vocab)), cfg.seed)
    load_weights(model, run_dir / "weights.npz")
    import_adapters(model, load_snapshot(run_dir / "adapters.bin"))
    with open(run_dir / "mask.csv", newline="") as fh:
        important = {int(r["layer"]) for r in csv.DictReader(fh) if r["member"] == "important"}
    set_layer_mask(model, LayerSplit.from_important(important, model.config.num_layers))
    model.set_task("generate")
    return model, vocab


def _hypotheses(cfg, model, vocab, examples) -> list[EvalTriple]:
    hyps = generate_revisions(model, examples, vocab, cfg.decode_config(), seed=cfg.seed)
    return [EvalTriple(ex.original, h, [ex.revised], ", ".join(ex.intentions)) for ex, h in zip(examples, hyps)]


def copy_triples(examples) -> list[EvalTriple]:
    """The copy baseline: the hypothesis is the source with any tags removed."""
    return [EvalTriple(ex.original, corpus_mod.strip_edit_tags(ex.original), [ex.revised], ", ".join(ex.intentions))
            for ex in examples]


def cmd_generate(cfg: ExperimentConfig) -> Path:
    model, vocab = load_trained(cfg)
    data = load_corpus(cfg)
    triples = _hypotheses(cfg, model, vocab, _eval_examples(cfg, data))
    return write_triples(Path(cfg.out_dir) / cfg.strategy / "hypotheses.jsonl", triples)


def _evaluate_into(run_dir: Path, triples) -> dict:
    report = evaluate_corpus(triples)
    groups = evaluate_by_intention(triples)
    paths = {"metrics": write_report_json(run_dir / "metrics.json", report, groups),
             "examples": write_examples_csv(run_dir / "examples.csv", triples)}
    with open(run_dir / "per_intention.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["intention", "count", "sari", "gleu", "update_r", "average"])
        for name, rep in groups.items():
            w.writerow([name, rep.count, repr(rep.sari), repr(rep.gleu), repr(rep.update_r), repr(rep.average)])
    paths["per_intention"] = run_dir / "per_intention.csv"
    paths["report"] = report
    return paths


def cmd_evaluate(cfg: ExperimentConfig, hypotheses=None) -> dict:
    path = Path(hypotheses) if hypotheses else Path(cfg.out_dir) / cfg.strategy / "hypotheses.jsonl"
    if not path.is_file():
        raise StateError(f"hypotheses file not found: {path}")
    out = path.parent
    return _evaluate_into(out, read_triples(path))


def cmd_compare(cfg: ExperimentConfig, strategies=STRATEGY_ORDER, timing: bool = False) -> dict:
    """Train, decode and score every strategy on one corpus, base and seed."""
    out, data, vocab = _setup(cfg)
    base_path = prepare_base(cfg, data, vocab)
    examples = _eval_examples(cfg, data)
    if not examples:
        raise ValidationError("test split has no examples with a non-empty revision")
    rows, alignment, walls = [], {}, {}
    for name in sorted(strategies, key=STRATEGY_ORDER.index):
        start = time.perf_counter()
        model, report = _train_one(cfg, name, data, vocab, base_path)
        run_dir = out / name
        _save_run(run_dir, model, report)
        triples = _hypotheses(cfg, model, vocab, examples)
        write_triples(run_dir / "hypotheses.jsonl", triples)
        metrics = _evaluate_into(run_dir, triples)["report"]
        walls[name] = time.perf_counter() - start
        rows.append((name, metrics, report.trainable_params.get("generate", 0)))
        if name == "intention-tuning":
            alignment = {"s_pre": list(report.s_pre), "s_gen": list(report.s_gen),
                         "alignment_ratio": report.alignment, "frequency": list(report.frequency.counts),
                         "transferred_layers": list(report.transferred_layers),
                         "stage1_test_accuracy": report.pre_accuracy,
                         "stage1_loss": stage_summary(report.pre_losses),
                         "stage2_loss": stage_summary(report.gen_losses)}
        log.info("%s: SARI %.2f in %.1fs", name, metrics.sari, walls[name])
    copy_dir = out / COPY_ROW
    copy_dir.mkdir(exist_ok=True)
    triples = copy_triples(examples)
    write_triples(copy_dir / "hypotheses.jsonl", triples)
    rows.append((COPY_ROW, _evaluate_into(copy_dir, triples)["report"], 0))
    walls[COPY_ROW] = 0.0

    table = out / "comparison.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(COMPARISON_COLUMNS) + (["wall_time_s"] if timing else []))
        for name, m, params in rows:
            row = [name, f"{m.sari:.6f}", f"{m.gleu:.6f}", f"{m.update_r:.6f}", f"{m.average:.6f}", params]
            w.writerow(row + ([f"{walls[name]:.3f}"] if timing else []))
    paths = {"comparison": table}
    if alignment:
        paths["alignment"] = _write_json(out / "alignment.json", alignment)
    return paths


def heatmap_rows(score_rows_by_task: dict) -> dict:
    """Mean score per layer for each task, min-max scaled to [0, 1].

    A task whose mean scores are all equal maps to all zeros.
    """
    out = {}
    for task, rows in score_rows_by_task.items():
        if not rows:
            raise ValidationError(f"no scores recorded for task {task!r}")
        mean = np.mean(np.asarray([r.scores for r in rows], dtype=np.float64), axis=0)
        lo, hi = float(mean.min()), float(mean.max())
        out[task] = [0.0] * mean.size if hi == lo else [float((m - lo) / (hi - lo)) for m in mean]
    return out


def cmd_heatmap(cfg: ExperimentConfig) -> Path:
    """Two-row layer-score matrix from a trained Intention-Tuning run."""
    run_dir = Path(cfg.out_dir) / "intention-tuning"
    needed = {"predict": run_dir / "pre_scores.csv", "generate": run_dir / "gen_scores.csv"}
    for path in needed.values():
        if not path.is_file():
            raise StateError(f"missing {path}; run `train` with the intention-tuning strategy first")
    matrix = heatmap_rows({task: read_scores_csv(path) for task, path in needed.items()})
    n = len(next(iter(matrix.values())))
    path = Path(cfg.out_dir) / "heatmap.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task"] + [f"layer{i}" for i in range(1, n + 1)])
        for task in ("predict", "generate"):
            w.writerow([task] + [repr(v) for v in matrix[task]])
    return path


def _write_json(path: Path, payload) -> Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


__all__ = ["Corpus", "RevisionExample", "cmd_compare", "cmd_evaluate", "cmd_generate", "cmd_heatmap",
           "cmd_probe", "cmd_synth", "cmd_train", "copy_triples", "heatmap_rows", "load_corpus",
           "load_trained", "prepare_base"]
