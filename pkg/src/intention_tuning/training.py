"""Objectives, optimiser and the two-stage Intention-Tuning driver.

Stage 1 fine-tunes on intention prediction and re-splits the layers after
every backward pass. Stage 2 fixes one split, derived from how often each
layer was selected in stage 1, transfers the stage-1 adapters of layers that
stay important, and fine-tunes on revision generation.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensorcore as tc
from .corpus import (ITERATER, GenerationInstance, PredictionInstance, build_generation_prompt,
                     build_prediction_prompt, get_taxonomy)
from .errors import ValidationError
from .layerselect import (LayerSplit, SelectionStrategy, accumulate_frequency, alignment_ratio,
                          finalize_layers, gradient_norms, select_baseline, split_layers, write_scores_csv,
                          write_splits_csv)
from .model import (DualHeadModel, ModelConfig, count_trainable_params, export_adapters, import_adapters,
                    layer_fingerprint, set_layer_mask)
from .seeding import derive_rng

log = logging.getLogger(__name__)

BATCH_SIZE_BY_LEVEL = {"sentence": 16, "document": 4, "argrevision": 2}
MAX_NEW_TOKENS_BY_LEVEL = {"sentence": 128, "document": 512, "argrevision": 768}


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    warmup_steps: int = 100
    epochs: int = 2
    batch_size: int = 16
    weight_decay: float = 0.0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    log_every: int = 20
    seed: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.epochs < 1 or self.batch_size < 1 or self.warmup_steps < 0:
            raise ValidationError("epochs and batch_size must be positive, warmup_steps non-negative")

    @classmethod
    def for_level(cls, level: str, **overrides):
        return cls(batch_size=BATCH_SIZE_BY_LEVEL[level], **overrides)


@dataclass
class PretrainConfig:
    """Next-token training of the base model before any fine-tuning."""

    steps: int = 0
    batch_size: int = 16
    seq_len: int = 48
    learning_rate: float = 2e-3
    warmup_steps: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.seq_len < 2:
            raise ValidationError("pretraining needs steps >= 0, batch_size >= 1 and seq_len >= 2")


@dataclass
class DecodeConfig:
    sample: bool = True
    num_beams: int = 4  # recorded only; decoding is sampling-based
    top_p: float = 0.75
    top_k: int = 40
    temperature: float = 0.2
    max_new_tokens: int = 128


# ---------------------------------------------------------------- losses


def loss_pre_single(logits, label: int):
    return tc.softmax_cross_entropy(logits, label)


def loss_pre_multi(logits, labels):
    return tc.sigmoid_bce(logits, labels)


def loss_gen(logits, targets, loss_mask):
    """Summed next-token cross-entropy over the masked (revised-text) positions."""
    return tc.cross_entropy_rows(logits, targets, loss_mask)


def prediction_loss(model: DualHeadModel, inst: PredictionInstance, rng=None):
    logits = model.forward_predict(inst.tokens, rng=rng)
    if model.config.multi_label:
        return loss_pre_multi(logits, inst.target)
    return loss_pre_single(logits, inst.target)


def generation_loss(model: DualHeadModel, inst: GenerationInstance, rng=None):
    tokens = inst.tokens
    logits = model.forward_generate(tokens[:-1], rng=rng)
    return loss_gen(logits, tokens[1:], inst.loss_mask[1:])


# ---------------------------------------------------------------- optimiser


class AdamW:
    """Adam with decoupled weight decay and linear warmup to a constant rate.

    ``step_index`` is 1-based: the first update uses ``lr / warmup_steps``.
    """

    def __init__(self, lr=2e-4, warmup_steps=100, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.lr = lr
        self.warmup_steps = warmup_steps
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state: dict[int, list] = {}

    @classmethod
    def from_config(cls, cfg: TrainConfig):
        return cls(cfg.learning_rate, cfg.warmup_steps, cfg.betas, cfg.eps, cfg.weight_decay)

    def lr_at(self, step_index: int) -> float:
        if self.warmup_steps <= 0:
            return self.lr
        return self.lr * min(1.0, step_index / self.warmup_steps)

    def step(self, params, step_index: int):
        lr = self.lr_at(step_index)
        for p in params:
            if not p.requires_grad or p.grad is None:
                continue
            st = self.state.setdefault(id(p), [0, np.zeros_like(p.data), np.zeros_like(p.data)])
            st[0] += 1
            t, m, v = st
            m *= self.beta1
            m += (1 - self.beta1) * p.grad
            v *= self.beta2
            v += (1 - self.beta2) * p.grad * p.grad
            mhat = m / (1 - self.beta1 ** t)
            vhat = v / (1 - self.beta2 ** t)
            if self.weight_decay:
                p.data = p.data - lr * self.weight_decay * p.data
            p.data = p.data - lr * mhat / (np.sqrt(vhat) + self.eps)


def optimizer_step(model: DualHeadModel, optimizer: AdamW, step_index: int):
    optimizer.step(model.trainable_parameters(), step_index)


# ---------------------------------------------------------------- base pretraining


def _token_windows(documents, vocab, length: int):
    """Fixed-length windows cut from BOS/EOS-delimited documents laid end to end."""
    buf: list[int] = []
    for doc in documents:
        buf.extend([vocab.bos_id, *vocab.encode(doc), vocab.eos_id])
        while len(buf) >= length:
            yield buf[:length]
            buf = buf[length:]


def pretrain_base(model: DualHeadModel, documents, vocab, cfg: PretrainConfig) -> list[float]:
    """Train the base weights and generation head as a plain language model.

    This builds the frozen base that fine-tuning later adapts; adapters are
    bypassed and stay untouched, and the prediction head is not trained.
    Returns the per-step mean token loss.
    """
    if cfg.seq_len + 1 > model.config.max_seq_len:
        raise ValidationError(f"seq_len {cfg.seq_len} does not fit max_seq_len {model.config.max_seq_len}")
    if model.config.vocab_size != len(vocab):
        raise ValidationError("vocab does not match the model's vocab_size")
    params = model.base_parameters() + model.generation_head()
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = True
    opt = AdamW(cfg.learning_rate, cfg.warmup_steps)
    windows = _token_windows(documents, vocab, cfg.seq_len + 1)
    losses = []
    try:
        for step in range(1, cfg.steps + 1):
            batch = np.asarray([next(windows) for _ in range(cfg.batch_size)], dtype=np.int64)
            for p in params:
                p.grad = None
            logits = model.forward_generate_batch(batch[:, :-1], use_adapters=False)
            n = batch.shape[0] * cfg.seq_len
            loss = tc.cross_entropy_rows(logits, batch[:, 1:].reshape(-1), np.ones(n, dtype=bool))
            tc.backward(tc.scale(loss, 1.0 / n))
            opt.step(params, step)
            losses.append(loss.item() / n)
            if step % 100 == 0:
                log.info("pretrain step %d loss %.4f", step, np.mean(losses[-100:]))
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad = flag
            p.grad = None
    return losses


# ---------------------------------------------------------------- reports


@dataclass
class StageReport:
    strategy: str
    pre_losses: list = field(default_factory=list)
    pre_scores: list = field(default_factory=list)
    pre_splits: list = field(default_factory=list)
    gen_losses: list = field(default_factory=list)
    gen_scores: list = field(default_factory=list)
    gen_masks: list = field(default_factory=list)
    frequency: object = None
    s_pre: tuple = ()
    s_gen: tuple = ()
    alignment: float | None = None
    trainable_params: dict = field(default_factory=dict)
    transferred_layers: tuple = ()
    stage2_init_fingerprints: dict = field(default_factory=dict)
    snapshot_fingerprints: dict = field(default_factory=dict)
    pre_accuracy: float | None = None

    def to_json(self) -> dict:
        def split_json(s):
            return {"important": sorted(s.important), "redundant": sorted(s.redundant),
                    "threshold": None if math.isinf(s.threshold) else s.threshold,
                    "degenerate": s.degenerate}

        return {
            "strategy": self.strategy,
            "pre_losses": self.pre_losses,
            "gen_losses": self.gen_losses,
            "pre_scores": [list(s.scores) for s in self.pre_scores],
            "gen_scores": [list(s.scores) for s in self.gen_scores],
            "pre_splits": [split_json(s) for s in self.pre_splits],
            "gen_mask": sorted(self.gen_masks[0]) if self.gen_masks else [],
            "frequency": None if self.frequency is None else {
                "counts": list(self.frequency.counts), "total_steps": self.frequency.total_steps},
            "s_pre": list(self.s_pre),
            "s_gen": list(self.s_gen),
            "alignment_ratio": self.alignment,
            "trainable_params": self.trainable_params,
            "transferred_layers": list(self.transferred_layers),
            "pre_accuracy": self.pre_accuracy,
        }

    def save(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"report": out / "report.json"}
        paths["report"].write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        paths["losses"] = out / "losses.csv"
        with open(paths["losses"], "w") as fh:
            fh.write("stage,step,loss\n")
            for stage, losses in (("predict", self.pre_losses), ("generate", self.gen_losses)):
                for i, loss in enumerate(losses):
                    fh.write(f"{stage},{i},{loss!r}\n")
        if self.pre_scores:
            paths["pre_scores"] = write_scores_csv(out / "pre_scores.csv", self.pre_scores)
            paths["pre_splits"] = write_splits_csv(out / "pre_splits.csv", self.pre_splits)
        if self.gen_scores:
            paths["gen_scores"] = write_scores_csv(out / "gen_scores.csv", self.gen_scores)
        return paths


# ---------------------------------------------------------------- loops


def _batches(n: int, batch_size: int, rng) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _run_stage(model, instances, loss_fn, cfg: TrainConfig, stage: str, on_backward=None):
    """Generic minibatch loop. ``on_backward(step)`` runs between backward and the update."""
    if not instances:
        raise ValidationError(f"{stage}: empty corpus")
    opt = AdamW.from_config(cfg)
    losses = []
    step = 0
    for epoch in range(cfg.epochs):
        for batch in _batches(len(instances), cfg.batch_size, derive_rng(cfg.seed, stage, "order", epoch)):
            model.zero_grad()
            drop_rng = derive_rng(cfg.seed, stage, "dropout", step)
            total = 0.0
            for idx in batch:
                loss = loss_fn(model, instances[idx], drop_rng)
                tc.backward(tc.scale(loss, 1.0 / len(batch)))
                total += loss.item()
            losses.append(total / len(batch))
            if on_backward is not None:
                on_backward(step)
            step += 1
            optimizer_step(model, opt, step)
            if cfg.log_every and step % cfg.log_every == 0:
                log.info("%s step %d loss %.4f", stage, step, np.mean(losses[-cfg.log_every:]))
    model.zero_grad()
    return losses


def prediction_instances(examples, vocab, taxonomy, multi_label):
    return [build_prediction_prompt(ex, vocab, taxonomy, multi_label) for ex in examples]


def generation_instances(examples, vocab):
    """Modifying revisions only: pure deletions never, and pure additions not at sentence level."""
    return [build_generation_prompt(ex, vocab) for ex in examples
            if ex.revised.strip() and (ex.level == "document" or ex.original.strip())]


def run_prediction_stage(model, instances, cfg: TrainConfig, report: StageReport, split_fn=split_layers):
    """Stage 1: re-split after every backward; the new mask gates this step's update."""
    model.set_task("predict")
    set_layer_mask(model, LayerSplit.full(model.config.num_layers))
    report.trainable_params["predict_initial"] = count_trainable_params(model)

    def resplit(step):
        scores = gradient_norms(model, step)
        split = split_fn(scores.scores)
        report.pre_scores.append(scores)
        report.pre_splits.append(split)
        set_layer_mask(model, split)

    report.pre_losses = _run_stage(model, instances, prediction_loss, cfg, "predict", resplit)
    return model


def run_intention_tuning(corpus_pre, corpus_gen, model_config: ModelConfig, cfg: TrainConfig, vocab,
                         taxonomy=ITERATER, split_fn=split_layers, probe_only=False, base=None, eval_pre=None):
    """Two-stage fine-tuning; returns ``(model, StageReport)``.

    ``base`` is an optional already-built model (e.g. a pretrained base)
    that is fine-tuned in place; its adapters are re-initialised first.
    ``eval_pre`` examples, if given, are scored for intention-prediction
    accuracy at the end of stage 1, before stage 2 replaces the adapters.
    """
    taxonomy = get_taxonomy(taxonomy)
    if not corpus_pre or (not corpus_gen and not probe_only):
        raise ValidationError("both corpora must be non-empty")
    report = StageReport("intention-tuning")
    model = _fresh_model(model_config, cfg, "predict", base)
    pre = prediction_instances(corpus_pre, vocab, taxonomy, model_config.multi_label)
    run_prediction_stage(model, pre, cfg, report, split_fn)
    if eval_pre:
        report.pre_accuracy = prediction_accuracy(model, eval_pre, vocab, taxonomy)

    snapshot = export_adapters(model)
    report.snapshot_fingerprints = {i: layer_fingerprint(model, i) for i in range(1, model_config.num_layers + 1)}
    s_pre = set(report.pre_splits[-1].important)
    report.frequency = accumulate_frequency(report.pre_splits, model_config.num_layers)
    final = finalize_layers(report.frequency) if report.frequency.total_steps else LayerSplit.full(
        model_config.num_layers)
    report.s_pre = tuple(sorted(s_pre))
    report.s_gen = tuple(sorted(final.important))
    report.alignment = alignment_ratio(s_pre, final.important)
    if probe_only:
        return model, report

    model.reset_adapters("generate")
    shared = s_pre & set(final.important)
    import_adapters(model, snapshot, shared)
    report.transferred_layers = tuple(sorted(shared))
    set_layer_mask(model, final)
    model.set_task("generate")
    report.stage2_init_fingerprints = {i: layer_fingerprint(model, i)
                                       for i in range(1, model_config.num_layers + 1)}
    report.trainable_params["generate"] = count_trainable_params(model)
    report.trainable_params["predict_final"] = (
        sum(p.data.size for i in s_pre for p in model.layers[i - 1].adapter_parameters())
        + sum(p.data.size for p in model.prediction_head()))
    gen = generation_instances(corpus_gen, vocab)

    def record(step):
        report.gen_scores.append(gradient_norms(model, step))
        report.gen_masks.append(frozenset(model.active_layers))

    report.gen_losses = _run_stage(model, gen, generation_loss, cfg, "generate", record)
    return model, report


def _fresh_model(model_config, cfg, label, base):
    if base is None:
        return DualHeadModel(model_config, cfg.seed, adapter_label=label)
    if base.config != model_config:
        raise ValidationError("base model was built with a different model config")
    base.reset_adapters(label)
    return base


def run_baseline(strategy: SelectionStrategy, corpus_gen, model_config: ModelConfig, cfg: TrainConfig, vocab,
                 base=None):
    """Single-stage generation fine-tuning under a baseline layer mask."""
    name = strategy.name
    if name == "intention-tuning":
        raise ValidationError("use run_intention_tuning for the two-stage method")
    report = StageReport(name)
    model = _fresh_model(model_config, cfg, "generate", base)
    model.set_task("generate")
    n = model_config.num_layers
    gen = generation_instances(corpus_gen, vocab)
    if not gen:
        raise ValidationError("empty generation corpus")

    if name == "ist":
        # One probing pass on the first batch with everything active.
        first = _batches(len(gen), cfg.batch_size, derive_rng(cfg.seed, "generate", "order", 0))[0]
        for idx in first:
            tc.backward(tc.scale(generation_loss(model, gen[idx]), 1.0 / len(first)))
        probe = gradient_norms(model, -1)
        model.zero_grad()
        mask = select_baseline(strategy, probe)
    elif name == "ir":
        mask = LayerSplit.full(n)
    else:
        mask = select_baseline(strategy, num_layers=n)
    set_layer_mask(model, mask)
    report.trainable_params["generate"] = count_trainable_params(model)

    def record(step):
        scores = gradient_norms(model, step)
        report.gen_scores.append(scores)
        report.gen_masks.append(frozenset(model.active_layers))
        if name == "ir":
            split = split_layers(scores.scores)
            report.pre_splits.append(split)
            set_layer_mask(model, split)

    report.gen_losses = _run_stage(model, gen, generation_loss, cfg, "generate", record)
    report.s_gen = tuple(sorted(model.active_layers))
    if name == "ir":
        report.trainable_params["generate_final"] = count_trainable_params(model)
    return model, report


# ---------------------------------------------------------------- evaluation & decoding


def prediction_accuracy(model: DualHeadModel, examples, vocab, taxonomy=ITERATER) -> float:
    """Exact-match accuracy (argmax, or sigmoid > 0.5 per label when multi-label)."""
    taxonomy = get_taxonomy(taxonomy)
    multi = model.config.multi_label
    hits = 0
    with tc.no_grad():
        for ex in examples:
            inst = build_prediction_prompt(ex, vocab, taxonomy, multi)
            z = model.forward_predict(inst.tokens).data
            if multi:
                hits += bool(np.array_equal(z > 0, inst.target > 0.5))
            else:
                hits += int(np.argmax(z)) == inst.target
    return hits / len(examples) if examples else 0.0


def nucleus_candidates(probs, top_p: float) -> np.ndarray:
    """Indices of the smallest most-probable prefix whose mass reaches ``top_p``."""
    probs = np.asarray(probs, dtype=np.float64)
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    cut = int(np.searchsorted(cum, top_p - 1e-12)) + 1
    return order[:min(cut, probs.size)]


def sample_next(logits: np.ndarray, decode: DecodeConfig, rng) -> int:
    if not decode.sample or decode.temperature <= 0 or decode.top_k == 1:
        return int(np.argmax(logits))
    z = logits / decode.temperature
    if 0 < decode.top_k < z.size:
        kth = np.partition(z, -decode.top_k)[-decode.top_k]
        z = np.where(z >= kth, z, -np.inf)
    p = np.exp(z - z.max())
    p /= p.sum()
    keep = nucleus_candidates(p, decode.top_p) if decode.top_p < 1.0 else np.nonzero(p > 0)[0]
    q = np.zeros_like(p)
    q[keep] = p[keep]
    q /= q.sum()
    return int(rng.choice(q.size, p=q))


def generate(model: DualHeadModel, prompt, decode: DecodeConfig | None = None, rng=None, eos_id: int = 2):
    """Decode after ``prompt``; returns the new token ids (EOS excluded)."""
    decode = decode or DecodeConfig()
    seq = [int(t) for t in prompt]
    limit = model.config.max_seq_len
    if not seq or len(seq) >= limit:
        raise ValidationError(f"prompt of {len(seq)} tokens does not fit max_seq_len {limit}")
    if rng is None:
        rng = np.random.default_rng(0)
    out = []
    with tc.no_grad():
        while len(out) < decode.max_new_tokens and len(seq) < limit:
            logits = model.forward_generate(seq).data[-1]
            tok = sample_next(logits, decode, rng)
            if tok == eos_id:
                break
            out.append(tok)
            seq.append(tok)
    return out


def generate_revisions(model: DualHeadModel, examples, vocab, decode: DecodeConfig | None = None, seed: int = 0):
    """Decode a revision for every example; each draws from its own sub-generator."""
    decode = decode or DecodeConfig()
    outs = []
    for i, ex in enumerate(examples):
        inst = build_generation_prompt(ex, vocab)
        ids = generate(model, inst.prompt, decode, derive_rng(seed, "decode", i), vocab.eos_id)
        outs.append(vocab.decode(ids))
    return outs


def stage_summary(losses, window: int = 20) -> dict:
    w = min(window, max(1, len(losses) // 2)) if losses else 0
    return {"first_mean": float(np.mean(losses[:w])) if w else None,
            "last_mean": float(np.mean(losses[-w:])) if w else None}


def timed(fn, *args, **kwargs):
    start = time.perf_counter()
    result = fn(*args, **kwargs)
    return result, time.perf_counter() - start

