"""Toy decoder-only transformer with per-layer LoRA adapters and two heads.

The backbone (embeddings, attention/feed-forward weights, layer norms) is
frozen at construction. Only LoRA factors and the head of the current task
ever receive gradients. The prediction head and the generation head share
every backbone parameter and adapter.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensorcore as tc
from .errors import ValidationError
from .layerselect import LayerSplit
from .seeding import derive_rng
from .tensorcore import Tensor

TARGETS = ("Q", "K", "V", "Up", "Down")
TASKS = ("predict", "generate")


@dataclass
class ModelConfig:
    num_layers: int = 4
    embed_dim: int = 64
    num_heads: int = 4
    vocab_size: int = 512
    max_seq_len: int = 128
    num_intentions: int = 5
    multi_label: bool = False
    ffn_mult: int = 4
    lora_rank: int = 32
    lora_alpha: float = 64.0
    lora_dropout: float = 0.05
    lora_targets: tuple = TARGETS
    pad_id: int = 0

    def __post_init__(self):
        self.lora_targets = tuple(self.lora_targets)
        for name in ("num_layers", "embed_dim", "num_heads", "vocab_size",
                     "max_seq_len", "num_intentions", "ffn_mult", "lora_rank"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        if self.num_layers < 2:
            raise ValidationError("num_layers must be at least 2")
        if self.embed_dim % self.num_heads:
            raise ValidationError("embed_dim must be divisible by num_heads")
        if self.lora_alpha <= 0:
            raise ValidationError("lora_alpha must be positive")
        if not 0.0 <= self.lora_dropout < 1.0:
            raise ValidationError("lora_dropout must be in [0, 1)")
        unknown = set(self.lora_targets) - set(TARGETS)
        if unknown:
            raise ValidationError(f"unknown LoRA targets {sorted(unknown)}")

    @property
    def ffn_dim(self) -> int:
        return self.ffn_mult * self.embed_dim

    def target_dims(self, target: str) -> tuple[int, int]:
        """(d_in, d_out) of the base projection a target adapts."""
        d, f = self.embed_dim, self.ffn_dim
        return {"Q": (d, d), "K": (d, d), "V": (d, d), "Up": (d, f), "Down": (f, d)}[target]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lora_targets"] = list(self.lora_targets)
        return out


class LoraAdapter:
    """Low-rank update ``(alpha / r) * B @ A`` added to one frozen projection.

    ``A`` is (r, d_in) drawn from N(0, 1/r); ``B`` is (d_out, r) and starts at
    zero, so a fresh adapter leaves the base projection unchanged.
    """

    def __init__(self, d_in, d_out, rank, alpha, dropout_p, rng):
        self.rank = rank
        self.alpha = float(alpha)
        self.dropout_p = dropout_p
        self.A = Tensor(rng.normal(0.0, 1.0 / math.sqrt(rank), size=(rank, d_in)), requires_grad=True)
        self.B = Tensor(np.zeros((d_out, rank)), requires_grad=True)

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    @property
    def active(self) -> bool:
        return self.A.requires_grad

    @active.setter
    def active(self, flag: bool):
        self.A.requires_grad = self.B.requires_grad = bool(flag)
        if not flag:
            self.A.grad = self.B.grad = None

    def parameters(self):
        return [self.A, self.B]

    def __call__(self, x: Tensor, rng=None) -> Tensor:
        h = tc.dropout(x, self.dropout_p, rng)
        return tc.scale(tc.linear(tc.linear(h, self.A), self.B), self.scaling)


def _normal(rng, shape, std):
    return Tensor(rng.normal(0.0, std, size=shape))


class TransformerLayer:
    """Pre-norm block: causal attention then a GELU feed-forward."""

    def __init__(self, index: int, config: ModelConfig, rng):
        d, f = config.embed_dim, config.ffn_dim
        self.index = index
        self.num_heads = config.num_heads
        self.ln1_g, self.ln1_b = Tensor(np.ones(d)), Tensor(np.zeros(d))
        self.ln2_g, self.ln2_b = Tensor(np.ones(d)), Tensor(np.zeros(d))
        self.weights = {
            "Q": _normal(rng, (d, d), 1.0 / math.sqrt(d)),
            "K": _normal(rng, (d, d), 1.0 / math.sqrt(d)),
            "V": _normal(rng, (d, d), 1.0 / math.sqrt(d)),
            "O": _normal(rng, (d, d), 1.0 / math.sqrt(d) / math.sqrt(2 * config.num_layers)),
            "Up": _normal(rng, (f, d), 1.0 / math.sqrt(d)),
            "Down": _normal(rng, (d, f), 1.0 / math.sqrt(f) / math.sqrt(2 * config.num_layers)),
        }
        self.biases = {"Up": Tensor(np.zeros(f)), "Down": Tensor(np.zeros(d))}
        self.adapters: dict[str, LoraAdapter] = {}

    @property
    def active(self) -> bool:
        return any(a.active for a in self.adapters.values())

    def set_active(self, flag: bool):
        for adapter in self.adapters.values():
            adapter.active = flag

    def base_parameters(self):
        return [self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b,
                *self.weights.values(), *self.biases.values()]

    def adapter_parameters(self):
        return [p for name in TARGETS if name in self.adapters for p in self.adapters[name].parameters()]

    def _proj(self, name, x, use_adapters, rng):
        out = tc.linear(x, self.weights[name], self.biases.get(name))
        adapter = self.adapters.get(name)
        if use_adapters and adapter is not None:
            out = tc.add(out, adapter(x, rng))
        return out

    def __call__(self, h: Tensor, use_adapters=True, rng=None, seq_len=None) -> Tensor:
        x = tc.layer_norm(h, self.ln1_g, self.ln1_b)
        q = self._proj("Q", x, use_adapters, rng)
        k = self._proj("K", x, use_adapters, rng)
        v = self._proj("V", x, use_adapters, rng)
        a = tc.attention(q, k, v, self.num_heads, seq_len)
        h = tc.add(h, tc.linear(a, self.weights["O"]))
        x = tc.layer_norm(h, self.ln2_g, self.ln2_b)
        u = tc.gelu(self._proj("Up", x, use_adapters, rng))
        return tc.add(h, self._proj("Down", u, use_adapters, rng))


@dataclass
class AdapterSnapshot:
    """Copied LoRA factors keyed by 1-based layer index and target name."""

    config: dict
    weights: dict = field(default_factory=dict)

    def layers(self):
        return sorted(self.weights)


class DualHeadModel:
    """Backbone plus an intention-prediction head and a generation head.

    Args:
        config: model dimensions and adapter settings.
        seed: experiment seed; base weights, heads and adapters each draw
            from their own labelled sub-generator.
        adapter_label: label for the adapter initialisation stream. Two
            models with the same seed and label start with identical adapters.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, adapter_label: str = "adapters"):
        self.config = config
        self.seed = seed
        d, n, vocab = config.embed_dim, config.num_intentions, config.vocab_size
        rng = derive_rng(seed, "base")
        self.tok_emb = _normal(rng, (vocab, d), 1.0)
        self.pos_emb = _normal(rng, (config.max_seq_len, d), 1.0)
        self.layers = [TransformerLayer(i + 1, config, rng) for i in range(config.num_layers)]
        self.lnf_g, self.lnf_b = Tensor(np.ones(d)), Tensor(np.zeros(d))
        hrng = derive_rng(seed, "prediction_head")
        self.pred_w, self.pred_b = _normal(hrng, (n, d), 0.02), Tensor(np.zeros(n))
        grng = derive_rng(seed, "generation_head")
        self.gen_w, self.gen_b = _normal(grng, (vocab, d), 0.02), Tensor(np.zeros(vocab))
        self.reset_adapters(adapter_label)
        self.set_task("predict")

    # ------------------------------------------------------------ parameters

    def reset_adapters(self, label: str):
        """Fresh adapters on every layer (all active) from stream ``label``."""
        cfg = self.config
        for layer in self.layers:
            rng = derive_rng(self.seed, label, layer.index)
            layer.adapters = {
                t: LoraAdapter(*cfg.target_dims(t), cfg.lora_rank, cfg.lora_alpha, cfg.lora_dropout, rng)
                for t in cfg.lora_targets
            }

    def set_task(self, task: str):
        """Select which head is trainable; the other is kept inert."""
        if task not in TASKS:
            raise ValidationError(f"task must be one of {TASKS}, got {task!r}")
        self.task = task
        for head, name in ((self.prediction_head(), "predict"), (self.generation_head(), "generate")):
            for p in head:
                p.requires_grad = task == name
                if task != name:
                    p.grad = None

    def prediction_head(self):
        return [self.pred_w, self.pred_b]

    def generation_head(self):
        return [self.gen_w, self.gen_b]

    def head_parameters(self):
        return self.prediction_head() if self.task == "predict" else self.generation_head()

    def base_parameters(self):
        params = [self.tok_emb, self.pos_emb, self.lnf_g, self.lnf_b]
        for layer in self.layers:
            params.extend(layer.base_parameters())
        return params

    def named_parameters(self) -> dict:
        """Base weights and both heads by stable name (adapters excluded)."""
        named = {"tok_emb": self.tok_emb, "pos_emb": self.pos_emb, "lnf_g": self.lnf_g, "lnf_b": self.lnf_b,
                 "pred_w": self.pred_w, "pred_b": self.pred_b, "gen_w": self.gen_w, "gen_b": self.gen_b}
        for layer in self.layers:
            i = layer.index
            for name in ("ln1_g", "ln1_b", "ln2_g", "ln2_b"):
                named[f"layer{i}.{name}"] = getattr(layer, name)
            for name, w in layer.weights.items():
                named[f"layer{i}.{name}"] = w
            for name, b in layer.biases.items():
                named[f"layer{i}.{name}_bias"] = b
        return named

    def trainable_parameters(self):
        params = [p for layer in self.layers if layer.active for p in layer.adapter_parameters()]
        return params + self.head_parameters()

    def zero_grad(self):
        for layer in self.layers:
            for p in layer.adapter_parameters():
                p.grad = None
        for p in self.prediction_head() + self.generation_head():
            p.grad = None

    @property
    def active_layers(self) -> set[int]:
        return {layer.index for layer in self.layers if layer.active}

    # ------------------------------------------------------------ forward

    def _check_tokens(self, tokens) -> np.ndarray:
        ids = np.asarray(tokens, dtype=np.int64).reshape(-1)
        if ids.size == 0:
            raise ValidationError("empty token sequence")
        if ids.size > self.config.max_seq_len:
            raise ValidationError(f"sequence of {ids.size} tokens exceeds max_seq_len {self.config.max_seq_len}")
        if ids.min() < 0 or ids.max() >= self.config.vocab_size:
            raise ValidationError(f"token id out of range for vocab_size {self.config.vocab_size}")
        return ids

    def hidden(self, tokens, use_adapters=True, rng=None) -> Tensor:
        ids = self._check_tokens(tokens)
        pos = tc.embedding(self.pos_emb, np.arange(ids.size))
        h = tc.add(tc.embedding(self.tok_emb, ids), pos)
        for layer in self.layers:
            h = layer(h, use_adapters=use_adapters, rng=rng)
        return tc.layer_norm(h, self.lnf_g, self.lnf_b)

    def forward_generate_batch(self, tokens, use_adapters=True, rng=None) -> Tensor:
        """Logits for a (B, T) batch of equal-length sequences, stacked to (B*T, vocab)."""
        ids = np.asarray(tokens, dtype=np.int64)
        if ids.ndim != 2:
            raise ValidationError(f"expected a (batch, length) token array, got shape {ids.shape}")
        nb, t = ids.shape
        for row in ids:
            self._check_tokens(row)
        flat = ids.reshape(-1)
        pos = tc.embedding(self.pos_emb, np.tile(np.arange(t), nb))
        h = tc.add(tc.embedding(self.tok_emb, flat), pos)
        for layer in self.layers:
            h = layer(h, use_adapters=use_adapters, rng=rng, seq_len=t)
        h = tc.layer_norm(h, self.lnf_g, self.lnf_b)
        return tc.linear(h, self.gen_w, self.gen_b)

    def forward_generate(self, tokens, use_adapters=True, rng=None) -> Tensor:
        """Next-token logits (T, vocab); row t sees tokens 0..t only."""
        return tc.linear(self.hidden(tokens, use_adapters, rng), self.gen_w, self.gen_b)

    def forward_predict(self, tokens, use_adapters=True, rng=None) -> Tensor:
        """Intention logits from the last non-padding token's hidden state."""
        ids = self._check_tokens(tokens)
        keep = np.nonzero(ids != self.config.pad_id)[0]
        if keep.size == 0:
            raise ValidationError("sequence contains only padding")
        ids = ids[: keep[-1] + 1]
        h = self.hidden(ids, use_adapters, rng)
        return tc.linear(tc.take_row(h, ids.size - 1), self.pred_w, self.pred_b)

    # ------------------------------------------------------------ masks & transfer

    def set_layer_mask(self, split: LayerSplit):
        set_layer_mask(self, split)


def set_layer_mask(model: DualHeadModel, split: LayerSplit) -> None:
    """Activate adapters of layers in ``split.important``; freeze the rest."""
    n = model.config.num_layers
    if split.num_layers != n:
        raise ValidationError(f"split covers {split.num_layers} layers, model has {n}")
    for layer in model.layers:
        layer.set_active(layer.index in split.important)


def export_adapters(model: DualHeadModel) -> AdapterSnapshot:
    cfg = model.config
    meta = {
        "num_layers": cfg.num_layers, "rank": cfg.lora_rank, "alpha": cfg.lora_alpha,
        "embed_dim": cfg.embed_dim, "ffn_dim": cfg.ffn_dim, "targets": list(cfg.lora_targets),
    }
    weights = {
        layer.index: {t: (a.A.data.copy(), a.B.data.copy()) for t, a in layer.adapters.items()}
        for layer in model.layers
    }
    return AdapterSnapshot(meta, weights)


def import_adapters(model: DualHeadModel, snapshot: AdapterSnapshot, layers=None) -> None:
    """Copy A, B from ``snapshot`` into the given 1-based ``layers`` (all if None).

    Layers outside the filter keep whatever adapters they currently hold.
    """
    cfg = model.config
    meta = snapshot.config
    if meta["rank"] != cfg.lora_rank or meta["embed_dim"] != cfg.embed_dim or meta["ffn_dim"] != cfg.ffn_dim:
        raise ValidationError(
            f"snapshot rank/dims {meta['rank']}/{meta['embed_dim']}/{meta['ffn_dim']} do not match model "
            f"{cfg.lora_rank}/{cfg.embed_dim}/{cfg.ffn_dim}"
        )
    if meta["num_layers"] != cfg.num_layers:
        raise ValidationError(f"snapshot has {meta['num_layers']} layers, model has {cfg.num_layers}")
    wanted = set(snapshot.layers()) if layers is None else set(layers)
    for layer in model.layers:
        if layer.index not in wanted:
            continue
        for target, adapter in layer.adapters.items():
            a, b = snapshot.weights[layer.index][target]
            if a.shape != adapter.A.shape or b.shape != adapter.B.shape:
                raise ValidationError(f"layer {layer.index} {target}: snapshot shape mismatch")
            adapter.A.data = a.copy()
            adapter.B.data = b.copy()


def count_trainable_params(model: DualHeadModel) -> int:
    """Adapter parameters of active layers plus the current task's head."""
    total = sum(p.data.size for p in model.trainable_parameters())
    return int(total)


def fingerprint(arrays) -> str:
    """SHA-256 over the raw bytes of a sequence of arrays."""
    h = hashlib.sha256()
    for arr in arrays:
        a = np.ascontiguousarray(arr, dtype=np.float64)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def layer_fingerprint(model: DualHeadModel, index: int) -> str:
    layer = model.layers[index - 1]
    return fingerprint(p.data for p in layer.adapter_parameters())


# ---------------------------------------------------------------- snapshot files


def save_weights(model: DualHeadModel, path) -> Path:
    """Base and head weights as an ``.npz`` archive (adapters go in snapshots)."""
    path = Path(path)
    arrays = {k: p.data for k, p in model.named_parameters().items()}
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_weights(model: DualHeadModel, path) -> None:
    named = model.named_parameters()
    with np.load(path) as data:
        missing = set(named) - set(data.files)
        if missing:
            raise ValidationError(f"weights file lacks {sorted(missing)[:3]}")
        for key, param in named.items():
            arr = data[key]
            if arr.shape != param.data.shape:
                raise ValidationError(f"{key}: stored shape {arr.shape}, model expects {param.data.shape}")
            param.data = arr.astype(np.float64)

_MAGIC = b"ITADAPT\0"
_VERSION = 1
_HEADER = struct.Struct("<8sIIIIIId")


def save_snapshot(snapshot: AdapterSnapshot, path, model_config: ModelConfig | None = None) -> Path:
    """Write the binary adapter file and its ``.json`` sidecar.

    Layout: magic, version, num_layers, rank, embed_dim, ffn_dim, n_targets,
    alpha, then one 8-byte ASCII code per target, then for every layer and
    target in order the A and B matrices as little-endian float64.
    """
    path = Path(path)
    meta = snapshot.config
    targets = meta["targets"]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, meta["num_layers"], meta["rank"],
                              meta["embed_dim"], meta["ffn_dim"], len(targets), float(meta["alpha"])))
        for t in targets:
            fh.write(t.encode("ascii").ljust(8, b"\0"))
        for index in range(1, meta["num_layers"] + 1):
            for t in targets:
                a, b = snapshot.weights[index][t]
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    sidecar = {"format": "intention-tuning-adapters", "version": _VERSION, "adapters": meta}
    if model_config is not None:
        sidecar["model"] = model_config.to_dict()
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def load_snapshot(path) -> AdapterSnapshot:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValidationError("adapter file truncated")
    magic, version, n_layers, rank, d, f, n_targets, alpha = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise ValidationError("not an adapter snapshot (bad magic)")
    if version != _VERSION:
        raise ValidationError(f"unsupported snapshot version {version}")
    off = _HEADER.size
    targets = []
    for _ in range(n_targets):
        targets.append(raw[off:off + 8].rstrip(b"\0").decode("ascii"))
        off += 8
    dims = {"Q": (d, d), "K": (d, d), "V": (d, d), "Up": (d, f), "Down": (f, d)}
    weights = {}
    for index in range(1, n_layers + 1):
        weights[index] = {}
        for t in targets:
            d_in, d_out = dims[t]
            mats = []
            for shape in ((rank, d_in), (d_out, rank)):
                size = shape[0] * shape[1] * 8
                if off + size > len(raw):
                    raise ValidationError("adapter file truncated")
                mats.append(np.frombuffer(raw, dtype="<f8", count=shape[0] * shape[1], offset=off)
                            .reshape(shape).astype(np.float64))
                off += size
            weights[index][t] = tuple(mats)
    if off != len(raw):
        raise ValidationError("trailing bytes in adapter file")
    meta = {"num_layers": n_layers, "rank": rank, "alpha": alpha, "embed_dim": d,
            "ffn_dim": f, "targets": targets}
    return AdapterSnapshot(meta, weights)
