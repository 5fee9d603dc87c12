"""Experiment configuration: a flat ``key = value`` file plus seed.

Every field of :class:`ExperimentConfig` can appear in the file; unknown
keys are rejected so that typos do not silently fall back to defaults.
A relative ``corpus_dir`` is resolved against the directory holding the
file; ``out_dir`` stays relative to the working directory. The name
``bundled:synthetic`` refers to the configuration shipped with the package.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .corpus import LEVELS, get_taxonomy
from .errors import ValidationError
from .layerselect import DEFAULT_COUNTS, normalize_strategy
from .model import ModelConfig
from .training import BATCH_SIZE_BY_LEVEL, MAX_NEW_TOKENS_BY_LEVEL, DecodeConfig, PretrainConfig, TrainConfig

_SECTION = "experiment"
_PATH_FIELDS = ("corpus_dir",)
BUNDLED_PREFIX = "bundled:"
DATA_DIR = Path(__file__).resolve().parent / "data"


@dataclass
class ExperimentConfig:
    seed: int = 0
    strategy: str = "intention-tuning"
    out_dir: str = "runs/experiment"
    level: str = "sentence"
    taxonomy: str = "iterater"
    corpus_dir: str = ""
    # synthetic corpus
    synth_size: int = 1000
    synth_val_fraction: float = 0.1
    synth_test_fraction: float = 0.1
    # model
    num_layers: int = 4
    embed_dim: int = 64
    num_heads: int = 4
    max_seq_len: int = 128
    ffn_mult: int = 4
    lora_rank: int = 32
    lora_alpha: float = 64.0
    lora_dropout: float = 0.05
    # fine-tuning
    learning_rate: float = 2e-4
    warmup_steps: int = 100
    epochs: int = 2
    batch_size: int = 0
    weight_decay: float = 0.0
    log_every: int = 20
    # base model pretraining (0 steps keeps the random base)
    pretrain_steps: int = 0
    pretrain_batch_size: int = 16
    pretrain_seq_len: int = 48
    pretrain_learning_rate: float = 2e-3
    pretrain_warmup_steps: int = 100
    pretrain_text: str = "synthetic"  # or "corpus": the training split's raw texts
    pretrain_repeat_p: float = 1.0
    # decoding
    sample: bool = True
    top_p: float = 0.75
    top_k: int = 40
    temperature: float = 0.2
    max_new_tokens: int = 0
    # baselines
    lisa_count: int = DEFAULT_COUNTS["lisa"]
    ist_count: int = DEFAULT_COUNTS["ist"]
    # evaluation
    eval_limit: int = 0

    def __post_init__(self):
        self.strategy = normalize_strategy(self.strategy)
        if self.level not in LEVELS:
            raise ValidationError(f"level must be one of {LEVELS}, got {self.level!r}")
        get_taxonomy(self.taxonomy)
        if self.pretrain_text not in ("synthetic", "corpus"):
            raise ValidationError(f"pretrain_text must be 'synthetic' or 'corpus', got {self.pretrain_text!r}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValidationError("seed must fit in an unsigned 64-bit integer")

    # ------------------------------------------------------------ derived configs

    @property
    def _level_key(self) -> str:
        return "argrevision" if get_taxonomy(self.taxonomy).name == "argrevision" else self.level

    @property
    def effective_batch_size(self) -> int:
        return self.batch_size or BATCH_SIZE_BY_LEVEL[self._level_key]

    @property
    def effective_max_new_tokens(self) -> int:
        return self.max_new_tokens or MAX_NEW_TOKENS_BY_LEVEL[self._level_key]

    def model_config(self, vocab_size: int) -> ModelConfig:
        tax = get_taxonomy(self.taxonomy)
        return ModelConfig(num_layers=self.num_layers, embed_dim=self.embed_dim, num_heads=self.num_heads,
                           vocab_size=vocab_size, max_seq_len=self.max_seq_len,
                           num_intentions=len(tax.labels), multi_label=self.level != "sentence",
                           ffn_mult=self.ffn_mult, lora_rank=self.lora_rank, lora_alpha=self.lora_alpha,
                           lora_dropout=self.lora_dropout)

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, warmup_steps=self.warmup_steps, epochs=self.epochs,
                           batch_size=self.effective_batch_size, weight_decay=self.weight_decay,
                           log_every=self.log_every, seed=self.seed)

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(steps=self.pretrain_steps, batch_size=self.pretrain_batch_size,
                              seq_len=self.pretrain_seq_len, learning_rate=self.pretrain_learning_rate,
                              warmup_steps=self.pretrain_warmup_steps, seed=self.seed)

    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(sample=self.sample, top_p=self.top_p, top_k=self.top_k,
                            temperature=self.temperature, max_new_tokens=self.effective_max_new_tokens)

    # ------------------------------------------------------------ (de)serialisation

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        lines = [f"{f.name} = {_format(getattr(self, f.name))}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_text(), encoding="utf-8")
        return path

    @classmethod
    def from_text(cls, text: str, base_dir=None) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(f"[{_SECTION}]\n" + text)
        except configparser.Error as exc:
            raise ValidationError(f"cannot parse config: {exc}") from None
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, raw in parser.items(_SECTION):
            if key not in known:
                raise ValidationError(f"unknown config key {key!r}")
            values[key] = _parse(known[key], raw)
        if base_dir is not None:
            for key in _PATH_FIELDS:
                if values.get(key) and not Path(values[key]).is_absolute():
                    values[key] = str(Path(base_dir) / values[key])
        return cls(**values)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = bundled_config_path(path[len(BUNDLED_PREFIX):]) if str(path).startswith(BUNDLED_PREFIX) else Path(path)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}")
        return cls.from_text(path.read_text(encoding="utf-8"), base_dir=path.parent)


def bundled_config_path(name: str = "synthetic") -> Path:
    path = DATA_DIR / f"{name}.cfg"
    if not path.is_file():
        known = sorted(p.stem for p in DATA_DIR.glob("*.cfg"))
        raise ValidationError(f"no bundled config {name!r}; available: {known}")
    return path


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _parse(f: dataclasses.Field, raw: str):
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ValidationError(f"config key {f.name!r}: cannot read {raw!r} as {kind}") from None
    return raw
