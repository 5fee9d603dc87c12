"""Layer-selective LoRA fine-tuning for text revision, at toy scale.

A two-stage recipe: fine-tune adapters on intention prediction while
tracking which layers carry the largest gradient norms, then fine-tune
revision generation on the layers selected most often, starting from the
prediction-stage adapters wherever the two selections overlap.
"""

from .config import ExperimentConfig
from .corpus import ARGREVISION, ITERATER, RevisionExample, Vocab
from .errors import ArtifactError, NumericError, SchemaError, ShapeError, StateError, TaxonomyError, ValidationError
from .kernels import BACKEND as KERNEL_BACKEND
from .layerselect import LayerScores, LayerSplit, SelectionStrategy, alignment_ratio, split_layers
from .metrics import EvalTriple, MetricReport, evaluate_corpus, gleu, sari, update_rouge
from .model import DualHeadModel, ModelConfig, count_trainable_params
from .training import DecodeConfig, PretrainConfig, StageReport, TrainConfig, run_baseline, run_intention_tuning

__version__ = "0.1.0"

__all__ = [
    "ARGREVISION", "ITERATER", "KERNEL_BACKEND", "ArtifactError", "DecodeConfig", "DualHeadModel", "EvalTriple",
    "ExperimentConfig", "LayerScores", "LayerSplit", "MetricReport", "ModelConfig", "NumericError",
    "PretrainConfig", "RevisionExample", "SchemaError", "SelectionStrategy", "ShapeError", "StageReport",
    "StateError", "TaxonomyError", "TrainConfig", "ValidationError", "Vocab", "alignment_ratio",
    "count_trainable_params", "evaluate_corpus", "gleu", "run_baseline", "run_intention_tuning", "sari",
    "split_layers", "update_rouge",
]
