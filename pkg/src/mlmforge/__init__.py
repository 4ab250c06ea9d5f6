"""mlmforge: desk-scale masked-language-model pipeline.

Sentence corpus preparation, WordPiece vocabulary training, a from-scratch
transformer encoder with explicit backward passes, MLM pretraining with
static or dynamic masking, domain-adaptive continued pretraining, [CLS]
classification fine-tuning, and recall/F1 comparison reporting.
"""

__version__ = "0.1.0"

from .corpus import RawPost, SentenceCorpus, corpus_stats, ingest, segment
from .encoder import (
    EncodedBatch,
    EncoderOutput,
    ModelConfig,
    cls_logits,
    count_params,
    encode_batch,
    init_classifier,
    init_params,
    mlm_logits,
)
from .evaluation import ConfusionTable, EvalReport, compute_metrics, evaluate_model, render_report
from .masking import MaskedBatch, build_epoch_batches, mask_sequence
from .numerics import ParameterStore, adam_step, grad_check
from .tokenizer import Vocab, decode, encode, train_vocab
from .training import TrainConfig, finetune, pretrain
from .checkpoint import load_checkpoint, save_checkpoint
from .benchmarks import LabeledDataset, SplitSpec, holdout_split, load_dataset, registry

__all__ = [
    "ConfusionTable",
    "EncodedBatch",
    "EncoderOutput",
    "EvalReport",
    "LabeledDataset",
    "MaskedBatch",
    "ModelConfig",
    "ParameterStore",
    "RawPost",
    "SentenceCorpus",
    "SplitSpec",
    "TrainConfig",
    "Vocab",
    "adam_step",
    "build_epoch_batches",
    "cls_logits",
    "compute_metrics",
    "corpus_stats",
    "count_params",
    "decode",
    "encode",
    "encode_batch",
    "evaluate_model",
    "finetune",
    "grad_check",
    "holdout_split",
    "ingest",
    "init_classifier",
    "init_params",
    "load_checkpoint",
    "load_dataset",
    "mask_sequence",
    "mlm_logits",
    "pretrain",
    "registry",
    "render_report",
    "save_checkpoint",
    "segment",
    "train_vocab",
]
