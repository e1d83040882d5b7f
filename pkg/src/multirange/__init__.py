"""Multi-range sequence encoders with a minimal reverse-mode autodiff core.

The package bundles:

- ``tensor`` / ``ops``: tape-based automatic differentiation over numpy arrays
- ``mru``: contract-and-expand multi-range encoders (simple and recurrent)
- ``rnn``: LSTM / GRU / bidirectional baselines and the hybrid stack
- ``layers`` / ``model``: bi-attentive readers for multiple-choice and
  span-extraction comprehension tasks
- ``data`` / ``metrics``: JSONL datasets, synthetic task generators and
  answer metrics (EM, F1, Bleu, Rouge-L)
- ``train`` / ``bench`` / ``cli``: optimization harness, throughput
  benchmark and the ``multirange`` command-line entry point

Scan kernels run through numba when available; set ``MULTIRANGE_KERNELS=numpy``
to force the pure-numpy reference path.
"""

from . import kernels
from .config import Config, ConfigError, load_config, parse_config
from .data import (
    DataError,
    McqInstance,
    SpanInstance,
    gen_mcq_synthetic,
    gen_span_synthetic,
    load_jsonl,
    write_jsonl,
)
from .metrics import (
    bleu_score,
    em_score,
    f1_score,
    metric_accuracy,
    metric_bleu,
    metric_em,
    metric_f1,
    metric_rouge_l,
    rouge_l_best_span,
    rouge_l_score,
)
from .model import BiAttentiveModel, ModelConfig, best_span
from .mru import MruConfig, MruEncoder, RangeSet, contract_expand, mru_encode
from .rnn import ENCODER_KINDS, EncoderStack, make_encoder
from .tensor import ParameterStore, Rng, Tape, Tensor, backward
from .train import evaluate_checkpoint, evaluate_model, load_model, train

__version__ = "0.1.0"

__all__ = [
    "BiAttentiveModel",
    "Config",
    "ConfigError",
    "DataError",
    "ENCODER_KINDS",
    "EncoderStack",
    "McqInstance",
    "ModelConfig",
    "MruConfig",
    "MruEncoder",
    "ParameterStore",
    "RangeSet",
    "Rng",
    "SpanInstance",
    "Tape",
    "Tensor",
    "backward",
    "best_span",
    "bleu_score",
    "contract_expand",
    "em_score",
    "evaluate_checkpoint",
    "evaluate_model",
    "f1_score",
    "gen_mcq_synthetic",
    "gen_span_synthetic",
    "kernels",
    "load_config",
    "load_jsonl",
    "load_model",
    "metric_accuracy",
    "metric_bleu",
    "metric_em",
    "metric_f1",
    "metric_rouge_l",
    "mru_encode",
    "make_encoder",
    "parse_config",
    "rouge_l_best_span",
    "rouge_l_score",
    "train",
    "write_jsonl",
    "__version__",
]
