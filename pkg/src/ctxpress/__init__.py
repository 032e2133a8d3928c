"""Query-aware selective context compression with adaptive token budgets.

A long context is chunked, tagged, and read by a selective encoder (a frozen
tiny transformer plus trainable low-rank adapters) together with the query;
the key/value states of a handful of learned compression slots become the
memory a frozen decoder answers from. A lightweight probe estimates how much
of the context is actually relevant and a policy converts that estimate into
the slot budget.
"""

from .autodiff import Tensor, no_grad
from .compressor import CompressedMemory, EncoderInput, build_encoder_input, compress
from .controller import AllocationPolicy, allocate, huber, probe_predict
from .data import SynthConfig, SynthExample, generate_example, generate_split, preset
from .errors import (
    CapacityError,
    CheckpointError,
    ConfigurationError,
    ContractError,
    CtxpressError,
    DecodingError,
    GenerationError,
    StagingError,
)
from .evaluate import answer_fidelity, probe_report, run_ablation, run_eval
from .metrics import MetricRow, compression_ratio, qa_metrics, rouge_l_f
from .model import KVCache, ModelConfig, ParamSet, forward, gradients, init_params
from .pipeline import (
    ModelBundle,
    answer_greedy,
    finetune_loss,
    pretrain_losses,
    regenerate,
)
from .training import TrainConfig, load_checkpoint, run_stage, save_checkpoint
from .vocab import Vocab, build_vocab, decode_ids, encode_text, load_vocab, save_vocab

__version__ = "0.1.0"
