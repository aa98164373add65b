"""Desk-scale CTC/attention speech recognition with summarization masking.

The pieces, bottom up: ``tensor`` (float64 autodiff tape and Adam), ``ctc``
(framewise posteriors, greedy alignment, CTC loss), ``cts`` (segmentation,
representative-frame selection, keep/skip masks), ``model`` (encoder-decoder
with maskable cross-attention and the hybrid loss), ``data`` / ``training``
(synthetic task, baseline training, fine-tuning schedules), ``decoding`` /
``metrics`` / ``bench`` (beam search, WER breakdown, compute accounting),
and ``cli`` (the end-to-end pipeline).
"""

from .bench import BenchRow, OpCounts, bench_decode, count_decoder_ops, xattn_macs
from .ctc import (
    BLANK_ID,
    Alignment,
    Posterior,
    ctc_collapse,
    ctc_loss,
    framewise_posteriors,
    greedy_alignment,
)
from .cts import (
    CtsMask,
    MaskStats,
    Segment,
    build_cts_mask,
    mask_stats,
    read_mask_file,
    segment_alignment,
    select_representative,
    summarize_sequence,
    write_mask_file,
)
from .data import SyntheticSpec, Utterance, gen_synthetic_dataset, load_dataset, save_dataset
from .decoding import Hypothesis, beam_search, ctc_rescore_search, greedy_search
from .metrics import ErrorBreakdown, wer_score
from .model import (
    EncoderDecoder,
    EncoderOutput,
    ModelConfig,
    count_cross_attention_macs,
    hybrid_loss,
    hybrid_loss_parts,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import Adam, Parameter, Tensor, adam_step, backward, no_grad
from .training import (
    TrainConfig,
    finetune,
    greedy_token_accuracy,
    train_baseline,
    write_loss_curve,
)

__version__ = "0.1.0"
