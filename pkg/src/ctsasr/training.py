"""Baseline training and the three mask-aware fine-tuning schedules.

Schedules:
  * ``full``        — fine-tune every parameter.
  * ``frozen_enc``  — freeze the frontend, encoder blocks, and CTC head
                      (the parts that define the mask) and adapt the decoder.
  * ``two_step``    — the frozen_enc schedule for the first fraction of the
                      steps, then full fine-tuning for the rest.  Implemented
                      literally as two single-phase runs (fresh optimizer and
                      shuffle stream per phase, second phase seeded seed+1),
                      so it is bit-identical to composing the phases by hand.

During fine-tuning the summarization mask is rebuilt from the current
encoder output on every forward pass.  Batch gradients accumulate one
utterance at a time in a fixed order, so fixed seeds give bit-identical
checkpoints.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import tensor as tt
from .ctc import ctc_collapse, greedy_alignment
from .cts import build_cts_mask
from .data import Utterance
from .errors import TrainingError
from .model import EncoderDecoder, hybrid_loss_parts
from .tensor import Adam, Tensor

FINETUNE_MODES = ("full", "frozen_enc", "two_step")


@dataclass
class TrainConfig:
    steps: int
    batch_size: int = 8
    lr: float = 1e-3
    ctc_weight: float = 0.3
    finetune_mode: str = "two_step"
    two_step_split: float = 0.5
    seed: int = 0
    keep_blanks: bool = True

    def __post_init__(self):
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ValueError("ctc_weight must lie in [0, 1]")
        if self.finetune_mode not in FINETUNE_MODES:
            raise ValueError(f"finetune_mode must be one of {FINETUNE_MODES}")
        if not 0.0 < self.two_step_split < 1.0:
            raise ValueError("two_step_split must lie in (0, 1)")


@dataclass
class StepLoss:
    step: int
    loss: float
    ctc_loss: float
    att_loss: float


def write_loss_curve(path, curve: Sequence[StepLoss]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "ctc_loss", "att_loss"])
        for rec in curve:
            w.writerow([rec.step, f"{rec.loss:.6f}", f"{rec.ctc_loss:.6f}", f"{rec.att_loss:.6f}"])


def _batch_stream(n_utts: int, batch_size: int, seed: int):
    """Deterministic epoch-shuffled index batches."""
    rng = np.random.default_rng(np.random.PCG64((seed, 0xBA7C)))
    queue: list[int] = []
    while True:
        while len(queue) < batch_size:
            queue.extend(int(i) for i in rng.permutation(n_utts))
        yield queue[:batch_size]
        del queue[:batch_size]


def _train_loop(
    model: EncoderDecoder,
    data: Sequence[Utterance],
    cfg: TrainConfig,
    use_mask: bool,
    step_offset: int = 0,
) -> list[StepLoss]:
    opt = Adam(model.all_parameters(), lr=cfg.lr)
    batches = _batch_stream(len(data), cfg.batch_size, cfg.seed)
    curve: list[StepLoss] = []
    inv_b = 1.0 / cfg.batch_size
    for step in range(cfg.steps):
        batch = next(batches)
        loss_sum = ctc_sum = att_sum = 0.0
        for idx in batch:
            utt = data[idx]
            enc = model.encoder_forward(Tensor(utt.features))
            mask = build_cts_mask(enc.posterior, keep_blanks=cfg.keep_blanks) if use_mask else None
            dec_in = [model.cfg.sos_id] + utt.transcript
            logits = model.decoder_forward(enc.y, dec_in, mask=mask)
            loss, ctc, att = hybrid_loss_parts(enc, logits, utt.transcript, cfg.ctc_weight)
            tt.backward(tt.scale(loss, inv_b))
            loss_sum += loss.item()
            ctc_sum += ctc.item()
            att_sum += att.item()
        if not np.isfinite(loss_sum):
            raise TrainingError(f"loss diverged to {loss_sum} at step {step_offset + step}")
        opt.step()
        curve.append(
            StepLoss(
                step=step_offset + step,
                loss=loss_sum * inv_b,
                ctc_loss=ctc_sum * inv_b,
                att_loss=att_sum * inv_b,
            )
        )
    return curve


def train_baseline(model: EncoderDecoder, data: Sequence[Utterance], cfg: TrainConfig) -> list[StepLoss]:
    """Phase-1 training: hybrid loss, no summarization mask."""
    return _train_loop(model, data, cfg, use_mask=False)


def finetune(model: EncoderDecoder, data: Sequence[Utterance], cfg: TrainConfig) -> list[StepLoss]:
    """Mask-aware fine-tuning in one of the three schedules."""
    if cfg.finetune_mode == "two_step":
        n1 = int(round(cfg.steps * cfg.two_step_split))
        n1 = min(max(n1, 0), cfg.steps)
        first = replace(cfg, finetune_mode="frozen_enc", steps=n1)
        second = replace(cfg, finetune_mode="full", steps=cfg.steps - n1, seed=cfg.seed + 1)
        curve = finetune(model, data, first)
        tail = finetune(model, data, second)
        for rec in tail:
            rec.step += n1
        return curve + tail

    frozen = cfg.finetune_mode == "frozen_enc"
    if frozen:
        model.set_trainable(False, "encoder")
    try:
        return _train_loop(model, data, cfg, use_mask=True)
    finally:
        if frozen:
            model.set_trainable(True, "encoder")


def greedy_token_accuracy(model: EncoderDecoder, data: Sequence[Utterance]) -> float:
    """1 - (token edit distance of collapsed greedy CTC decodes / reference tokens)."""
    from .metrics import wer_score

    total_ref = 0
    total_err = 0
    with tt.no_grad():
        for utt in data:
            enc = model.encoder_forward(Tensor(utt.features))
            hyp = ctc_collapse(greedy_alignment(enc.posterior).labels)
            breakdown = wer_score(utt.transcript, hyp)
            total_ref += breakdown.n_ref
            total_err += breakdown.distance
    return 1.0 - total_err / total_ref if total_ref else 0.0
