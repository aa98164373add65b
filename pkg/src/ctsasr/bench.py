"""Decoder compute accounting and wall-clock decode benchmarking.

The analytic counter covers the cross-attention terms whose cost scales
with the number of encoder keys: attention scores (query . key) and context
aggregation (weights . values), per decode step, per beam, per layer,
summed over heads.  Query/key/value projections and everything else in the
decoder are deliberately out of scope, so the savings fraction from masking
is exactly 1 - kept/total.  End-to-end real-time factors are reported by
``bench_decode`` but are hardware-specific and not claimed to match any
published figure.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from statistics import median
from typing import Sequence

from . import tensor as tt
from .cts import build_cts_mask
from .data import Utterance
from .decoding import beam_search
from .errors import DimensionError
from .model import EncoderDecoder, ModelConfig
from .tensor import Tensor


def xattn_macs(n_queries: int, n_keys: int, cfg: ModelConfig) -> int:
    """Cross-attention score+context multiply-accumulates for one forward.

    Per head: n_queries*n_keys*head_dim for scores plus the same for the
    context, so summed over heads the head dimension collapses to d_model.
    """
    return 2 * n_queries * n_keys * cfg.d_model * cfg.dec_layers


@dataclass
class OpCounts:
    xattn_macs_masked: int
    xattn_macs_dense: int
    savings_fraction: float


def count_decoder_ops(
    enc_len: int, kept: int, cfg: ModelConfig, steps: int, beamwidth: int
) -> OpCounts:
    """Analytic cross-attention MACs for a decode of ``steps`` steps.

    Models incremental decoding: one fresh query per step per beam.
    """
    if kept > enc_len:
        raise DimensionError(f"kept frames {kept} exceed encoder length {enc_len}")
    if enc_len < 1:
        raise DimensionError("encoder length must be >= 1")
    n_queries = steps * beamwidth
    masked = xattn_macs(n_queries, kept, cfg)
    dense = xattn_macs(n_queries, enc_len, cfg)
    savings = 1.0 - masked / dense if dense else 0.0
    return OpCounts(xattn_macs_masked=masked, xattn_macs_dense=dense, savings_fraction=savings)


@dataclass
class BenchRow:
    beamwidth: int
    mask: bool
    utts: int
    mean_ms: float
    median_ms: float
    ratio: float  # decode time / audio-duration proxy (T * frame shift)


def bench_decode(
    model: EncoderDecoder,
    data: Sequence[Utterance],
    beamwidths: Sequence[int],
    with_mask: bool,
    repeats: int = 3,
    keep_blanks: bool = True,
    frame_shift_s: float = 0.01,
) -> list[BenchRow]:
    """Single-threaded timed decoding; the median over ``repeats`` is reported.

    Encoder passes and mask construction run once outside the timed region;
    the timer covers beam search only, which is where masking changes the
    work done.
    """
    if repeats < 3:
        raise ValueError("need repeats >= 3 for a stable median")
    with tt.no_grad():
        enc_outs = [model.encoder_forward(Tensor(u.features)) for u in data]
    masks = [build_cts_mask(e.posterior, keep_blanks=keep_blanks) for e in enc_outs] if with_mask else None
    audio_s = sum(u.num_frames for u in data) * frame_shift_s

    rows: list[BenchRow] = []
    for bw in beamwidths:
        totals = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            for i, enc in enumerate(enc_outs):
                beam_search(model, enc, mask=masks[i] if masks else None, beamwidth=bw)
            totals.append(time.perf_counter() - t0)
        med = median(totals)
        rows.append(
            BenchRow(
                beamwidth=bw,
                mask=with_mask,
                utts=len(data),
                mean_ms=med / len(data) * 1e3,
                median_ms=med * 1e3,
                ratio=med / audio_s if audio_s else 0.0,
            )
        )
    return rows


def write_bench_csv(path, rows: Sequence[BenchRow]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("beamwidth,mask,utts,mean_ms,median_ms,ratio\n")
        for r in rows:
            fh.write(
                f"{r.beamwidth},{int(r.mask)},{r.utts},{r.mean_ms:.3f},{r.median_ms:.3f},{r.ratio:.4f}\n"
            )


def read_bench_csv(path) -> list[BenchRow]:
    rows: list[BenchRow] = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("beamwidth"):
            raise ValueError("not a benchmark CSV")
        for line in fh:
            bw, mask, utts, mean_ms, median_ms, ratio = line.strip().split(",")
            rows.append(
                BenchRow(int(bw), bool(int(mask)), int(utts), float(mean_ms), float(median_ms), float(ratio))
            )
    return rows
