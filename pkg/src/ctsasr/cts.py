"""Connectionist temporal summarization: segments, representatives, masks.

The pipeline turns a frame-level greedy CTC alignment into maximal runs of
equal labels (segments), picks within each segment the frame whose posterior
score for the segment's label is highest (the representative), and emits a
boolean keep/skip mask plus the summarized sequence made of the kept rows.

Blank segments keep a representative by default; ``keep_blanks=False`` drops
them entirely so only labeled segments survive.  Either way a long blank run
collapses to at most one frame.

The mask is a function of the current encoder output: callers that fine-tune
must rebuild it on every forward pass rather than caching it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from . import tensor as tt
from .ctc import BLANK_ID, Alignment, Posterior, greedy_alignment
from .errors import DimensionError, EmptyInputError
from .tensor import Tensor


@dataclass
class Segment:
    """Maximal run of frames sharing one greedy label; ``end`` is inclusive."""

    start: int
    end: int
    label: int

    def __len__(self) -> int:
        return self.end - self.start + 1


@dataclass
class CtsMask:
    """Keep/skip decision per frame.

    ``segments`` always partitions [0, T); ``representatives`` holds one frame
    per *kept* segment in increasing order, and ``keep[t]`` is True exactly at
    those frames.
    """

    keep: np.ndarray  # bool [T]
    segments: list[Segment]
    representatives: list[int]

    @property
    def num_frames(self) -> int:
        return len(self.keep)

    @property
    def num_kept(self) -> int:
        return int(self.keep.sum())


@dataclass
class MaskStats:
    total_frames: int
    kept_frames: int
    compression_ratio: float
    blank_fraction: float


def segment_alignment(a: Alignment | Sequence[int]) -> list[Segment]:
    """Split per-frame labels into maximal runs; blank runs are segments too."""
    labels = a.labels if isinstance(a, Alignment) else np.asarray(a, dtype=np.int64)
    segments: list[Segment] = []
    for t, lab in enumerate(labels):
        lab = int(lab)
        if segments and segments[-1].label == lab:
            segments[-1].end = t
        else:
            segments.append(Segment(start=t, end=t, label=lab))
    return segments


def select_representative(seg: Segment, p: Posterior) -> int:
    """Frame in [seg.start, seg.end] maximizing the segment label's score.

    Ties break toward the earliest frame.
    """
    if not (0 <= seg.start <= seg.end < p.num_frames):
        raise DimensionError(f"segment ({seg.start}, {seg.end}) outside posterior of {p.num_frames} frames")
    col = p.probs.data[seg.start : seg.end + 1, seg.label]
    return seg.start + int(col.argmax())


def build_cts_mask(p: Posterior, keep_blanks: bool = True) -> CtsMask:
    """Greedy alignment -> segmentation -> one representative per kept segment."""
    if p.num_frames < 1:
        raise EmptyInputError("cannot build a mask for zero frames")
    align = greedy_alignment(p)
    segments = segment_alignment(align)
    representatives: list[int] = []
    for seg in segments:
        if not keep_blanks and seg.label == BLANK_ID:
            continue
        representatives.append(select_representative(seg, p))
    keep = np.zeros(p.num_frames, dtype=bool)
    keep[representatives] = True
    return CtsMask(keep=keep, segments=segments, representatives=representatives)


def summarize_sequence(y: Tensor, m: CtsMask, pooling: str = "select") -> Tensor:
    """Rows of ``y`` at the representative frames, in time order.

    ``pooling="maxpool"`` swaps whole-row selection for an elementwise max
    over each kept segment (ablation only; selection is the normative path).
    """
    if y.shape[0] != m.num_frames:
        raise DimensionError(f"mask built for {m.num_frames} frames, tensor has {y.shape[0]}")
    if pooling == "select":
        return tt.gather_rows(y, m.representatives)
    if pooling == "maxpool":
        rep_set = set(m.representatives)
        spans = [(s.start, s.end) for s in m.segments if any(s.start <= r <= s.end for r in rep_set)]
        return tt.rowspan_max(y, spans)
    raise ValueError(f"unknown pooling mode {pooling!r}")


def mask_stats(m: CtsMask) -> MaskStats:
    """Compression and blank-share accounting for one mask."""
    t = m.num_frames
    if t == 0:
        raise EmptyInputError("mask has zero frames")
    kept = m.num_kept
    blank_frames = sum(len(s) for s in m.segments if s.label == BLANK_ID)
    return MaskStats(
        total_frames=t,
        kept_frames=kept,
        compression_ratio=kept / t,
        blank_fraction=blank_frames / t,
    )


# ---------------------------------------------------------------------------
# Mask file format: one line per utterance, "<utt-id> 0 1 0 ..." (T entries)
# ---------------------------------------------------------------------------


def write_mask_lines(out: TextIO, masks: Iterable[tuple[str, np.ndarray]]) -> None:
    for utt_id, keep in masks:
        bits = " ".join("1" if k else "0" for k in keep)
        out.write(f"{utt_id} {bits}\n")


def write_mask_file(path, masks: Iterable[tuple[str, np.ndarray]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        write_mask_lines(fh, masks)


def read_mask_file(path) -> list[tuple[str, np.ndarray]]:
    entries: list[tuple[str, np.ndarray]] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            utt_id, bits = parts[0], parts[1:]
            keep = np.array([b == "1" for b in bits], dtype=bool)
            entries.append((utt_id, keep))
    return entries
