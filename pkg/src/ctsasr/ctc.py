"""CTC framewise posteriors, greedy alignment, loss, and collapsing.

Blank is label id 0 everywhere.  The loss marginalizes over all frame-level
alignments that collapse (merge repeats, drop blanks) to the target, via a
forward recursion over the 2L+1 extended-label lattice in log space.  The
recursion is built from tape ops, so the gradient w.r.t. the input log
probabilities comes out of the ordinary backward pass.

All functions here are pure: concurrent calls on distinct inputs are safe.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as tt
from .errors import DimensionError, InfeasibleTargetError, LabelError
from .tensor import NEG_INF, Parameter, Tensor

BLANK_ID = 0


@dataclass
class Posterior:
    """Per-frame softmax distributions over the vocabulary (blank included).

    ``log_probs`` is carried alongside ``probs`` (same logits, same tape) so
    downstream log-space consumers never re-log near-zero probabilities.
    """

    probs: Tensor
    log_probs: Tensor

    @property
    def num_frames(self) -> int:
        return self.probs.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.probs.shape[1]


@dataclass
class Alignment:
    """Per-frame winning label and its softmax score."""

    labels: np.ndarray  # int64 [T]
    scores: np.ndarray  # float64 [T], scores[t] == probs[t, labels[t]]

    def __post_init__(self):
        if len(self.labels) != len(self.scores):
            raise DimensionError("alignment labels and scores must have equal length")

    def __len__(self) -> int:
        return len(self.labels)


def framewise_posteriors(y: Tensor, h_ctc: Parameter | Tensor) -> Posterior:
    """Project encoder frames through the CTC head and softmax each row."""
    logits = tt.matmul(y, h_ctc)
    return Posterior(
        probs=tt.softmax_lastdim(logits),
        log_probs=tt.log_softmax_lastdim(logits),
    )


def greedy_alignment(p: Posterior) -> Alignment:
    """Row-wise argmax; ties break toward the lowest label id."""
    if p.num_frames < 1:
        raise DimensionError("greedy_alignment needs at least one frame")
    probs = p.probs.data
    labels = probs.argmax(axis=1)
    scores = probs[np.arange(len(labels)), labels]
    return Alignment(labels=labels.astype(np.int64), scores=scores)


def ctc_collapse(labels: Sequence[int]) -> list[int]:
    """Merge adjacent repeats, then delete blanks."""
    out: list[int] = []
    prev = None
    for lab in labels:
        lab = int(lab)
        if lab != prev:
            if lab != BLANK_ID:
                out.append(lab)
            prev = lab
    return out


def extended_labels(target: Sequence[int]) -> list[int]:
    """Blank-interleaved target: blank, t1, blank, t2, ..., blank."""
    z = [BLANK_ID]
    for lab in target:
        z.append(int(lab))
        z.append(BLANK_ID)
    return z


def min_frames_for(target: Sequence[int]) -> int:
    """Frames needed to emit the target: its length plus one separator blank
    per adjacent repeated pair."""
    need = len(target)
    for a, b in zip(target, list(target)[1:]):
        if a == b:
            need += 1
    return need


def ctc_loss(log_probs: Tensor, target: Sequence[int]) -> Tensor:
    """Negative log of the total probability of all alignments of ``target``.

    log_probs: [T, V] log posteriors with blank at column 0.  The target may
    be empty (all-blank paths).  Raises InfeasibleTargetError when T is too
    short to emit the target at all.
    """
    lp = log_probs
    if lp.ndim != 2:
        raise DimensionError(f"ctc_loss needs 2-D log_probs, got {lp.shape}")
    t_len, vocab = lp.shape
    target = [int(x) for x in target]
    for lab in target:
        if lab == BLANK_ID:
            raise LabelError("CTC target must not contain the blank id")
        if not (0 < lab < vocab):
            raise LabelError(f"target id {lab} outside [1, {vocab})")
    if t_len < min_frames_for(target):
        raise InfeasibleTargetError(
            f"{t_len} frames cannot emit a target needing {min_frames_for(target)}"
        )

    z = extended_labels(target)
    s_len = len(z)
    lp_z = tt.gather_cols(lp, z)  # [T, S]

    # Entry constraint: paths start at state 0 (blank) or 1 (first label).
    init = np.full(s_len, NEG_INF)
    init[0] = 0.0
    if s_len > 1:
        init[1] = 0.0
    alpha = tt.add(tt.take_row(lp_z, 0), Tensor(init))

    # Skip transition s-2 -> s allowed only onto a non-blank different from z[s-2].
    skip = np.full(s_len, NEG_INF)
    for s in range(2, s_len):
        if z[s] != BLANK_ID and z[s] != z[s - 2]:
            skip[s] = 0.0
    skip_mask = Tensor(skip)

    for t in range(1, t_len):
        stay = alpha
        step1 = tt.shifted(alpha, 1)
        step2 = tt.add(tt.shifted(alpha, 2), skip_mask)
        alpha = tt.add(
            tt.logaddexp(tt.logaddexp(stay, step1), step2),
            tt.take_row(lp_z, t),
        )

    if s_len == 1:
        total = tt.take_at(alpha, 0)
    else:
        total = tt.logaddexp(tt.take_at(alpha, s_len - 1), tt.take_at(alpha, s_len - 2))
    return tt.neg(total)
