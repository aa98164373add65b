"""Length-synchronous beam search over the attention decoder.

When a summarization mask is supplied, decoding gathers the kept encoder
frames once and runs dense cross-attention over the shorter sequence.  By
the masking-equivalence property this matches additive masking to within
1e-10 while actually shrinking the key set, so compute savings are real.

Scoring is attention-only: each step extends every live hypothesis with all
vocabulary ids except start-of-sequence, keeps the ``beamwidth`` best by
total log-probability (ties: lexicographically lower token sequence), and
sets finished hypotheses aside when they emit end-of-sequence.  Scores are
comparable across lengths because log-probabilities only accumulate
downward, which also allows stopping early once no live hypothesis can beat
the best finished one.  There is no length penalty.

An optional two-pass mode decodes n-best lists with CTC-ish greedy variants
and rescores them with the (masked) attention decoder; it returns the same
hypothesis type and makes no claim of matching any particular recipe.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as tt
from .ctc import ctc_collapse, greedy_alignment
from .cts import CtsMask, segment_alignment, summarize_sequence
from .errors import DecodeError
from .model import EncoderDecoder, EncoderOutput
from .tensor import Tensor


@dataclass
class Hypothesis:
    """Token history (starting with start-of-sequence) and its total log-prob."""

    tokens: list[int]
    score: float
    finished: bool = False

    def labels(self, vocab_size: int) -> list[int]:
        """Plain label ids: specials (sos/eos) stripped, blanks kept as emitted."""
        return [t for t in self.tokens[1:] if t < vocab_size]


def _log_softmax_row(row: np.ndarray) -> np.ndarray:
    z = row - row.max()
    return z - np.log(np.exp(z).sum())


def default_max_len(enc_out: EncoderOutput, mask: CtsMask | None) -> int:
    """Generous output bound tied to the acoustic evidence: 2*segments + 5."""
    if mask is not None:
        n_segments = len(mask.segments)
    else:
        n_segments = len(segment_alignment(greedy_alignment(enc_out.posterior)))
    return 2 * n_segments + 5


def beam_search(
    model: EncoderDecoder,
    enc_out: EncoderOutput,
    mask: CtsMask | None = None,
    beamwidth: int = 4,
    max_len: int | None = None,
) -> Hypothesis:
    if beamwidth < 1:
        raise ValueError("beamwidth must be >= 1")
    if enc_out.num_frames == 0:
        raise DecodeError("empty encoder output")
    if max_len is None:
        max_len = default_max_len(enc_out, mask)
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    sos, eos = model.cfg.sos_id, model.cfg.eos_id

    with tt.no_grad():
        y = enc_out.y if mask is None else summarize_sequence(enc_out.y, mask)
        if y.shape[0] == 0:
            raise DecodeError("mask kept no encoder frames")

        live = [Hypothesis(tokens=[sos], score=0.0)]
        finished: list[Hypothesis] = []
        for _ in range(max_len):
            candidates: list[Hypothesis] = []
            for hyp in live:
                logits = model.decoder_forward(y, hyp.tokens)
                logp = _log_softmax_row(logits.data[-1])
                for tok in range(model.cfg.dec_vocab):
                    if tok == sos:
                        continue
                    candidates.append(
                        Hypothesis(
                            tokens=hyp.tokens + [tok],
                            score=hyp.score + float(logp[tok]),
                            finished=tok == eos,
                        )
                    )
            candidates.sort(key=lambda h: (-h.score, h.tokens))
            top = candidates[:beamwidth]
            finished.extend(h for h in top if h.finished)
            live = [h for h in top if not h.finished]
            if not live:
                break
            if finished:
                best_done = max(h.score for h in finished)
                if all(h.score <= best_done for h in live):
                    break  # scores only decrease with length

    pool = finished if finished else live
    if not pool:
        raise DecodeError("no hypotheses produced")
    return min(pool, key=lambda h: (-h.score, h.tokens))


def greedy_search(model: EncoderDecoder, enc_out: EncoderOutput, mask: CtsMask | None = None,
                  max_len: int | None = None) -> Hypothesis:
    return beam_search(model, enc_out, mask=mask, beamwidth=1, max_len=max_len)


# ---------------------------------------------------------------------------
# Optional two-pass mode: propose with the CTC head, rescore with the decoder.
# ---------------------------------------------------------------------------


def ctc_rescore_search(
    model: EncoderDecoder,
    enc_out: EncoderOutput,
    mask: CtsMask | None = None,
    n_best: int = 4,
) -> Hypothesis:
    """Rescore CTC-derived candidate transcripts with the attention decoder.

    Candidates are the collapsed greedy alignment plus variants obtained by
    swapping single frames to their runner-up labels.  Each candidate W gets
    the decoder score sum log p(w_i | W_<i) including end-of-sequence.
    """
    if enc_out.num_frames == 0:
        raise DecodeError("empty encoder output")
    sos, eos = model.cfg.sos_id, model.cfg.eos_id

    with tt.no_grad():
        probs = enc_out.posterior.probs.data
        base = greedy_alignment(enc_out.posterior).labels.copy()
        order = np.argsort(probs[np.arange(len(base)), base])  # least confident first
        candidates: list[list[int]] = [ctc_collapse(base)]
        for t in order[: max(n_best * 2, 4)]:
            variant = base.copy()
            runner_up = int(np.argsort(probs[t])[-2])
            variant[t] = runner_up
            collapsed = ctc_collapse(variant)
            if collapsed not in candidates:
                candidates.append(collapsed)
            if len(candidates) >= n_best:
                break

        y = enc_out.y if mask is None else summarize_sequence(enc_out.y, mask)
        if y.shape[0] == 0:
            raise DecodeError("mask kept no encoder frames")
        scored: list[Hypothesis] = []
        for cand in candidates:
            tokens = [sos] + cand + [eos]
            if len(tokens) < 2:
                continue
            logits = model.decoder_forward(y, tokens[:-1])
            score = 0.0
            for pos, tok in enumerate(tokens[1:]):
                score += float(_log_softmax_row(logits.data[pos])[tok])
            scored.append(Hypothesis(tokens=tokens, score=score, finished=True))
    if not scored:
        raise DecodeError("no candidates to rescore")
    return min(scored, key=lambda h: (-h.score, h.tokens))
