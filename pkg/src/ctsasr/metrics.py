"""Word error rate with substitution/deletion/insertion breakdown.

Alignment uses unit-cost Levenshtein DP; when several alignments share the
minimal cost, the backtrace prefers substitution over insertion over
deletion.  Rates are percentages of the reference length; the identity
sub + del + ins == total distance holds exactly on the raw counts (the
rounded percentage fields may disagree in the last digit, as rounding is
applied per column).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyReferenceError


@dataclass
class ErrorBreakdown:
    n_sub: int
    n_del: int
    n_ins: int
    n_ref: int

    @property
    def distance(self) -> int:
        return self.n_sub + self.n_del + self.n_ins

    def _pct(self, count: int) -> float:
        return round(count / self.n_ref * 100.0, 2)

    @property
    def wer(self) -> float:
        return self._pct(self.distance)

    @property
    def sub(self) -> float:
        return self._pct(self.n_sub)

    @property
    def dele(self) -> float:
        return self._pct(self.n_del)

    @property
    def ins(self) -> float:
        return self._pct(self.n_ins)

    @staticmethod
    def combine(parts: Iterable["ErrorBreakdown"]) -> "ErrorBreakdown":
        total = ErrorBreakdown(0, 0, 0, 0)
        for p in parts:
            total.n_sub += p.n_sub
            total.n_del += p.n_del
            total.n_ins += p.n_ins
            total.n_ref += p.n_ref
        if total.n_ref == 0:
            raise EmptyReferenceError("no reference tokens to score against")
        return total


def wer_score(ref: Sequence, hyp: Sequence) -> ErrorBreakdown:
    """Score one hypothesis against one non-empty reference."""
    ref = list(ref)
    hyp = list(hyp)
    if not ref:
        raise EmptyReferenceError("reference is empty")
    r, h = len(ref), len(hyp)
    dist = np.zeros((r + 1, h + 1), dtype=np.int64)
    dist[:, 0] = np.arange(r + 1)  # all deletions
    dist[0, :] = np.arange(h + 1)  # all insertions
    for i in range(1, r + 1):
        for j in range(1, h + 1):
            same = ref[i - 1] == hyp[j - 1]
            dist[i, j] = min(
                dist[i - 1, j - 1] + (0 if same else 1),
                dist[i, j - 1] + 1,
                dist[i - 1, j] + 1,
            )

    n_sub = n_del = n_ins = 0
    i, j = r, h
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1):
            if ref[i - 1] != hyp[j - 1]:
                n_sub += 1
            i, j = i - 1, j - 1
        elif j > 0 and dist[i, j] == dist[i, j - 1] + 1:
            n_ins += 1
            j -= 1
        else:
            n_del += 1
            i -= 1
    return ErrorBreakdown(n_sub=n_sub, n_del=n_del, n_ins=n_ins, n_ref=r)
