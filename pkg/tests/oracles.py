"""Independent reference implementations used to pin expected values.

Everything here is deliberately written in a different style from the
package code (explicit loops, enumeration, extended precision) so the two
sides cannot share a bug.
"""

from __future__ import annotations

import itertools
import math

import mpmath
import numpy as np


def matmul_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for l in range(k):
                acc += a[i, l] * b[l, j]
            out[i, j] = acc
    return out


def softmax_rows_extended(x: np.ndarray, dps: int = 50) -> np.ndarray:
    """Row-wise softmax evaluated at 50 decimal digits."""
    with mpmath.workdps(dps):
        out = np.zeros_like(x, dtype=np.float64)
        for i in range(x.shape[0]):
            exps = [mpmath.e ** mpmath.mpf(v) for v in x[i]]
            denom = sum(exps)
            out[i] = [float(e / denom) for e in exps]
    return out


def collapse_oracle(path) -> tuple:
    """Merge-repeats-then-drop-blanks, via groupby."""
    return tuple(lab for lab, _ in itertools.groupby(path) if lab != 0)


def ctc_brute_force_prob(probs: np.ndarray, target) -> float:
    """Sum of path probabilities over every alignment collapsing to target."""
    t_len, vocab = probs.shape
    target = tuple(int(x) for x in target)
    total = 0.0
    for path in itertools.product(range(vocab), repeat=t_len):
        if collapse_oracle(path) == target:
            p = 1.0
            for t, lab in enumerate(path):
                p *= probs[t, lab]
            total += p
    return total


def ctc_all_target_masses(probs: np.ndarray) -> dict[tuple, float]:
    """Path probability mass grouped by collapsed target."""
    t_len, vocab = probs.shape
    masses: dict[tuple, float] = {}
    for path in itertools.product(range(vocab), repeat=t_len):
        p = 1.0
        for t, lab in enumerate(path):
            p *= probs[t, lab]
        key = collapse_oracle(path)
        masses[key] = masses.get(key, 0.0) + p
    return masses


def cts_mask_oracle(probs: np.ndarray, keep_blanks: bool = True):
    """Enumerate same-label runs, argmax the run's label column, mark keeps."""
    t_total = probs.shape[0]
    lab = [int(np.argmax(probs[t])) for t in range(t_total)]
    reps: list[int] = []
    runs: list[tuple[int, int, int]] = []
    t = 0
    while t < t_total:
        e = t
        while e + 1 < t_total and lab[e + 1] == lab[t]:
            e += 1
        runs.append((t, e, lab[t]))
        if keep_blanks or lab[t] != 0:
            col = probs[t : e + 1, lab[t]]
            reps.append(t + int(np.argmax(col)))
        t = e + 1
    keep = np.zeros(t_total, dtype=bool)
    keep[reps] = True
    return keep, reps, runs


def lev_distance_oracle(a, b) -> int:
    """Plain quadratic DP, distance only."""
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j - 1] + (x != y), prev[j] + 1, cur[-1] + 1))
        prev = cur
    return prev[-1]


def fd_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Full central-difference gradient of scalar f at x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def fd_directional(f, x: np.ndarray, u: np.ndarray, h: float = 1e-5) -> float:
    """Central-difference directional derivative of scalar f along u."""
    return (f(x + h * u) - f(x - h * u)) / (2 * h)


def rel_err(got: np.ndarray, want: np.ndarray, floor: float = 1e-8) -> float:
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = max(float(np.linalg.norm(want)), floor)
    return float(np.linalg.norm(got - want)) / denom


def adam_scalar_trajectory(
    steps: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
) -> list[float]:
    """Independent Adam on f(w) = (w - 3)^2 from w = 0; returns w after each step."""
    w = m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = 2.0 * (w - 3.0)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        w -= lr * (m / (1 - beta1**t)) / (math.sqrt(v / (1 - beta2**t)) + eps)
        out.append(w)
    return out


def exhaustive_decode_oracle(model, enc_out, max_len: int):
    """Best [sos] + labels + [eos] sequence by total decoder log-probability.

    Enumerates every label prefix of length < max_len (labels = all decoder
    ids except sos and eos) terminated by eos, exactly the finished set an
    unpruned length-synchronous beam can reach.  Ties prefer the
    lexicographically lower token sequence.
    """
    from ctsasr import tensor as tt

    sos, eos = model.cfg.sos_id, model.cfg.eos_id
    labels = [t for t in range(model.cfg.dec_vocab) if t not in (sos, eos)]

    def seq_score(tokens: list[int]) -> float:
        logits = model.decoder_forward(enc_out.y, tokens[:-1]).data
        score = 0.0
        for pos, tok in enumerate(tokens[1:]):
            row = logits[pos]
            z = row - row.max()
            score += float(z[tok] - np.log(np.exp(z).sum()))
        return score

    best = None
    with tt.no_grad():
        for k in range(max_len):
            for body in itertools.product(labels, repeat=k):
                tokens = [sos, *body, eos]
                cand = (seq_score(tokens), tokens)
                if best is None or (-cand[0], cand[1]) < (-best[0], best[1]):
                    best = cand
    assert best is not None
    return best[1], best[0]
