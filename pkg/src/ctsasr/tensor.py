"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records a vector-Jacobian closure on a tape; ``backward``
replays the tape in reverse topological order and accumulates gradients
into leaf tensors (the ones owned by ``Parameter``).  Gradients accumulate
by summation until explicitly zeroed.  All data is float64, row-major.

Tensors are treated as immutable once created: sharing them read-only
across threads is safe, but a training step that mutates Parameters needs
exclusive access.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, LabelError, NumericError

# Additive mask value used instead of -inf: large enough that exp() underflows
# to exactly 0.0 in float64, small enough to never overflow when summed.
NEG_INF = -1.0e30

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / decoding)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array plus an optional backward closure on the tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.item())

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter:
    """A trainable tensor with a persistent gradient buffer.

    When ``trainable`` is False, ``backward`` never touches the gradient and
    optimizer steps leave the value bit-identical.
    """

    __slots__ = ("value", "name")

    def __init__(self, data, trainable: bool = True, name: str = ""):
        self.value = Tensor(np.array(data, dtype=np.float64), requires_grad=trainable)
        self.value.grad = np.zeros_like(self.value.data)
        self.name = name

    @property
    def grad(self) -> np.ndarray:
        assert self.value.grad is not None
        return self.value.grad

    @property
    def trainable(self) -> bool:
        return self.value.requires_grad

    @trainable.setter
    def trainable(self, flag: bool) -> None:
        self.value.requires_grad = flag

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.value.grad = np.zeros_like(self.value.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name or '?'}, shape={self.shape}, trainable={self.trainable})"


def _tensor_of(x: Tensor | Parameter) -> Tensor:
    return x.value if isinstance(x, Parameter) else x


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    """Wrap an op result; record the tape node only if gradients can flow."""
    if not _grad_enabled or not any(p.requires_grad for p in parents):
        return Tensor(data)
    out = Tensor(data, requires_grad=True)
    out._parents = parents
    out._vjp = vjp
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable trainable leaf.

    The input must be a scalar.  Interior gradients are freed once consumed;
    leaf gradients persist and sum across calls until zeroed.
    """
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # Iterative post-order topological sort (CTC recursions can be deep).
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._vjp is None:
            continue  # leaf: gradient stays
        g = node.grad
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += pg
        node.grad = None  # free interior gradient


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _tensor_of(a), _tensor_of(b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} vs {b.shape}")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """x[m, n] + v[n] broadcast over rows (bias add, additive key masks)."""
    x, v = _tensor_of(x), _tensor_of(v)
    if x.ndim != 2 or v.ndim != 1 or x.shape[1] != v.shape[0]:
        raise DimensionError(f"add_rowvec: shapes {x.shape} vs {v.shape}")
    return _make(x.data + v.data[None, :], (x, v), lambda g: (g, g.sum(axis=0)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _tensor_of(a), _tensor_of(b)
    if a.shape != b.shape:
        raise DimensionError(f"sub: shapes {a.shape} vs {b.shape}")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    a = _tensor_of(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _tensor_of(a), _tensor_of(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} vs {b.shape}")
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    a = _tensor_of(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _tensor_of(a), _tensor_of(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dims {a.shape} x {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a: Tensor) -> Tensor:
    a = _tensor_of(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose needs 2-D, got {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def sum_all(a: Tensor) -> Tensor:
    a = _tensor_of(a)
    return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.full_like(a.data, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    a = _tensor_of(a)
    n = a.size
    return _make(np.asarray(a.data.mean()), (a,), lambda g: (np.full_like(a.data, float(g) / n),))


# ---------------------------------------------------------------------------
# Nonlinearities and normalization
# ---------------------------------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU, fixed so outputs match bit-for-bit across runs."""
    x = _tensor_of(x)
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd**3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def vjp(g):
        d_inner = _GELU_C * (1.0 + 3.0 * 0.044715 * xd**2)
        dx = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t**2) * d_inner
        return (g * dx,)

    return _make(out, (x,), vjp)


def softmax_lastdim(x: Tensor) -> Tensor:
    """Stable softmax over the last dimension; each slice sums to 1."""
    x = _tensor_of(x)
    if x.ndim < 1 or x.shape[-1] < 1:
        raise DimensionError(f"softmax over empty last dimension, shape {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _make(s, (x,), vjp)


def log_softmax_lastdim(x: Tensor) -> Tensor:
    x = _tensor_of(x)
    if x.ndim < 1 or x.shape[-1] < 1:
        raise DimensionError(f"log_softmax over empty last dimension, shape {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _make(out, (x,), vjp)


def layer_norm(x: Tensor, gamma: Parameter | Tensor, beta: Parameter | Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each last-dim slice to mean 0 / variance 1, then affine."""
    x, gm, bt = _tensor_of(x), _tensor_of(gamma), _tensor_of(beta)
    n = x.shape[-1] if x.ndim else 0
    if n < 2:
        raise DimensionError(f"layer_norm needs last-dim width >= 2, got shape {x.shape}")
    if gm.shape != (n,) or bt.shape != (n,):
        raise DimensionError("layer_norm: gamma/beta width mismatch")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = gm.data * y + bt.data

    def vjp(g):
        gy = g * gm.data
        m1 = gy.mean(axis=-1, keepdims=True)
        m2 = (gy * y).mean(axis=-1, keepdims=True)
        dx = inv * (gy - m1 - y * m2)
        axes = tuple(range(g.ndim - 1))
        return (dx, (g * y).sum(axis=axes), g.sum(axis=axes))

    return _make(out, (x, gm, bt), vjp)


def cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean over positions of -log softmax(logits)[target]."""
    logits = _tensor_of(logits)
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy needs 2-D logits, got {logits.shape}")
    n, v = logits.shape
    idx = np.asarray(targets, dtype=np.int64)
    if idx.shape != (n,):
        raise DimensionError(f"cross_entropy: {n} positions vs {idx.shape} targets")
    if n == 0:
        raise DimensionError("cross_entropy: no positions")
    if idx.min() < 0 or idx.max() >= v:
        raise LabelError(f"target id outside [0, {v})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    rows = np.arange(n)
    out = np.asarray(-logp[rows, idx].mean())

    def vjp(g):
        soft = np.exp(logp)
        soft[rows, idx] -= 1.0
        return (float(g) / n * soft,)

    return _make(out, (logits,), vjp)


# ---------------------------------------------------------------------------
# Gather / reshape ops
# ---------------------------------------------------------------------------


def gather_rows(x: Tensor, idx: Sequence[int]) -> Tensor:
    """out[i] = x[idx[i]]; used for embeddings and frame gathering."""
    x = _tensor_of(x)
    if x.ndim != 2:
        raise DimensionError(f"gather_rows needs 2-D, got {x.shape}")
    ii = np.asarray(idx, dtype=np.int64)
    if ii.size and (ii.min() < 0 or ii.max() >= x.shape[0]):
        raise DimensionError(f"row index outside [0, {x.shape[0]})")

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, ii, g)
        return (gx,)

    return _make(x.data[ii], (x,), vjp)


def gather_cols(x: Tensor, idx: Sequence[int]) -> Tensor:
    """out[:, j] = x[:, idx[j]]; indices may repeat (gradients accumulate)."""
    x = _tensor_of(x)
    if x.ndim != 2:
        raise DimensionError(f"gather_cols needs 2-D, got {x.shape}")
    jj = np.asarray(idx, dtype=np.int64)
    if jj.size and (jj.min() < 0 or jj.max() >= x.shape[1]):
        raise DimensionError(f"column index outside [0, {x.shape[1]})")
    rows = np.arange(x.shape[0])[:, None]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, jj[None, :]), g)
        return (gx,)

    return _make(x.data[:, jj], (x,), vjp)


def take_row(x: Tensor, i: int) -> Tensor:
    x = _tensor_of(x)
    if x.ndim != 2 or not (0 <= i < x.shape[0]):
        raise DimensionError(f"take_row({i}) on shape {x.shape}")

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[i] = g
        return (gx,)

    return _make(x.data[i].copy(), (x,), vjp)


def take_at(v: Tensor, i: int) -> Tensor:
    """Scalar element of a 1-D tensor."""
    v = _tensor_of(v)
    if v.ndim != 1 or not (0 <= i < v.shape[0]):
        raise DimensionError(f"take_at({i}) on shape {v.shape}")

    def vjp(g):
        gv = np.zeros_like(v.data)
        gv[i] = float(g)
        return (gv,)

    return _make(np.asarray(v.data[i]), (v,), vjp)


def pair_frames(x: Tensor) -> Tensor:
    """Stack consecutive frame pairs: [T, F] -> [ceil(T/2), 2F].

    An odd tail is padded with one zero frame; two applications give the
    ceil(T/4) time reduction of the frontend.
    """
    x = _tensor_of(x)
    if x.ndim != 2:
        raise DimensionError(f"pair_frames needs 2-D, got {x.shape}")
    t, f = x.shape
    h = (t + 1) // 2
    padded = np.zeros((2 * h, f))
    padded[:t] = x.data
    out = padded.reshape(h, 2 * f)

    def vjp(g):
        return (g.reshape(2 * h, f)[:t],)

    return _make(out, (x,), vjp)


# ---------------------------------------------------------------------------
# Log-space helpers (CTC dynamic programming)
# ---------------------------------------------------------------------------


def logaddexp(a: Tensor, b: Tensor) -> Tensor:
    a, b = _tensor_of(a), _tensor_of(b)
    if a.shape != b.shape:
        raise DimensionError(f"logaddexp: shapes {a.shape} vs {b.shape}")
    out = np.logaddexp(a.data, b.data)

    def vjp(g):
        return (g * np.exp(a.data - out), g * np.exp(b.data - out))

    return _make(out, (a, b), vjp)


def shifted(v: Tensor, k: int, fill: float = NEG_INF) -> Tensor:
    """1-D shift right by k: out[k:] = v[:-k], out[:k] = fill."""
    v = _tensor_of(v)
    if v.ndim != 1:
        raise DimensionError(f"shifted needs 1-D, got {v.shape}")
    if k < 1:
        raise DimensionError("shift amount must be >= 1")
    out = np.full_like(v.data, fill)
    if k < v.shape[0]:
        out[k:] = v.data[:-k]

    def vjp(g):
        gv = np.zeros_like(v.data)
        if k < v.shape[0]:
            gv[:-k] = g[k:]
        return (gv,)

    return _make(out, (v,), vjp)


# ---------------------------------------------------------------------------
# Fused multi-head attention core
# ---------------------------------------------------------------------------


def multihead_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    n_heads: int,
    bias: np.ndarray | None = None,
    attn_out: list | None = None,
) -> Tensor:
    """Scaled dot-product attention over already-projected Q/K/V.

    q: [Lq, d], k/v: [Lk, d] with d split into n_heads.  ``bias`` is a
    constant [Lq, Lk] additive term (causal masks, key masks); no gradient
    flows into it.  If ``attn_out`` is a list, the softmax weights
    [heads, Lq, Lk] are appended for inspection.
    """
    q, k, v = _tensor_of(q), _tensor_of(k), _tensor_of(v)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise DimensionError("attention operands must be 2-D")
    lq, d = q.shape
    lk, dk = k.shape
    if dk != d or v.shape != (lk, d):
        raise DimensionError(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    if d % n_heads != 0:
        raise DimensionError(f"model width {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    inv = 1.0 / math.sqrt(dh)

    qh = q.data.reshape(lq, n_heads, dh).transpose(1, 0, 2)  # [h, Lq, dh]
    kh = k.data.reshape(lk, n_heads, dh).transpose(1, 0, 2)
    vh = v.data.reshape(lk, n_heads, dh).transpose(1, 0, 2)
    scores = np.einsum("hqd,hkd->hqk", qh, kh) * inv
    if bias is not None:
        if bias.shape != (lq, lk):
            raise DimensionError(f"attention bias shape {bias.shape}, need ({lq}, {lk})")
        scores = scores + bias[None, :, :]
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    attn = e / e.sum(axis=-1, keepdims=True)  # [h, Lq, Lk]
    if attn_out is not None:
        attn_out.append(attn.copy())
    ctx = np.einsum("hqk,hkd->hqd", attn, vh)
    out = ctx.transpose(1, 0, 2).reshape(lq, d)

    def vjp(g):
        gctx = g.reshape(lq, n_heads, dh).transpose(1, 0, 2)
        gattn = np.einsum("hqd,hkd->hqk", gctx, vh)
        dot = (gattn * attn).sum(axis=-1, keepdims=True)
        gscores = attn * (gattn - dot)
        gq = np.einsum("hqk,hkd->hqd", gscores, kh) * inv
        gk = np.einsum("hqk,hqd->hkd", gscores, qh) * inv
        gv = np.einsum("hqk,hqd->hkd", attn, gctx)
        return (
            gq.transpose(1, 0, 2).reshape(lq, d),
            gk.transpose(1, 0, 2).reshape(lk, d),
            gv.transpose(1, 0, 2).reshape(lk, d),
        )

    return _make(out, (q, k, v), vjp)


def rowspan_max(x: Tensor, spans: Sequence[tuple[int, int]]) -> Tensor:
    """Elementwise max over row spans [start, end] inclusive (pooling ablation)."""
    x = _tensor_of(x)
    if x.ndim != 2:
        raise DimensionError(f"rowspan_max needs 2-D, got {x.shape}")
    rows = []
    argrows = []
    for start, end in spans:
        if not (0 <= start <= end < x.shape[0]):
            raise DimensionError(f"span ({start}, {end}) outside [0, {x.shape[0]})")
        block = x.data[start : end + 1]
        arg = block.argmax(axis=0) + start
        argrows.append(arg)
        rows.append(x.data[arg, np.arange(x.shape[1])])
    out = np.stack(rows) if rows else np.zeros((0, x.shape[1]))

    def vjp(g):
        gx = np.zeros_like(x.data)
        cols = np.arange(x.shape[1])
        for i, arg in enumerate(argrows):
            np.add.at(gx, (arg, cols), g[i])
        return (gx,)

    return _make(out, (x,), vjp)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Adam with bias correction over a fixed parameter list.

    ``step`` refuses to run (NumericError, nothing mutated) if any trainable
    gradient contains NaN/Inf, skips non-trainable parameters entirely, and
    zeroes all gradients afterward.
    """

    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.value.data) for p in self.params]
        self._v = [np.zeros_like(p.value.data) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if p.trainable and not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient in {p.name or 'parameter'}; step aborted")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if not p.trainable:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        for p in self.params:
            p.zero_grad()


def adam_step(
    opt: Adam | None = None,
    params: Sequence[Parameter] | None = None,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Adam:
    """One optimizer step; builds a fresh Adam when no optimizer is passed."""
    if opt is None:
        if params is None:
            raise ValueError("adam_step needs an optimizer or a parameter list")
        opt = Adam(params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    opt.step()
    return opt
