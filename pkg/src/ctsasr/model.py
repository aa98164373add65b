"""Toy encoder-decoder with a CTC head and maskable cross-attention.

Encoder: a x4 time-reduction frontend (two strided frame-pairing linear
projections with GELU), then pre-norm self-attention blocks.  Decoder:
pre-norm blocks of causal self-attention, cross-attention over the encoder
output, and a feedforward, followed by an output projection.

The decoder vocabulary extends the CTC vocabulary with reserved
start-of-sequence and end-of-sequence ids; neither ever appears in CTC
targets.  Cross-attention masking adds a large negative constant to the
scores of skipped keys, which drives their softmax weights to exactly zero
while keeping shapes static for training.

Forward passes on shared read-only parameters are safe concurrently; a
training step mutating parameters needs exclusive access.
"""

from __future__ import annotations

import math
import struct
from contextlib import contextmanager
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from . import tensor as tt
from .ctc import Posterior, ctc_loss, framewise_posteriors
from .cts import CtsMask
from .errors import DimensionError, InputTooShortError
from .tensor import NEG_INF, Parameter, Tensor

FRONTEND_REDUCTION = 4


@dataclass
class ModelConfig:
    vocab_size: int  # CTC vocabulary including blank (id 0)
    feat_dim: int
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    enc_layers: int = 2
    dec_layers: int = 2
    ctc_weight: float = 0.3

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise DimensionError(f"d_model {self.d_model} not divisible by {self.n_heads} heads")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must cover blank plus at least one label")
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ValueError("ctc_weight must lie in [0, 1]")

    @property
    def sos_id(self) -> int:
        return self.vocab_size

    @property
    def eos_id(self) -> int:
        return self.vocab_size + 1

    @property
    def dec_vocab(self) -> int:
        return self.vocab_size + 2


@dataclass
class EncoderOutput:
    y: Tensor  # [T', d_model], T' = ceil(T / 4)
    posterior: Posterior

    @property
    def num_frames(self) -> int:
        return self.y.shape[0]


# ---------------------------------------------------------------------------
# Cross-attention MAC counting (score + context terms only)
# ---------------------------------------------------------------------------


class MacCounter:
    def __init__(self):
        self.total = 0

    def add(self, n: int) -> None:
        self.total += n


_mac_counters: list[MacCounter] = []


@contextmanager
def count_cross_attention_macs():
    """Count multiply-accumulates of cross-attention scores and contexts."""
    counter = MacCounter()
    _mac_counters.append(counter)
    try:
        yield counter
    finally:
        _mac_counters.remove(counter)


def _record_xattn_macs(n_queries: int, n_keys: int, d_model: int) -> None:
    if _mac_counters:
        n = 2 * n_queries * n_keys * d_model  # scores + context, summed over heads
        for c in _mac_counters:
            c.add(n)


# ---------------------------------------------------------------------------
# Positional encodings and attention biases (cached constants)
# ---------------------------------------------------------------------------

_posenc_cache: dict[tuple[int, int], np.ndarray] = {}
_causal_cache: dict[int, np.ndarray] = {}


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    key = (length, dim)
    if key not in _posenc_cache:
        pos = np.arange(length)[:, None]
        i = np.arange(0, dim, 2)[None, :]
        angle = pos / np.power(10000.0, i / dim)
        pe = np.zeros((length, dim))
        pe[:, 0::2] = np.sin(angle)
        pe[:, 1::2] = np.cos(angle[:, : pe[:, 1::2].shape[1]])
        _posenc_cache[key] = pe
    return _posenc_cache[key]


def _causal_bias(length: int) -> np.ndarray:
    if length not in _causal_cache:
        bias = np.where(np.tril(np.ones((length, length), dtype=bool)), 0.0, NEG_INF)
        _causal_cache[length] = bias
    return _causal_cache[length]


def _key_mask_bias(keep: np.ndarray, n_queries: int) -> np.ndarray:
    row = np.where(keep, 0.0, NEG_INF)
    return np.broadcast_to(row, (n_queries, len(keep))).copy()


class EncoderDecoder:
    """Parameter container plus forward passes."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.params: dict[str, Parameter] = {}
        rng = np.random.default_rng(seed)
        d, ff, f = cfg.d_model, cfg.d_ff, cfg.feat_dim

        def weight(name: str, rows: int, cols: int) -> None:
            self._add(name, rng.normal(0.0, 1.0 / math.sqrt(rows), size=(rows, cols)))

        def bias(name: str, n: int) -> None:
            self._add(name, np.zeros(n))

        def norm(prefix: str) -> None:
            self._add(f"{prefix}.g", np.ones(d))
            self._add(f"{prefix}.b", np.zeros(d))

        def attention(prefix: str) -> None:
            for proj in ("wq", "wk", "wv", "wo"):
                weight(f"{prefix}.{proj}", d, d)
                bias(f"{prefix}.{proj[1]}b", d)

        weight("frontend.w0", 2 * f, d)
        bias("frontend.b0", d)
        weight("frontend.w1", 2 * d, d)
        bias("frontend.b1", d)
        for i in range(cfg.enc_layers):
            norm(f"enc{i}.ln1")
            attention(f"enc{i}.attn")
            norm(f"enc{i}.ln2")
            weight(f"enc{i}.ff.w1", d, ff)
            bias(f"enc{i}.ff.b1", ff)
            weight(f"enc{i}.ff.w2", ff, d)
            bias(f"enc{i}.ff.b2", d)
        weight("ctc_head.w", d, cfg.vocab_size)
        weight("dec.emb", cfg.dec_vocab, d)
        for i in range(cfg.dec_layers):
            norm(f"dec{i}.ln1")
            attention(f"dec{i}.self")
            norm(f"dec{i}.ln2")
            attention(f"dec{i}.cross")
            norm(f"dec{i}.ln3")
            weight(f"dec{i}.ff.w1", d, ff)
            bias(f"dec{i}.ff.b1", ff)
            weight(f"dec{i}.ff.w2", ff, d)
            bias(f"dec{i}.ff.b2", d)
        weight("dec.out.w", d, cfg.dec_vocab)
        bias("dec.out.b", cfg.dec_vocab)

    def _add(self, name: str, data: np.ndarray) -> None:
        self.params[name] = Parameter(data, trainable=True, name=name)

    def p(self, name: str) -> Parameter:
        return self.params[name]

    # -- parameter groups ---------------------------------------------------

    def all_parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def encoder_parameters(self) -> list[Parameter]:
        """Frontend, encoder blocks, and the CTC head (frozen together)."""
        return [
            p
            for name, p in self.params.items()
            if name.startswith(("frontend.", "enc", "ctc_head."))
        ]

    def decoder_parameters(self) -> list[Parameter]:
        return [p for name, p in self.params.items() if name.startswith("dec")]

    def set_trainable(self, flag: bool, which: str = "all") -> None:
        group = {
            "all": self.all_parameters,
            "encoder": self.encoder_parameters,
            "decoder": self.decoder_parameters,
        }[which]()
        for p in group:
            p.trainable = flag

    # -- forward passes -----------------------------------------------------

    def _projected(self, prefix: str, x: Tensor, proj: str) -> Tensor:
        w = self.p(f"{prefix}.w{proj}")
        b = self.p(f"{prefix}.{proj}b")
        return tt.add_rowvec(tt.matmul(x, w), b)

    def _self_attention(self, prefix: str, x: Tensor, bias: np.ndarray | None) -> Tensor:
        q = self._projected(prefix, x, "q")
        k = self._projected(prefix, x, "k")
        v = self._projected(prefix, x, "v")
        ctx = tt.multihead_attention(q, k, v, self.cfg.n_heads, bias=bias)
        return tt.add_rowvec(tt.matmul(ctx, self.p(f"{prefix}.wo")), self.p(f"{prefix}.ob"))

    def _feedforward(self, prefix: str, x: Tensor) -> Tensor:
        h = tt.add_rowvec(tt.matmul(x, self.p(f"{prefix}.w1")), self.p(f"{prefix}.b1"))
        h = tt.gelu(h)
        return tt.add_rowvec(tt.matmul(h, self.p(f"{prefix}.w2")), self.p(f"{prefix}.b2"))

    def encoder_forward(self, x: Tensor | np.ndarray) -> EncoderOutput:
        """Features [T, feat_dim] -> latent frames [ceil(T/4), d_model] + CTC posterior."""
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.ndim != 2 or x.shape[1] != self.cfg.feat_dim:
            raise DimensionError(f"encoder expects [T, {self.cfg.feat_dim}], got {x.shape}")
        if x.shape[0] < FRONTEND_REDUCTION:
            raise InputTooShortError(
                f"need at least {FRONTEND_REDUCTION} frames, got {x.shape[0]}"
            )
        h = tt.gelu(tt.add_rowvec(tt.matmul(tt.pair_frames(x), self.p("frontend.w0")), self.p("frontend.b0")))
        h = tt.gelu(tt.add_rowvec(tt.matmul(tt.pair_frames(h), self.p("frontend.w1")), self.p("frontend.b1")))
        h = tt.add(h, Tensor(sinusoidal_positions(h.shape[0], self.cfg.d_model)))
        for i in range(self.cfg.enc_layers):
            pre = tt.layer_norm(h, self.p(f"enc{i}.ln1.g"), self.p(f"enc{i}.ln1.b"))
            h = tt.add(h, self._self_attention(f"enc{i}.attn", pre, bias=None))
            pre = tt.layer_norm(h, self.p(f"enc{i}.ln2.g"), self.p(f"enc{i}.ln2.b"))
            h = tt.add(h, self._feedforward(f"enc{i}.ff", pre))
        posterior = framewise_posteriors(h, self.p("ctc_head.w"))
        return EncoderOutput(y=h, posterior=posterior)

    def decoder_forward(
        self,
        y: Tensor,
        tokens: Sequence[int],
        mask: CtsMask | None = None,
        attn_record: list | None = None,
    ) -> Tensor:
        """Next-token logits [L, dec_vocab] for a token history over ``y``.

        ``mask`` hides encoder frames from cross-attention.  An all-keep mask
        takes the identical code path as no mask at all.
        """
        ids = [int(t) for t in tokens]
        if len(ids) == 0:
            raise DimensionError("decoder history is empty: start with the start-of-sequence token")
        if any(not 0 <= t < self.cfg.dec_vocab for t in ids):
            raise DimensionError(f"token id outside [0, {self.cfg.dec_vocab})")
        n_keys = y.shape[0]
        key_bias = None
        if mask is not None:
            if mask.num_frames != n_keys:
                raise DimensionError(
                    f"mask built for {mask.num_frames} frames, encoder output has {n_keys}"
                )
            if not mask.keep.all():
                key_bias = _key_mask_bias(mask.keep, len(ids))

        d = self.cfg.d_model
        h = tt.scale(tt.gather_rows(self.p("dec.emb"), ids), math.sqrt(d))
        h = tt.add(h, Tensor(sinusoidal_positions(len(ids), d)))
        causal = _causal_bias(len(ids))
        for i in range(self.cfg.dec_layers):
            pre = tt.layer_norm(h, self.p(f"dec{i}.ln1.g"), self.p(f"dec{i}.ln1.b"))
            h = tt.add(h, self._self_attention(f"dec{i}.self", pre, bias=causal))

            pre = tt.layer_norm(h, self.p(f"dec{i}.ln2.g"), self.p(f"dec{i}.ln2.b"))
            q = self._projected(f"dec{i}.cross", pre, "q")
            k = self._projected(f"dec{i}.cross", y, "k")
            v = self._projected(f"dec{i}.cross", y, "v")
            _record_xattn_macs(len(ids), n_keys, d)
            ctx = tt.multihead_attention(
                q, k, v, self.cfg.n_heads, bias=key_bias, attn_out=attn_record
            )
            ctx = tt.add_rowvec(tt.matmul(ctx, self.p(f"dec{i}.cross.wo")), self.p(f"dec{i}.cross.ob"))
            h = tt.add(h, ctx)

            pre = tt.layer_norm(h, self.p(f"dec{i}.ln3.g"), self.p(f"dec{i}.ln3.b"))
            h = tt.add(h, self._feedforward(f"dec{i}.ff", pre))
        return tt.add_rowvec(tt.matmul(h, self.p("dec.out.w")), self.p("dec.out.b"))


def hybrid_loss_parts(
    enc_out: EncoderOutput,
    dec_logits: Tensor,
    target: Sequence[int],
    ctc_weight: float,
) -> tuple[Tensor, Tensor, Tensor]:
    """(combined, ctc part, attention part); combined = w*ctc + (1-w)*attention."""
    if not 0.0 <= ctc_weight <= 1.0:
        raise ValueError("ctc_weight must lie in [0, 1]")
    target = [int(t) for t in target]
    if dec_logits.shape[0] != len(target) + 1:
        raise DimensionError(
            f"decoder logits cover {dec_logits.shape[0]} positions, target+eos needs {len(target) + 1}"
        )
    eos = dec_logits.shape[1] - 1
    ctc = ctc_loss(enc_out.posterior.log_probs, target)
    att = tt.cross_entropy(dec_logits, target + [eos])
    combined = tt.add(tt.scale(ctc, ctc_weight), tt.scale(att, 1.0 - ctc_weight))
    return combined, ctc, att


def hybrid_loss(
    enc_out: EncoderOutput,
    dec_logits: Tensor,
    target: Sequence[int],
    ctc_weight: float,
) -> Tensor:
    return hybrid_loss_parts(enc_out, dec_logits, target, ctc_weight)[0]


# ---------------------------------------------------------------------------
# Checkpoint format: magic "CTSC1", length-prefixed key=value config text,
# then per named parameter: name, rank+dims (u64 LE), float64 LE data.
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"CTSC1"


def _config_text(cfg: ModelConfig) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)!r}" for f in fields(cfg)]
    return "\n".join(lines) + "\n"


def _parse_config_text(text: str) -> ModelConfig:
    kv: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    kwargs = {}
    for f in fields(ModelConfig):
        raw = kv[f.name]
        kwargs[f.name] = float(raw) if f.name == "ctc_weight" else int(raw)
    return ModelConfig(**kwargs)


def save_checkpoint(path, model: EncoderDecoder) -> None:
    cfg_bytes = _config_text(model.cfg).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(cfg_bytes)))
        fh.write(cfg_bytes)
        fh.write(struct.pack("<Q", len(model.params)))
        for name, p in model.params.items():
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(name_b)))
            fh.write(name_b)
            shape = p.value.shape
            fh.write(struct.pack("<Q", len(shape)))
            for dim in shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(p.value.data.astype("<f8").tobytes())


def load_checkpoint(path) -> EncoderDecoder:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        (cfg_len,) = struct.unpack("<Q", fh.read(8))
        cfg = _parse_config_text(fh.read(cfg_len).decode("utf-8"))
        model = EncoderDecoder(cfg, seed=0)
        (n_params,) = struct.unpack("<Q", fh.read(8))
        for _ in range(n_params):
            (name_len,) = struct.unpack("<Q", fh.read(8))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<Q", fh.read(8))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(rank))
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            if name not in model.params:
                raise ValueError(f"checkpoint has unknown parameter {name!r}")
            if model.params[name].value.shape != shape:
                raise ValueError(f"checkpoint shape mismatch for {name!r}")
            model.params[name].value.data = data.astype(np.float64).copy()
    return model
