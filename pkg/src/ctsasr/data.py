"""Synthetic utterance generation and the binary dataset file format.

Each label id owns a fixed template feature vector (rows of a random
orthonormal matrix, so distinct labels are well separated); an utterance is
a sequence of labels, each expanded to a run of frames equal to its template
plus Gaussian noise.  Silence gaps use the zero vector.  Everything is
reproducible from the seed alone.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import FRONTEND_REDUCTION

DATASET_MAGIC = b"CTSD1"


@dataclass
class SyntheticSpec:
    """Knobs for the synthetic acoustic task.

    ``vocab_size`` counts real labels only (blank excluded); label ids run
    1..vocab_size so id 0 stays free for blank.
    """

    vocab_size: int
    feat_dim: int
    dur_min: int = 5
    dur_max: int = 9
    noise_sigma: float = 0.1
    blank_gap_prob: float = 0.3
    seed: int = 0
    min_labels: int = 5
    max_labels: int = 10
    edge_silence: bool = False  # always bracket the labels with silence runs

    def __post_init__(self):
        if not 1 <= self.dur_min <= self.dur_max:
            raise ValueError("need 1 <= dur_min <= dur_max")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 1 <= self.min_labels <= self.max_labels:
            raise ValueError("need 1 <= min_labels <= max_labels")
        if self.vocab_size < 1:
            raise ValueError("need at least one label")


@dataclass
class Utterance:
    utt_id: str
    features: np.ndarray  # float64 [T, feat_dim]
    transcript: list[int]  # label ids, no blanks

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]


def label_templates(spec: SyntheticSpec) -> np.ndarray:
    """One fixed unit-norm template row per label id 1..vocab_size.

    Rows of a random orthonormal basis: pairwise distance sqrt(2), distance 1
    from the zero silence template.
    """
    if spec.vocab_size > spec.feat_dim:
        raise ValueError(
            f"orthonormal templates need feat_dim >= vocab_size ({spec.feat_dim} < {spec.vocab_size})"
        )
    rng = np.random.default_rng(np.random.PCG64(spec.seed))
    q, _ = np.linalg.qr(rng.normal(size=(spec.feat_dim, spec.feat_dim)))
    return q[: spec.vocab_size].copy()


def _min_feasible_frames(transcript: Sequence[int]) -> int:
    need = len(transcript)
    for a, b in zip(transcript, list(transcript)[1:]):
        if a == b:
            need += 1
    return need


def gen_synthetic_dataset(
    spec: SyntheticSpec, n_utts: int, id_prefix: str = "utt", stream: int = 0
) -> list[Utterance]:
    """Generate ``n_utts`` utterances, bit-identical for a given spec.

    ``stream`` selects an independent draw (train vs held-out) that shares
    the label templates.  Trailing silence is appended when a draw would be
    too short for the frontend or for CTC alignment after the x4 time
    reduction.
    """
    if n_utts < 1:
        raise ValueError("n_utts must be >= 1")
    templates = label_templates(spec)
    rng = np.random.default_rng(np.random.PCG64((spec.seed, 0x5EED, stream)))
    utts: list[Utterance] = []
    for u in range(n_utts):
        n_labels = int(rng.integers(spec.min_labels, spec.max_labels + 1))
        transcript = [int(lab) for lab in rng.integers(1, spec.vocab_size + 1, size=n_labels)]
        blocks: list[np.ndarray] = []

        def silence_block() -> np.ndarray:
            dur = int(rng.integers(spec.dur_min, spec.dur_max + 1))
            return np.zeros((dur, spec.feat_dim))

        if spec.edge_silence or rng.random() < spec.blank_gap_prob:
            blocks.append(silence_block())
        for i, lab in enumerate(transcript):
            if i > 0:
                # repeated labels get a mandatory gap: without one their runs
                # merge into a single acoustically indistinguishable run
                if lab == transcript[i - 1] or rng.random() < spec.blank_gap_prob:
                    blocks.append(silence_block())
            dur = int(rng.integers(spec.dur_min, spec.dur_max + 1))
            blocks.append(np.tile(templates[lab - 1], (dur, 1)))
        if spec.edge_silence or rng.random() < spec.blank_gap_prob:
            blocks.append(silence_block())

        feats = np.concatenate(blocks, axis=0)
        # Guarantee the subsampled length can still align the transcript.
        needed = (_min_feasible_frames(transcript) + 2) * FRONTEND_REDUCTION
        if feats.shape[0] < max(needed, FRONTEND_REDUCTION):
            pad = max(needed, FRONTEND_REDUCTION) - feats.shape[0]
            feats = np.concatenate([feats, np.zeros((pad, spec.feat_dim))], axis=0)
        if spec.noise_sigma > 0:
            feats = feats + rng.normal(0.0, spec.noise_sigma, size=feats.shape)
        utts.append(Utterance(utt_id=f"{id_prefix}{u:05d}", features=feats, transcript=transcript))
    return utts


# ---------------------------------------------------------------------------
# Dataset file: magic, utterance count, then per utterance the id, the
# transcript ids, and the feature matrix in the checkpoint tensor encoding
# (rank + dims as u64 LE, float64 LE data).
# ---------------------------------------------------------------------------


def save_dataset(path, utts: Sequence[Utterance]) -> None:
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<Q", len(utts)))
        for utt in utts:
            id_b = utt.utt_id.encode("utf-8")
            fh.write(struct.pack("<Q", len(id_b)))
            fh.write(id_b)
            fh.write(struct.pack("<Q", len(utt.transcript)))
            for lab in utt.transcript:
                fh.write(struct.pack("<Q", lab))
            fh.write(struct.pack("<Q", 2))
            fh.write(struct.pack("<Q", utt.features.shape[0]))
            fh.write(struct.pack("<Q", utt.features.shape[1]))
            fh.write(utt.features.astype("<f8").tobytes())


def load_dataset(path) -> list[Utterance]:
    utts: list[Utterance] = []
    with open(path, "rb") as fh:
        magic = fh.read(len(DATASET_MAGIC))
        if magic != DATASET_MAGIC:
            raise ValueError(f"not a dataset file: bad magic {magic!r}")
        (n,) = struct.unpack("<Q", fh.read(8))
        for _ in range(n):
            (id_len,) = struct.unpack("<Q", fh.read(8))
            utt_id = fh.read(id_len).decode("utf-8")
            (t_len,) = struct.unpack("<Q", fh.read(8))
            transcript = [struct.unpack("<Q", fh.read(8))[0] for _ in range(t_len)]
            (rank,) = struct.unpack("<Q", fh.read(8))
            if rank != 2:
                raise ValueError(f"feature tensor must be rank 2, got {rank}")
            rows, cols = struct.unpack("<QQ", fh.read(16))
            data = np.frombuffer(fh.read(8 * rows * cols), dtype="<f8")
            feats = data.reshape(rows, cols).astype(np.float64).copy()
            utts.append(Utterance(utt_id=utt_id, features=feats, transcript=[int(x) for x in transcript]))
    return utts
