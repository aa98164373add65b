"""Summarization masks: segmentation, representative selection, mask
construction against an independent oracle, gathering, stats, file format."""

import numpy as np
import pytest

from ctsasr.ctc import Posterior
from ctsasr.cts import (
    CtsMask,
    Segment,
    build_cts_mask,
    mask_stats,
    read_mask_file,
    segment_alignment,
    select_representative,
    summarize_sequence,
    write_mask_file,
)
from ctsasr.errors import DimensionError, EmptyInputError
from ctsasr.tensor import Tensor

from oracles import cts_mask_oracle

RNG = np.random.default_rng(99)


def posterior_of(probs: np.ndarray) -> Posterior:
    return Posterior(probs=Tensor(probs), log_probs=Tensor(np.log(np.maximum(probs, 1e-300))))


def posterior_for_labels(labels, vocab: int, rng=RNG) -> Posterior:
    """Random posterior whose per-frame argmax follows ``labels``."""
    t_len = len(labels)
    probs = rng.random((t_len, vocab)) * 0.4 + 0.05
    for t, lab in enumerate(labels):
        probs[t, lab] = 1.0 + rng.random()
    probs /= probs.sum(axis=1, keepdims=True)
    return posterior_of(probs)


class TestSegmentation:
    def test_mixed_runs(self):
        segs = segment_alignment([5, 5, 0, 0, 0, 7])
        assert segs == [Segment(0, 1, 5), Segment(2, 4, 0), Segment(5, 5, 7)]

    def test_single_frame(self):
        assert segment_alignment([3]) == [Segment(0, 0, 3)]

    def test_single_run(self):
        assert segment_alignment([2, 2, 2]) == [Segment(0, 2, 2)]

    def test_partition_and_alternation(self):
        for _ in range(50):
            labels = RNG.integers(0, 4, size=int(RNG.integers(1, 40)))
            segs = segment_alignment(labels)
            assert segs[0].start == 0
            assert segs[-1].end == len(labels) - 1
            for prev, cur in zip(segs, segs[1:]):
                assert cur.start == prev.end + 1
                assert cur.label != prev.label


class TestRepresentative:
    def test_argmax(self):
        probs = np.zeros((3, 6))
        probs[:, 4] = [0.2, 0.9, 0.5]
        assert select_representative(Segment(0, 2, 4), posterior_of(probs)) == 1

    def test_tie_prefers_earliest(self):
        probs = np.zeros((2, 5))
        probs[:, 3] = [0.5, 0.5]
        assert select_representative(Segment(0, 1, 3), posterior_of(probs)) == 0

    def test_matches_scan_oracle(self):
        probs = RNG.random((80, 6))
        post = posterior_of(probs / probs.sum(axis=1, keepdims=True))
        for _ in range(500):
            start = int(RNG.integers(0, 80))
            end = int(RNG.integers(start, 80))
            lab = int(RNG.integers(0, 6))
            got = select_representative(Segment(start, end, lab), post)
            best, best_t = -1.0, -1
            for t in range(start, end + 1):
                if post.probs.data[t, lab] > best:
                    best, best_t = post.probs.data[t, lab], t
            assert got == best_t

    def test_out_of_range_segment(self):
        with pytest.raises(DimensionError):
            select_representative(Segment(0, 5, 1), posterior_of(np.full((3, 2), 0.5)))


class TestBuildMask:
    def test_one_keep_per_segment(self):
        post = posterior_for_labels([1, 1, 0, 0, 2], vocab=4)
        mask = build_cts_mask(post, keep_blanks=True)
        assert mask.num_kept == 3
        assert len(mask.segments) == 3
        assert mask.num_frames == 5

    def test_blank_segments_dropped(self):
        post = posterior_for_labels([1, 1, 0, 0, 2], vocab=4)
        mask = build_cts_mask(post, keep_blanks=False)
        assert mask.num_kept == 2
        assert len(mask.segments) == 3  # segments still partition all frames

    def test_matches_pipeline_oracle(self):
        for trial in range(100):
            rng = np.random.default_rng(1000 + trial)
            probs = rng.random((50, 6)) + 1e-3
            probs /= probs.sum(axis=1, keepdims=True)
            post = posterior_of(probs)
            for keep_blanks in (True, False):
                mask = build_cts_mask(post, keep_blanks=keep_blanks)
                keep, reps, runs = cts_mask_oracle(probs, keep_blanks)
                np.testing.assert_array_equal(mask.keep, keep)
                assert mask.representatives == reps
                assert [(s.start, s.end, s.label) for s in mask.segments] == runs

    def test_representative_scores_dominate_segment(self):
        probs = RNG.random((40, 5)) + 1e-3
        probs /= probs.sum(axis=1, keepdims=True)
        post = posterior_of(probs)
        mask = build_cts_mask(post)
        for seg, rep in zip(mask.segments, mask.representatives):
            assert seg.start <= rep <= seg.end
            window = probs[seg.start : seg.end + 1, seg.label]
            assert probs[rep, seg.label] >= window.max()

    def test_empty_posterior_rejected(self):
        with pytest.raises(EmptyInputError):
            build_cts_mask(posterior_of(np.zeros((0, 3))))


class TestSummarize:
    def test_all_true_mask_is_identity(self):
        labels = [1, 2, 3, 1, 2, 3]  # per-frame distinct -> every segment one frame
        post = posterior_for_labels(labels, vocab=4)
        mask = build_cts_mask(post)
        y = Tensor(RNG.normal(size=(6, 5)))
        assert mask.keep.all()
        np.testing.assert_array_equal(summarize_sequence(y, mask).data, y.data)

    def test_gather_specific_rows(self):
        keep = np.zeros(6, dtype=bool)
        keep[[1, 4]] = True
        mask = CtsMask(keep=keep, segments=segment_alignment([1, 1, 1, 2, 2, 2]), representatives=[1, 4])
        y = Tensor(RNG.normal(size=(6, 4)))
        out = summarize_sequence(y, mask)
        np.testing.assert_array_equal(out.data, y.data[[1, 4]])

    def test_rows_bit_equal(self):
        probs = RNG.random((30, 4)) + 1e-3
        post = posterior_of(probs / probs.sum(axis=1, keepdims=True))
        mask = build_cts_mask(post)
        y = Tensor(RNG.normal(size=(30, 8)))
        out = summarize_sequence(y, mask)
        for i, rep in enumerate(mask.representatives):
            assert (out.data[i] == y.data[rep]).all()

    def test_length_mismatch(self):
        post = posterior_for_labels([1, 2, 1], vocab=3)
        mask = build_cts_mask(post)
        with pytest.raises(DimensionError):
            summarize_sequence(Tensor(np.zeros((5, 2))), mask)

    def test_maxpool_ablation_variant(self):
        post = posterior_for_labels([1, 1, 2, 2, 2], vocab=3)
        mask = build_cts_mask(post)
        y = RNG.normal(size=(5, 4))
        out = summarize_sequence(Tensor(y), mask, pooling="maxpool")
        np.testing.assert_array_equal(out.data[0], y[0:2].max(axis=0))
        np.testing.assert_array_equal(out.data[1], y[2:5].max(axis=0))


class TestMaskStats:
    def _mask_for(self, labels, vocab=6):
        return build_cts_mask(posterior_for_labels(labels, vocab))

    def test_ratio(self):
        labels = [1] * 50 + [0] * 25 + [2] * 25  # 3 segments over 100 frames
        stats = mask_stats(self._mask_for(labels))
        assert stats.total_frames == 100
        assert stats.kept_frames == 3
        assert stats.compression_ratio == 0.03
        assert stats.blank_fraction == 0.25

    def test_no_compression_when_labels_alternate(self):
        stats = mask_stats(self._mask_for([1, 2, 3, 4, 5]))
        assert stats.compression_ratio == 1.0

    def test_matches_count_oracle(self):
        for _ in range(30):
            labels = RNG.integers(0, 4, size=int(RNG.integers(1, 60)))
            mask = self._mask_for(list(labels))
            stats = mask_stats(mask)
            assert stats.kept_frames == int(mask.keep.sum())
            assert stats.compression_ratio == stats.kept_frames / stats.total_frames
            blanks = sum(1 for lab in labels if lab == 0)
            assert stats.blank_fraction == blanks / len(labels)

    def test_empty_rejected(self):
        empty = CtsMask(keep=np.zeros(0, dtype=bool), segments=[], representatives=[])
        with pytest.raises(EmptyInputError):
            mask_stats(empty)


class TestMaskFile:
    def test_roundtrip(self, tmp_path):
        masks = [
            ("utt00", np.array([True, False, True])),
            ("utt01", np.array([False, False])),
        ]
        path = tmp_path / "masks.txt"
        write_mask_file(path, masks)
        back = read_mask_file(path)
        assert [(i, k.tolist()) for i, k in back] == [(i, k.tolist()) for i, k in masks]
        line = path.read_text().splitlines()[0]
        assert line == "utt00 1 0 1"
