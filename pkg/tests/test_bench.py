"""Compute accounting: analytic cross-attention MACs vs an instrumented
forward pass, savings arithmetic, and the benchmark harness plumbing."""

import numpy as np
import pytest

from ctsasr import tensor as tt
from ctsasr.bench import bench_decode, count_decoder_ops, read_bench_csv, write_bench_csv, xattn_macs
from ctsasr.data import SyntheticSpec, gen_synthetic_dataset
from ctsasr.errors import DimensionError
from ctsasr.model import EncoderDecoder, ModelConfig, count_cross_attention_macs
from ctsasr.tensor import Tensor

RNG = np.random.default_rng(77)


def small_model():
    cfg = ModelConfig(vocab_size=4, feat_dim=5, d_model=16, n_heads=2, d_ff=24,
                      enc_layers=1, dec_layers=2)
    return EncoderDecoder(cfg, seed=0)


class TestAnalyticCounts:
    def test_no_savings_when_nothing_masked(self):
        cfg = small_model().cfg
        counts = count_decoder_ops(enc_len=40, kept=40, cfg=cfg, steps=10, beamwidth=4)
        assert counts.savings_fraction == 0.0
        assert counts.xattn_macs_masked == counts.xattn_macs_dense

    def test_fifth_of_keys_saves_point_eight(self):
        cfg = small_model().cfg
        counts = count_decoder_ops(enc_len=50, kept=10, cfg=cfg, steps=7, beamwidth=4)
        assert counts.savings_fraction == 0.8

    def test_savings_is_one_minus_ratio_exactly(self):
        cfg = small_model().cfg
        for _ in range(50):
            t_prime = int(RNG.integers(1, 200))
            kept = int(RNG.integers(1, t_prime + 1))
            counts = count_decoder_ops(t_prime, kept, cfg, steps=int(RNG.integers(1, 30)),
                                       beamwidth=int(RNG.integers(1, 10)))
            assert counts.savings_fraction == 1.0 - kept / t_prime

    def test_kept_exceeding_length_rejected(self):
        with pytest.raises(DimensionError):
            count_decoder_ops(10, 11, small_model().cfg, steps=1, beamwidth=1)


class TestInstrumentedCounter:
    def test_forward_pass_matches_analytic_exactly(self):
        m = small_model()
        for t_raw, hist_len in ((17, 3), (24, 5), (9, 1)):
            enc = m.encoder_forward(Tensor(RNG.normal(size=(t_raw, 5))))
            history = [m.cfg.sos_id] + [1] * (hist_len - 1)
            with tt.no_grad(), count_cross_attention_macs() as counter:
                m.decoder_forward(enc.y, history)
            assert counter.total == xattn_macs(hist_len, enc.num_frames, m.cfg)

    def test_counter_sees_reduced_keys_after_gather(self):
        from ctsasr.cts import build_cts_mask, summarize_sequence

        m = small_model()
        enc = m.encoder_forward(Tensor(RNG.normal(size=(33, 5))))
        mask = build_cts_mask(enc.posterior)
        with tt.no_grad():
            y_small = summarize_sequence(enc.y, mask)
            with count_cross_attention_macs() as counter:
                m.decoder_forward(y_small, [m.cfg.sos_id, 1])
        assert counter.total == xattn_macs(2, mask.num_kept, m.cfg)


class TestBenchHarness:
    def _data(self, n=4):
        spec = SyntheticSpec(vocab_size=3, feat_dim=5, dur_min=4, dur_max=6,
                             noise_sigma=0.05, blank_gap_prob=0.2, seed=3,
                             min_labels=2, max_labels=3)
        return gen_synthetic_dataset(spec, n)

    def test_rows_and_csv_roundtrip(self, tmp_path):
        m = small_model()
        rows = bench_decode(m, self._data(), beamwidths=[1, 2], with_mask=False, repeats=3)
        rows += bench_decode(m, self._data(), beamwidths=[1, 2], with_mask=True, repeats=3)
        assert [(r.beamwidth, r.mask) for r in rows] == [(1, False), (2, False), (1, True), (2, True)]
        for r in rows:
            assert r.utts == 4
            assert r.mean_ms > 0
            assert r.ratio > 0
        path = tmp_path / "bench.csv"
        write_bench_csv(path, rows)
        back = read_bench_csv(path)
        assert [(r.beamwidth, r.mask, r.utts) for r in back] == [
            (r.beamwidth, r.mask, r.utts) for r in rows
        ]

    def test_repeats_floor(self):
        with pytest.raises(ValueError):
            bench_decode(small_model(), self._data(), [1], with_mask=False, repeats=2)
