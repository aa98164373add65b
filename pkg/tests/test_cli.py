"""End-to-end pipeline through the command line: exit codes, determinism,
file-level cross-checks, config round-trips."""

import hashlib
from pathlib import Path

import numpy as np
import pytest

from ctsasr.cli import main, parse_config_text, resolve_config, RunConfig, UsageError
from ctsasr.cts import read_mask_file
from ctsasr.data import load_dataset
from ctsasr.metrics import ErrorBreakdown, wer_score

TINY = """
# tiny pipeline config for tests
vocab = 4
feat_dim = 6
d_model = 16
n_heads = 2
d_ff = 24
enc_layers = 1
dec_layers = 1
dur_min = 4
dur_max = 6
noise_sigma = 0.05
blank_gap_prob = 0.2
min_labels = 2
max_labels = 4
n_train_utts = 24
n_eval_utts = 6
steps = 60
batch_size = 4
lr = 3e-3
finetune_steps = 8
finetune_lr = 1e-3
beam = 2
repeats = 3
"""


def sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-data -> train -> finetune -> decode (mask + dense), shared by tests."""
    out = tmp_path_factory.mktemp("run")
    cfg_path = out / "tiny.ini"
    cfg_path.write_text(TINY)
    base = ["--config", str(cfg_path), "--out-dir", str(out), "--seed", "7"]
    assert main(["gen-data", *base]) == 0
    assert main(["train", *base]) == 0
    assert main(["finetune", *base, "--mode", "two_step"]) == 0
    assert main(["decode", *base, "--beam", "2", "--mask"]) == 0
    assert main(["decode", *base, "--beam", "2", "--no-mask"]) == 0
    return out, base


class TestConfig:
    def test_parse_flat_ini(self):
        kv = parse_config_text("a = 1\n# comment\nb= two\n\nc =3 # trailing")
        assert kv == {"a": "1", "b": "two", "c": "3"}

    def test_unknown_key_rejected(self):
        with pytest.raises(UsageError):
            resolve_config(None, {"not_a_key": 5})

    def test_round_trip(self, tmp_path):
        cfg = RunConfig(seed=3, d_model=32, keep_blanks=False, lr=0.005)
        path = tmp_path / "c.ini"
        path.write_text(cfg.to_ini_text())
        back = resolve_config(str(path), {})
        assert back == cfg

    def test_bad_bool(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("keep_blanks = maybe\n")
        with pytest.raises(UsageError):
            resolve_config(str(path), {})


class TestExitCodes:
    def test_unknown_subcommand_is_usage_error(self, capsys):
        assert main(["frobnicate", "--out-dir", "x"]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_flag_is_usage_error(self, capsys):
        assert main(["train", "--out-dir", "x", "--bogus"]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_config_key_is_usage_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("no_such_knob = 1\n")
        assert main(["train", "--config", str(bad), "--out-dir", str(tmp_path)]) == 1

    def test_finetune_without_checkpoint(self, tmp_path, capsys):
        assert main(["finetune", "--out-dir", str(tmp_path), "--mode", "full"]) == 2
        assert "checkpoint not found" in capsys.readouterr().err

    def test_report_without_decodes(self, tmp_path, capsys):
        assert main(["report", "--out-dir", str(tmp_path)]) == 2


class TestGenData:
    def test_deterministic_across_runs(self, tmp_path):
        for sub in ("a", "b"):
            d = tmp_path / sub
            assert main(["gen-data", "--out-dir", str(d), "--seed", "7"]) == 0
        assert sha(tmp_path / "a/train.bin") == sha(tmp_path / "b/train.bin")
        assert sha(tmp_path / "a/eval.bin") == sha(tmp_path / "b/eval.bin")

    def test_resolved_config_written(self, tmp_path):
        assert main(["gen-data", "--out-dir", str(tmp_path), "--seed", "3"]) == 0
        resolved = tmp_path / "resolved_gen-data.ini"
        assert resolved.exists()
        assert resolve_config(str(resolved), {}).seed == 3


class TestPipeline:
    def test_artifacts_exist(self, pipeline):
        out, _ = pipeline
        for name in (
            "train.bin",
            "eval.bin",
            "baseline.ckpt",
            "loss_baseline.csv",
            "finetuned_two_step.ckpt",
            "decode_baseline_beam2_mask.tsv",
            "decode_baseline_beam2_dense.tsv",
            "masks_baseline_beam2.txt",
        ):
            assert (out / name).exists(), name

    def test_mask_stats_consistent_with_mask_file(self, pipeline, capsys):
        out, base = pipeline
        assert main(["mask-stats", *base]) == 0
        printed = capsys.readouterr().out
        # independent line-count of the mask file
        entries = read_mask_file(out / "masks_baseline_beam2.txt")
        frames = sum(len(k) for _, k in entries)
        kept = sum(int(k.sum()) for _, k in entries)
        line = next(l for l in printed.splitlines() if l.startswith("masks_baseline_beam2"))
        _, n_utts, n_frames, n_kept, ratio = line.split(",")
        assert int(n_utts) == len(entries)
        assert int(n_frames) == frames
        assert int(n_kept) == kept
        assert abs(float(ratio) - kept / frames) < 5e-5

    def test_report_matches_direct_rescoring(self, pipeline, capsys):
        out, base = pipeline
        assert main(["report", *base]) == 0
        report_csv = (out / "report.csv").read_text().splitlines()
        refs = {u.utt_id: u.transcript for u in load_dataset(out / "eval.bin")}
        for row in report_csv[1:]:
            model_name, beam, masked, wer, sub, dele, ins, n_ref = row.split(",")
            kind = "mask" if masked == "1" else "dense"
            hyp_file = out / f"decode_{model_name}_beam{beam}_{kind}.tsv"
            parts = []
            for line in hyp_file.read_text().splitlines():
                utt_id, ids, _text, _score = line.split("\t")
                hyp = [int(t) for t in ids.split()] if ids else []
                parts.append(wer_score(refs[utt_id], hyp))
            total = ErrorBreakdown.combine(parts)
            assert float(wer) == total.wer
            assert float(sub) == total.sub
            assert float(dele) == total.dele
            assert float(ins) == total.ins
            assert int(n_ref) == total.n_ref

    def test_decode_resolved_config_round_trip(self, pipeline):
        out, _ = pipeline
        resolved = out / "resolved_decode.ini"
        before = sha(out / "decode_baseline_beam2_dense.tsv")
        assert main([
            "decode", "--config", str(resolved), "--out-dir", str(out), "--no-mask",
        ]) == 0
        assert sha(out / "decode_baseline_beam2_dense.tsv") == before

    def test_sub_del_ins_sum_to_distance(self, pipeline):
        out, _ = pipeline
        rows = (out / "report.csv").read_text().splitlines()[1:]
        assert rows
        for row in rows:
            _, _, _, wer, sub, dele, ins, _ = row.split(",")
            assert abs(float(wer) - (float(sub) + float(dele) + float(ins))) <= 0.03

    def test_bench_subcommand(self, pipeline):
        out, base = pipeline
        assert main(["bench", *base, "--beams", "1", "--repeats", "3"]) == 0
        lines = (out / "bench.csv").read_text().splitlines()
        assert lines[0] == "beamwidth,mask,utts,mean_ms,median_ms,ratio"
        assert len(lines) == 3  # dense + masked

    def test_empty_hypothesis_file_fails_report(self, pipeline):
        out, base = pipeline
        empty = out / "decode_empty_beam9_dense.tsv"
        empty.write_text("")
        try:
            assert main(["report", *base]) == 2
        finally:
            empty.unlink()
