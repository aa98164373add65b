"""Command-line pipeline: gen-data, train, finetune, decode, mask-stats, bench, report.

Configuration is a flat ``key = value`` text file; command-line flags
override file values, and every run writes the fully resolved configuration
next to its outputs, so re-running with the emitted file reproduces the
run.  Unknown keys are rejected.  Exit codes: 0 success, 1 usage error,
2 runtime error.

The three training subcommands mirror the intended procedure: train the
baseline with the hybrid loss, attach the summarization mask, fine-tune in
one of the three schedules.
"""

from __future__ import annotations

import argparse
import glob
import os
import re
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import tensor as tt
from .bench import bench_decode, read_bench_csv, write_bench_csv
from .cts import build_cts_mask, mask_stats, read_mask_file, write_mask_file, CtsMask
from .data import SyntheticSpec, gen_synthetic_dataset, load_dataset, save_dataset
from .decoding import Hypothesis, beam_search
from .errors import CtsAsrError
from .metrics import ErrorBreakdown, wer_score
from .model import EncoderDecoder, ModelConfig, load_checkpoint, save_checkpoint
from .tensor import Tensor
from .training import TrainConfig, finetune, train_baseline, write_loss_curve

DECODE_NAME_RE = re.compile(r"^decode_(?P<model>.+)_beam(?P<beam>\d+)_(?P<kind>mask|dense)\.tsv$")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Flat union of all knobs; see the README for the pipeline walkthrough."""

    seed: int = 0
    # model
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    enc_layers: int = 2
    dec_layers: int = 2
    ctc_weight: float = 0.3
    # synthetic data (vocab counts labels excluding blank)
    vocab: int = 12
    feat_dim: int = 16
    dur_min: int = 5
    dur_max: int = 9
    noise_sigma: float = 0.1
    blank_gap_prob: float = 0.3
    min_labels: int = 5
    max_labels: int = 10
    edge_silence: bool = True
    n_train_utts: int = 2000
    n_eval_utts: int = 100
    # training
    steps: int = 1200
    batch_size: int = 8
    lr: float = 2e-3
    finetune_steps: int = 400
    finetune_lr: float = 1e-3
    finetune_mode: str = "two_step"
    two_step_split: float = 0.5
    keep_blanks: bool = True
    # decoding / benchmarking
    beam: int = 4
    max_len: int = 0  # 0 = automatic bound from the segment count
    repeats: int = 3
    frame_shift: float = 0.01

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            vocab_size=self.vocab + 1,
            feat_dim=self.feat_dim,
            d_model=self.d_model,
            n_heads=self.n_heads,
            d_ff=self.d_ff,
            enc_layers=self.enc_layers,
            dec_layers=self.dec_layers,
            ctc_weight=self.ctc_weight,
        )

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            vocab_size=self.vocab,
            feat_dim=self.feat_dim,
            dur_min=self.dur_min,
            dur_max=self.dur_max,
            noise_sigma=self.noise_sigma,
            blank_gap_prob=self.blank_gap_prob,
            seed=self.seed,
            min_labels=self.min_labels,
            max_labels=self.max_labels,
            edge_silence=self.edge_silence,
        )

    def train_config(self, phase: str) -> TrainConfig:
        if phase == "train":
            steps, lr = self.steps, self.lr
        else:
            steps, lr = self.finetune_steps, self.finetune_lr
        return TrainConfig(
            steps=steps,
            batch_size=self.batch_size,
            lr=lr,
            ctc_weight=self.ctc_weight,
            finetune_mode=self.finetune_mode,
            two_step_split=self.two_step_split,
            seed=self.seed,
            keep_blanks=self.keep_blanks,
        )

    def to_ini_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def _coerce(field_type: type, raw: str, key: str):
    if field_type is bool:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise UsageError(f"config key {key}: expected a boolean, got {raw!r}")
    try:
        return field_type(raw)
    except ValueError as exc:
        raise UsageError(f"config key {key}: {exc}") from exc


def resolve_config(config_path: str | None, overrides: dict) -> RunConfig:
    cfg = RunConfig()
    by_name = {f.name: f for f in fields(RunConfig)}
    if config_path is not None:
        text = Path(config_path).read_text(encoding="utf-8")
        for key, raw in parse_config_text(text).items():
            if key not in by_name:
                raise UsageError(f"unknown config key {key!r}")
            setattr(cfg, key, _coerce(type(getattr(cfg, key)), raw, key))
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in by_name:
            raise UsageError(f"unknown override {key!r}")
        setattr(cfg, key, value)
    return cfg


def _write_resolved(cfg: RunConfig, out_dir: Path, command: str) -> None:
    (out_dir / f"resolved_{command}.ini").write_text(cfg.to_ini_text(), encoding="utf-8")


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{hint} not found: {path}")
    return path


def _detok(tokens) -> str:
    return " ".join(f"w{t}" for t in tokens)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(cfg: RunConfig, args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.synthetic_spec()
    train = gen_synthetic_dataset(spec, cfg.n_train_utts, id_prefix="train", stream=0)
    heldout = gen_synthetic_dataset(spec, cfg.n_eval_utts, id_prefix="eval", stream=1)
    save_dataset(out / "train.bin", train)
    save_dataset(out / "eval.bin", heldout)
    _write_resolved(cfg, out, "gen-data")
    print(f"wrote {len(train)} train / {len(heldout)} eval utterances to {out}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = load_dataset(_require(out / "train.bin", "training dataset"))
    model = EncoderDecoder(cfg.model_config(), seed=cfg.seed)
    curve = train_baseline(model, data, cfg.train_config("train"))
    save_checkpoint(out / "baseline.ckpt", model)
    write_loss_curve(out / "loss_baseline.csv", curve)
    _write_resolved(cfg, out, "train")
    last = curve[-1].loss if curve else float("nan")
    print(f"trained baseline for {cfg.steps} steps (final loss {last:.4f}); wrote baseline.ckpt")
    return 0


def cmd_finetune(cfg: RunConfig, args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "baseline.ckpt"
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    data = load_dataset(_require(out / "train.bin", "training dataset"))
    model = load_checkpoint(ckpt)
    curve = finetune(model, data, cfg.train_config("finetune"))
    tag = cfg.finetune_mode
    save_checkpoint(out / f"finetuned_{tag}.ckpt", model)
    write_loss_curve(out / f"loss_finetune_{tag}.csv", curve)
    _write_resolved(cfg, out, "finetune")
    print(f"fine-tuned ({tag}) for {cfg.finetune_steps} steps; wrote finetuned_{tag}.ckpt")
    return 0


def cmd_decode(cfg: RunConfig, args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = _require(out / args.ckpt, "checkpoint")
    data = load_dataset(_require(out / "eval.bin", "evaluation dataset"))
    model = load_checkpoint(ckpt)
    stem = Path(args.ckpt).stem
    kind = "mask" if cfg_mask(args) else "dense"
    hyp_path = out / f"decode_{stem}_beam{cfg.beam}_{kind}.tsv"
    max_len = cfg.max_len if cfg.max_len > 0 else None

    masks: list[tuple[str, np.ndarray]] = []
    with open(hyp_path, "w", encoding="utf-8") as fh:
        with tt.no_grad():
            for utt in data:
                enc = model.encoder_forward(Tensor(utt.features))
                mask = None
                if cfg_mask(args):
                    mask = build_cts_mask(enc.posterior, keep_blanks=cfg.keep_blanks)
                    masks.append((utt.utt_id, mask.keep))
                hyp = beam_search(model, enc, mask=mask, beamwidth=cfg.beam, max_len=max_len)
                labels = hyp.labels(model.cfg.vocab_size)
                ids = " ".join(str(t) for t in labels)
                fh.write(f"{utt.utt_id}\t{ids}\t{_detok(labels)}\t{hyp.score:.6f}\n")
    if masks:
        write_mask_file(out / f"masks_{stem}_beam{cfg.beam}.txt", masks)
    _write_resolved(cfg, out, "decode")
    print(f"decoded {len(data)} utterances -> {hyp_path.name}")
    return 0


def cmd_mask_stats(cfg: RunConfig, args) -> int:
    out = Path(args.out_dir)
    paths = sorted(glob.glob(str(out / args.masks)))
    if not paths:
        raise FileNotFoundError(f"no mask files matching {args.masks!r} in {out}")
    lines = ["file,utts,frames,kept,ratio"]
    for path in paths:
        entries = read_mask_file(path)
        frames = sum(len(keep) for _, keep in entries)
        kept = sum(int(keep.sum()) for _, keep in entries)
        ratio = kept / frames if frames else 0.0
        lines.append(f"{os.path.basename(path)},{len(entries)},{frames},{kept},{ratio:.4f}")
    text = "\n".join(lines) + "\n"
    (out / "mask_stats.csv").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_bench(cfg: RunConfig, args) -> int:
    out = Path(args.out_dir)
    ckpt = _require(out / args.ckpt, "checkpoint")
    data = load_dataset(_require(out / "eval.bin", "evaluation dataset"))
    model = load_checkpoint(ckpt)
    beamwidths = [int(b) for b in args.beams.split(",")]
    rows = []
    for with_mask in (False, True):
        rows.extend(
            bench_decode(
                model,
                data,
                beamwidths,
                with_mask=with_mask,
                repeats=cfg.repeats,
                keep_blanks=cfg.keep_blanks,
                frame_shift_s=cfg.frame_shift,
            )
        )
    write_bench_csv(out / "bench.csv", rows)
    _write_resolved(cfg, out, "bench")
    for r in rows:
        kind = "mask" if r.mask else "dense"
        print(f"beam {r.beamwidth:2d} {kind:5s}: {r.mean_ms:8.2f} ms/utt  rtf {r.ratio:.4f}")
    return 0


def generate_report(out_dir) -> tuple[str, list[str]]:
    """WER table over every decode output plus a timing table when present."""
    out = Path(out_dir)
    refs = {u.utt_id: u.transcript for u in load_dataset(_require(out / "eval.bin", "evaluation dataset"))}
    decode_paths = sorted(p for p in out.iterdir() if DECODE_NAME_RE.match(p.name))
    if not decode_paths:
        raise FileNotFoundError(f"no decode outputs in {out}")

    csv_rows = ["model,beamwidth,mask,wer,sub,del,ins,n_ref"]
    text_lines = [f"{'model':24s} {'beam':>4s} {'mask':>5s} {'WER%':>7s} {'sub':>6s} {'del':>6s} {'ins':>6s}"]
    for path in decode_paths:
        meta = DECODE_NAME_RE.match(path.name)
        assert meta is not None
        hyps: dict[str, list[int]] = {}
        for line in path.read_text(encoding="utf-8").splitlines():
            utt_id, ids, _text, _score = line.split("\t")
            hyps[utt_id] = [int(t) for t in ids.split()] if ids else []
        if not hyps:
            raise ValueError(f"empty hypothesis set in {path.name}")
        missing = set(refs) - set(hyps)
        if missing:
            raise ValueError(f"{path.name} is missing {len(missing)} utterances")
        total = ErrorBreakdown.combine(wer_score(refs[u], hyps[u]) for u in refs)
        model_name, beam, kind = meta["model"], meta["beam"], meta["kind"]
        csv_rows.append(
            f"{model_name},{beam},{int(kind == 'mask')},{total.wer},{total.sub},{total.dele},{total.ins},{total.n_ref}"
        )
        text_lines.append(
            f"{model_name:24s} {beam:>4s} {kind:>5s} {total.wer:7.2f} {total.sub:6.2f} {total.dele:6.2f} {total.ins:6.2f}"
        )

    bench_path = out / "bench.csv"
    if bench_path.exists():
        text_lines.append("")
        text_lines.append(f"{'beam':>4s} {'mask':>5s} {'ms/utt':>9s} {'rtf':>8s}")
        for row in read_bench_csv(bench_path):
            kind = "mask" if row.mask else "dense"
            text_lines.append(f"{row.beamwidth:4d} {kind:>5s} {row.mean_ms:9.2f} {row.ratio:8.4f}")
    return "\n".join(text_lines) + "\n", csv_rows


def cmd_report(cfg: RunConfig, args) -> int:
    out = Path(args.out_dir)
    text, csv_rows = generate_report(out)
    (out / "report.csv").write_text("\n".join(csv_rows) + "\n", encoding="utf-8")
    print(text, end="")
    return 0


def cfg_mask(args) -> bool:
    return bool(getattr(args, "mask", False))


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors must exit 1, not argparse's 2
        raise UsageError(message)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", default=None, help="flat key=value config file")
    sub.add_argument("--out-dir", required=True, help="directory for all run artifacts")
    sub.add_argument("--seed", type=int, default=None)


def build_parser() -> _Parser:
    parser = _Parser(prog="ctsasr", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-data", help="generate synthetic train/eval datasets")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = subs.add_parser("train", help="phase-1 baseline training (no mask)")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("finetune", help="mask-aware fine-tuning of a trained baseline")
    _add_common(p)
    p.add_argument("--mode", choices=["full", "frozen_enc", "two_step"], default=None)
    p.set_defaults(func=cmd_finetune)

    p = subs.add_parser("decode", help="beam-search decode the eval set")
    _add_common(p)
    p.add_argument("--ckpt", default="baseline.ckpt", help="checkpoint file inside --out-dir")
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--mask", dest="mask", action="store_true", default=False)
    p.add_argument("--no-mask", dest="mask", action="store_false")
    p.add_argument("--keep-blanks", choices=["true", "false"], default=None)
    p.set_defaults(func=cmd_decode)

    p = subs.add_parser("mask-stats", help="summarize mask files written by decode")
    _add_common(p)
    p.add_argument("--masks", default="masks_*.txt", help="glob inside --out-dir")
    p.set_defaults(func=cmd_mask_stats)

    p = subs.add_parser("bench", help="time masked vs dense decoding")
    _add_common(p)
    p.add_argument("--ckpt", default="baseline.ckpt")
    p.add_argument("--beams", default="1,4", help="comma-separated beamwidths")
    p.add_argument("--repeats", type=int, default=None)
    p.set_defaults(func=cmd_bench)

    p = subs.add_parser("report", help="WER and timing tables from run artifacts")
    _add_common(p)
    p.set_defaults(func=cmd_report)

    return parser


def _overrides_from(args) -> dict:
    out = {"seed": getattr(args, "seed", None)}
    if getattr(args, "beam", None) is not None:
        out["beam"] = args.beam
    if getattr(args, "mode", None) is not None:
        out["finetune_mode"] = args.mode
    if getattr(args, "repeats", None) is not None:
        out["repeats"] = args.repeats
    kb = getattr(args, "keep_blanks", None)
    if kb is not None:
        out["keep_blanks"] = kb == "true"
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args.config, _overrides_from(args))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_help(sys.stderr)
        return 1
    except SystemExit as exc:  # argparse -h
        return int(exc.code or 0)
    try:
        return args.func(cfg, args)
    except (CtsAsrError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
