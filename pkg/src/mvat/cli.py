"""Command-line front end: train, distill, evaluate, enhance, count,
export-tams, dataset.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import load_run_config
from .counting import count_flops, count_params
from .distill import TamParams, format_tam_record, trace_tams
from .errors import ConfigError, MvatError
from .signal import (
    build_manifest,
    load_wav,
    read_manifest,
    realize_sample,
    realize_split,
    save_wav,
    write_manifest,
)
from .trainer import (
    build_from_state,
    distill,
    enhance,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)

SEED_ENV_VAR = "MVAT_SEED"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="mvat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="supervised training of a teacher or student")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--model", choices=("teacher", "student"), default="teacher")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--set", action="append", default=[], dest="overrides",
                   metavar="SECTION.KEY=VALUE")

    p = sub.add_parser("distill", help="train a student under a frozen teacher")
    p.add_argument("--config", required=True)
    p.add_argument("--teacher", required=True, help="teacher checkpoint")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume")
    p.add_argument("--set", action="append", default=[], dest="overrides",
                   metavar="SECTION.KEY=VALUE")

    p = sub.add_parser("evaluate", help="SI-SDR report of a checkpoint on a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="dataset manifest (jsonl)")
    p.add_argument("--report", required=True, help="output report path (jsonl)")

    p = sub.add_parser("enhance", help="denoise one WAV file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", required=True, dest="input")
    p.add_argument("--out", required=True)

    p = sub.add_parser("count", help="parameter count and FLOPs for a config")
    p.add_argument("--config", required=True)
    p.add_argument("--input-len", type=int, default=16000)
    p.add_argument("--model", choices=("teacher", "student"), default="student")
    p.add_argument("--set", action="append", default=[], dest="overrides",
                   metavar="SECTION.KEY=VALUE")

    p = sub.add_parser("export-tams", help="dump temporal attention maps for a WAV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", required=True, dest="input")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("dataset", help="write train/val/test manifests for a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--set", action="append", default=[], dest="overrides",
                   metavar="SECTION.KEY=VALUE")
    return parser


def _load_config(args):
    rc = load_run_config(args.config, getattr(args, "overrides", ()))
    if rc.train is not None and SEED_ENV_VAR in os.environ:
        try:
            rc.train.seed = int(os.environ[SEED_ENV_VAR])
        except ValueError as e:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer: {e}") from e
    return rc


def _write_result(result, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.final_state, out_dir / "final.ckpt")
    save_checkpoint(result.best_state, out_dir / "best.ckpt")
    with open(out_dir / "train_log.jsonl", "w") as f:
        for rec in result.step_records + result.epoch_records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    for rec in result.epoch_records:
        val = rec.get("val_si_sdr")
        val_text = f"  val_si_sdr {val:8.3f}" if val is not None else ""
        print(f"epoch {rec['epoch']:3d}  train_loss {rec['train_loss']:9.4f}{val_text}")
    print(f"wrote {out_dir / 'final.ckpt'} and {out_dir / 'best.ckpt'}")


def _cmd_train(args) -> int:
    rc = _load_config(args)
    rc.require("train", "data")
    model_cfg = rc.teacher if args.model == "teacher" else rc.student
    if model_cfg is None:
        raise ConfigError(f"missing required config section [model.{args.model}]")
    resume = load_checkpoint(args.resume) if args.resume else None
    train_set = realize_split(rc.data, "train")
    val_set = realize_split(rc.data, "val")
    result = train(model_cfg, rc.train, train_set, val_set, resume=resume)
    _write_result(result, Path(args.out))
    return 0


def _cmd_distill(args) -> int:
    rc = _load_config(args)
    rc.require("student", "train", "data")
    dcfg = rc.distill
    if dcfg is None:
        raise ConfigError("missing required config section [distill]")
    teacher_state = load_checkpoint(args.teacher)
    resume = load_checkpoint(args.resume) if args.resume else None
    train_set = realize_split(rc.data, "train")
    val_set = realize_split(rc.data, "val")
    result = distill(teacher_state, rc.student, rc.train, dcfg, train_set, val_set,
                     resume=resume)
    _write_result(result, Path(args.out))
    return 0


def _cmd_evaluate(args) -> int:
    state = load_checkpoint(args.ckpt)
    records = read_manifest(args.data)
    dataset = [realize_sample(rec) for rec in records]
    report = evaluate(state, dataset)
    with open(args.report, "w") as f:
        for rec in report.clip_records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
        f.write(json.dumps(report.summary(), sort_keys=True) + "\n")
    print(f"{'clips':>8} {'si_sdr_in':>12} {'si_sdr_out':>12} {'delta':>10}")
    print(f"{len(report.clip_records):>8} {report.mean_input_si_sdr:>12.3f} "
          f"{report.mean_enhanced_si_sdr:>12.3f} {report.improvement_db:>10.3f}")
    print(f"wrote {args.report}")
    return 0


def _cmd_enhance(args) -> int:
    state = load_checkpoint(args.ckpt)
    model = build_from_state(state, requires_grad=False)
    clip = load_wav(args.input)
    out = enhance(model, clip)
    save_wav(out, args.out)
    print(f"enhanced {args.input} -> {args.out} ({len(out)} samples)")
    return 0


def _cmd_count(args) -> int:
    rc = load_run_config(args.config, getattr(args, "overrides", ()))
    cfg = rc.teacher if args.model == "teacher" else rc.student
    if cfg is None:
        raise ConfigError(f"missing required config section [model.{args.model}]")
    params = count_params(cfg)
    flops = count_flops(cfg, args.input_len)
    print(f"model {args.model} depth={cfg.depth} base_channels={cfg.base_channels}")
    print(f"params {params}")
    print(f"flops {flops}  (input_len {args.input_len})")
    return 0


def _cmd_export_tams(args) -> int:
    state = load_checkpoint(args.ckpt)
    model = build_from_state(state, requires_grad=False)
    clip = load_wav(args.input)
    from . import tensor as T
    from .tensor import Tensor

    x = clip.samples[None, None, :].astype(np.float32)
    with T.no_grad():
        trace = model.forward(Tensor(x))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tams = trace_tams(trace, TamParams())
    for tam in tams:
        name = f"{tam.side}_L{tam.level}_{tam.view}.tam"
        (out_dir / name).write_text(format_tam_record(tam))
    print(f"wrote {len(tams)} TAM records to {out_dir}")
    return 0


def _cmd_dataset(args) -> int:
    rc = _load_config(args)
    rc.require("data")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for split in ("train", "val", "test"):
        records = build_manifest(rc.data, split)
        write_manifest(records, out_dir / f"{split}.jsonl")
        print(f"wrote {out_dir / (split + '.jsonl')} ({len(records)} samples)")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "distill": _cmd_distill,
    "evaluate": _cmd_evaluate,
    "enhance": _cmd_enhance,
    "count": _cmd_count,
    "export-tams": _cmd_export_tams,
    "dataset": _cmd_dataset,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"mvat: config error: {e}", file=sys.stderr)
        return 1
    except MvatError as e:
        print(f"mvat: error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"mvat: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
