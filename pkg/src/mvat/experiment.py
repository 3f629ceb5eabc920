"""Desk-scale distillation experiment: does multi-view transfer help a
small student on held-out noise?

One teacher is trained to desk-scale convergence, then for each seed a
student is trained three ways from identical initializations and batch
schedules: plain supervision, supervision + multi-view attention
transfer, and supervision + transfer + output distillation. Reported per
run: test-set SI-SDR and the per-epoch mean of the attention-transfer
term.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .distill import DistillConfig
from .model import ModelConfig
from .signal import DataConfig, realize_split
from .trainer import TrainConfig, TrainResult, distill, evaluate, train

VARIANTS = ("baseline", "mvat", "mvat_kd")


@dataclass
class DeskExperimentConfig:
    data: DataConfig = field(default_factory=lambda: DataConfig(
        seed=0, n_train=200, n_val=40, n_test=40, duration_s=1.0,
        snr_db=(0.0, 5.0, 10.0, 15.0)))
    teacher: ModelConfig = field(default_factory=lambda: ModelConfig(
        depth=3, base_channels=24, role="teacher"))
    student: ModelConfig = field(default_factory=lambda: ModelConfig(
        depth=2, base_channels=6, role="student", ma_placement=(2,)))
    seeds: tuple = (0, 1, 2, 3, 4)
    teacher_seed: int = 100
    teacher_epochs: int = 40
    student_epochs: int = 30
    segment_len: int = 2048
    learning_rate: float = 5e-4
    lr_decay: float = 0.96
    val_every: int = 10
    lambda_at: float = 1.0
    lambda_kd: float = 1.0


def _train_config(cfg: DeskExperimentConfig, seed: int, epochs: int) -> TrainConfig:
    return TrainConfig(
        epochs=epochs, seed=seed, batch_size=4,
        learning_rate=cfg.learning_rate, lr_decay=cfg.lr_decay,
        segment_len=cfg.segment_len, val_every=cfg.val_every,
        recrop_each_epoch=False,
    )


def _distill_config(cfg: DeskExperimentConfig, variant: str) -> DistillConfig | None:
    if variant == "baseline":
        return None
    if variant == "mvat":
        return DistillConfig(lambda_at=cfg.lambda_at, lambda_kd=0.0)
    if variant == "mvat_kd":
        return DistillConfig(lambda_at=cfg.lambda_at, lambda_kd=cfg.lambda_kd)
    raise ValueError(f"unknown variant {variant!r}")


def at_term_epoch_means(result: TrainResult) -> list[float]:
    """Per-epoch mean of the summed attention-transfer term."""
    by_epoch: dict[int, list[float]] = {}
    for rec in result.step_records:
        total = rec["loss_at_channel"] + rec["loss_at_global"] + rec["loss_at_local"]
        by_epoch.setdefault(rec["epoch"], []).append(total)
    return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]


def is_strictly_decreasing(values) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def run_desk_experiment(cfg: DeskExperimentConfig | None = None, progress=None) -> dict:
    cfg = cfg or DeskExperimentConfig()
    say = progress or (lambda *_: None)
    started = time.time()

    train_set = realize_split(cfg.data, "train")
    val_set = realize_split(cfg.data, "val")
    test_set = realize_split(cfg.data, "test")

    say(f"training teacher ({cfg.teacher.depth} levels, {cfg.teacher.base_channels} channels, "
        f"{cfg.teacher_epochs} epochs)")
    teacher_result = train(cfg.teacher, _train_config(cfg, cfg.teacher_seed, cfg.teacher_epochs),
                           train_set, val_set)
    teacher_eval = evaluate(teacher_result.final_state, test_set)
    say(f"teacher test SI-SDR {teacher_eval.mean_enhanced_si_sdr:.2f} dB "
        f"(input {teacher_eval.mean_input_si_sdr:.2f} dB)")

    runs = []
    for seed in cfg.seeds:
        for variant in VARIANTS:
            tcfg = _train_config(cfg, seed, cfg.student_epochs)
            dcfg = _distill_config(cfg, variant)
            t0 = time.time()
            if dcfg is None:
                result = train(cfg.student, tcfg, train_set, val_set)
            else:
                result = distill(teacher_result.final_state, cfg.student, tcfg, dcfg,
                                 train_set, val_set)
            report = evaluate(result.final_state, test_set)
            run = {
                "seed": seed,
                "variant": variant,
                "test_si_sdr_input": report.mean_input_si_sdr,
                "test_si_sdr": report.mean_enhanced_si_sdr,
                "runtime_s": time.time() - t0,
            }
            if dcfg is not None:
                means = at_term_epoch_means(result)
                run["at_epoch_means"] = means
                run["at_monotone_decreasing"] = is_strictly_decreasing(means)
            runs.append(run)
            extra = ""
            if "at_monotone_decreasing" in run:
                extra = f"  at-term monotone: {run['at_monotone_decreasing']}"
            say(f"seed {seed} {variant:8s} test SI-SDR {run['test_si_sdr']:6.2f} dB "
                f"({run['runtime_s']:.0f}s){extra}")

    by_key = {(r["seed"], r["variant"]): r for r in runs}
    wins = sum(
        by_key[(s, "mvat")]["test_si_sdr"] >= by_key[(s, "baseline")]["test_si_sdr"]
        for s in cfg.seeds
    )
    monotone_all = all(r["at_monotone_decreasing"] for r in runs
                       if "at_monotone_decreasing" in r)
    summary = {
        "seeds": list(cfg.seeds),
        "mvat_wins_vs_baseline": int(wins),
        "at_term_monotone_in_all_runs": bool(monotone_all),
        "teacher_test_si_sdr": teacher_eval.mean_enhanced_si_sdr,
        "teacher_test_si_sdr_input": teacher_eval.mean_input_si_sdr,
        "total_runtime_s": time.time() - started,
    }
    say(f"mvat >= baseline in {wins}/{len(cfg.seeds)} seeds; "
        f"at-term monotone in all runs: {monotone_all}; "
        f"total {summary['total_runtime_s'] / 60:.1f} min")
    return {"summary": summary, "teacher": teacher_eval.summary(), "runs": runs}
