#!/usr/bin/env python3
"""Run the desk-scale distillation experiment and write a JSON summary.

Five seeds, three training variants per seed (supervised baseline,
+multi-view transfer, +transfer+output distillation), one shared teacher.
Expect roughly half an hour on a desktop CPU at the default sizes.
"""
import argparse
import json
import sys

from mvat.experiment import DeskExperimentConfig, run_desk_experiment


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="desk_experiment.json", help="result JSON path")
    parser.add_argument("--seeds", type=int, nargs="+", default=None,
                        help="student seeds (default 0..4)")
    parser.add_argument("--student-epochs", type=int, default=None)
    parser.add_argument("--teacher-epochs", type=int, default=None)
    args = parser.parse_args(argv)

    cfg = DeskExperimentConfig()
    if args.seeds is not None:
        cfg.seeds = tuple(args.seeds)
    if args.student_epochs is not None:
        cfg.student_epochs = args.student_epochs
    if args.teacher_epochs is not None:
        cfg.teacher_epochs = args.teacher_epochs

    result = run_desk_experiment(cfg, progress=print)
    with open(args.out, "w") as f:
        json.dump(result, f, indent=2)
    print(f"wrote {args.out}")

    summary = result["summary"]
    ok = summary["mvat_wins_vs_baseline"] >= 3 and summary["at_term_monotone_in_all_runs"]
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
