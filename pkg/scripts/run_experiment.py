#!/usr/bin/env python3
"""Full surrogate experiment on the rectifier circuit.

Generates the train/validation/test datasets once, trains one network per
(transfer, method) combination, and writes two summary tables: training
outcomes (epochs, stop reason, final MSEs) and error statistics (mean and
standard deviation of the per-sample relative errors).

The default setup is the reference experiment: 500 samples per set, m = 200
grid points, hidden layers 400/400, hard-limit and purely linear transfers,
all three training methods.  --quick shrinks everything for a smoke run.
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from trajsurrogate import (
    Normalizer,
    RngSeed,
    SampleSet,
    TimeGrid,
    ToleranceSettings,
    TrainConfig,
    TransferKind,
    circuit_system,
    default_domain,
    error_stats,
    format_error_table,
    forward,
    generate_targets,
    init_weights,
    sample_parameters,
    save_dataset,
    save_model,
    train,
    write_training_log,
)
from trajsurrogate.evaluation import total_variation


def build_datasets(args, spec, grid, out: Path):
    domain = default_domain()
    seed = RngSeed(args.seed_data, "sampling")
    counts = {"train": args.k, "validation": args.k, "test": args.k}
    params = sample_parameters(domain, sum(counts.values()), seed)
    tol = ToleranceSettings()
    sets = {}
    row = 0
    for role, k in counts.items():
        t0 = time.perf_counter()
        targets = generate_targets(spec, params[row : row + k], grid, tol)
        print(f"generated {role} ({k} solves) in {time.perf_counter() - t0:.1f} s")
        sets[role] = SampleSet(role, params[row : row + k], targets, grid, seed)
        save_dataset(sets[role], out / f"{role}.ds")
        row += k
    return sets


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/experiment", help="output directory")
    parser.add_argument("--k", type=int, default=500, help="samples per set")
    parser.add_argument("--m", type=int, default=200, help="grid points")
    parser.add_argument("--hidden", default="400,400", help="hidden layer widths")
    parser.add_argument("--methods", default="cg,oss,gdx")
    parser.add_argument("--transfers", default="hardlim,purelin")
    parser.add_argument("--max-epochs", type=int, default=10000)
    parser.add_argument("--seed-data", type=int, default=20250819)
    parser.add_argument("--seed-weights", type=int, default=20250819)
    parser.add_argument("--quick", action="store_true", help="tiny smoke-run sizes")
    args = parser.parse_args()

    if args.quick:
        args.k, args.m, args.hidden, args.max_epochs = 30, 50, "32,32", 200

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = circuit_system()
    grid = TimeGrid.for_system(spec, m=args.m)
    hidden = [int(h) for h in args.hidden.split(",")]

    sets = build_datasets(args, spec, grid, out)
    norm = Normalizer.from_training(sets["train"].params, sets["train"].targets)

    outcome_rows = []
    error_reports = {}
    tv_means = {}
    for transfer in args.transfers.split(","):
        kind = TransferKind(transfer)
        for method in args.methods.split(","):
            label = f"{method}/{transfer}"
            sizes = [sets["train"].q] + hidden + [grid.m]
            net = init_weights(sizes, kind, RngSeed(args.seed_weights, "weights"))
            cfg = TrainConfig(method=method, max_epochs=args.max_epochs)
            t0 = time.perf_counter()
            model, record = train(net, norm, sets["train"], sets["validation"], sets["test"], cfg)
            elapsed = time.perf_counter() - t0

            run_dir = out / f"{transfer}-{method}"
            run_dir.mkdir(exist_ok=True)
            finals = {}
            reports = {}
            for role, s in sets.items():
                report = error_stats(model, norm, s)
                reports[role] = report
                finals[role] = report.mse
            save_model(model, norm, run_dir / "model.tjn", {
                "method": method, "transfer": transfer,
                "stop_reason": record.stop_reason.value,
                "best_epoch": record.best_epoch,
                "elapsed_epochs": record.elapsed_epochs,
                "final_mse": finals,
            })
            write_training_log(record, run_dir / "training_log.csv")
            error_reports[label] = reports
            preds = forward(model, norm, sets["test"].params)
            tv_means[label] = float(np.mean([total_variation(p) for p in preds]))
            outcome_rows.append((
                method, transfer, record.elapsed_epochs, record.stop_reason.value,
                finals["train"], finals["test"], elapsed,
            ))
            print(f"{label}: {record.elapsed_epochs} epochs, stop {record.stop_reason.value}, "
                  f"train MSE {finals['train']:.1f}, test MSE {finals['test']:.1f} "
                  f"({elapsed:.0f} s)")

    lines = [
        f"{'method':<8}{'transfer':<10}{'epochs':>8}{'stop':>16}{'mse_train':>12}{'mse_test':>12}{'seconds':>9}"
    ]
    for row in outcome_rows:
        lines.append(f"{row[0]:<8}{row[1]:<10}{row[2]:>8}{row[3]:>16}{row[4]:>12.1f}{row[5]:>12.1f}{row[6]:>9.0f}")
    training_table = "\n".join(lines) + "\n"
    (out / "summary_training.txt").write_text(training_table)

    error_table = format_error_table(error_reports)
    tv_lines = "\n".join(f"{label}: mean total variation {tv:.1f}" for label, tv in tv_means.items())
    (out / "summary_errors.txt").write_text(error_table + "\n" + tv_lines + "\n")

    print("\n" + training_table)
    print(error_table)
    print(tv_lines)
    with open(out / "experiment.json", "w") as fh:
        json.dump({"args": vars(args)}, fh, indent=2)


if __name__ == "__main__":
    main()
