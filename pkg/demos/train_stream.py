"""Train a short class-incremental stream and print the accuracy matrix."""
import argparse

from scdem.harness.config import default_config
from scdem.harness.experiment import run_experiment, variant_config


def show(report):
    for t, row in enumerate(report.accuracy_matrix, start=1):
        cells = " ".join("  -  " if v is None else f"{v:.3f}" for v in row)
        print(f"  after task {t}: {cells}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=None, help="override epochs per task")
    args = ap.parse_args()

    cfg = default_config().with_seed(args.seed)
    if args.epochs is not None:
        cfg = variant_config(cfg, {"epochs_per_task": args.epochs})
    result = run_experiment(cfg)
    for mode, report in result.reports.items():
        print(f"{mode}: macro average {report.average_macro:.4f}")
        show(report)
    print(f"class-IL routing accuracy {result.reports['class_il'].routing_accuracy:.4f}")
    last = result.state.diagnostics[-1]
    print("last step losses: " + ", ".join(f"{k}={v:.4f}" for k, v in last.items() if k.startswith("L_")))


if __name__ == "__main__":
    main()
