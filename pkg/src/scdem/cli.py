"""Command line entry point: ``scdem {pretrain,run,eval,ablate,report}``.

Every subcommand reads a JSON config (see ``scdem.harness.config``) and
writes deterministic JSON/CSV files into ``--out``.  Identical config and seed
give byte-identical report files.
"""
from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys

from .engine import TrainState
from .errors import CheckpointError, ConfigurationError, ParseError, ValidationError
from .harness.checkpoint import load_checkpoint, save_checkpoint
from .harness.config import default_config, load_config
from .harness.experiment import (ABLATIONS, BASELINE, accuracy_curve, build_stream, ensure_dir, prepare_backbones,
                                 run_ablation, run_experiment, summary, write_diagnostics, write_json,
                                 write_report_csv)
from .harness.metrics import evaluate

log = logging.getLogger("scdem")


def _config(args):
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def cmd_pretrain(args):
    cfg = _config(args)
    backbones = prepare_backbones(cfg)
    out = ensure_dir(args.out)
    path = os.path.join(out, "backbones.ckpt")
    save_checkpoint(TrainState(backbones), path, extra={"config": cfg.to_dict()})
    write_json([bb.pretrain_info for bb in backbones], os.path.join(out, "pretrain.json"))
    for bb in backbones:
        print(f"backbone {bb.id}: source accuracy {bb.pretrain_info['accuracy']:.4f} "
              f"after {bb.pretrain_info['epochs']} epochs")
    print(f"wrote {path}")
    return 0


def _write_run(result, cfg, out, name="run"):
    for mode, report in result.reports.items():
        d = report.to_dict()
        write_json(d, os.path.join(out, f"{name}_{mode}.json"))
        write_report_csv(d, os.path.join(out, f"{name}_{mode}.csv"))
    write_diagnostics(result.state, os.path.join(out, f"{name}_diagnostics.csv"))
    write_json(result.to_dict(config=cfg), os.path.join(out, f"{name}.json"))


def cmd_run(args):
    cfg = _config(args)
    out = ensure_dir(args.out)
    result = run_experiment(cfg)
    _write_run(result, cfg, out)
    save_checkpoint(result.state, os.path.join(out, "state.ckpt"), extra={"config": cfg.to_dict()})
    for mode, report in result.reports.items():
        line = f"{mode}: average_macro={report.average_macro:.4f} last={report.last:.4f}"
        if report.routing_accuracy is not None:
            line += f" routing={report.routing_accuracy:.4f}"
        print(line)
    return 0


def cmd_eval(args):
    cfg = _config(args)
    state = load_checkpoint(args.checkpoint)
    if not state.experts:
        raise ConfigurationError(f"{args.checkpoint} holds no trained experts")
    stream = build_stream(cfg)
    out = ensure_dir(args.out)
    for mode in args.modes or cfg.eval_modes:
        report = evaluate(state, stream, mode, cfg.routing)
        write_json(report.to_dict(), os.path.join(out, f"eval_{mode}.json"))
        print(f"{mode}: average_macro={report.average_macro:.4f} average_micro={report.average_micro:.4f}")
    return 0


def cmd_ablate(args):
    cfg = _config(args)
    variants = dict(ABLATIONS)
    if args.baseline:
        variants.update(BASELINE)
    out = ensure_dir(args.out)
    results = run_ablation(cfg, args.seeds, variants)
    for name, runs in results.items():
        for r in runs:
            _write_run(r, cfg, out, name=f"{name}_seed{r.seed}")
    table = {"seeds": list(args.seeds), "task_il": summary(results, "task_il")}
    if "class_il" in cfg.eval_modes:
        table["class_il"] = summary(results, "class_il")
    write_json(table, os.path.join(out, "ablation_summary.json"))
    for name, row in table["task_il"].items():
        print(f"{name:>13}: task-IL average {row['mean']:.4f}  per seed {row['per_seed']}")
    return 0


def cmd_report(args):
    files = sorted(glob.glob(os.path.join(args.input, "*_task_il.json")) +
                   glob.glob(os.path.join(args.input, "*_class_il.json")) +
                   glob.glob(os.path.join(args.input, "eval_*.json")))
    if not files:
        raise ConfigurationError(f"no report files found in {args.input}")
    out = ensure_dir(args.out or args.input)
    curves = {}
    rows = []
    for path in files:
        with open(path) as fh:
            rep = json.load(fh)
        key = os.path.splitext(os.path.basename(path))[0]
        curves[key] = accuracy_curve(rep)
        rows.append([key, rep["mode"], repr(rep["average_macro"]), repr(rep["average_micro"]), repr(rep["last"]),
                     "" if rep.get("routing_accuracy") is None else repr(rep["routing_accuracy"])])
    write_json(curves, os.path.join(out, "curves.json"))
    with open(os.path.join(out, "summary.csv"), "w") as fh:
        fh.write("report,mode,average_macro,average_micro,last,routing_accuracy\n")
        for r in rows:
            fh.write(",".join(r) + "\n")
    print(f"{len(files)} reports -> {os.path.join(out, 'summary.csv')}, curves.json")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="scdem", description="Continual learning with dynamically added experts.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", help="JSON config file (defaults are used when omitted)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", default=out_default, help=f"output directory (default {out_default})")

    sp = sub.add_parser("pretrain", help="pretrain and store stand-in backbones")
    common(sp, "out/pretrain")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("run", help="train a full task stream and write reports")
    common(sp, "out/run")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("eval", help="evaluate a saved checkpoint on the configured stream")
    common(sp, "out/eval")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--modes", nargs="+", choices=["task_il", "class_il"])
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="full / no-COM / no-OT / no-attention on shared seeds")
    common(sp, "out/ablate")
    sp.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    sp.add_argument("--baseline", action="store_true", help="also run with every regularizer off")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("report", help="collect report JSON files into CSV and plot-ready curves")
    sp.add_argument("--input", required=True, help="directory written by run/ablate/eval")
    sp.add_argument("--out", help="output directory (default: the input directory)")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, CheckpointError, ParseError, ValidationError, FileNotFoundError) as exc:
        print(f"scdem {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
