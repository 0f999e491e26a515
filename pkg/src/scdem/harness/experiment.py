"""End-to-end runs: backbone preparation, stream construction, training, ablations, report files."""
from __future__ import annotations

import copy
import csv
import json
import os
from dataclasses import dataclass, replace

import numpy as np

from ..backbones import pretrain_backbone
from ..engine import DIAGNOSTIC_FIELDS, TrainState, run_stream
from .checkpoint import load_checkpoint
from .data import build_class_incremental_stream, load_dataset, synth_gaussian_tasks

ABLATIONS = {
    "full": {},
    "no_com": {"lambda_com": 0.0},
    "no_ot": {"lambda_fused": 0.0, "lambda_fdc": 0.0, "regularizer_mode": "none"},
    "no_attention": {"use_attention": False},
}
BASELINE = {"none": {"lambda_com": 0.0, "lambda_fused": 0.0, "lambda_fdc": 0.0, "regularizer_mode": "none"}}


def prepare_backbones(cfg, seed=None):
    """Pretrain one backbone per synthetic source task, or load them from ``backbones.path``."""
    seed = cfg.seed if seed is None else seed
    bc = cfg.backbones
    if bc.path:
        return load_checkpoint(bc.path).backbones
    out = []
    for j in range(bc.count):
        src_seed = 7919 * (seed + 1) + 104729 * (j + 1)
        source, _ = synth_gaussian_tasks(bc.source_classes, cfg.data.d_x, bc.source_per_class,
                                         bc.source_separation, src_seed, name=f"source{j}")
        out.append(pretrain_backbone(bc.spec(cfg.data.d_x), source, seed=src_seed + 1,
                                     epochs=bc.pretrain_epochs, lr=bc.pretrain_lr, id=j))
    return out


def build_stream(cfg, seed=None):
    seed = cfg.seed if seed is None else seed
    dc = cfg.data
    if dc.csv_train:
        train = load_dataset(dc.csv_train, dc.d_x, dc.n_classes, split="train")
        test = load_dataset(dc.csv_test, dc.d_x, dc.n_classes, split="test")
    else:
        train, test = synth_gaussian_tasks(dc.n_classes, dc.d_x, dc.per_class, dc.separation,
                                           seed=1_000_003 * (seed + 1), noise=dc.noise)
    return build_class_incremental_stream(train, test, dc.n_steps)


@dataclass
class RunResult:
    seed: int
    state: TrainState
    reports: dict
    stream: object

    def to_dict(self, variant=None, config=None):
        d = {"seed": self.seed,
             "reports": {m: r.to_dict() for m, r in self.reports.items()},
             "pretrain": [bb.pretrain_info for bb in self.state.backbones]}
        if variant is not None:
            d["variant"] = variant
        if config is not None:
            d["config"] = config.to_dict()
        return d


def run_experiment(cfg, backbones=None, stream=None):
    seed = cfg.seed
    backbones = copy.deepcopy(backbones) if backbones is not None else prepare_backbones(cfg, seed)
    stream = stream if stream is not None else build_stream(cfg, seed)
    state = TrainState(backbones, seed=cfg.train.seed)
    state, reports = run_stream(state, stream, cfg.train, modes=tuple(cfg.eval_modes), routing=cfg.routing)
    return RunResult(seed, state, reports, stream)


def variant_config(cfg, overrides):
    out = copy.deepcopy(cfg)
    out.train = replace(out.train, **overrides)
    return out


def run_ablation(cfg, seeds, variants=None):
    """Run each variant on each seed, sharing backbones and streams per seed.

    Returns ``{variant: [RunResult per seed]}``.
    """
    variants = variants or ABLATIONS
    results = {name: [] for name in variants}
    for seed in seeds:
        base = cfg.with_seed(seed)
        backbones = prepare_backbones(base, seed)
        stream = build_stream(base, seed)
        for name, overrides in variants.items():
            results[name].append(run_experiment(variant_config(base, overrides), backbones, stream))
    return results


def summary(results, mode="task_il", key="average_macro"):
    return {name: {"per_seed": [r.reports[mode].to_dict()[key] for r in runs],
                   "mean": float(np.mean([r.reports[mode].to_dict()[key] for r in runs]))}
            for name, runs in results.items()}


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_diagnostics(state, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=DIAGNOSTIC_FIELDS)
        writer.writeheader()
        for row in state.diagnostics:
            writer.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in DIAGNOSTIC_FIELDS})


def write_report_csv(report, path):
    """One row per (after_task, task) cell of the accuracy matrix."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "after_task", "task", "accuracy"])
        for i, row in enumerate(report["accuracy_matrix"], start=1):
            for j, a in enumerate(row, start=1):
                if a is not None:
                    writer.writerow([report["mode"], i, j, repr(float(a))])


def accuracy_curve(report):
    """Mean accuracy over the tasks seen so far, after each task (``None`` for rows never evaluated)."""
    curve = []
    for row in report["accuracy_matrix"]:
        seen = [a for a in row if a is not None]
        curve.append(float(np.mean(seen)) if seen else None)
    return curve


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
