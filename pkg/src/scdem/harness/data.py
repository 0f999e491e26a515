"""Datasets, synthetic Gaussian tasks, and task-stream construction."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, ParseError, ValidationError


@dataclass
class Dataset:
    name: str
    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2:
            self.inputs = self.inputs.reshape(len(self.labels), -1)
        self.labels = np.asarray(self.labels, dtype=np.int64)

    def __len__(self):
        return len(self.labels)

    @property
    def d_x(self):
        return self.inputs.shape[1]

    def subset(self, mask, name=None):
        return Dataset(name or self.name, self.inputs[mask], self.labels[mask], self.split)


@dataclass
class Task:
    train: Dataset
    test: Dataset
    class_set: tuple
    domain: str = ""


@dataclass
class TaskStream:
    tasks: list
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.tasks)


def load_dataset(path, d_x, n_classes=None, name=None, split="train"):
    """Read header-free ``label,v1,...,v_dx`` rows."""
    labels, rows = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != d_x + 1:
                raise ParseError(f"expected {d_x + 1} fields, found {len(row)}", line=lineno)
            try:
                label = int(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if label < 0 or (n_classes is not None and label >= n_classes):
                raise ValidationError(f"line {lineno}: label {label} outside [0, {n_classes})")
            labels.append(label)
            rows.append(values)
    inputs = np.array(rows, dtype=np.float64).reshape(len(rows), d_x)
    return Dataset(name or str(path), inputs, np.array(labels, dtype=np.int64), split)


def save_dataset(ds, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for label, row in zip(ds.labels, ds.inputs):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def class_means(n_classes, d_x, separation, rng):
    """Random means rescaled so the closest pair sits exactly ``separation`` apart."""
    means = rng.normal(size=(n_classes, d_x))
    diff = means[:, None, :] - means[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    closest = dist[~np.eye(n_classes, dtype=bool)].min()
    return means * (separation / closest)


def synth_gaussian_tasks(n_classes, d_x, per_class, separation, seed, noise=1.0, train_fraction=0.8, name="gauss"):
    """Isotropic Gaussian blobs, split per class into train and test.

    Returns ``(train, test)``.
    """
    if n_classes < 2:
        raise ConfigurationError("need at least two classes")
    rng = np.random.default_rng(seed)
    means = class_means(n_classes, d_x, separation, rng)
    n_train = int(round(train_fraction * per_class))
    xs, ys, is_train = [], [], []
    for c in range(n_classes):
        xs.append(means[c] + noise * rng.normal(size=(per_class, d_x)))
        ys.append(np.full(per_class, c))
        flags = np.zeros(per_class, dtype=bool)
        flags[rng.permutation(per_class)[:n_train]] = True
        is_train.append(flags)
    x, y, m = np.concatenate(xs), np.concatenate(ys), np.concatenate(is_train)
    return Dataset(name, x[m], y[m], "train"), Dataset(name, x[~m], y[~m], "test")


def build_class_incremental_stream(train, test, n_steps, domain=""):
    classes = sorted(set(train.labels.tolist()) | set(test.labels.tolist()))
    if n_steps < 1 or len(classes) % n_steps:
        raise ConfigurationError(f"{len(classes)} classes cannot be split into {n_steps} equal steps")
    per = len(classes) // n_steps
    tasks = []
    for s in range(n_steps):
        cs = tuple(classes[s * per:(s + 1) * per])
        tasks.append(Task(train.subset(np.isin(train.labels, cs), f"{train.name}/t{s + 1}"),
                          test.subset(np.isin(test.labels, cs), f"{test.name}/t{s + 1}"),
                          cs, domain))
    return TaskStream(tasks, {"kind": "class_incremental", "class_sets": [list(t.class_set) for t in tasks]})


def _offset(ds, k):
    return Dataset(ds.name, ds.inputs, ds.labels + k, ds.split)


def build_multi_domain_stream(domains, steps_per_domain):
    """Concatenate per-domain class-incremental streams, shifting labels into one union space.

    ``domains`` is an ordered list of ``(train, test)`` pairs.
    """
    if isinstance(steps_per_domain, int):
        steps_per_domain = [steps_per_domain] * len(domains)
    tasks, order, offset = [], [], 0
    for (train, test), steps in zip(domains, steps_per_domain):
        n = int(max(train.labels.max(), test.labels.max())) + 1
        sub = build_class_incremental_stream(_offset(train, offset), _offset(test, offset), steps, domain=train.name)
        tasks.extend(sub.tasks)
        order.append(train.name)
        offset += n
    return TaskStream(tasks, {"kind": "multi_domain", "order": order,
                              "class_sets": [list(t.class_set) for t in tasks]})
