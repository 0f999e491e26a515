"""Per-task expert heads: an adapter over fused backbone features and a linear classifier."""
from __future__ import annotations

import numpy as np

from . import numerics as nx
from .backbones import Dense, param_hash
from .errors import ConfigurationError, DimensionError


class Expert:
    def __init__(self, task_id, adapter, classifier, class_set):
        self.task_id = task_id
        self.adapter = adapter
        self.classifier = classifier
        self.class_set = tuple(int(c) for c in class_set)
        self.frozen = False
        if classifier.d_out != len(self.class_set):
            raise DimensionError("classifier width must equal the number of owned classes")

    @property
    def input_dim(self):
        return self.adapter.d_in

    def params(self):
        return self.adapter.params() + self.classifier.params()

    def named_params(self):
        return [("adapter.W", self.adapter.W), ("adapter.b", self.adapter.b),
                ("classifier.W", self.classifier.W), ("classifier.b", self.classifier.b)]

    def param_count(self):
        return int(sum(p.data.size for p in self.params()))

    def digest(self):
        return param_hash(self.params())


class ExpertRegistry(list):
    """Experts in task order; task ids are unique."""

    def get(self, task_id):
        for e in self:
            if e.task_id == task_id:
                return e
        raise IndexError(f"no expert for task {task_id}")


def create_expert(registry, task_id, input_dim, d_e, class_set, seed, activation="gelu"):
    if not class_set:
        raise ConfigurationError("an expert must own at least one class")
    if any(e.task_id == task_id for e in registry):
        raise ConfigurationError(f"expert for task {task_id} already exists")
    rng = np.random.default_rng(seed)
    adapter = Dense.init(rng, input_dim, d_e, activation)
    classifier = Dense.init(rng, d_e, len(class_set), "identity")
    expert = Expert(task_id, adapter, classifier, class_set)
    registry.append(expert)
    return expert


def adapter_forward(e, zf):
    if zf.data.ndim != 2 or zf.shape[1] != e.input_dim:
        raise DimensionError(f"expert {e.task_id} expects width {e.input_dim}, got {zf.shape}")
    return e.adapter(zf)


def classify(e, zbar):
    if zbar.data.ndim != 2 or zbar.shape[1] != e.classifier.d_in:
        raise DimensionError(f"classifier of expert {e.task_id} expects width {e.classifier.d_in}, got {zbar.shape}")
    return e.classifier(zbar)


def expert_probs(e, zf, temperature=1.0):
    logits = classify(e, adapter_forward(e, zf))
    if temperature != 1.0:
        logits = nx.scale(logits, 1.0 / temperature)
    return nx.softmax(logits)


def predict(e, zf):
    """Global class labels; ``np.argmax`` breaks ties toward the lowest index."""
    logits = classify(e, adapter_forward(e, nx.as_tensor(zf)))
    local = np.argmax(logits.data, axis=1)
    return np.asarray(e.class_set, dtype=np.int64)[local]


def freeze(e):
    """Stop training this expert. Gradients still flow through it to its inputs."""
    e.frozen = True
    for p in e.params():
        p.requires_grad = False
