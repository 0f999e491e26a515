"""Multi-source feature extractors with a frozen trunk and a trainable tail."""
from __future__ import annotations

import copy
import hashlib
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import numerics as nx
from .errors import ConfigurationError, DimensionError
from .numerics import Tensor


def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Dense:
    """Affine map followed by an elementwise activation."""

    def __init__(self, W, b, act="gelu", trainable=True):
        self.W = Tensor(W, requires_grad=trainable)
        self.b = Tensor(b, requires_grad=trainable)
        self.act = act

    @classmethod
    def init(cls, rng, d_in, d_out, act="gelu", trainable=True):
        return cls(glorot_uniform(rng, d_in, d_out), np.zeros(d_out), act, trainable)

    @property
    def d_in(self):
        return self.W.shape[0]

    @property
    def d_out(self):
        return self.W.shape[1]

    @property
    def trainable(self):
        return self.W.requires_grad

    def set_trainable(self, flag):
        self.W.requires_grad = self.b.requires_grad = bool(flag)

    def __call__(self, x):
        return nx.activation(nx.affine(x, self.W, self.b), self.act)

    def params(self):
        return [self.W, self.b]


@dataclass
class BackboneSpec:
    d_x: int = 32
    trunk_widths: tuple = (64, 64)
    d_z: int = 32
    tail_layers: int = 3
    trunk_act: str = "gelu"
    tail_act: str = "tanh"

    def __post_init__(self):
        self.trunk_widths = tuple(int(w) for w in self.trunk_widths)
        if self.tail_layers < 1:
            raise ConfigurationError("a backbone needs at least one trainable tail layer")


class Backbone:
    def __init__(self, id, trunk, tail):
        if not tail:
            raise ConfigurationError("empty tail")
        self.id = id
        self.trunk = list(trunk)
        self.tail = list(tail)
        for layer in self.trunk:
            layer.set_trainable(False)
        self.pretrain_info = {}

    @classmethod
    def init(cls, spec, rng, id=0):
        trunk, d = [], spec.d_x
        for w in spec.trunk_widths:
            trunk.append(Dense.init(rng, d, w, spec.trunk_act, trainable=False))
            d = w
        tail = []
        for _ in range(spec.tail_layers):
            tail.append(Dense.init(rng, d, spec.d_z, spec.tail_act))
            d = spec.d_z
        return cls(id, trunk, tail)

    @property
    def L(self):
        return len(self.tail)

    @property
    def d_x(self):
        return (self.trunk or self.tail)[0].d_in

    @property
    def feature_dim(self):
        return self.tail[-1].d_out

    def trunk_forward(self, x):
        x = nx.as_tensor(x)
        if x.data.ndim != 2 or x.shape[1] != self.d_x:
            raise DimensionError(f"backbone {self.id} expects inputs of width {self.d_x}, got {x.shape}")
        for layer in self.trunk:
            x = layer(x)
        return x

    def tail_features(self, x):
        """Outputs of every tail layer, shallowest first."""
        h = self.trunk_forward(x)
        feats = []
        for layer in self.tail:
            h = layer(h)
            feats.append(h)
        return feats

    def tail_params(self):
        return [p for layer in self.tail for p in layer.params()]

    def trunk_params(self):
        return [p for layer in self.trunk for p in layer.params()]

    def named_params(self):
        out = [(f"trunk{i}.{n}", p) for i, layer in enumerate(self.trunk) for n, p in zip("Wb", layer.params())]
        out += [(f"tail{i}.{n}", p) for i, layer in enumerate(self.tail) for n, p in zip("Wb", layer.params())]
        return out


def forward(bb, x):
    return layer_features(bb, x, bb.L)


def layer_features(bb, x, k):
    """Trunk output passed through the first ``k`` tail layers (1-based)."""
    if not 1 <= k <= bb.L:
        raise IndexError(f"layer index {k} outside [1, {bb.L}]")
    h = bb.trunk_forward(x)
    for layer in bb.tail[:k]:
        h = layer(h)
    return h


@dataclass
class FeatureBundle:
    per_backbone: list
    combined: Tensor = field(repr=False)


def combined_features(backbones, x):
    if not backbones:
        raise ConfigurationError("no backbones")
    x = nx.as_tensor(x)
    d_x = {bb.d_x for bb in backbones}
    if len(d_x) != 1:
        raise ConfigurationError(f"backbones disagree on input width: {sorted(d_x)}")
    per = [forward(bb, x) for bb in backbones]
    return FeatureBundle(per, nx.concat(per))


class BackboneSnapshot(Backbone):
    """Deep, frozen copy of a backbone at one instant."""

    def __init__(self, source):
        trunk = [Dense(l.W.data.copy(), l.b.data.copy(), l.act, False) for l in source.trunk]
        tail = [Dense(l.W.data.copy(), l.b.data.copy(), l.act, False) for l in source.tail]
        super().__init__(source.id, trunk, tail)
        for layer in self.tail:
            layer.set_trainable(False)
        self.pretrain_info = copy.deepcopy(source.pretrain_info)

    @property
    def source_id(self):
        return self.id


def snapshot_all(backbones):
    return [BackboneSnapshot(bb) for bb in backbones]


def param_hash(tensors):
    h = hashlib.sha256()
    for t in tensors:
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()


def pretrain_backbone(spec, source, seed, epochs=30, batch_size=32, lr=3e-3,
                      target_accuracy=0.95, id=0):
    """Train a fresh backbone plus a throwaway linear head on ``source``.

    Training stops when accuracy on ``source`` reaches ``target_accuracy`` or
    after ``epochs`` epochs; the trunk is then frozen and the head discarded.
    The outcome lands in ``backbone.pretrain_info``.
    """
    x = np.asarray(source.inputs, dtype=np.float64)
    y = np.asarray(source.labels, dtype=np.int64)
    if len(y) == 0:
        raise ConfigurationError("pretraining source is empty")
    rng = np.random.default_rng(seed)
    bb = Backbone.init(replace(spec, d_x=x.shape[1]), rng, id)
    for layer in bb.trunk:
        layer.set_trainable(True)
    n_classes = int(y.max()) + 1
    head = Dense.init(rng, spec.d_z, n_classes, "identity")

    params = nx.ParamSet()
    for name, p in bb.named_params():
        params.add(name, p)
    params.add("head.W", head.W)
    params.add("head.b", head.b)
    opt = nx.AdamState(lr=lr)

    def accuracy():
        logits = head(forward(bb, Tensor(x)))
        return float((np.argmax(logits.data, axis=1) == y).mean())

    acc = accuracy() if epochs > 0 else float("nan")
    done = 0
    while done < epochs and acc < target_accuracy:
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            idx = order[start:start + batch_size]
            probs = nx.softmax(head(forward(bb, Tensor(x[idx]))))
            loss = nx.cross_entropy(probs, y[idx])
            nx.backward(loss, wrt=[p for _, p in params.trainable()])
            nx.adam_step(params, opt)
        done += 1
        acc = accuracy()

    for layer in bb.trunk:
        layer.set_trainable(False)
    bb.pretrain_info = {"source": getattr(source, "name", None), "epochs": done, "accuracy": acc}
    if epochs > 0 and acc < target_accuracy:
        msg = f"backbone {id} reached {acc:.3f} < {target_accuracy} on its source in {done} epochs"
        bb.pretrain_info["warning"] = msg
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return bb
