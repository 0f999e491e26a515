"""Task-by-task training loop: new expert, fresh selectors, three-part loss, snapshot and freeze."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .backbones import snapshot_all
from .errors import ConfigurationError
from .experts import ExpertRegistry, adapter_forward, classify, create_expert, freeze
from .regularizers import OTConfig, Selector, com_loss, fdc_from_features, fused_from_features

log = logging.getLogger(__name__)

REGULARIZER_MODES = ("fused", "fdc", "both", "none")
DIAGNOSTIC_FIELDS = ("step", "task", "L_cls", "L_COM", "L_Fused", "L_FDC", "total")


@dataclass
class TrainConfig:
    lambda_cls: float = 1.0
    lambda_com: float = 1.0
    lambda_fused: float = 1.0
    lambda_fdc: float = 0.0
    epochs_per_task: int = 20
    batch_size: int = 32
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    d_e: int = 64
    selector_hidden: int = 16
    use_attention: bool = True
    regularizer_mode: str = "fused"
    ot: OTConfig = field(default_factory=OTConfig)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.ot, dict):
            self.ot = OTConfig(**self.ot)
        for name in ("lambda_cls", "lambda_com", "lambda_fused", "lambda_fdc"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.epochs_per_task < 0:
            raise ConfigurationError("epochs_per_task must be >= 0")
        if self.regularizer_mode not in REGULARIZER_MODES:
            raise ConfigurationError(f"regularizer_mode must be one of {REGULARIZER_MODES}")
        if self.regularizer_mode in ("fdc", "none") and self.lambda_fused > 0:
            raise ConfigurationError(f"lambda_fused > 0 conflicts with regularizer_mode={self.regularizer_mode!r}")
        if self.regularizer_mode in ("fused", "none") and self.lambda_fdc > 0:
            raise ConfigurationError(f"lambda_fdc > 0 conflicts with regularizer_mode={self.regularizer_mode!r}")

    @property
    def uses_selectors(self):
        return self.use_attention and self.lambda_fused > 0


class TrainState:
    def __init__(self, backbones, seed=0):
        if not backbones:
            raise ConfigurationError("at least one backbone is required")
        self.backbones = list(backbones)
        self.snapshots = None
        self.experts = ExpertRegistry()
        self.selectors = None
        self.optimizer = None
        self.t = 0
        self.step = 0
        self.rng = np.random.default_rng(seed)
        self.diagnostics = []

    @property
    def feature_dim(self):
        return sum(bb.feature_dim for bb in self.backbones)


def _features(backbones, x):
    feats = [bb.tail_features(x) for bb in backbones]
    return feats, nx.concat([f[-1] for f in feats])


def total_loss(state, x, y, cfg):
    """Weighted objective on one minibatch and its float breakdown.

    ``y`` holds global labels owned by the newest expert.
    """
    x = nx.as_tensor(x)
    expert = state.experts[-1]
    local = {c: i for i, c in enumerate(expert.class_set)}
    y_local = np.array([local[int(c)] for c in np.asarray(y).reshape(-1)], dtype=np.int64)

    live_feats, zf = _features(state.backbones, x)
    probs = nx.softmax(classify(expert, adapter_forward(expert, zf)))
    l_cls = nx.cross_entropy(probs, y_local)
    total = nx.scale(l_cls, cfg.lambda_cls)
    parts = {"L_cls": l_cls.item(), "L_COM": 0.0, "L_Fused": 0.0, "L_FDC": 0.0}

    if len(state.experts) > 1:
        snap_feats, zf_hat = _features(state.snapshots, x)
        if cfg.lambda_com > 0:
            l_com = com_loss(state.experts[:-1], zf, zf_hat)
            parts["L_COM"] = l_com.item()
            total = total + nx.scale(l_com, cfg.lambda_com)
        if cfg.lambda_fused > 0:
            sel = state.selectors if cfg.use_attention else None
            l_fused = fused_from_features(live_feats, snap_feats, sel, cfg.ot)
            parts["L_Fused"] = l_fused.item()
            total = total + nx.scale(l_fused, cfg.lambda_fused)
        if cfg.lambda_fdc > 0:
            l_fdc = fdc_from_features(live_feats, snap_feats, cfg.ot)
            parts["L_FDC"] = l_fdc.item()
            total = total + nx.scale(l_fdc, cfg.lambda_fdc)
    parts["total"] = total.item()
    return total, parts


def trainable_params(state):
    """The parameters updated during the current task, by name."""
    params = nx.ParamSet()
    e = state.experts[-1]
    for name, p in e.named_params():
        params.add(f"expert{e.task_id}.{name}", p, trainable=True)
    for bb in state.backbones:
        for i, layer in enumerate(bb.tail):
            params.add(f"backbone{bb.id}.tail{i}.W", layer.W)
            params.add(f"backbone{bb.id}.tail{i}.b", layer.b)
    for sel in state.selectors or ():
        for name, p in sel.named_params():
            params.add(f"selector{sel.backbone_id}.{name}", p)
    return params


def train_task(state, task, cfg):
    """Train one task from its own data only, then snapshot backbones and freeze the expert."""
    x_all = np.asarray(task.train.inputs, dtype=np.float64)
    y_all = np.asarray(task.train.labels, dtype=np.int64)
    if len(y_all) == 0:
        raise ConfigurationError("task has no training samples")

    t = state.t + 1
    expert_seed = int(state.rng.integers(2**31))
    create_expert(state.experts, t, state.feature_dim, cfg.d_e, task.class_set, expert_seed)
    state.selectors = None
    if t > 1 and cfg.uses_selectors:
        state.selectors = [Selector.init(bb.id, bb.feature_dim, state.rng, cfg.selector_hidden)
                           for bb in state.backbones]

    params = trainable_params(state)
    wrt = [p for _, p in params.trainable()]
    state.optimizer = nx.AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)

    n = len(y_all)
    for epoch in range(cfg.epochs_per_task):
        order = state.rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, parts = total_loss(state, x_all[idx], y_all[idx], cfg)
            if not np.isfinite(parts["total"]):
                raise FloatingPointError(f"non-finite loss at task {t}, step {state.step}")
            nx.backward(loss, wrt=wrt)
            nx.adam_step(params, state.optimizer)
            state.step += 1
            state.diagnostics.append({"step": state.step, "task": t, **parts})
        log.debug("task %d epoch %d loss %.4f", t, epoch, parts["total"])

    state.snapshots = snapshot_all(state.backbones)
    freeze(state.experts[-1])
    state.t = t
    return state


def prior_expert_drift(state, x):
    """Max over frozen earlier experts of batch-mean KL(live || snapshot) predictions."""
    if state.snapshots is None or len(state.experts) < 2:
        return 0.0
    x = nx.as_tensor(x)
    _, zf = _features(state.backbones, x)
    _, zf_hat = _features(state.snapshots, x)
    experts = [e for e in state.experts if e.frozen]
    return max((com_loss([e], zf, zf_hat).item() for e in experts), default=0.0)


def run_stream(state, stream, cfg, modes=("task_il",), routing=None, on_task_end=None):
    """Train every task in order, evaluating after each one.

    Returns ``(state, {mode: MetricsReport})``.
    """
    from .harness.metrics import evaluate_row, MetricsReport

    if not stream.tasks:
        raise ConfigurationError("empty task stream")
    rows = {m: [] for m in modes}
    for task in stream.tasks:
        train_task(state, task, cfg)
        for m in modes:
            rows[m].append(evaluate_row(state, stream, m, routing))
        if on_task_end is not None:
            on_task_end(state)
    return state, {m: MetricsReport.from_rows(m, rows[m]) for m in modes}
