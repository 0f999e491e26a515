"""Prediction with a known task id, and task-free routing to the most confident expert."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .backbones import combined_features
from .errors import ConfigurationError
from .experts import adapter_forward, classify, predict
from .numerics import PROB_FLOOR


@dataclass
class RoutingConfig:
    gamma: float = 1.0
    temperature: float = 1.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigurationError("gamma must be nonnegative")
        if not self.temperature > 0:
            raise ConfigurationError("temperature must be positive")


def _zf(state, x):
    return combined_features(state.backbones, nx.as_tensor(np.atleast_2d(x))).combined


def task_il_predict(state, x, task_id):
    expert = state.experts.get(task_id)
    return predict(expert, _zf(state, x))


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _entropy(p):
    return -(p * np.log(np.maximum(p, PROB_FLOOR))).sum(-1)


def _kl(p, q):
    return (p * (np.log(np.maximum(p, PROB_FLOOR)) - np.log(np.maximum(q, PROB_FLOOR)))).sum(-1)


def confidence_scores(dists, class_sets, cfg=None):
    """Score matrix (b, n_experts) from per-expert predictive distributions.

    Each distribution is embedded in the union label space with zeros outside
    its own classes; the mean of the embeddings, restricted back to expert
    ``i``'s classes and renormalized, is the reference for the KL term.
    Score is ``-H(p_i) + gamma * KL(p_i || reference_i)``.
    """
    cfg = cfg or RoutingConfig()
    labels = sorted({c for cs in class_sets for c in cs})
    col = {c: k for k, c in enumerate(labels)}
    b = dists[0].shape[0]
    union = np.zeros((b, len(labels)))
    for p, cs in zip(dists, class_sets):
        union[:, [col[c] for c in cs]] += p
    union /= len(dists)
    scores = np.empty((b, len(dists)))
    for i, (p, cs) in enumerate(zip(dists, class_sets)):
        ref = np.maximum(union[:, [col[c] for c in cs]], PROB_FLOOR)
        ref /= ref.sum(axis=1, keepdims=True)
        scores[:, i] = -_entropy(p) + cfg.gamma * _kl(p, ref)
    return scores


def expert_distributions(state, x, cfg=None):
    cfg = cfg or RoutingConfig()
    zf = _zf(state, x)
    return [_softmax(classify(e, adapter_forward(e, zf)).data / cfg.temperature) for e in state.experts]


def routing_scores(state, x, cfg=None):
    return confidence_scores(expert_distributions(state, x, cfg), [e.class_set for e in state.experts], cfg)


def expert_confidence(state, x, i, cfg=None):
    """Confidence of the expert for task ``i`` on each row of ``x``."""
    pos = [e.task_id for e in state.experts].index(i)
    return routing_scores(state, x, cfg)[:, pos]


def route(state, x, cfg=None):
    """Task id of the highest-scoring expert per row (earliest expert on ties)."""
    if not state.experts:
        raise ConfigurationError("no experts to route to")
    ids = np.array([e.task_id for e in state.experts])
    return ids[np.argmax(routing_scores(state, x, cfg), axis=1)]


def class_il_predict(state, x, cfg=None):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return predict_routed(state, x, route(state, x, cfg))


def predict_routed(state, x, chosen):
    """Predict each row with the expert already chosen for it."""
    out = np.empty(len(x), dtype=np.int64)
    for tid in np.unique(chosen):
        rows = chosen == tid
        out[rows] = task_il_predict(state, x[rows], int(tid))
    return out
