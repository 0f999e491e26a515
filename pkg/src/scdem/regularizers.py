"""Anti-forgetting penalties: expert-output distillation and optimal-transport feature alignment.

The transport distance is entropic Sinkhorn between uniform empirical
measures with squared Euclidean cost.  The cost matrix is divided by its
maximum before scaling so ``epsilon`` is unit-free; the reported value is the
transport cost ``<P, C>`` in the original units.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import numerics as nx
from .backbones import Dense
from .errors import ConfigurationError, ContractError, DimensionError
from .experts import adapter_forward, classify
from .numerics import Tensor


@dataclass
class OTConfig:
    epsilon: float = 0.05
    max_iters: int = 200
    tol: float = 1e-6
    # "implicit" differentiates through the converged plan; "envelope" holds it fixed.
    gradient: str = "implicit"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if self.gradient not in ("implicit", "envelope"):
            raise ConfigurationError(f"unknown OT gradient mode {self.gradient!r}")


def sq_euclidean(X, Y):
    C = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * X @ Y.T
    return np.maximum(C, 0.0)


def _lse(a, axis):
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def sinkhorn_plan(C, eps, max_iters, tol, check_every=5):
    """Sinkhorn for uniform marginals on cost ``C``.

    Multiplicative scaling when ``exp(-max C / eps)`` is representable,
    log-domain updates with epsilon annealing otherwise.  Returns ``(plan, iterations, marginal_violation)``.
    """
    b1, b2 = C.shape
    a = np.full(b1, 1.0 / b1)
    bw = np.full(b2, 1.0 / b2)
    err = np.inf
    it = 0
    if C.max() / eps < 200.0:
        K = np.exp(-C / eps)
        u, v = np.ones(b1), np.ones(b2)
        while it < max_iters:
            it += 1
            u = a / (K @ v)
            v = bw / (K.T @ u)
            if it % check_every == 0 or it == max_iters:
                # columns are exact after the v-update; rows carry the violation
                err = np.abs(u * (K @ v) - a).sum()
                if err < tol:
                    break
        return u[:, None] * K * v[None, :], it, err

    # log-domain with epsilon scaling: anneal from a coarse epsilon, warm-starting the potentials
    log_a, log_b = np.log(a), np.log(bw)
    f, g = np.zeros(b1), np.zeros(b2)
    stages = []
    e = C.max() / 10.0
    while e > eps:
        stages.append(e)
        e /= 4.0
    stages.append(eps)
    for e in stages:
        Ce = C / e
        final = e == eps
        while it < max_iters:
            it += 1
            f = e * (log_a - _lse(g[None, :] / e - Ce, axis=1))
            g = e * (log_b - _lse(f[:, None] / e - Ce, axis=0))
            if it % check_every == 0 or it == max_iters:
                logP = (f[:, None] + g[None, :]) / e - Ce
                err = np.abs(np.exp(_lse(logP, axis=1)) - a).sum()
                if err < (tol if final else max(tol, 1e-3)):
                    break
        if it >= max_iters:
            if not final:
                # out of budget mid-schedule: one update at the target epsilon keeps the marginals sane
                Ce = C / eps
                f = eps * (log_a - _lse(g[None, :] / eps - Ce, axis=1))
                g = eps * (log_b - _lse(f[:, None] / eps - Ce, axis=0))
                err = np.abs(np.exp(_lse((f[:, None] + g[None, :]) / eps - Ce, axis=1)) - a).sum()
            break
    return np.exp((f[:, None] + g[None, :]) / eps - C / eps), it, err


def _implicit_cost_grad(P, Cn, eps):
    """d<P*(Cn), Cn>/dCn at the entropic optimum, by implicit differentiation of the marginal constraints."""
    b1, b2 = P.shape
    PC = P * Cn
    H = np.zeros((b1 + b2, b1 + b2))
    H[np.arange(b1), np.arange(b1)] = P.sum(1)
    H[b1 + np.arange(b2), b1 + np.arange(b2)] = P.sum(0)
    H[:b1, b1:] = P
    H[b1:, :b1] = P.T
    w = np.concatenate([PC.sum(1), PC.sum(0)]) / eps
    sol = np.linalg.lstsq(H, w, rcond=None)[0]
    lam, mu = sol[:b1], sol[b1:]
    return P * (1.0 + lam[:, None] + mu[None, :] - Cn / eps)


def sinkhorn_distance(X, Y, cfg=None, diagnostics=None):
    """Entropic OT cost between the rows of ``X`` and ``Y`` (uniform weights).

    If ``diagnostics`` is a list, a dict with iteration count, marginal
    violation and convergence flag is appended to it.
    """
    cfg = cfg or OTConfig()
    X, Y = nx.as_tensor(X), nx.as_tensor(Y)
    if X.data.ndim != 2 or Y.data.ndim != 2 or X.shape[1] != Y.shape[1]:
        raise DimensionError(f"point sets must share a feature width: {X.shape} vs {Y.shape}")
    if X.shape[0] < 1 or Y.shape[0] < 1:
        raise DimensionError("empty point set")
    xd, yd = X.data, Y.data
    C = sq_euclidean(xd, yd)
    k = np.unravel_index(np.argmax(C), C.shape)
    m = C[k] if C[k] > 0 else 1.0
    Cn = C / m
    # solve in a canonical orientation so that swapping X and Y runs the same iteration
    flip = xd.shape[0] > yd.shape[0] or (xd.shape[0] == yd.shape[0] and xd.tobytes() > yd.tobytes())
    if flip:
        P, iters, err = sinkhorn_plan(Cn.T, cfg.epsilon, cfg.max_iters, cfg.tol)
        P = P.T
    else:
        P, iters, err = sinkhorn_plan(Cn, cfg.epsilon, cfg.max_iters, cfg.tol)
    value = float((P * C).sum())
    if diagnostics is not None:
        diagnostics.append({"iterations": iters, "marginal_violation": float(err), "converged": err < cfg.tol})

    def backward(g):
        if cfg.gradient == "envelope":
            G = P
        else:
            G0 = _implicit_cost_grad(P, Cn, cfg.epsilon)
            G = G0.copy()
            if C[k] > 0:
                G[k] += value / m - (G0 * Cn).sum()
        G = G * float(g)
        dX = 2.0 * (G.sum(1)[:, None] * xd - G @ yd)
        dY = 2.0 * (G.sum(0)[:, None] * yd - G.T @ xd)
        return dX, dY

    return Tensor._node(np.asarray(value), (X, Y), backward)


def exact_ot(X, Y):
    """Optimal assignment cost / b for equal-size point sets (squared Euclidean)."""
    X, Y = np.asarray(getattr(X, "data", X)), np.asarray(getattr(Y, "data", Y))
    if X.shape[0] != Y.shape[0]:
        raise ContractError("exact_ot needs equally sized point sets")
    b = X.shape[0]
    if not 1 <= b <= 16:
        raise ContractError(f"exact_ot supports 1..16 points, got {b}")
    C = sq_euclidean(X, Y)
    rows, cols = linear_sum_assignment(C)
    return float(C[rows, cols].sum() / b)


def _kl_rows(p, q):
    return nx.mean(nx.kl_divergence(p, q))


def com_loss(experts, zf_live, zf_frozen):
    """Sum over earlier experts of batch-mean KL(live prediction || frozen-backbone prediction)."""
    total = Tensor(0.0)
    for e in experts:
        p = nx.softmax(classify(e, adapter_forward(e, zf_live)))
        q = nx.softmax(classify(e, adapter_forward(e, zf_frozen)))
        total = total + _kl_rows(p, q)
    return total


class Selector:
    """Scores a layer's batch of features with a small MLP; one per backbone."""

    def __init__(self, backbone_id, layers):
        self.backbone_id = backbone_id
        self.layers = list(layers)

    @classmethod
    def init(cls, backbone_id, d_z, rng, hidden=16):
        return cls(backbone_id, [Dense.init(rng, d_z, hidden, "gelu"), Dense.init(rng, hidden, 1, "identity")])

    def score(self, z):
        for layer in self.layers:
            z = layer(z)
        return z

    def layer_logits(self, layer_feats):
        return nx.stack([nx.mean(self.score(z)) for z in layer_feats])

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def named_params(self):
        return [(f"l{i}.{n}", p) for i, layer in enumerate(self.layers) for n, p in zip("Wb", layer.params())]


def attention_weights(sel, layer_feats):
    return nx.softmax(sel.layer_logits(layer_feats))


def uniform_weights(L):
    return Tensor(np.full(L, 1.0 / L))


def fused_features(alpha, layer_feats):
    return nx.weighted_sum(alpha, layer_feats)


def fdc_from_features(live_feats, snap_feats, cfg=None, diagnostics=None):
    total = Tensor(0.0)
    for live, snap in zip(live_feats, snap_feats):
        for z, zh in zip(live, snap):
            total = total + sinkhorn_distance(z, zh, cfg, diagnostics)
    return total


def fused_from_features(live_feats, snap_feats, selectors=None, cfg=None, diagnostics=None):
    """With ``selectors=None`` the layers are averaged uniformly (no attention)."""
    total = Tensor(0.0)
    for j, (live, snap) in enumerate(zip(live_feats, snap_feats)):
        if selectors is None:
            alpha = alpha_hat = uniform_weights(len(live))
        else:
            alpha = attention_weights(selectors[j], live)
            alpha_hat = attention_weights(selectors[j], snap)
        total = total + sinkhorn_distance(fused_features(alpha, live), fused_features(alpha_hat, snap), cfg, diagnostics)
    return total


def fdc_loss(backbones, snapshots, x_batch, cfg=None):
    x = nx.as_tensor(x_batch)
    return fdc_from_features([bb.tail_features(x) for bb in backbones],
                             [s.tail_features(x) for s in snapshots], cfg)


def fused_loss(backbones, snapshots, selectors, x_batch, cfg=None):
    if selectors is not None and len(selectors) != len(backbones):
        raise ConfigurationError("need exactly one selector per backbone")
    x = nx.as_tensor(x_batch)
    return fused_from_features([bb.tail_features(x) for bb in backbones],
                               [s.tail_features(x) for s in snapshots], selectors, cfg)
