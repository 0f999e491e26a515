"""Accuracy matrix and the Average / Last / forgetting summaries."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..inference import RoutingConfig, predict_routed, route, task_il_predict

MODES = ("task_il", "class_il")


@dataclass
class EvalRow:
    correct: list
    sizes: list
    routed: list = None


@dataclass
class MetricsReport:
    mode: str
    accuracy_matrix: list
    test_sizes: list
    final_correct: list
    average_micro: float
    average_macro: float
    last: float
    forgetting: list
    routing_accuracy: float = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_rows(cls, mode, rows):
        """``rows`` are the evaluations after the last ``len(rows)`` tasks, in order.

        Rows for earlier tasks that were not evaluated stay ``None``.
        """
        n = len(rows[-1].correct)
        first = n - len(rows)
        A = [[None] * n for _ in range(n)]
        for i, row in enumerate(rows, start=first):
            for j, (c, s) in enumerate(zip(row.correct, row.sizes)):
                A[i][j] = c / s if s else 0.0
        final = rows[-1]
        routed = None
        if final.routed is not None:
            routed = float(np.sum(final.routed) / np.sum(final.sizes))
        return cls(mode=mode, accuracy_matrix=A, test_sizes=list(final.sizes),
                   final_correct=list(final.correct), routing_accuracy=routed,
                   **summarize(A, final.sizes, final.correct))

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def summarize(A, sizes, correct=None):
    """Average (micro and macro), Last and per-task forgetting from a lower-triangular matrix."""
    final = [a for a in A[-1] if a is not None]
    if correct is None:
        correct = [a * s for a, s in zip(final, sizes)]
    micro = float(np.sum(correct) / np.sum(sizes))
    macro = float(np.mean(final))
    forgetting = []
    for j in range(len(final)):
        col = [A[i][j] for i in range(len(A)) if A[i][j] is not None]
        forgetting.append(float(max(col) - final[j]))
    return {"average_micro": micro, "average_macro": macro, "last": float(final[-1]), "forgetting": forgetting}


def evaluate_row(state, stream, mode="task_il", routing=None):
    """Per-task correct counts for every task trained so far."""
    routing = routing or RoutingConfig()
    correct, sizes, routed = [], [], []
    for task in stream.tasks[:state.t]:
        x, y = task.test.inputs, task.test.labels
        sizes.append(int(len(y)))
        if len(y) == 0:
            correct.append(0)
            routed.append(0)
            continue
        if mode == "task_il":
            pred = task_il_predict(state, x, state.experts[len(correct)].task_id)
        elif mode == "class_il":
            chosen = route(state, x, routing)
            pred = predict_routed(state, x, chosen)
            routed.append(int((chosen == state.experts[len(correct)].task_id).sum()))
        else:
            raise ValueError(f"unknown evaluation mode {mode!r}")
        correct.append(int((pred == y).sum()))
    return EvalRow(correct, sizes, routed if mode == "class_il" else None)


def evaluate(state, stream, mode="task_il", routing=None, history=None):
    """Report after the current task; earlier rows come from ``history`` when given."""
    rows = list(history or []) + [evaluate_row(state, stream, mode, routing)]
    return MetricsReport.from_rows(mode, rows)
