"""Versioned checkpoint files.

Layout: a magic line, one JSON header line, then an ``.npz`` payload.  The
header records the format version, model dimensions, the non-array layout
(activations, class sets, rng state) and a SHA-256 of the payload.
"""
from __future__ import annotations

import hashlib
import io
import json

import numpy as np

from ..backbones import Backbone, BackboneSnapshot, Dense
from ..engine import TrainState
from ..errors import CheckpointError
from ..experts import Expert, ExpertRegistry
from ..regularizers import Selector

MAGIC = b"SCDEM-CHECKPOINT\n"
FORMAT_VERSION = 1


def _dump_layers(prefix, layers, arrays):
    out = []
    for i, layer in enumerate(layers):
        arrays[f"{prefix}/{i}/W"] = layer.W.data
        arrays[f"{prefix}/{i}/b"] = layer.b.data
        out.append({"act": layer.act, "trainable": layer.trainable})
    return out


def _load_layers(prefix, meta, arrays):
    return [Dense(arrays[f"{prefix}/{i}/W"], arrays[f"{prefix}/{i}/b"], m["act"], m["trainable"])
            for i, m in enumerate(meta)]


def _dump_backbone(prefix, bb, arrays):
    return {"id": bb.id, "pretrain_info": bb.pretrain_info,
            "trunk": _dump_layers(f"{prefix}/trunk", bb.trunk, arrays),
            "tail": _dump_layers(f"{prefix}/tail", bb.tail, arrays)}


def _load_backbone(prefix, meta, arrays):
    bb = Backbone(meta["id"], _load_layers(f"{prefix}/trunk", meta["trunk"], arrays),
                  _load_layers(f"{prefix}/tail", meta["tail"], arrays))
    bb.pretrain_info = meta["pretrain_info"]
    return bb


def save_checkpoint(state, path, extra=None):
    arrays = {}
    layout = {
        "backbones": [_dump_backbone(f"bb/{j}", bb, arrays) for j, bb in enumerate(state.backbones)],
        "snapshots": None if state.snapshots is None else
        [_dump_backbone(f"snap/{j}", s, arrays) for j, s in enumerate(state.snapshots)],
        "experts": [{"task_id": e.task_id, "class_set": list(e.class_set), "frozen": e.frozen,
                     "adapter": _dump_layers(f"exp/{i}/adapter", [e.adapter], arrays),
                     "classifier": _dump_layers(f"exp/{i}/classifier", [e.classifier], arrays)}
                    for i, e in enumerate(state.experts)],
        "selectors": None if state.selectors is None else
        [{"backbone_id": s.backbone_id, "layers": _dump_layers(f"sel/{j}", s.layers, arrays)}
         for j, s in enumerate(state.selectors)],
        "t": state.t,
        "step": state.step,
        "rng": state.rng.bit_generator.state,
    }
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    payload = buf.getvalue()
    bb0 = state.backbones[0]
    header = {
        "format": "scdem-checkpoint",
        "version": FORMAT_VERSION,
        "dims": {"n_backbones": len(state.backbones), "d_x": bb0.d_x, "d_z": bb0.feature_dim,
                 "tail_layers": bb0.L, "n_experts": len(state.experts)},
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
        "layout": layout,
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload)


def read_header(path):
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file")
        line = fh.readline()
        try:
            header = json.loads(line)
        except ValueError:
            raise CheckpointError(f"{path}: unreadable header") from None
        payload = fh.read()
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {header.get('version')} != supported {FORMAT_VERSION}")
    return header, payload


def load_checkpoint(path):
    header, payload = read_header(path)
    if len(payload) != header["payload_bytes"] or hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CheckpointError(f"{path}: payload is truncated or corrupt")
    with np.load(io.BytesIO(payload)) as npz:
        arrays = {k: npz[k] for k in npz.files}
    layout = header["layout"]

    backbones = [_load_backbone(f"bb/{j}", m, arrays) for j, m in enumerate(layout["backbones"])]
    state = TrainState(backbones)
    if layout["snapshots"] is not None:
        state.snapshots = [BackboneSnapshot(_load_backbone(f"snap/{j}", m, arrays))
                           for j, m in enumerate(layout["snapshots"])]
    state.experts = ExpertRegistry()
    for i, m in enumerate(layout["experts"]):
        adapter = _load_layers(f"exp/{i}/adapter", m["adapter"], arrays)[0]
        classifier = _load_layers(f"exp/{i}/classifier", m["classifier"], arrays)[0]
        e = Expert(m["task_id"], adapter, classifier, m["class_set"])
        e.frozen = m["frozen"]
        state.experts.append(e)
    if layout["selectors"] is not None:
        state.selectors = [Selector(m["backbone_id"], _load_layers(f"sel/{j}", m["layers"], arrays))
                           for j, m in enumerate(layout["selectors"])]
    state.t = layout["t"]
    state.step = layout["step"]
    state.rng.bit_generator.state = layout["rng"]
    return state
