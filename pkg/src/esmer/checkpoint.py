"""Learner checkpoints as a single ``.npz`` archive.

Layout (all arrays stored raw, so floats round-trip bit for bit):

``meta``                 JSON string: method, spec, hyperparameters, ablation,
                         replay weights, step, task index, error memory fields
                         and the bit-generator states of both run RNGs
``working/W{i}``, ``working/b{i}``   working model layer ``i``
``stable/W{i}``, ``stable/b{i}``     stable model (ESMER only)
``buffer/<field>``       buffer columns: ids, features, labels, true_labels,
                         is_noisy, insert_step, logits (logit replay only)
``buffer_meta``          JSON string: capacity, size, candidates_seen, RNG state
"""

import json
from dataclasses import asdict

import numpy as np

from .buffer import EpisodicBuffer
from .error_memory import ErrorMemory
from .learners import Ablation, HyperParams, LearnerState
from .nn import NetworkSpec, ParamSet

_BUFFER_ARRAYS = ("ids", "features", "labels", "true_labels", "is_noisy", "insert_step", "logits")


def _params_arrays(prefix, params):
    out = {}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        out[f"{prefix}/W{i}"] = w
        out[f"{prefix}/b{i}"] = b
    return out


def _params_from(data, prefix, depth):
    return ParamSet([data[f"{prefix}/W{i}"].copy() for i in range(depth)],
                    [data[f"{prefix}/b{i}"].copy() for i in range(depth)])


def save_checkpoint(state, path):
    meta = {
        "method": state.method,
        "spec": {"input_dim": state.spec.input_dim, "hidden_dims": list(state.spec.hidden_dims),
                 "num_classes": state.spec.num_classes},
        "hp": asdict(state.hp),
        "ablation": asdict(state.ablation),
        "replay_weights": list(state.replay_weights),
        "step": state.step,
        "task_index": state.task_index,
        "error_mem": None if state.error_mem is None else asdict(state.error_mem),
        "rng_memory": state.rng_memory.bit_generator.state,
        "rng_ema": state.rng_ema.bit_generator.state,
    }
    arrays = _params_arrays("working", state.working)
    if state.stable is not None:
        arrays.update(_params_arrays("stable", state.stable))
    bstate = state.buffer.state_dict()
    for key in _BUFFER_ARRAYS:
        if key in bstate:
            arrays[f"buffer/{key}"] = bstate[key]
    buffer_meta = {k: bstate[k] for k in ("capacity", "size", "candidates_seen", "rng")}
    with open(path, "wb") as f:
        np.savez(f, meta=np.array(json.dumps(meta)), buffer_meta=np.array(json.dumps(buffer_meta)),
                 **arrays)


def _rng(state):
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        bmeta = json.loads(str(data["buffer_meta"]))
        spec = NetworkSpec(**meta["spec"])
        depth = len(spec.layer_dims) - 1
        bstate = {k: data[f"buffer/{k}"] for k in _BUFFER_ARRAYS if f"buffer/{k}" in data}
        bstate.update(bmeta)
        state = LearnerState(
            method=meta["method"], spec=spec, hp=HyperParams(**meta["hp"]),
            working=_params_from(data, "working", depth),
            buffer=EpisodicBuffer.from_state(bstate),
            rng_memory=_rng(meta["rng_memory"]), rng_ema=_rng(meta["rng_ema"]),
            stable=_params_from(data, "stable", depth) if "stable/W0" in data else None,
            error_mem=None if meta["error_mem"] is None else ErrorMemory(**meta["error_mem"]),
            ablation=Ablation(**meta["ablation"]),
            replay_weights=tuple(meta["replay_weights"]),
            step=meta["step"], task_index=meta["task_index"],
        )
    return state
