"""Training checkpoints: network files, optimizer state and the iteration counter.

Networks are stored in the checksummed model format; the rest of the
training state (environments, RNG streams) is pickled so that a resumed
run continues bit-for-bit.
"""
from __future__ import annotations

import os
import pickle
from pathlib import Path

from .. import neural
from ..exceptions import ValidationError

CHECKPOINT_FORMAT = "pavrl-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, algo, params, iteration, log, models, optimizer, runtime=None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "algo": algo,
        "params": params,
        "iteration": int(iteration),
        "log": list(log),
        "models": {name: neural.to_bytes(m) for name, m in models.items()},
        "optimizer": optimizer.state_dict(),
        "runtime": pickle.dumps(runtime) if runtime is not None else None,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        pickle.dump(payload, fh)
    os.replace(tmp, path)


def load_checkpoint(path, algo=None) -> dict:
    try:
        with open(path, "rb") as fh:
            payload = pickle.load(fh)
    except (pickle.UnpicklingError, EOFError) as exc:
        raise ValidationError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path} is not a pavrl checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {payload.get('version')}")
    if algo is not None and payload["algo"] != algo:
        raise ValidationError(f"checkpoint holds a {payload['algo']} agent, expected {algo}")
    payload["models"] = {name: neural.from_bytes(b)[0] for name, b in payload["models"].items()}
    if payload["runtime"] is not None:
        payload["runtime"] = pickle.loads(payload["runtime"])
    return payload


def checkpoint_algo(path) -> str:
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path} is not a pavrl checkpoint")
    return payload["algo"]
