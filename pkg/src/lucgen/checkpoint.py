"""Versioned JSON checkpoints of parameter tensors.

Layout (version 1)::

    {"format": "lucgen-checkpoint", "version": 1, "kind": "...",
     "seed": 0, "iteration": 200, "config": {...},
     "groups": {"<group>": {"<name>": {"shape": [r, c], "values": [...]}}}}

Values are stored row-major; Python's float repr round-trips every double,
so a load returns bit-identical arrays.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ConfigError
from .numerics import ParamSet

FORMAT = "lucgen-checkpoint"
VERSION = 1


def to_dict(groups: dict[str, ParamSet], kind: str, config: dict, seed: int, iteration: int) -> dict:
    return {
        "format": FORMAT, "version": VERSION, "kind": kind, "seed": int(seed),
        "iteration": int(iteration), "config": config,
        "groups": {g: {name: {"shape": list(v.shape), "values": v.ravel().tolist()}
                       for name, v in ps.items()} for g, ps in groups.items()},
    }


def save(path, groups: dict[str, ParamSet], kind: str, config: dict, seed: int, iteration: int):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(groups, kind, config, seed, iteration), fh)
        fh.write("\n")


def load(path):
    """Return ``(groups, meta)`` where ``meta`` holds kind, seed, iteration and config."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != FORMAT:
        raise ConfigError(f"{path} is not a checkpoint file")
    if doc.get("version") != VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    groups = {}
    for g, tensors in doc["groups"].items():
        groups[g] = ParamSet({name: np.array(t["values"], dtype=np.float64).reshape(t["shape"])
                              for name, t in tensors.items()})
    meta = {k: doc[k] for k in ("kind", "seed", "iteration", "config")}
    return groups, meta
