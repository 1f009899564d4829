"""Checkpoint persistence.

A checkpoint is a single ``.npz`` archive:

* ``param/<name>``  parameter arrays
* ``adam.m/<name>``, ``adam.v/<name>``  optimizer moments
* ``__meta__``  UTF-8 JSON (format tag, step counter, Adam hyperparameters,
  and whatever configuration the caller attaches)

Arrays are stored losslessly, so save followed by load is value-exact.
"""
from __future__ import annotations

import io
import json
import os

import numpy as np

from ..errors import ContractError
from .adam import AdamState
from .params import ParameterStore

FORMAT_TAG = "mmnerf-checkpoint/1"


def save_checkpoint(path, store: ParameterStore, adam: AdamState | None = None, meta: dict | None = None):
    arrays = {f"param/{k}": v for k, v in store.values.items()}
    adam_meta = None
    if adam is not None:
        arrays.update({f"adam.m/{k}": v for k, v in adam.m.items()})
        arrays.update({f"adam.v/{k}": v for k, v in adam.v.items()})
        adam_meta = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps,
                     "step": adam.step, "decay_steps": adam.decay_steps, "decay_to": adam.decay_to,
                     "lr_scale": adam.lr_scale}
    header = {"format": FORMAT_TAG, "dtype": store.dtype.name, "order": list(store.values),
              "adam": adam_meta, "meta": meta or {}}
    arrays["__meta__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as f:
        f.write(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Return ``(store, adam_or_None, meta)``."""
    with np.load(path, allow_pickle=False) as z:
        if "__meta__" not in z.files:
            raise ContractError(f"{path}: not a checkpoint (missing header)")
        header = json.loads(z["__meta__"].tobytes().decode())
        if header.get("format") != FORMAT_TAG:
            raise ContractError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
        store = ParameterStore(np.dtype(header["dtype"]))
        for name in header["order"]:
            store.add(name, z[f"param/{name}"])
        adam = None
        if header["adam"] is not None:
            a = header["adam"]
            adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], step=a["step"],
                             decay_steps=a["decay_steps"], decay_to=a["decay_to"], lr_scale=a["lr_scale"])
            for name in header["order"]:
                if f"adam.m/{name}" in z.files:
                    adam.m[name] = z[f"adam.m/{name}"]
                    adam.v[name] = z[f"adam.v/{name}"]
    return store, adam, header["meta"]
