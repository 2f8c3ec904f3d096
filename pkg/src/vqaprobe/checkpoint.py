"""Versioned binary checkpoints: named tensors, optimizer moments, RNG state.

Layout: magic "VQCK", version u16, u32 JSON-metadata length, the metadata
(UTF-8 JSON: array specs in payload order, optimizer scalars, RNG state,
arbitrary user metadata), then raw little-endian array bytes in order.
Enough to resume training bit-exactly in serial mode.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .autodiff import Tensor
from .errors import DataError
from .optim import AdamW, AdamWState

MAGIC = b"VQCK"
VERSION = 1


def _rng_state_to_json(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return {"bit_generator": state["bit_generator"], "state": {k: str(v) for k, v in state["state"].items()}, "has_uint32": state.get("has_uint32", 0), "uinteger": state.get("uinteger", 0)}


def _rng_state_from_json(blob: dict) -> np.random.Generator:
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = {
        "bit_generator": blob["bit_generator"],
        "state": {k: int(v) for k, v in blob["state"].items()},
        "has_uint32": blob["has_uint32"],
        "uinteger": blob["uinteger"],
    }
    return rng


def save_checkpoint(
    path,
    params: dict[str, Tensor],
    optimizer: AdamW | None = None,
    rng: np.random.Generator | None = None,
    metadata: dict | None = None,
) -> None:
    arrays: list[tuple[str, np.ndarray]] = [(f"param/{k}", p.data) for k, p in sorted(params.items())]
    opt_meta = None
    if optimizer is not None:
        st = optimizer.state
        arrays += [(f"adam.m/{k}", st.m[k]) for k in sorted(st.m)]
        arrays += [(f"adam.v/{k}", st.v[k]) for k in sorted(st.v)]
        opt_meta = {"step": st.step, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps}
    meta = {
        "arrays": [{"name": n, "shape": list(a.shape), "dtype": str(a.dtype)} for n, a in arrays],
        "optimizer": opt_meta,
        "rng": _rng_state_to_json(rng) if rng is not None else None,
        "user": metadata or {},
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(blob)))
        fh.write(blob)
        for _name, arr in arrays:
            fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path) -> dict:
    """Returns {"params": {name: ndarray}, "optimizer": ..., "rng": Generator
    or None, "metadata": dict}."""
    with open(path, "rb") as fh:
        head = fh.read(10)
        if len(head) < 10 or head[:4] != MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        version, meta_len = struct.unpack("<HI", head[4:])
        if version != VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        arrays = {}
        for spec in meta["arrays"]:
            dtype = np.dtype(spec["dtype"]).newbyteorder("<")
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise DataError(f"{path}: truncated at array {spec['name']}")
            arrays[spec["name"]] = np.frombuffer(buf, dtype=dtype).reshape(spec["shape"]).astype(spec["dtype"])
    params = {n[len("param/"):]: a for n, a in arrays.items() if n.startswith("param/")}
    optimizer = None
    if meta["optimizer"] is not None:
        o = meta["optimizer"]
        optimizer = AdamWState(
            m={n[len("adam.m/"):]: a for n, a in arrays.items() if n.startswith("adam.m/")},
            v={n[len("adam.v/"):]: a for n, a in arrays.items() if n.startswith("adam.v/")},
            step=o["step"],
            beta1=o["beta1"],
            beta2=o["beta2"],
            eps=o["eps"],
        )
    rng = _rng_state_from_json(meta["rng"]) if meta["rng"] else None
    return {"params": params, "optimizer": optimizer, "rng": rng, "metadata": meta["user"]}
