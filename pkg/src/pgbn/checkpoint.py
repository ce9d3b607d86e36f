"""Versioned network checkpoints.

Layout::

    b"PGBC" | version u8 | header length u32 LE | UTF-8 JSON header | tensor payload

The header records the phase, model dims, seed, every layer spec, the DBN
state, the training RNG state and a table of tensors (name, shape, dtype,
byte offset). Tensors are stored little-endian in the network's own float
width (``<f4`` for float32 training), so a reload reproduces forward passes
bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from pgbn.errors import FormatError
from pgbn.layers import DbnState
from pgbn.networks import ModelDims, NetworkSet, build_networks, phase_config

MAGIC = b"PGBC"
VERSION = 1
_SPEC_BATCH = 1


@dataclass
class Checkpoint:
    nets: NetworkSet
    dbn_state: DbnState
    rng_state: Optional[dict] = None
    optimizer: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _specs_json(nets: NetworkSet) -> dict:
    sched = nets.layer_specs(_SPEC_BATCH)
    return {
        name: [dataclasses.asdict(s) for s in getattr(sched, name)]
        for name in ("generator", "refiner", "discriminator")
    }


def _dims_json(dims: ModelDims) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(dims).items()}


def encode_checkpoint(
    nets: NetworkSet,
    dbn_state: DbnState,
    rng_state: Optional[dict] = None,
    optimizer: Optional[dict] = None,
    meta: Optional[dict] = None,
) -> bytes:
    """Serialize networks plus optional optimizer tensors (name -> ndarray)."""
    tensors = {name: p.data for name, p in nets.parameters().items()}
    for name, arr in (optimizer or {}).items():
        tensors[f"opt/{name}"] = np.asarray(arr)
    table, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        table.append(
            {"name": name, "shape": list(arr.shape), "dtype": le.dtype.str, "offset": offset,
             "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    header = {
        "phase": nets.phase.phase_index,
        "epochs": nets.phase.epochs,
        "seed": nets.seed,
        "dtype": nets.dtype.name,
        "dims": _dims_json(nets.dims),
        "layer_specs": _specs_json(nets),
        "dbn_state": dataclasses.asdict(dbn_state),
        "rng_state": rng_state,
        "meta": meta or {},
        "tensors": table,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<BI", VERSION, len(blob)) + blob + b"".join(chunks)


def decode_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < 9 or blob[:4] != MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<BI", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if 9 + hlen > len(blob):
        raise FormatError("truncated checkpoint header")
    try:
        header = json.loads(blob[9 : 9 + hlen].decode("utf-8"))
        dims = ModelDims(**{k: tuple(v) if isinstance(v, list) else v for k, v in header["dims"].items()})
        phase = phase_config(dims, header["phase"], header["epochs"])
        nets = build_networks(phase, header["seed"], dims, np.dtype(header["dtype"]))
        dbn = DbnState(**header["dbn_state"])
        table = header["tensors"]
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from None
    payload = memoryview(blob)[9 + hlen :]
    expected = sum(t["nbytes"] for t in table)
    if len(payload) != expected:
        raise FormatError(f"checkpoint payload is {len(payload)} bytes, expected {expected}")
    params = nets.parameters()
    optimizer = {}
    seen = set()
    for entry in table:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        try:
            arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        except ValueError as exc:
            raise FormatError(f"tensor {entry['name']}: {exc}") from None
        name = entry["name"]
        if name.startswith("opt/"):
            optimizer[name[4:]] = arr.astype(arr.dtype.newbyteorder("="))
            continue
        if name not in params:
            raise FormatError(f"unexpected tensor {name} for phase {phase.phase_index}")
        if tuple(entry["shape"]) != params[name].shape:
            raise FormatError(f"tensor {name} has shape {entry['shape']}, expected {params[name].shape}")
        params[name].data = arr.astype(nets.dtype)
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise FormatError(f"checkpoint lacks tensors: {sorted(missing)}")
    if not all(np.all(np.isfinite(p.data)) for p in params.values()):
        raise FormatError("checkpoint holds non-finite parameters")
    return Checkpoint(nets, dbn, header.get("rng_state"), optimizer, header.get("meta", {}))


def save_checkpoint(path, nets: NetworkSet, dbn_state: DbnState, rng_state=None, optimizer=None,
                    meta=None) -> None:
    blob = encode_checkpoint(nets, dbn_state, rng_state, optimizer, meta)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(9)
        if len(head) < 9 or head[:4] != MAGIC:
            raise FormatError("not a checkpoint (bad magic)")
        _, hlen = struct.unpack_from("<BI", head, 4)
        try:
            return json.loads(fh.read(hlen).decode("utf-8"))
        except ValueError as exc:
            raise FormatError(f"corrupt checkpoint header: {exc}") from None
