"""Checkpoint files.

Layout (little-endian)::

    b"M3DS" | u32 version | u32 header length | JSON header | float32 payload

The header's tensor table lists ``name``, ``shape``, ``offset`` and ``bytes``
for every tensor; the ranges tile the payload with no gaps.  Headers are
serialized with sorted keys and no timestamps, so identical runs produce
identical files and load -> save reproduces the input bytes.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .. import numerics as nx
from ..learner import ArchitectureConfig, ArchitectureError
from ..metalearner import MetaParams
from ..training import FineTuned

MAGIC = b"M3DS"
VERSION = 1
META_PREFIX = "meta/"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    header: dict
    tensors: dict[str, np.ndarray]

    @property
    def kind(self) -> str:
        return self.header["kind"]

    @property
    def preset(self) -> str:
        return self.header["preset"]

    @property
    def arch(self) -> ArchitectureConfig:
        return ArchitectureConfig.from_dict(self.header["architecture"])


def encode(ckpt: Checkpoint) -> bytes:
    table, chunks, offset = [], [], 0
    for name, arr in ckpt.tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "bytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = dict(ckpt.header, tensors=table)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<II", VERSION, len(blob)) + blob + b"".join(chunks)


def decode(data: bytes) -> Checkpoint:
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError("not a meta3dseg checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if 12 + hlen > len(data):
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(data[12:12 + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"checkpoint header is not valid JSON: {exc}") from exc
    payload = data[12 + hlen:]
    tensors, expect = {}, 0
    for entry in header.get("tensors", []):
        shape = tuple(entry["shape"])
        size = 4 * int(np.prod(shape, dtype=np.int64))
        if entry["offset"] != expect or entry["bytes"] != size:
            raise CheckpointError(f"tensor table does not tile the payload at {entry['name']!r}")
        if expect + size > len(payload):
            raise CheckpointError(f"payload truncated inside tensor {entry['name']!r}")
        arr = np.frombuffer(payload, dtype="<f4", count=size // 4, offset=expect).reshape(shape)
        tensors[entry["name"]] = arr.astype(np.float32)
        expect += size
    if expect != len(payload):
        raise CheckpointError(f"payload has {len(payload) - expect} bytes not covered by the tensor table")
    del header["tensors"]
    return Checkpoint(header, tensors)


def save(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(encode(ckpt))


def load(path: str | Path) -> Checkpoint:
    return decode(Path(path).read_bytes())


# --- model <-> checkpoint ------------------------------------------------------------

def _base_header(kind: str, arch: ArchitectureConfig, variant: str, config: Mapping,
                 provenance: Mapping) -> dict:
    return {"format": "meta3dseg-checkpoint", "kind": kind, "preset": arch.name,
            "architecture": arch.to_dict(), "variant": variant, "config": dict(config),
            "provenance": dict(provenance)}


def from_meta(params: MetaParams, config: Mapping, provenance: Mapping) -> Checkpoint:
    header = _base_header("meta", params.arch, params.variant, config, provenance)
    header["meta_digest"] = params.digest()
    return Checkpoint(header, {k: params.tensors[k].data for k in sorted(params.tensors)})


def _meta_params(header: dict, tensors: Mapping[str, np.ndarray]) -> MetaParams:
    arch = ArchitectureConfig.from_dict(header["architecture"])
    params = MetaParams(arch, header["variant"],
                        {k: nx.Tensor(v, dtype=np.float32) for k, v in tensors.items()})
    if params.digest() != header["meta_digest"]:
        raise CheckpointError("meta-learner digest does not match the stored tensors")
    return params


def to_meta(ckpt: Checkpoint) -> MetaParams:
    if ckpt.kind != "meta":
        raise CheckpointError(f"expected a meta-learner checkpoint, got {ckpt.kind!r}")
    return _meta_params(ckpt.header, ckpt.tensors)


def from_finetuned(ft: FineTuned, config: Mapping, provenance: Mapping) -> Checkpoint:
    header = _base_header("learner", ft.meta.arch, ft.meta.variant, config, provenance)
    header.update(meta_digest=ft.meta_digest, shape_ids=list(ft.shape_ids), task_points=ft.task_points)
    tensors = {META_PREFIX + k: ft.meta.tensors[k].data for k in sorted(ft.meta.tensors)}
    tensors["theta_l"] = ft.theta_l
    tensors["theta_m"] = ft.theta_m
    return Checkpoint(header, tensors)


def to_finetuned(ckpt: Checkpoint) -> FineTuned:
    if ckpt.kind != "learner":
        raise CheckpointError(f"expected a fine-tuned learner checkpoint, got {ckpt.kind!r}")
    meta = _meta_params(ckpt.header, {k[len(META_PREFIX):]: v for k, v in ckpt.tensors.items()
                                      if k.startswith(META_PREFIX)})
    theta_l, theta_m = ckpt.tensors["theta_l"], ckpt.tensors["theta_m"]
    if theta_l.shape != (meta.table.size,) or theta_m.shape[-1] != meta.table.size:
        raise CheckpointError("theta_l / theta_m lengths do not match the predictor")
    return FineTuned(meta, theta_l.copy(), theta_m.copy(), list(ckpt.header["shape_ids"]),
                     ckpt.header["meta_digest"], int(ckpt.header["task_points"]))


def check_compatible(ckpt: Checkpoint, arch: ArchitectureConfig) -> None:
    if ckpt.arch != arch:
        raise ArchitectureError(f"checkpoint was trained with preset {ckpt.preset!r} but the config "
                                f"asks for preset {arch.name!r}")
