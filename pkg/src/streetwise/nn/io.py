"""Binary serialization for parameter sets.

Layout (all integers little-endian):

    bytes 0..3   magic b"SWNN"
    bytes 4..7   u32 format version
    bytes 8..11  u32 header length H
    bytes 12..   H bytes of UTF-8 JSON architecture descriptor (sorted keys)
    then         param_count little-endian float64 values
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ModelLoadError
from .params import FORMAT_VERSION, LstmAeArch, MlpArch, ParamSet

MAGIC = b"SWNN"


def _arch_to_dict(arch) -> dict:
    if isinstance(arch, MlpArch):
        return {"kind": "mlp", "sizes": list(arch.sizes), "hidden_act": arch.hidden_act}
    if isinstance(arch, LstmAeArch):
        return {
            "kind": "lstm_ae",
            "input_dim": arch.input_dim,
            "hidden_dim": arch.hidden_dim,
            "bottleneck_dim": arch.bottleneck_dim,
            "layers": arch.layers,
        }
    raise ModelLoadError(f"unknown architecture type {type(arch).__name__}")


def _arch_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "mlp":
        return MlpArch(sizes=tuple(d["sizes"]), hidden_act=d["hidden_act"])
    if kind == "lstm_ae":
        return LstmAeArch(
            input_dim=d["input_dim"],
            hidden_dim=d["hidden_dim"],
            bottleneck_dim=d["bottleneck_dim"],
            layers=d["layers"],
        )
    raise ModelLoadError(f"unknown architecture kind {kind!r}")


def serialize_params(params: ParamSet) -> bytes:
    header = json.dumps(_arch_to_dict(params.arch), sort_keys=True).encode("utf-8")
    body = np.ascontiguousarray(params.values, dtype="<f8").tobytes()
    return MAGIC + struct.pack("<II", params.version, len(header)) + header + body


def deserialize_params(data: bytes) -> ParamSet:
    if len(data) < 12:
        raise ModelLoadError(f"file truncated: {len(data)} bytes, need at least 12")
    if data[:4] != MAGIC:
        raise ModelLoadError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    version, header_len = struct.unpack("<II", data[4:12])
    if version != FORMAT_VERSION:
        raise ModelLoadError(f"unsupported format version {version}, expected {FORMAT_VERSION}")
    if len(data) < 12 + header_len:
        raise ModelLoadError("file truncated inside architecture header")
    try:
        arch_dict = json.loads(data[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelLoadError(f"corrupt architecture header: {exc}") from exc
    arch = _arch_from_dict(arch_dict)
    body = data[12 + header_len :]
    expect = arch.param_count * 8
    if len(body) != expect:
        raise ModelLoadError(
            f"parameter payload is {len(body)} bytes, expected {expect} for {arch.param_count} values"
        )
    values = np.frombuffer(body, dtype="<f8").astype(np.float64)
    try:
        return ParamSet(arch=arch, values=values, version=version)
    except Exception as exc:
        raise ModelLoadError(f"invalid parameter payload: {exc}") from exc


def save_params(path: str | Path, params: ParamSet) -> None:
    Path(path).write_bytes(serialize_params(params))


def load_params(path: str | Path) -> ParamSet:
    return deserialize_params(Path(path).read_bytes())
