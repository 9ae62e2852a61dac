"""Model file: ``BCNN`` magic, u32 version, u32 config length, canonical JSON
config, u64 parameter count, then float64 little-endian parameters in the
layout documented in :mod:`bcpredict.nn.network`."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import NetworkConfig, NetworkError, Params, param_count

MAGIC = b"BCNN"
VERSION = 1


def model_bytes(config: NetworkConfig, params: Params) -> bytes:
    cfg = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    flat = params.flat()
    if flat.size != param_count(config):
        raise NetworkError("parameter count does not match config")
    return MAGIC + struct.pack("<II", VERSION, len(cfg)) + cfg + struct.pack("<Q", flat.size) + flat.astype("<f8").tobytes()


def save_model(path: Path, config: NetworkConfig, params: Params) -> None:
    Path(path).write_bytes(model_bytes(config, params))


def parse_model(data: bytes) -> tuple[NetworkConfig, Params]:
    if data[:4] != MAGIC:
        raise NetworkError("not a BCNN model file")
    version, cfg_len = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise NetworkError(f"unsupported model version {version}")
    cfg = json.loads(data[12 : 12 + cfg_len].decode("utf-8"))
    config = NetworkConfig(**cfg)
    pos = 12 + cfg_len
    (count,) = struct.unpack("<Q", data[pos : pos + 8])
    flat = np.frombuffer(data[pos + 8 : pos + 8 + 8 * count], dtype="<f8")
    if flat.size != count or count != param_count(config):
        raise NetworkError("truncated or inconsistent model file")
    return config, Params.from_flat(config, flat)


def load_model(path: Path) -> tuple[NetworkConfig, Params]:
    return parse_model(Path(path).read_bytes())
