"""Little-endian binary checkpoints.

Layout::

    magic  b"RGNN"
    u32    format_version
    config: u32 input_size, u32 in_channels, u32 n_conv, n_conv * (u32 ch, u32 k, u32 stride),
            u32 fc_width, u32 recurrent (0 lstm, 1 fc), u32 recurrent_width, u32 n_actions
    u32    n_param_blocks, blocks
    u32    n_adam_blocks, blocks        # adam.m.<name>, adam.v.<name>, adam.t.<name>

    block: u32 name_len, name (utf-8), u32 ndim, ndim * u32 dims, float32 payload
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .network import NetworkConfig, NetworkParams
from .optim import AdamState

MAGIC = b"RGNN"
FORMAT_VERSION = 1
_RECURRENT_CODES = {"lstm": 0, "fc": 1}


class CheckpointError(Exception):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


def _encode_config(cfg: NetworkConfig) -> bytes:
    out = struct.pack("<III", cfg.input_size, cfg.in_channels, len(cfg.conv))
    for ch, k, s in cfg.conv:
        out += struct.pack("<III", ch, k, s)
    out += struct.pack("<IIII", cfg.fc_width, _RECURRENT_CODES[cfg.recurrent],
                       cfg.recurrent_width, cfg.n_actions)
    return out


def _encode_block(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode()
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def save_checkpoint(params: NetworkParams, adam: AdamState | None, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION), _encode_config(params.config)]
    chunks.append(struct.pack("<I", len(params.arrays)))
    chunks += [_encode_block(n, a) for n, a in params.items()]
    adam_blocks = []
    if adam is not None:
        for n in params:
            adam_blocks.append((f"adam.m.{n}", adam.m[n]))
            adam_blocks.append((f"adam.v.{n}", adam.v[n]))
            adam_blocks.append((f"adam.t.{n}", np.array([adam.t[n]], dtype=np.float32)))
    chunks.append(struct.pack("<I", len(adam_blocks)))
    chunks += [_encode_block(n, a) for n, a in adam_blocks]
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpointError(f"{self.path}: truncated at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals

    def block(self) -> tuple[str, np.ndarray]:
        name_len = self.u32()
        if name_len > 256:
            raise CorruptCheckpointError(f"{self.path}: implausible block name length {name_len}")
        try:
            name = self.take(name_len).decode()
        except UnicodeDecodeError as exc:
            raise CorruptCheckpointError(f"{self.path}: bad block name") from exc
        ndim = self.u32()
        if ndim > 8:
            raise CorruptCheckpointError(f"{self.path}: implausible rank {ndim} for {name}")
        dims = struct.unpack(f"<{ndim}I", self.take(4 * ndim))
        n = int(np.prod(dims))
        arr = np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
        return name, arr


def load_checkpoint(path: str | os.PathLike, expected_config: NetworkConfig | None = None
                    ) -> tuple[NetworkParams, AdamState | None]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    r = _Reader(path.read_bytes(), path)
    if r.take(4) != MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic, not a checkpoint")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format_version {version}, expected {FORMAT_VERSION}")
    input_size, in_channels, n_conv = r.u32(3)
    if n_conv > 16:
        raise CorruptCheckpointError(f"{path}: implausible conv count {n_conv}")
    conv = tuple(r.u32(3) for _ in range(n_conv))
    fc_width, rec_code, rec_width, n_actions = r.u32(4)
    codes = {v: k for k, v in _RECURRENT_CODES.items()}
    if rec_code not in codes:
        raise CorruptCheckpointError(f"{path}: unknown recurrent code {rec_code}")
    try:
        cfg = NetworkConfig(input_size, in_channels, conv, fc_width, codes[rec_code], rec_width, n_actions)
    except ValueError as exc:
        raise CorruptCheckpointError(f"{path}: invalid stored config ({exc})") from exc
    if expected_config is not None and cfg != expected_config:
        raise ConfigMismatchError(f"{path}: stored config {cfg} != expected {expected_config}")
    arrays = dict(r.block() for _ in range(r.u32()))
    try:
        params = NetworkParams(cfg, arrays)
    except ValueError as exc:
        raise CorruptCheckpointError(f"{path}: {exc}") from exc
    adam_blocks = dict(r.block() for _ in range(r.u32()))
    if r.pos != len(r.data):
        raise CorruptCheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    adam = None
    if adam_blocks:
        try:
            adam = AdamState({n: adam_blocks[f"adam.m.{n}"] for n in params},
                             {n: adam_blocks[f"adam.v.{n}"] for n in params},
                             {n: int(adam_blocks[f"adam.t.{n}"][0]) for n in params})
        except KeyError as exc:
            raise CorruptCheckpointError(f"{path}: missing optimizer block {exc}") from exc
    return params, adam
