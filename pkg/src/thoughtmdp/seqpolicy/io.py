"""Binary model container.

Layout: 8-byte magic ``TMDPNET1``, little-endian u64 header length, UTF-8 JSON
header, then raw little-endian float32 blocks in the order listed in the
header (parameters, then optional Adam moments).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .adam import AdamState
from .model import ModelConfig, PolicyNet, param_shapes
from .vocab import VOCAB_VERSION

MAGIC = b"TMDPNET1"
_F32 = np.dtype("<f4")


class ModelFormatError(ValueError):
    pass


def save_model(path: str | Path, net: PolicyNet, adam: AdamState | None = None,
               lineage: dict | None = None) -> None:
    blocks = [(name, arr) for name, arr in net.params.items()]
    if adam is not None:
        blocks += [(f"adam.m.{k}", v) for k, v in adam.m.items()]
        blocks += [(f"adam.v.{k}", v) for k, v in adam.v.items()]
    header = {
        "config": net.cfg.to_dict(),
        "vocab_version": VOCAB_VERSION,
        "lineage": lineage or {},
        "blocks": [[name, list(arr.shape)] for name, arr in blocks],
        "adam": None if adam is None else {"step": adam.step, "beta1": adam.beta1,
                                           "beta2": adam.beta2, "eps": adam.eps},
    }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for _, arr in blocks:
            fh.write(np.ascontiguousarray(arr, dtype=_F32).tobytes())


def load_model(path: str | Path, expected: ModelConfig | None = None):
    """Return ``(net, adam_or_None, header)``; raise :class:`ModelFormatError` on any mismatch."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ModelFormatError("bad magic: not a model container")
    if len(data) < 16:
        raise ModelFormatError("truncated header")
    (n,) = struct.unpack("<Q", data[8:16])
    if len(data) < 16 + n:
        raise ModelFormatError("truncated header")
    try:
        header = json.loads(data[16:16 + n])
    except ValueError as exc:
        raise ModelFormatError(f"unreadable header: {exc}") from None
    if header.get("vocab_version") != VOCAB_VERSION:
        raise ModelFormatError(f"vocab version {header.get('vocab_version')!r} != {VOCAB_VERSION!r}")
    cfg = ModelConfig.from_dict(header["config"])
    if expected is not None:
        for field, want in expected.to_dict().items():
            got = getattr(cfg, field)
            if field != "dtype" and got != want:
                raise ModelFormatError(f"config field {field!r}: file has {got}, expected {want}")
    declared = [(name, tuple(shape)) for name, shape in header["blocks"]]
    n_param = len(param_shapes(cfg))
    if declared[:n_param] != param_shapes(cfg):
        raise ModelFormatError("parameter blocks do not match the config shapes")
    off = 16 + n
    arrays = {}
    for name, shape in declared:
        size = int(np.prod(shape)) * 4
        if off + size > len(data):
            raise ModelFormatError(f"truncated block {name!r}")
        arrays[name] = np.frombuffer(data, dtype=_F32, count=size // 4, offset=off).reshape(shape).astype(cfg.dtype)
        off += size
    if off != len(data):
        raise ModelFormatError(f"{len(data) - off} trailing bytes")
    params = {name: arrays[name] for name, _ in param_shapes(cfg)}
    net = PolicyNet(cfg, params)
    adam = None
    if header.get("adam") is not None:
        h = header["adam"]
        adam = AdamState(params, h["beta1"], h["beta2"], h["eps"])
        adam.step = int(h["step"])
        for k in params:
            adam.m[k] = arrays[f"adam.m.{k}"]
            adam.v[k] = arrays[f"adam.v.{k}"]
    return net, adam, header
