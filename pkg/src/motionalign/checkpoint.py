"""Checkpoint container and its binary file format.

Layout (all integers little-endian)::

    magic      4 bytes  b"MALN"
    version    u16
    reserved   u16      (0)
    n_sections u32
    table      n_sections entries:
                 name_len u16, name utf-8, kind u8 (0 json, 1 float32, 2 float64),
                 ndim u8, shape u32 * ndim, offset u64, length u64, crc32 u32
    payload    section bytes; offsets are relative to the payload start
    trailer    crc32 u32 over every preceding byte

Sections: ``meta`` (JSON with configs, epoch, rng state, loss history and
optimizer step), ``param/<name>``, ``adam.m/<name>``, ``adam.v/<name>``.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig
from .errors import IntegrityError, UnsupportedVersionError
from .optim import AdamWHyper, AdamWState

MAGIC = b"MALN"
FORMAT_VERSION = 1
_KINDS = {0: None, 1: np.dtype("<f4"), 2: np.dtype("<f8")}


@dataclass
class Checkpoint:
    encoder_config: EncoderConfig
    params: dict[str, np.ndarray]
    opt_state: AdamWState
    train_config: dict
    epoch: int = 0
    rng_state: dict = field(default_factory=dict)
    loss_history: list[float] = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def checkpoints_equal(a: Checkpoint, b: Checkpoint) -> bool:
    """Bitwise comparison of every tensor plus metadata."""
    def same(x, y):
        return x.keys() == y.keys() and all(
            x[k].dtype == y[k].dtype and x[k].shape == y[k].shape and x[k].tobytes() == y[k].tobytes() for k in x
        )

    return (
        a.encoder_config == b.encoder_config
        and same(a.params, b.params)
        and same(a.opt_state.m, b.opt_state.m)
        and same(a.opt_state.v, b.opt_state.v)
        and a.opt_state.step == b.opt_state.step
        and a.opt_state.hyper == b.opt_state.hyper
        and a.train_config == b.train_config
        and a.epoch == b.epoch
        and a.rng_state == b.rng_state
        and [float(x).hex() for x in a.loss_history] == [float(x).hex() for x in b.loss_history]
        and a.extra == b.extra
    )


def _kind_of(arr):
    for code, dt in _KINDS.items():
        if dt is not None and arr.dtype == dt:
            return code
    raise TypeError(f"unsupported tensor dtype {arr.dtype}")


def save_checkpoint(ckpt: Checkpoint, path):
    meta = {
        "encoder_config": ckpt.encoder_config.to_dict(),
        "train_config": ckpt.train_config,
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "loss_history": [float(x) for x in ckpt.loss_history],
        "optimizer": {"step": ckpt.opt_state.step, "hyper": vars(ckpt.opt_state.hyper)},
        "extra": ckpt.extra,
    }
    sections = [("meta", 0, (), json.dumps(meta, sort_keys=True).encode("utf-8"))]
    for prefix, tensors in (("param/", ckpt.params), ("adam.m/", ckpt.opt_state.m), ("adam.v/", ckpt.opt_state.v)):
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            sections.append((prefix + name, _kind_of(arr), arr.shape, np.ascontiguousarray(arr).tobytes()))

    table = bytearray()
    offset = 0
    for name, kind, shape, blob in sections:
        nb = name.encode("utf-8")
        table += struct.pack("<H", len(nb)) + nb + struct.pack("<BB", kind, len(shape))
        table += struct.pack(f"<{len(shape)}I", *shape)
        table += struct.pack("<QQI", offset, len(blob), zlib.crc32(blob))
        offset += len(blob)
    head = MAGIC + struct.pack("<HHI", ckpt.version, 0, len(sections))
    body = head + bytes(table) + b"".join(s[3] for s in sections)
    data = body + struct.pack("<I", zlib.crc32(body))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise IntegrityError(f"{path}: not a checkpoint file")
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) != crc:
        raise IntegrityError(f"{path}: checksum mismatch (file truncated or corrupted)")
    version, _, n_sections = struct.unpack_from("<HHI", raw, 4)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: checkpoint version {version} is not supported")

    pos = 12
    entries = []
    try:
        for _ in range(n_sections):
            (nlen,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + nlen].decode("utf-8")
            pos += nlen
            kind, ndim = struct.unpack_from("<BB", raw, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            off, length, scrc = struct.unpack_from("<QQI", raw, pos)
            pos += 20
            entries.append((name, kind, shape, off, length, scrc))
    except (struct.error, UnicodeDecodeError) as exc:
        raise IntegrityError(f"{path}: malformed section table ({exc})") from None

    payload = raw[pos:-4]
    meta, tensors = None, {}
    for name, kind, shape, off, length, scrc in entries:
        blob = payload[off:off + length]
        if len(blob) != length or zlib.crc32(blob) != scrc or kind not in _KINDS:
            raise IntegrityError(f"{path}: section {name!r} is corrupt")
        if kind == 0:
            meta = json.loads(blob.decode("utf-8"))
        else:
            tensors[name] = np.frombuffer(blob, dtype=_KINDS[kind]).reshape(shape).copy()
    if meta is None:
        raise IntegrityError(f"{path}: missing metadata section")

    def group(prefix):
        return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}

    opt = meta["optimizer"]
    state = AdamWState(AdamWHyper(**opt["hyper"]), opt["step"], group("adam.m/"), group("adam.v/"))
    return Checkpoint(
        encoder_config=EncoderConfig.from_dict(meta["encoder_config"]),
        params=group("param/"),
        opt_state=state,
        train_config=meta["train_config"],
        epoch=meta["epoch"],
        rng_state=meta["rng_state"],
        loss_history=meta["loss_history"],
        extra=meta["extra"],
        version=version,
    )
