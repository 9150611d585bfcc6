"""Single-file model checkpoints and the teacher-pool manifest.

Layout (little-endian)::

    magic   8 bytes  b"GZTCKPT\\0"
    version u32
    meta    u32 length + UTF-8 JSON (net config, codec, training metadata)
    arrays  u32 count, then per array: u16 name length, name, u8 dtype length,
            dtype string, u8 ndim, u32 per dim, raw bytes
    crc32   u32 over everything above
"""
from __future__ import annotations

import json
import logging
import os
import struct
import tempfile
import zlib
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import pandas as pd

from gazetat.distillation import TeacherEntry, TeacherPool
from gazetat.errors import CheckpointError
from gazetat.gazenet import GazeNet, GazeNetConfig
from gazetat.ordinal import GazeCodec

logger = logging.getLogger(__name__)

MAGIC = b"GZTCKPT\0"
FORMAT_VERSION = 1
POOL_MANIFEST = "pool.tsv"


def _encode(model: GazeNet, metadata: dict[str, Any]) -> bytes:
    meta = {
        "net": model.config.model_dump(mode="json"),
        "codec": model.codec.model_dump(mode="json"),
        "training": metadata,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta_bytes)), meta_bytes]
    state = model.state_dict()
    parts.append(struct.pack("<I", len(state)))
    for name, array in state.items():
        array = np.ascontiguousarray(array)
        le = array.astype(array.dtype.newbyteorder("<"), copy=False)
        name_b, dtype_b = name.encode("utf-8"), le.dtype.str.encode("ascii")
        parts.append(struct.pack("<H", len(name_b)) + name_b + struct.pack("<B", len(dtype_b)) + dtype_b)
        parts.append(struct.pack("<B", le.ndim) + struct.pack(f"<{le.ndim}I", *le.shape))
        parts.append(le.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _decode(data: bytes, path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < len(MAGIC) + 4 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a gazetat checkpoint")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupted file)")
    reader = _Reader(body, path)
    reader.take(len(MAGIC))
    version, meta_len = reader.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    meta = json.loads(reader.take(meta_len).decode("utf-8"))
    (count,) = reader.unpack("<I")
    arrays = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (dtype_len,) = reader.unpack("<B")
        dtype = np.dtype(reader.take(dtype_len).decode("ascii"))
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arrays[name] = np.frombuffer(reader.take(nbytes), dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if reader.pos != len(body):
        raise CheckpointError(f"{path}: {len(body) - reader.pos} trailing bytes after the array table")
    return meta, arrays


def save_checkpoint(model: GazeNet, path: Union[str, Path], metadata: Optional[dict[str, Any]] = None) -> Path:
    """Write atomically: a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = _encode(model, dict(metadata or {}))
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    logger.debug("saved checkpoint %s (%d bytes)", path, len(payload))
    return path


def load_checkpoint(path: Union[str, Path]) -> tuple[GazeNet, dict[str, Any]]:
    """Returns the model (eval mode) and the training metadata it was saved with."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror or exc}") from None
    meta, arrays = _decode(data, path)
    try:
        model = GazeNet(GazeNetConfig(**meta["net"]), GazeCodec(**meta["codec"]), np.random.default_rng(0))
        model.load_state_dict(arrays)
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: checkpoint does not match its network config ({exc})") from None
    model.eval()
    return model, meta.get("training", {})


def save_pool(pool: TeacherPool, directory: Union[str, Path]) -> Path:
    """One checkpoint per teacher plus ``pool.tsv`` (path, val_err_cm, mini_generation, threshold)."""
    directory = Path(directory)
    rows = []
    for entry in pool.entries:
        name = f"teacher_mg{entry.mini_generation}.ckpt"
        save_checkpoint(entry.model, directory / name, {
            "role": "teacher", "val_err_cm": entry.val_error, "mini_generation": entry.mini_generation,
        })
        entry.path = directory / name
        rows.append((name, entry.val_error, entry.mini_generation, pool.threshold))
    directory.mkdir(parents=True, exist_ok=True)
    manifest = directory / POOL_MANIFEST
    pd.DataFrame(rows, columns=["path", "val_err_cm", "mini_generation", "threshold"]).to_csv(
        manifest, sep="\t", index=False, float_format="%.17g"
    )
    return manifest


def load_pool(directory: Union[str, Path], strategy: str = "random") -> TeacherPool:
    directory = Path(directory)
    manifest = directory / POOL_MANIFEST
    if not manifest.exists():
        raise CheckpointError(f"{directory}: no {POOL_MANIFEST}")
    table = pd.read_csv(manifest, sep="\t")
    threshold = float(table["threshold"].iloc[0]) if len(table) else None
    pool = TeacherPool(strategy, threshold=threshold)
    for row in table.itertuples(index=False):
        model, _ = load_checkpoint(directory / row.path)
        pool.entries.append(TeacherEntry(model.snapshot(), float(row.val_err_cm), int(row.mini_generation),
                                         directory / row.path))
    return pool
