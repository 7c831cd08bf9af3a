"""Weight-store container and its binary serialization format.

File layout (all integers little-endian):

    magic   4 bytes  b"RDET"
    version u32      currently 1
    count   u32      number of entries
    entry*  u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
            raw float32 payload
    crc32   u32      CRC-32 of every preceding byte

The store is an ordered name -> float32 array map. Entry order is the
model's deterministic parameter order, which makes seeded random
initialization reproducible.
"""

from __future__ import annotations

import struct
import zlib
from typing import Dict, Iterator, Tuple

import numpy as np

from .errors import BadChecksumError, BadMagicError, BadVersionError, LoadError

MAGIC = b"RDET"
VERSION = 1


class WeightStore:
    """Ordered, immutable mapping from dotted names to float32 arrays."""

    def __init__(self, entries: Dict[str, np.ndarray] | None = None):
        self._entries: Dict[str, np.ndarray] = {}
        if entries:
            for name, arr in entries.items():
                self._add(name, arr)

    def _add(self, name: str, arr) -> None:
        if name in self._entries:
            raise LoadError(f"duplicate weight name: {name}")
        a = np.ascontiguousarray(arr, dtype=np.float32)
        if not 1 <= a.ndim <= 4:
            raise LoadError(f"weight {name!r} has unsupported rank {a.ndim}")
        a.flags.writeable = False
        self._entries[name] = a

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def get(self, name: str) -> np.ndarray:
        if name not in self._entries:
            raise LoadError(f"missing weight key: {name}")
        return self._entries[name]

    def names(self):
        return list(self._entries)

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(self._entries.items())

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightStore):
            return NotImplemented
        if self.names() != other.names():
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for (_, a), (_, b) in zip(self.items(), other.items())
        )


class StoreReader:
    """Tracks weight consumption so every name is used exactly once."""

    def __init__(self, store: WeightStore):
        self._store = store
        self._taken: set[str] = set()

    def take(self, name: str) -> np.ndarray:
        if name in self._taken:
            raise LoadError(f"weight key consumed twice: {name}")
        arr = self._store.get(name)
        self._taken.add(name)
        return arr

    def has(self, name: str) -> bool:
        return name in self._store

    def finish(self) -> None:
        left = [n for n in self._store.names() if n not in self._taken]
        if left:
            shown = ", ".join(left[:5])
            more = f" (+{len(left) - 5} more)" if len(left) > 5 else ""
            raise LoadError(f"unconsumed weight keys: {shown}{more}")


def save_weights(store: WeightStore, path) -> None:
    body = bytearray()
    body += MAGIC
    body += struct.pack("<I", VERSION)
    body += struct.pack("<I", len(store))
    for name, arr in store.items():
        nb = name.encode("utf-8")
        body += struct.pack("<H", len(nb))
        body += nb
        body += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            body += struct.pack("<I", d)
        body += arr.astype("<f4", copy=False).tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    with open(path, "wb") as f:
        f.write(bytes(body))


def load_weights(path) -> WeightStore:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"not a weight file (bad magic): {path}")
    if len(raw) < 16:
        raise BadChecksumError(f"weight file truncated: {path}")
    payload, crc_bytes = raw[:-4], raw[-4:]
    (crc_stored,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise BadChecksumError(f"weight file checksum mismatch: {path}")
    (version,) = struct.unpack_from("<I", payload, 4)
    if version != VERSION:
        raise BadVersionError(f"unsupported weight format version {version}")
    (count,) = struct.unpack_from("<I", payload, 8)

    store = WeightStore()
    off = 12
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", payload, off)
            off += 2
            name = payload[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", payload, off)
            off += 1
            if not 1 <= rank <= 4:
                raise LoadError(f"weight {name!r} has unsupported rank {rank}")
            dims = struct.unpack_from(f"<{rank}I", payload, off)
            off += 4 * rank
            n = int(np.prod(dims))
            data = payload[off : off + 4 * n]
            if len(data) != 4 * n:
                raise LoadError(f"weight file ends inside entry {name!r}")
            off += 4 * n
            store._add(name, np.frombuffer(data, dtype="<f4").reshape(dims))
    except struct.error as e:
        raise LoadError(f"weight file ends inside an entry header: {e}") from e
    if off != len(payload):
        raise LoadError(
            f"{len(payload) - off} trailing bytes after the last weight entry"
        )
    return store


def init_random(cfg, seed: int) -> WeightStore:
    """Seeded store for a model config; every learned weight ~ U[-0.1, 0.1].

    Batch-norm running statistics are buffers, not weights: means are drawn
    from the same range, variances from U[0.5, 1.5] to stay well-conditioned
    (negative variances would be invalid).
    """
    from .model import build_model  # deferred: model depends on this module

    model = build_model(cfg)
    r = np.random.default_rng(np.uint64(seed))
    entries: Dict[str, np.ndarray] = {}
    for name, spec in model.weight_spec():
        if name.endswith(".running_var"):
            entries[name] = r.uniform(0.5, 1.5, spec).astype(np.float32)
        else:
            entries[name] = r.uniform(-0.1, 0.1, spec).astype(np.float32)
    return WeightStore(entries)
