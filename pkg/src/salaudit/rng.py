"""Deterministic random stream derivation.

Every stochastic choice in a run is drawn from a generator seeded by
``derive_stream_seed(master, tag, indices)``. The mixing function is a
keyed BLAKE2b hash over a fixed little-endian encoding of its inputs, so
results depend only on the master seed and the stream's coordinates, never
on execution order or worker count.

Encoding (stable across versions)::

    u64 master | u32 len(tag) | tag utf-8 | u32 len(indices) | i64 index ...

hashed with ``blake2b(digest_size=8, person=b"salaudit.rng.v1")`` and read
back as an unsigned little-endian 64-bit integer.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Iterable

import numpy as np

from .errors import ContractError

_PERSON = b"salaudit.rng.v1"
_U64 = (1 << 64) - 1


def derive_stream_seed(master: int, tag: str, indices: Iterable[int] = ()) -> int:
    if not 0 <= int(master) <= _U64:
        raise ContractError(f"master seed must fit in an unsigned 64-bit integer, got {master}")
    idx = [int(i) for i in indices]
    h = hashlib.blake2b(digest_size=8, person=_PERSON)
    tag_bytes = tag.encode("utf-8")
    h.update(struct.pack("<QI", int(master), len(tag_bytes)))
    h.update(tag_bytes)
    h.update(struct.pack("<I", len(idx)))
    for i in idx:
        h.update(struct.pack("<q", i))
    return int.from_bytes(h.digest(), "little")


def stream(master: int, tag: str, *indices: int) -> np.random.Generator:
    """Return a fresh generator for the stream at ``(master, tag, indices)``."""
    return np.random.Generator(np.random.PCG64(derive_stream_seed(master, tag, indices)))
