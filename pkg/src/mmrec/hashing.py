"""64-bit FNV-1a, scalar and vectorized over uint64 arrays."""

import struct

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & _MASK
    return h


def hash_id(raw_id: int, table_size: int) -> int:
    """Map a raw non-negative id into ``[0, table_size)``."""
    if table_size < 1:
        raise ValueError(f"table_size must be >= 1, got {table_size}")
    if raw_id < 0:
        raise ValueError(f"raw_id must be non-negative, got {raw_id}")
    return fnv1a64(struct.pack("<Q", raw_id)) % table_size


def hash_ids(raw_ids, table_size: int) -> np.ndarray:
    """Vectorized ``hash_id``; bit-identical to the scalar version."""
    if table_size < 1:
        raise ValueError(f"table_size must be >= 1, got {table_size}")
    ids = np.asarray(raw_ids, dtype=np.uint64)
    h = np.full(ids.shape, FNV_OFFSET, dtype=np.uint64)
    prime = np.uint64(FNV_PRIME)
    with np.errstate(over="ignore"):
        for shift in range(0, 64, 8):
            h ^= (ids >> np.uint64(shift)) & np.uint64(0xFF)
            h *= prime
    return (h % np.uint64(table_size)).astype(np.int64)
