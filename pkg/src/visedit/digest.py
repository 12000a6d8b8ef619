"""Content hashing for replay checks and the artifact store.

64-bit FNV-1a over raw payload bytes.  Digests are rendered as 16-char hex
strings so they can double as artifact ids and JSON values.
"""

from __future__ import annotations

_FNV_OFFSET = 0xCBF2_9CE4_8422_2325
_FNV_PRIME = 0x0000_0100_0000_01B3
_MASK64 = 0xFFFF_FFFF_FFFF_FFFF


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def digest_hex(data: bytes) -> str:
    return f"{fnv1a64(data):016x}"
