"""Byte formats for everything Alice publishes: syndrome frames and hash seeds.

All integers are little-endian.  Bit vectors are packed LSB-first and
prefixed with their bit length as a u32.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .constellation import Constellation, dumps_constellation
from .secrecy import HashSeed, bits_to_int, int_to_bits

SYNDROME_MAGIC = b"WKSY"
HASH_MAGIC = b"WKHS"
VERSION = 1

_FRAME_HEAD = struct.Struct("<4sBIBIQ")  # magic, version, n, m, constellation id, seed


def constellation_id(c: Constellation) -> int:
    return zlib.crc32(dumps_constellation(c).encode())


def _pack_bits(bits) -> bytes:
    b = np.asarray(bits, dtype=np.uint8)
    return struct.pack("<I", b.size) + np.packbits(b, bitorder="little").tobytes()


def _unpack_bits(buf: bytes, pos: int) -> tuple[np.ndarray, int]:
    (nbits,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    nbytes = (nbits + 7) // 8
    if pos + nbytes > len(buf):
        raise ValueError("truncated bit vector")
    raw = np.frombuffer(buf, dtype=np.uint8, count=nbytes, offset=pos)
    return np.unpackbits(raw, bitorder="little")[:nbits].copy(), pos + nbytes


@dataclass
class SyndromeFrame:
    """One reconciliation message: header plus one syndrome per level.

    Rate-1 levels carry an empty syndrome.
    """

    n: int
    rates: tuple[float, ...]
    constellation_id: int
    seed: int
    syndromes: list[np.ndarray]

    @property
    def num_levels(self) -> int:
        return len(self.rates)

    @property
    def payload_bits(self) -> int:
        return int(sum(s.size for s in self.syndromes))

    def to_bytes(self) -> bytes:
        if len(self.syndromes) != len(self.rates):
            raise ValueError("one syndrome per level required")
        out = [_FRAME_HEAD.pack(SYNDROME_MAGIC, VERSION, self.n, len(self.rates), self.constellation_id, self.seed)]
        out.append(struct.pack(f"<{len(self.rates)}d", *self.rates))
        out.extend(_pack_bits(s) for s in self.syndromes)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "SyndromeFrame":
        if len(buf) < _FRAME_HEAD.size:
            raise ValueError("truncated frame header")
        magic, ver, n, m, cid, seed = _FRAME_HEAD.unpack_from(buf, 0)
        if magic != SYNDROME_MAGIC or ver != VERSION:
            raise ValueError("not a syndrome frame")
        pos = _FRAME_HEAD.size
        rates = struct.unpack_from(f"<{m}d", buf, pos)
        pos += 8 * m
        syns = []
        for _ in range(m):
            s, pos = _unpack_bits(buf, pos)
            syns.append(s)
        if pos != len(buf):
            raise ValueError("trailing bytes after syndrome frame")
        return cls(n, tuple(rates), cid, seed, syns)


def dumps_hash_seed(seed: HashSeed) -> bytes:
    """``(w, k, modulus bits, multiplier bits)`` with length prefixes."""
    head = HASH_MAGIC + struct.pack("<BII", VERSION, seed.width, seed.output_bits)
    # modulus has width+1 coefficients, the multiplier width
    return head + _pack_bits(int_to_bits(seed.modulus, seed.width + 1)) + _pack_bits(
        int_to_bits(seed.multiplier, seed.width)
    )


def loads_hash_seed(buf: bytes) -> HashSeed:
    if buf[:4] != HASH_MAGIC:
        raise ValueError("not a hash seed")
    ver, w, k = struct.unpack_from("<BII", buf, 4)
    if ver != VERSION:
        raise ValueError(f"unsupported hash seed version {ver}")
    pos = 4 + 9
    mod_bits, pos = _unpack_bits(buf, pos)
    mul_bits, pos = _unpack_bits(buf, pos)
    if pos != len(buf):
        raise ValueError("trailing bytes after hash seed")
    return HashSeed(w, bits_to_int(mul_bits), bits_to_int(mod_bits), k)
