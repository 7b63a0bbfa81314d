"""Polynomials over GF(2) packed into Python ints (bit i = coefficient of x^i)."""

from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np

# byte -> 16-bit value with the byte's bits interleaved with zeros
_SPREAD = np.array(
    [int("".join(c + "0" for c in format(b, "08b"))[:-1], 2) if b else 0 for b in range(256)],
    dtype="<u2",
)


def clmul(a: int, b: int) -> int:
    """Carry-less product of two bit-packed polynomials."""
    if a.bit_count() > b.bit_count():
        a, b = b, a
    r = 0
    while a:
        low = a & -a
        r ^= b << (low.bit_length() - 1)
        a ^= low
    return r


def square(a: int) -> int:
    if a == 0:
        return 0
    nbytes = (a.bit_length() + 7) // 8
    raw = np.frombuffer(a.to_bytes(nbytes, "little"), dtype=np.uint8)
    return int.from_bytes(_SPREAD[raw].tobytes(), "little")


def degree(a: int) -> int:
    return a.bit_length() - 1


def poly_mod(a: int, f: int) -> int:
    """Remainder of ``a`` modulo ``f`` by schoolbook long division."""
    df = degree(f)
    while a and degree(a) >= df:
        a ^= f << (degree(a) - df)
    return a


def poly_gcd(a: int, b: int) -> int:
    while b:
        a, b = b, poly_mod(a, b)
    return a


def from_exponents(exps: Sequence[int]) -> int:
    f = 0
    for e in exps:
        f ^= 1 << e
    return f


def exponents(f: int) -> tuple[int, ...]:
    out = []
    while f:
        low = f & -f
        out.append(low.bit_length() - 1)
        f ^= low
    return tuple(sorted(out, reverse=True))


class Modulus:
    """Reduction modulo a fixed polynomial; sparse moduli reduce by folding."""

    def __init__(self, f: int):
        if f < 2:
            raise ValueError("modulus must have degree >= 1")
        self.poly = f
        self.width = degree(f)
        self.mask = (1 << self.width) - 1
        self.low = [e for e in exponents(f) if e < self.width]
        # folding is cheap only when the tail is short and well below the top
        self.sparse = len(self.low) <= 5 and max(self.low) <= self.width // 2

    def reduce(self, a: int) -> int:
        if not self.sparse:
            return poly_mod(a, self.poly)
        w, mask, low = self.width, self.mask, self.low
        while a >> w:
            hi = a >> w
            a &= mask
            for e in low:
                a ^= hi << e
        return a

    def mul(self, a: int, b: int) -> int:
        return self.reduce(clmul(a, b))

    def sqr(self, a: int) -> int:
        return self.reduce(square(a))


def _prime_factors(n: int) -> list[int]:
    out, p = [], 2
    while p * p <= n:
        if n % p == 0:
            out.append(p)
            while n % p == 0:
                n //= p
        p += 1
    if n > 1:
        out.append(n)
    return out


def is_irreducible(f: int) -> bool:
    """Rabin's test: ``x^(2^n) = x mod f`` and ``gcd(x^(2^(n/q)) - x, f) = 1``."""
    n = degree(f)
    if n < 1:
        return False
    if n == 1:
        return True
    if not f & 1:
        return False
    mod = Modulus(f)
    checkpoints = {n // q for q in _prime_factors(n)}
    x = 2
    t = x
    for i in range(1, n + 1):
        t = mod.sqr(t)
        if i in checkpoints and poly_gcd(f, t ^ x) != 1:
            return False
    return t == mod.reduce(x)


# Known irreducible trinomials of prime degree, used as field-width ladder
# above the exact-search range.  Each entry is checked by is_irreducible the
# first time it is used.
LADDER_TRINOMIALS: tuple[tuple[int, int], ...] = (
    (521, 32),
    (607, 105),
    (1279, 216),
    (2281, 715),
    (3217, 67),
    (4423, 271),
    (9689, 84),
    (19937, 881),
    (23209, 1530),
    (44497, 8575),
    (110503, 25230),
    (132049, 7000),
)

EXACT_SEARCH_MAX = 512


@lru_cache(maxsize=None)
def find_irreducible(width: int) -> int:
    """Lowest-weight irreducible polynomial of degree ``width``.

    Trinomials ``x^w + x^t + 1`` are tried for increasing ``t``, then
    pentanomials ``x^w + x^a + x^b + x^c + 1`` in lexicographic order of
    ``(a, b, c)``.  Well-known standard moduli are returned first for the
    widths that have them.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    std = STANDARD_MODULI.get(width)
    if std is not None:
        return from_exponents(std)
    if width == 1:
        return 0b11
    top = 1 << width
    for t in range(1, width // 2 + 1):
        f = top | (1 << t) | 1
        if is_irreducible(f):
            return f
    for a in range(3, width):
        for b in range(2, a):
            for c in range(1, b):
                f = top | (1 << a) | (1 << b) | (1 << c) | 1
                if is_irreducible(f):
                    return f
    raise ValueError(f"no irreducible polynomial of degree {width} found")  # pragma: no cover


STANDARD_MODULI: dict[int, tuple[int, ...]] = {
    8: (8, 4, 3, 1, 0),
    16: (16, 5, 3, 1, 0),
    32: (32, 7, 3, 2, 0),
    64: (64, 4, 3, 1, 0),
    128: (128, 7, 2, 1, 0),
    256: (256, 10, 5, 2, 0),
}


@lru_cache(maxsize=None)
def verified_ladder_modulus(width: int) -> int:
    for w, t in LADDER_TRINOMIALS:
        if w == width:
            f = (1 << w) | (1 << t) | 1
            if not is_irreducible(f):
                raise ValueError(f"shipped trinomial x^{w}+x^{t}+1 is reducible")
            return f
    raise KeyError(width)


def field_for_bits(nbits: int) -> int:
    """Irreducible modulus for a field holding ``nbits``-bit inputs.

    Widths up to ``EXACT_SEARCH_MAX`` are matched exactly; longer inputs are
    zero-padded to the next ladder width.
    """
    if nbits < 1:
        raise ValueError("nbits must be >= 1")
    if nbits <= EXACT_SEARCH_MAX:
        return find_irreducible(nbits)
    for w, _ in LADDER_TRINOMIALS:
        if w >= nbits:
            return verified_ladder_modulus(w)
    return find_irreducible(nbits)
