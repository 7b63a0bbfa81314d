"""Privacy amplification, key budgeting and one-time-pad protection."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import gf2
from .channel import BRANCH_HASH, Seed, rng_for

LN2 = math.log(2.0)


class NoKeyError(RuntimeError):
    """The leakage budget leaves no extractable key."""


class KeyReuseError(RuntimeError):
    pass


def key_length(n: int, beta: float, i_main: float, i_wiretap: float, s: int, r0: int) -> int:
    """``floor(n beta I(X;Y_M) - n I(X;Y_W) - 2s - 2 - r0)``, clamped at zero."""
    if n < 1:
        raise ValueError("n must be >= 1")
    vals = (beta, i_main, i_wiretap)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("non-finite key-length input")
    raw = n * beta * i_main - n * i_wiretap - 2 * s - 2 - r0
    # absorb float noise on exact integers, e.g. 10951.999999999998
    return max(0, math.floor(raw + 1e-9 * max(1.0, abs(raw))))


@dataclass
class LeakageLedger:
    """Bit accounting for one reconciled block of ``n`` symbols.

    ``reconciliation_bits`` grows through :meth:`disclose` only.  The key
    length follows from the efficiency implied by the disclosed bits:
    ``beta = 1 - (M/n - H(X|Y_M)) / I(X;Y_M)``, so that
    ``n beta I(X;Y_M) = n H(X) - M``.
    """

    n_symbols: int
    source_entropy: float  # H(X) per symbol
    main_info: float  # I(X;Y_M) per symbol
    wiretap_info: float  # I(X;Y_W) per symbol
    safety_exponent: int = 30
    slack_bits: int = 30
    physical_bits: int = 0
    wiretap_info_alt: float | None = None  # I(Y_M;Y_W), reported only
    reconciliation_bits: int = 0
    entries: list[tuple[str, int]] = field(default_factory=list)

    def __post_init__(self):
        if self.n_symbols < 1:
            raise ValueError("n_symbols must be >= 1")
        if self.safety_exponent < 0 or self.slack_bits < 0:
            raise ValueError("s and r0 must be non-negative")

    def disclose(self, bits: int, what: str = "") -> None:
        if bits < 0:
            raise ValueError("cannot disclose a negative number of bits")
        self.reconciliation_bits += int(bits)
        self.entries.append((what, int(bits)))

    @property
    def source_entropy_bits(self) -> float:
        return self.n_symbols * self.source_entropy

    @property
    def wiretap_info_bits(self) -> float:
        return self.n_symbols * self.wiretap_info

    @property
    def cond_entropy(self) -> float:
        return self.source_entropy - self.main_info

    @property
    def efficiency(self) -> float:
        return efficiency_from_disclosure(
            self.reconciliation_bits / self.n_symbols, self.cond_entropy, self.main_info
        )

    @property
    def secrecy_lower_bound_rate(self) -> float:
        """``I(X;Y_M) - min(I(X;Y_W), I(Y_M;Y_W))`` per symbol."""
        eve = self.wiretap_info
        if self.wiretap_info_alt is not None:
            eve = min(eve, self.wiretap_info_alt)
        return self.main_info - eve

    @property
    def renyi_lower_bound(self) -> float:
        """``n H(X|Y_W) - M - 2s - 2``, valid with probability ``1 - 2^-s``."""
        return (
            self.n_symbols * (self.source_entropy - self.wiretap_info)
            - self.reconciliation_bits
            - 2 * self.safety_exponent
            - 2
        )

    @property
    def key_length_bits(self) -> int:
        if self.main_info <= 0:
            return 0
        return key_length(
            self.n_symbols,
            self.efficiency,
            self.main_info,
            self.wiretap_info,
            self.safety_exponent,
            self.slack_bits,
        )

    def snapshot(self) -> dict:
        d = asdict(self)
        d["entries"] = list(self.entries)
        d["key_length_bits"] = self.key_length_bits
        d["efficiency"] = self.efficiency
        return d


def efficiency_from_disclosure(disclosed_per_symbol: float, cond_entropy: float, mutual_info: float) -> float:
    """Reconciliation efficiency for ``disclosed_per_symbol`` public bits.

    With ``M = n H(X|Y)(1 + eps)``, ``beta = 1 - eps H(X|Y) / I(X;Y)``
    reduces to ``1 - (M/n - H(X|Y)) / I(X;Y)``.
    """
    return 1.0 - (disclosed_per_symbol - cond_entropy) / mutual_info


# -- hashing -----------------------------------------------------------------


def bits_to_int(bits) -> int:
    """Pack a 0/1 vector into an int, element i becoming bit i."""
    b = np.asarray(bits, dtype=np.uint8)
    if b.size == 0:
        return 0
    return int.from_bytes(np.packbits(b, bitorder="little").tobytes(), "little")


def int_to_bits(value: int, nbits: int) -> np.ndarray:
    if nbits == 0:
        return np.zeros(0, dtype=np.uint8)
    raw = np.frombuffer(value.to_bytes((nbits + 7) // 8, "little"), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:nbits].copy()


@dataclass(frozen=True)
class HashSeed:
    """Member ``h_c`` of the family ``x -> lowest k bits of c*x in GF(2^w)``."""

    width: int
    multiplier: int
    modulus: int
    output_bits: int

    def __post_init__(self):
        if gf2.degree(self.modulus) != self.width:
            raise ValueError("modulus degree must equal the field width")
        if not 0 <= self.multiplier < (1 << self.width):
            raise ValueError("multiplier must be a field element")
        if self.output_bits > self.width:
            raise ValueError("cannot output more bits than the field width")
        if self.output_bits < 0:
            raise ValueError("output_bits must be >= 0")

    @classmethod
    def for_width(cls, width: int, multiplier: int, output_bits: int) -> "HashSeed":
        return cls(width, multiplier, gf2.find_irreducible(width), output_bits)


def gf_multiply_hash(seed: HashSeed, x_bits) -> np.ndarray:
    """Hash a bit vector: carry-less ``c * x`` reduced modulo the field polynomial.

    Inputs shorter than the field width are zero-padded (an injective
    embedding, so the family stays universal).
    """
    x = np.asarray(x_bits, dtype=np.uint8)
    if x.size > seed.width:
        raise ValueError(f"input has {x.size} bits, field width is {seed.width}")
    mod = gf2.Modulus(seed.modulus)
    prod = mod.mul(seed.multiplier, bits_to_int(x))
    return int_to_bits(prod & ((1 << seed.output_bits) - 1), seed.output_bits)


def draw_hash_seed(width: int, output_bits: int, seed: Seed, modulus: int | None = None) -> HashSeed:
    """Uniform nonzero multiplier for a field of the given width."""
    f = modulus if modulus is not None else gf2.field_for_bits(width)
    w = gf2.degree(f)
    rng = rng_for(seed, BRANCH_HASH)
    c = 0
    while c == 0:
        nbytes = (w + 7) // 8
        c = int.from_bytes(rng.bytes(nbytes), "little") & ((1 << w) - 1)
    return HashSeed(w, c, f, output_bits)


class SecretKey:
    """A distilled key whose bits can each be consumed once."""

    def __init__(self, bits, provenance: dict | None = None, uncertainty_lower_bound: float | None = None):
        self.bits = np.asarray(bits, dtype=np.uint8).copy()
        self.bits.setflags(write=False)
        self.provenance = dict(provenance or {})
        k = self.bits.size
        self.uncertainty_lower_bound = float(k if uncertainty_lower_bound is None else uncertainty_lower_bound)
        if self.uncertainty_lower_bound > k:
            raise ValueError("uncertainty bound cannot exceed the key length")
        self._next = 0

    def __len__(self):
        return int(self.bits.size)

    @property
    def remaining(self) -> int:
        return len(self) - self._next

    def take(self, nbits: int) -> np.ndarray:
        if nbits > self.remaining:
            if self._next:
                raise KeyReuseError(
                    f"need {nbits} fresh key bits, only {self.remaining} unused remain"
                )
            raise ValueError(f"message of {nbits} bits exceeds the {len(self)}-bit key")
        out = self.bits[self._next : self._next + nbits]
        self._next += nbits
        return out


def privacy_amplify(
    s_bits,
    ledger: LeakageLedger,
    seed: Seed,
    modulus: int | None = None,
) -> tuple[SecretKey, HashSeed]:
    """Compress the reconciled sequence to the ledger's key length."""
    k = ledger.key_length_bits
    if k < 1:
        raise NoKeyError(
            f"leakage budget leaves no key (n={ledger.n_symbols}, "
            f"disclosed={ledger.reconciliation_bits})"
        )
    s_bits = np.asarray(s_bits, dtype=np.uint8)
    hseed = draw_hash_seed(max(s_bits.size, k), k, seed, modulus=modulus)
    key_bits = gf_multiply_hash(hseed, s_bits)
    prov = ledger.snapshot()
    prov["confidence"] = 1.0 - 2.0 ** (-ledger.safety_exponent)
    prov["note"] = "bound assumes the reconciled sequence is typical"
    bound = k - 2.0 ** (-ledger.slack_bits) / LN2
    return SecretKey(key_bits, prov, bound), hseed


def one_time_pad(key: SecretKey, message) -> np.ndarray:
    """XOR ``message`` with the next unused key bits; decryption is the same call."""
    msg = np.asarray(message, dtype=np.uint8)
    return np.bitwise_xor(msg, key.take(msg.size))


class KeyReservoir:
    """Pool of fresh key bits accumulated over several extractions."""

    def __init__(self):
        self._chunks: list[np.ndarray] = []
        self.extracted = 0
        self.consumed = 0

    def add(self, key: SecretKey) -> None:
        fresh = key.take(key.remaining)
        self._chunks.append(fresh)
        self.extracted += fresh.size

    @property
    def available(self) -> int:
        return self.extracted - self.consumed

    def draw(self, nbits: int) -> SecretKey:
        if nbits > self.available:
            raise NoKeyError(f"reservoir holds {self.available} bits, {nbits} requested")
        pool = np.concatenate(self._chunks) if self._chunks else np.zeros(0, np.uint8)
        out = pool[self.consumed : self.consumed + nbits]
        self.consumed += nbits
        return SecretKey(out, {"source": "reservoir"})


# -- imperfect CSI -----------------------------------------------------------


def imperfect_csi_key_bound(n: int, c_wiretap_true: float, c_wiretap_est: float, alpha: float) -> float:
    """Deficit ``2^(n (C_W - C^_W - alpha)) / ln 2`` in Eve's key uncertainty."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    exponent = n * (c_wiretap_true - c_wiretap_est - alpha)
    if exponent > 1000:
        return math.inf
    return 2.0**exponent / LN2


def csi_key_is_secret(c_wiretap_true: float, c_wiretap_est: float, alpha: float) -> bool:
    """A key stays secret when the wiretap capacity was not underestimated by more than ``alpha``."""
    return c_wiretap_true - c_wiretap_est <= alpha
