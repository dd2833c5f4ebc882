"""Additively homomorphic public-key encryption with a fixed-point codec.

Paillier construction with generator g = n + 1: a ciphertext of m under
modulus n is (1 + mn) * r^n mod n^2 for fresh random r, and the product of two
ciphertexts decrypts to the sum of their plaintexts mod n. Only addition is
ever evaluated on ciphertexts.

Real-valued statistics enter the plaintext ring Z_n through a fixed-point
codec: v maps to round(v * scale), negatives are represented in the upper half
of the ring, and the encoder enforces headroom for up to 2^16 additions so
aggregated sums cannot wrap.

Serialization uses length-prefixed big-endian unsigned integers throughout.
Key files carry a 4-byte magic ("SMPK" public, "SMSK" secret) and a version
byte; the public file stores (bits, n) and the secret file stores (n, lambda,
mu). A secret key loaded from file decrypts via lambda and mu; a freshly
generated one also keeps its primes and decrypts faster through the CRT.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import gmpy2
from gmpy2 import mpz

from .linmodel import LocalStatistics

__all__ = [
    "PublicKey",
    "SecretKey",
    "Ciphertext",
    "FixedPointCodec",
    "EncryptedStatistics",
    "KeyMismatchError",
    "MalformedCiphertextError",
    "EncodingRangeError",
    "KeyFormatError",
    "keygen",
    "keypair_from_primes",
    "encrypt",
    "decrypt",
    "add",
    "encrypt_statistics",
    "add_statistics",
    "decrypt_statistics",
    "pack_uint",
    "unpack_uint",
    "save_public_key",
    "load_public_key",
    "save_secret_key",
    "load_secret_key",
]

MIN_KEY_BITS = 1024
DEFAULT_KEY_BITS = 2048
# Miller-Rabin rounds; error probability at most 4^-40 = 2^-80.
_MR_ROUNDS = 40
# Aggregation headroom: encodings stay below n / 2^17 so 2^16 additions fit.
ADDITION_HEADROOM_BITS = 16

_PUBLIC_MAGIC = b"SMPK"
_SECRET_MAGIC = b"SMSK"
_KEY_VERSION = 1


class KeyMismatchError(ValueError):
    """Operands belong to different key pairs (modulus check failed)."""


class MalformedCiphertextError(ValueError):
    """Ciphertext value is not a valid residue for this key."""


class EncodingRangeError(OverflowError):
    """Real value too large for the fixed-point ring with aggregation headroom."""


class KeyFormatError(ValueError):
    """Key file bytes do not match the documented layout."""


@dataclass(frozen=True)
class PublicKey:
    """Paillier public key: modulus n, its square, and generator n + 1."""

    n: int
    bits: int
    nsq: int = field(init=False, repr=False)
    g: int = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "n", mpz(self.n))
        object.__setattr__(self, "nsq", self.n * self.n)
        object.__setattr__(self, "g", self.n + 1)

    def __eq__(self, other):
        return isinstance(other, PublicKey) and self.n == other.n

    def __hash__(self):
        return hash(int(self.n))


@dataclass(frozen=True)
class SecretKey:
    """Paillier secret key: Carmichael value lam and decryption inverse mu.

    The primes are retained only on freshly generated keys (they are not part
    of the file format) and enable CRT-accelerated decryption.
    """

    public: PublicKey
    lam: int
    mu: int
    p: int | None = field(default=None, repr=False)
    q: int | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "lam", mpz(self.lam))
        object.__setattr__(self, "mu", mpz(self.mu))
        if self.p is not None:
            p, q = mpz(self.p), mpz(self.q)
            object.__setattr__(self, "p", p)
            object.__setattr__(self, "q", q)
            # Precomputed CRT pieces: h_x = (L_x(g^(x-1) mod x^2))^-1 mod x.
            object.__setattr__(self, "_psq", p * p)
            object.__setattr__(self, "_qsq", q * q)
            object.__setattr__(self, "_hp", gmpy2.invert((p - 1) * q % p, p))
            object.__setattr__(self, "_hq", gmpy2.invert((q - 1) * p % q, q))
            object.__setattr__(self, "_qinv_p", gmpy2.invert(q, p))


@dataclass(frozen=True)
class Ciphertext:
    """A residue mod n^2; carries its modulus so key mismatches are detectable."""

    value: int
    n: int


@dataclass(frozen=True)
class FixedPointCodec:
    """Maps reals to Z_n by round(v * scale), negatives in the upper half."""

    scale: int
    modulus: int

    def __post_init__(self):
        if self.scale < 1:
            raise ValueError("scale must be a positive integer")
        object.__setattr__(self, "modulus", mpz(self.modulus))

    @property
    def limit(self) -> int:
        """Largest representable magnitude (exclusive), with addition headroom."""
        return self.modulus >> (1 + ADDITION_HEADROOM_BITS)

    def encode(self, v: float) -> int:
        q = int(round(v * self.scale))
        if abs(q) >= self.limit:
            raise EncodingRangeError(
                f"|{v}| * {self.scale} exceeds the representable range of the modulus"
            )
        return q % self.modulus

    def decode(self, m: int) -> float:
        m = mpz(m) % self.modulus
        if m > self.modulus // 2:
            m -= self.modulus
        return float(m) / self.scale


@dataclass(frozen=True)
class EncryptedStatistics:
    """Element-wise encryption of one (possibly aggregated) statistics triple."""

    xtx: list[list[Ciphertext]]
    xty: list[Ciphertext]
    yty: Ciphertext

    @property
    def dim(self) -> int:
        return len(self.xty)


def _random_bits(rng, bits: int) -> mpz:
    nbytes = (bits + 7) // 8
    value = mpz(int.from_bytes(rng.bytes(nbytes), "big"))
    return value & ((mpz(1) << bits) - 1)


def _random_prime(rng, bits: int) -> mpz:
    # Top two bits forced so the product of two such primes has full length.
    high = (mpz(3) << (bits - 2)) | 1
    while True:
        cand = _random_bits(rng, bits) | high
        if gmpy2.is_prime(cand, _MR_ROUNDS):
            return cand


def keygen(bits: int = DEFAULT_KEY_BITS, rng=None) -> tuple[PublicKey, SecretKey]:
    """Generate a key pair with two distinct primes of bits/2 each.

    ``rng`` is a numpy Generator (or anything with a ``bytes`` method); pass a
    seeded one for reproducible keys.
    """
    if bits < MIN_KEY_BITS:
        raise ValueError(f"key size {bits} below minimum {MIN_KEY_BITS}")
    if rng is None:
        import numpy as np

        rng = np.random.default_rng()
    return keypair_from_primes(_random_prime(rng, bits // 2), _random_prime(rng, bits // 2))


def keypair_from_primes(p: int, q: int) -> tuple[PublicKey, SecretKey]:
    """Build a key pair from two given primes.

    Exists for deterministic fixtures and small test keys; no size floor is
    enforced here, so production callers should go through :func:`keygen`.
    """
    p, q = mpz(p), mpz(q)
    if p == q:
        raise ValueError("primes must be distinct")
    n = p * q
    public = PublicKey(n, n.bit_length())
    lam = gmpy2.lcm(p - 1, q - 1)
    mu = gmpy2.invert(lam, n)
    return public, SecretKey(public, lam, mu, p, q)


def _random_unit(rng, n: mpz) -> mpz:
    # 64 spare bits make the modulo bias negligible.
    span_bits = n.bit_length() + 64
    while True:
        r = _random_bits(rng, span_bits) % (n - 1) + 1
        if gmpy2.gcd(r, n) == 1:
            return r


def encrypt(pk: PublicKey, m: int, rng) -> Ciphertext:
    """Probabilistic encryption of m in Z_n: (1 + mn) * r^n mod n^2."""
    m = mpz(m)
    if not 0 <= m < pk.n:
        raise ValueError("plaintext outside Z_n")
    r = _random_unit(rng, pk.n)
    c = (1 + m * pk.n) % pk.nsq * gmpy2.powmod(r, pk.n, pk.nsq) % pk.nsq
    return Ciphertext(c, pk.n)


def _l_over(u: mpz, x: mpz) -> mpz:
    return (u - 1) // x

def decrypt(sk: SecretKey, c: Ciphertext) -> int:
    """Recover the plaintext: L(c^lam mod n^2) * mu mod n."""
    pk = sk.public
    if c.n != pk.n:
        raise KeyMismatchError("ciphertext was produced under a different modulus")
    value = mpz(c.value)
    if not 1 <= value < pk.nsq or gmpy2.gcd(value, pk.nsq) != 1:
        raise MalformedCiphertextError("ciphertext is not a unit mod n^2")
    if sk.p is not None:
        mp = _l_over(gmpy2.powmod(value, sk.p - 1, sk._psq), sk.p) * sk._hp % sk.p
        mq = _l_over(gmpy2.powmod(value, sk.q - 1, sk._qsq), sk.q) * sk._hq % sk.q
        return int((((mp - mq) * sk._qinv_p % sk.p) * sk.q + mq) % pk.n)
    return int(_l_over(gmpy2.powmod(value, sk.lam, pk.nsq), pk.n) * sk.mu % pk.n)


def add(pk: PublicKey, c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    """Homomorphic addition: the product of ciphertexts mod n^2."""
    if c1.n != pk.n or c2.n != pk.n:
        raise KeyMismatchError("ciphertexts do not match the public key modulus")
    return Ciphertext(mpz(c1.value) * c2.value % pk.nsq, pk.n)


def encrypt_statistics(
    pk: PublicKey, codec: FixedPointCodec, stats: LocalStatistics, rng
) -> EncryptedStatistics:
    """Encode then encrypt every entry of the statistics triple."""
    if codec.modulus != pk.n:
        raise KeyMismatchError("codec modulus does not match the public key")
    xtx = [[encrypt(pk, codec.encode(v), rng) for v in row] for row in stats.xtx]
    xty = [encrypt(pk, codec.encode(v), rng) for v in stats.xty]
    return EncryptedStatistics(xtx, xty, encrypt(pk, codec.encode(stats.yty), rng))


def add_statistics(
    pk: PublicKey, a: EncryptedStatistics, b: EncryptedStatistics
) -> EncryptedStatistics:
    """Element-wise homomorphic addition of two encrypted statistics triples."""
    if a.dim != b.dim:
        raise ValueError(f"encrypted statistics shape mismatch: {a.dim} vs {b.dim}")
    xtx = [
        [add(pk, x, y) for x, y in zip(ra, rb)] for ra, rb in zip(a.xtx, b.xtx)
    ]
    xty = [add(pk, x, y) for x, y in zip(a.xty, b.xty)]
    return EncryptedStatistics(xtx, xty, add(pk, a.yty, b.yty))


def decrypt_statistics(
    sk: SecretKey, codec: FixedPointCodec, enc: EncryptedStatistics
) -> LocalStatistics:
    """Decrypt then decode every entry back into a plaintext statistics triple."""
    xtx = [[codec.decode(decrypt(sk, c)) for c in row] for row in enc.xtx]
    xty = [codec.decode(decrypt(sk, c)) for c in enc.xty]
    return LocalStatistics(xtx, xty, codec.decode(decrypt(sk, enc.yty)))


# -- serialization ------------------------------------------------------------

def pack_uint(value: int) -> bytes:
    """Length-prefixed big-endian unsigned integer (4-byte length header)."""
    value = int(value)
    if value < 0:
        raise ValueError("cannot pack a negative integer")
    raw = value.to_bytes(max(1, (value.bit_length() + 7) // 8), "big")
    return struct.pack(">I", len(raw)) + raw


def unpack_uint(buf: bytes, offset: int = 0) -> tuple[int, int]:
    """Inverse of :func:`pack_uint`; returns (value, next offset)."""
    if offset + 4 > len(buf):
        raise KeyFormatError("truncated integer length header")
    (length,) = struct.unpack_from(">I", buf, offset)
    offset += 4
    if length < 1 or offset + length > len(buf):
        raise KeyFormatError("truncated integer payload")
    return int.from_bytes(buf[offset : offset + length], "big"), offset + length


def _key_header(magic: bytes) -> bytes:
    return magic + bytes([_KEY_VERSION])


def _check_key_header(buf: bytes, magic: bytes) -> int:
    if len(buf) < 5 or buf[:4] != magic:
        raise KeyFormatError(f"bad magic; expected {magic!r}")
    if buf[4] != _KEY_VERSION:
        raise KeyFormatError(f"unsupported key file version {buf[4]}")
    return 5


def save_public_key(pk: PublicKey, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(_key_header(_PUBLIC_MAGIC) + struct.pack(">I", pk.bits) + pack_uint(pk.n))


def load_public_key(path: str) -> PublicKey:
    with open(path, "rb") as fh:
        buf = fh.read()
    off = _check_key_header(buf, _PUBLIC_MAGIC)
    if off + 4 > len(buf):
        raise KeyFormatError("truncated public key file")
    (bits,) = struct.unpack_from(">I", buf, off)
    n, off = unpack_uint(buf, off + 4)
    return PublicKey(n, bits)


def save_secret_key(sk: SecretKey, path: str) -> None:
    payload = pack_uint(sk.public.n) + pack_uint(sk.lam) + pack_uint(sk.mu)
    with open(path, "wb") as fh:
        fh.write(_key_header(_SECRET_MAGIC) + payload)


def load_secret_key(path: str) -> SecretKey:
    with open(path, "rb") as fh:
        buf = fh.read()
    off = _check_key_header(buf, _SECRET_MAGIC)
    n, off = unpack_uint(buf, off)
    lam, off = unpack_uint(buf, off)
    mu, off = unpack_uint(buf, off)
    return SecretKey(PublicKey(n, mpz(n).bit_length()), lam, mu)
