"""Binary wire format for the ring protocol.

Frame layout, all integers big-endian:

    4 bytes   magic "SMDP"
    1 byte    version (currently 1)
    1 byte    message kind: 0=bounds, 1=aggregate, 2=publish, 3=setup-params
    4 bytes   payload length
    payload

Payload fields are length-prefixed big-endian unsigned integers for big
numbers (ciphertexts, modulus, codec scale), 4-byte unsigned integers for
counts, and 8-byte IEEE-754 big-endian doubles for reals (bounds vectors,
coefficients, objective error, sensitivity).

    bounds        u32 count | count lower doubles | count upper doubles
    aggregate     u32 hop_count | u32 dim | uint modulus
                  | dim*dim xtx ciphertexts row-major | dim xty | 1 yty
    publish       u32 len | coefficient doubles | err double
                  | u32 count | lower doubles | upper doubles
    setup-params  u32 key_bits | uint modulus | uint codec_scale
                  | sensitivity double | u32 count | lower | upper doubles
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .ahe import Ciphertext, EncryptedStatistics, pack_uint
from .linmodel import ModelResult, NormalizationBounds

__all__ = [
    "MAGIC",
    "VERSION",
    "KIND_BOUNDS",
    "KIND_AGGREGATE",
    "KIND_PUBLISH",
    "KIND_SETUP",
    "KIND_NAMES",
    "WireFormatError",
    "BoundsMessage",
    "AggregateMessage",
    "PublishMessage",
    "SetupMessage",
    "encode_message",
    "decode_message",
    "peek_kind",
]

MAGIC = b"SMDP"
VERSION = 1
HEADER_LEN = 10

KIND_BOUNDS = 0
KIND_AGGREGATE = 1
KIND_PUBLISH = 2
KIND_SETUP = 3
KIND_NAMES = {
    KIND_BOUNDS: "bounds",
    KIND_AGGREGATE: "aggregate",
    KIND_PUBLISH: "publish",
    KIND_SETUP: "setup-params",
}


class WireFormatError(ValueError):
    """Frame bytes violate the documented layout."""


@dataclass(frozen=True, eq=False)
class BoundsMessage:
    """Running column extremes circulating during the setup ring pass."""

    bounds: NormalizationBounds


@dataclass(frozen=True, eq=False)
class AggregateMessage:
    """Homomorphically accumulated encrypted statistics plus contributor count."""

    stats: EncryptedStatistics
    hop_count: int


@dataclass(frozen=True, eq=False)
class PublishMessage:
    """The final model broadcast by the data collector."""

    result: ModelResult


@dataclass(frozen=True, eq=False)
class SetupMessage:
    """Public parameters broadcast after setup: key, codec scale, sensitivity, bounds."""

    key_bits: int
    modulus: int
    codec_scale: int
    sensitivity: float
    bounds: NormalizationBounds


Message = BoundsMessage | AggregateMessage | PublishMessage | SetupMessage


def _pack_doubles(values) -> bytes:
    values = np.asarray(values, dtype=float)
    return struct.pack(f">{len(values)}d", *values)


class _Reader:
    """Cursor over a payload; every read is bounds-checked."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def _take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise WireFormatError("truncated payload")
        chunk = self.buf[self.off : self.off + n]
        self.off += n
        return chunk

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def f64(self, count: int = 1):
        vals = struct.unpack(f">{count}d", self._take(8 * count))
        return vals[0] if count == 1 else np.array(vals)

    def uint(self) -> int:
        length = self.u32()
        if length < 1:
            raise WireFormatError("integer field with empty body")
        return int.from_bytes(self._take(length), "big")

    def done(self):
        if self.off != len(self.buf):
            raise WireFormatError(f"{len(self.buf) - self.off} trailing bytes in payload")


def _pack_bounds(bounds: NormalizationBounds) -> bytes:
    return (
        struct.pack(">I", len(bounds))
        + _pack_doubles(bounds.lower)
        + _pack_doubles(bounds.upper)
    )


def _read_bounds(r: _Reader) -> NormalizationBounds:
    count = r.u32()
    if count < 1:
        raise WireFormatError("bounds with zero columns")
    lower = r.f64(count) if count > 1 else np.array([r.f64()])
    upper = r.f64(count) if count > 1 else np.array([r.f64()])
    return NormalizationBounds(lower, upper)


def _encode_payload(msg: Message) -> tuple[int, bytes]:
    if isinstance(msg, BoundsMessage):
        return KIND_BOUNDS, _pack_bounds(msg.bounds)
    if isinstance(msg, AggregateMessage):
        stats = msg.stats
        parts = [struct.pack(">II", msg.hop_count, stats.dim), pack_uint(stats.yty.n)]
        for row in stats.xtx:
            parts.extend(pack_uint(c.value) for c in row)
        parts.extend(pack_uint(c.value) for c in stats.xty)
        parts.append(pack_uint(stats.yty.value))
        return KIND_AGGREGATE, b"".join(parts)
    if isinstance(msg, PublishMessage):
        res = msg.result
        return KIND_PUBLISH, (
            struct.pack(">I", len(res.coef))
            + _pack_doubles(res.coef)
            + struct.pack(">d", res.err)
            + _pack_bounds(res.bounds)
        )
    if isinstance(msg, SetupMessage):
        return KIND_SETUP, (
            struct.pack(">I", msg.key_bits)
            + pack_uint(msg.modulus)
            + pack_uint(msg.codec_scale)
            + struct.pack(">d", msg.sensitivity)
            + _pack_bounds(msg.bounds)
        )
    raise TypeError(f"not a wire message: {type(msg).__name__}")


def encode_message(msg: Message) -> bytes:
    """Serialize a message into one framed byte string."""
    kind, payload = _encode_payload(msg)
    if len(payload) > 0xFFFFFFFF:
        raise WireFormatError("payload exceeds the 32-bit length field")
    return MAGIC + bytes([VERSION, kind]) + struct.pack(">I", len(payload)) + payload


def peek_kind(data: bytes) -> int:
    """Message kind of a framed byte string, after header validation."""
    if len(data) < HEADER_LEN:
        raise WireFormatError("frame shorter than header")
    if data[:4] != MAGIC:
        raise WireFormatError(f"bad magic {data[:4]!r}")
    if data[4] != VERSION:
        raise WireFormatError(f"unsupported version {data[4]}")
    if data[5] not in KIND_NAMES:
        raise WireFormatError(f"unknown message kind {data[5]}")
    return data[5]


def decode_message(data: bytes) -> Message:
    """Parse one framed byte string back into a message object."""
    kind = peek_kind(data)
    (length,) = struct.unpack_from(">I", data, 6)
    payload = data[HEADER_LEN:]
    if len(payload) != length:
        raise WireFormatError(f"payload length {len(payload)} does not match header {length}")
    if length == 0:
        raise WireFormatError("empty payload")
    r = _Reader(payload)
    if kind == KIND_BOUNDS:
        msg: Message = BoundsMessage(_read_bounds(r))
    elif kind == KIND_AGGREGATE:
        hop_count = r.u32()
        dim = r.u32()
        if dim < 1 or hop_count < 1:
            raise WireFormatError("aggregate frame with empty statistics")
        modulus = r.uint()
        xtx = [[Ciphertext(r.uint(), modulus) for _ in range(dim)] for _ in range(dim)]
        xty = [Ciphertext(r.uint(), modulus) for _ in range(dim)]
        yty = Ciphertext(r.uint(), modulus)
        msg = AggregateMessage(EncryptedStatistics(xtx, xty, yty), hop_count)
    elif kind == KIND_PUBLISH:
        count = r.u32()
        if count < 1:
            raise WireFormatError("publish frame without coefficients")
        coef = r.f64(count) if count > 1 else np.array([r.f64()])
        err = r.f64()
        msg = PublishMessage(ModelResult(coef, err, _read_bounds(r)))
    else:
        key_bits = r.u32()
        modulus = r.uint()
        codec_scale = r.uint()
        sensitivity = r.f64()
        msg = SetupMessage(key_bits, modulus, codec_scale, sensitivity, _read_bounds(r))
    r.done()
    return msg
