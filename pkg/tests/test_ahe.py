import numpy as np
import pytest

from smddp import ahe, linmodel as lm
from smddp.ahe import (
    Ciphertext,
    EncodingRangeError,
    FixedPointCodec,
    KeyFormatError,
    KeyMismatchError,
    MalformedCiphertextError,
)
from smddp.linmodel import Dataset


def test_keygen_rejects_small():
    with pytest.raises(ValueError):
        ahe.keygen(512)


def test_keygen_distinct_moduli_and_shape(key_1024):
    pk, sk = key_1024
    pk2, _ = ahe.keygen(1024, np.random.default_rng(0xA1))
    assert pk.n != pk2.n
    assert pk.n.bit_length() == 1024
    assert sk.p != sk.q
    assert sk.p.bit_length() == 512 and sk.q.bit_length() == 512


def test_roundtrip_random_plaintexts(key_1024):
    pk, sk = key_1024
    rng = np.random.default_rng(1)
    for _ in range(200):
        m = int.from_bytes(rng.bytes(120), "big") % int(pk.n)
        assert ahe.decrypt(sk, ahe.encrypt(pk, m, rng)) == m


def test_encrypt_zero_and_boundary(key_1024):
    pk, sk = key_1024
    rng = np.random.default_rng(2)
    assert ahe.decrypt(sk, ahe.encrypt(pk, 0, rng)) == 0
    edge = int(pk.n) - 1
    assert ahe.decrypt(sk, ahe.encrypt(pk, edge, rng)) == edge
    with pytest.raises(ValueError):
        ahe.encrypt(pk, int(pk.n), rng)


def test_encryption_is_probabilistic(small_key):
    pk, _ = small_key
    rng = np.random.default_rng(3)
    seen = {int(ahe.encrypt(pk, 42, rng).value) for _ in range(1000)}
    assert len(seen) == 1000


def test_decrypt_rejects_mismatch_and_malformed(small_key, key_1024):
    pk_small, sk_small = small_key
    pk_big, _ = key_1024
    rng = np.random.default_rng(4)
    with pytest.raises(KeyMismatchError):
        ahe.decrypt(sk_small, ahe.encrypt(pk_big, 1, rng))
    # a multiple of p is not a unit mod n^2
    with pytest.raises(MalformedCiphertextError):
        ahe.decrypt(sk_small, Ciphertext(int(sk_small.p), pk_small.n))


def test_loaded_secret_key_decrypts_without_primes(tmp_path, key_1024):
    pk, sk = key_1024
    rng = np.random.default_rng(5)
    ahe.save_secret_key(sk, tmp_path / "s.key")
    loaded = ahe.load_secret_key(tmp_path / "s.key")
    assert loaded.p is None
    for m in (0, 7, 123456789):
        assert ahe.decrypt(loaded, ahe.encrypt(pk, m, rng)) == m


def test_homomorphic_addition(small_key):
    pk, sk = small_key
    rng = np.random.default_rng(6)
    c3, c4 = ahe.encrypt(pk, 3, rng), ahe.encrypt(pk, 4, rng)
    assert ahe.decrypt(sk, ahe.add(pk, c3, c4)) == 7
    zero = ahe.encrypt(pk, 0, rng)
    assert ahe.decrypt(sk, ahe.add(pk, c3, zero)) == 3
    acc = ahe.encrypt(pk, 1, rng)
    for _ in range(24):
        acc = ahe.add(pk, acc, ahe.encrypt(pk, 1, rng))
    assert ahe.decrypt(sk, acc) == 25


def test_addition_wraps_mod_n(small_key):
    pk, sk = small_key
    rng = np.random.default_rng(7)
    a = int(pk.n) - 2
    c = ahe.add(pk, ahe.encrypt(pk, a, rng), ahe.encrypt(pk, 5, rng))
    assert ahe.decrypt(sk, c) == (a + 5) % int(pk.n)


def test_add_rejects_foreign_key(small_key, key_1024):
    pk_small, _ = small_key
    pk_big, _ = key_1024
    rng = np.random.default_rng(8)
    with pytest.raises(KeyMismatchError):
        ahe.add(pk_small, ahe.encrypt(pk_small, 1, rng), ahe.encrypt(pk_big, 1, rng))


def test_codec_examples(small_key):
    pk, _ = small_key
    codec = FixedPointCodec(10**6, pk.n)
    assert codec.encode(0.0) == 0
    assert codec.encode(1.5) == 1_500_000
    assert codec.decode(codec.encode(-2.25)) == -2.25
    assert codec.decode(0) == 0.0


def test_codec_quantization_bound(small_key):
    pk, _ = small_key
    codec = FixedPointCodec(10**6, pk.n)
    rng = np.random.default_rng(9)
    for v in rng.uniform(-1000, 1000, 500):
        assert abs(codec.decode(codec.encode(v)) - v) <= 1.0 / codec.scale


def test_codec_sum_of_encodings(small_key):
    pk, _ = small_key
    codec = FixedPointCodec(10**6, pk.n)
    rng = np.random.default_rng(10)
    vals = rng.uniform(-50, 50, 20)
    total = sum(codec.encode(v) for v in vals) % int(pk.n)
    assert abs(codec.decode(total) - vals.sum()) <= len(vals) / codec.scale


def test_codec_overflow_detected(small_key):
    pk, _ = small_key
    codec = FixedPointCodec(10**6, pk.n)
    with pytest.raises(EncodingRangeError):
        codec.encode(float(codec.limit) / codec.scale * 2.0)


def _random_stats(rng, d, rows=20):
    data = Dataset(rng.uniform(0, 1, (rows, d)), rng.uniform(0, 1, rows))
    return lm.compute_local_statistics(data)


def test_statistics_roundtrip_and_aggregate(small_key):
    pk, sk = small_key
    codec = FixedPointCodec(10**6, pk.n)
    rng_np = np.random.default_rng(11)
    s1, s2 = _random_stats(rng_np, 3), _random_stats(rng_np, 3)
    e1 = ahe.encrypt_statistics(pk, codec, s1, rng_np)
    back = ahe.decrypt_statistics(sk, codec, e1)
    assert np.abs(back.xtx - s1.xtx).max() <= 1.0 / codec.scale
    assert np.abs(back.xty - s1.xty).max() <= 1.0 / codec.scale
    assert abs(back.yty - s1.yty) <= 1.0 / codec.scale

    e2 = ahe.encrypt_statistics(pk, codec, s2, rng_np)
    agg = ahe.decrypt_statistics(sk, codec, ahe.add_statistics(pk, e1, e2))
    plain = lm.aggregate_statistics([s1, s2])
    assert np.abs(agg.xtx - plain.xtx).max() <= 2.0 / codec.scale
    assert np.abs(agg.xty - plain.xty).max() <= 2.0 / codec.scale
    assert abs(agg.yty - plain.yty) <= 2.0 / codec.scale


def test_statistics_zero_and_shape_sweep(small_key):
    pk, sk = small_key
    codec = FixedPointCodec(10**6, pk.n)
    rng_np = np.random.default_rng(12)
    for d in (0, 1, 32):
        rows = max(3, d + 2)
        stats = _random_stats(rng_np, d, rows)
        back = ahe.decrypt_statistics(
            sk, codec, ahe.encrypt_statistics(pk, codec, stats, rng_np)
        )
        assert back.xtx.shape == (d + 1, d + 1)
        assert np.abs(back.xtx - stats.xtx).max() <= 1.0 / codec.scale
    zeros = lm.LocalStatistics(np.zeros((2, 2)), np.zeros(2), 0.0)
    back = ahe.decrypt_statistics(sk, codec, ahe.encrypt_statistics(pk, codec, zeros, rng_np))
    assert np.array_equal(back.xtx, np.zeros((2, 2))) and back.yty == 0.0


def test_statistics_addition_zero_identity(small_key):
    pk, sk = small_key
    codec = FixedPointCodec(10**6, pk.n)
    rng_np = np.random.default_rng(14)
    stats = _random_stats(rng_np, 2)
    enc = ahe.encrypt_statistics(pk, codec, stats, rng_np)
    zeros = lm.LocalStatistics(np.zeros((3, 3)), np.zeros(3), 0.0)
    enc_zero = ahe.encrypt_statistics(pk, codec, zeros, rng_np)
    back = ahe.decrypt_statistics(sk, codec, ahe.add_statistics(pk, enc, enc_zero))
    direct = ahe.decrypt_statistics(sk, codec, enc)
    assert np.array_equal(back.xtx, direct.xtx)
    assert np.array_equal(back.xty, direct.xty)
    assert back.yty == direct.yty


def test_statistics_addition_regroups(small_key):
    pk, sk = small_key
    codec = FixedPointCodec(10**6, pk.n)
    rng_np = np.random.default_rng(13)
    encs = [ahe.encrypt_statistics(pk, codec, _random_stats(rng_np, 2), rng_np) for _ in range(3)]
    left = ahe.add_statistics(pk, ahe.add_statistics(pk, encs[0], encs[1]), encs[2])
    right = ahe.add_statistics(pk, encs[0], ahe.add_statistics(pk, encs[1], encs[2]))
    dl, dr = ahe.decrypt_statistics(sk, codec, left), ahe.decrypt_statistics(sk, codec, right)
    assert np.array_equal(dl.xtx, dr.xtx) and np.array_equal(dl.xty, dr.xty)


def test_pack_uint_roundtrip():
    for v in (0, 1, 255, 256, 2**64, 2**521 - 1):
        buf = ahe.pack_uint(v)
        out, off = ahe.unpack_uint(buf)
        assert out == v and off == len(buf)
    with pytest.raises(ValueError):
        ahe.pack_uint(-1)
    with pytest.raises(KeyFormatError):
        ahe.unpack_uint(b"\x00\x00\x00\x05ab")


def test_key_files_roundtrip(tmp_path, key_1024):
    pk, sk = key_1024
    ahe.save_public_key(pk, tmp_path / "p.key")
    ahe.save_secret_key(sk, tmp_path / "s.key")
    pk2 = ahe.load_public_key(tmp_path / "p.key")
    sk2 = ahe.load_secret_key(tmp_path / "s.key")
    assert pk2 == pk and pk2.bits == pk.bits
    assert sk2.lam == sk.lam and sk2.mu == sk.mu and sk2.public == pk


def test_key_files_reject_garbage(tmp_path, key_1024):
    pk, _ = key_1024
    path = tmp_path / "bad.key"
    path.write_bytes(b"NOPE\x01" + ahe.pack_uint(5))
    with pytest.raises(KeyFormatError):
        ahe.load_public_key(path)
    ahe.save_public_key(pk, path)
    with pytest.raises(KeyFormatError):
        ahe.load_secret_key(path)  # public magic in a secret slot
