"""Additively homomorphic encryption in isolation.

Multiplying two Paillier ciphertexts yields a ciphertext of the sum of the
plaintexts; a fixed-point codec carries real-valued statistics in and out of
the integer ring.
"""

import numpy as np

from smddp import ahe

pk, sk = ahe.keygen(bits=1024, rng=np.random.default_rng(0))
print(f"generated a {pk.n.bit_length()}-bit modulus")

rng = np.random.default_rng(1)
c3 = ahe.encrypt(pk, 3, rng)
c4 = ahe.encrypt(pk, 4, rng)
print("Dec(E(3) * E(4)) =", ahe.decrypt(sk, ahe.add(pk, c3, c4)))

# same plaintext, fresh randomness: ciphertexts never repeat
c3b = ahe.encrypt(pk, 3, rng)
print("two encryptions of 3 differ:", c3.value != c3b.value)

# reals ride through a fixed-point codec
codec = ahe.FixedPointCodec(scale=10**6, modulus=pk.n)
values = [-2.25, 0.5, 3.141593]
total = None
for v in values:
    c = ahe.encrypt(pk, codec.encode(v), rng)
    total = c if total is None else ahe.add(pk, total, c)
decoded = codec.decode(ahe.decrypt(sk, total))
print(f"sum of {values} through the ciphertext domain: {decoded}")
assert abs(decoded - sum(values)) <= len(values) / codec.scale
