import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cirche.mockhe import (
    KeyContext,
    MockHEError,
    OpCounter,
    decrypt,
    encrypt,
    he_add,
    he_add_plain,
    he_pmult,
    he_rot,
    he_sub,
    zero_ciphertext,
)
from cirche.ring import find_prime

CTX = find_prime(41, 64)


def keys(seed=0):
    return KeyContext(seed, CTX)


def rand(rng):
    return rng.integers(0, CTX.p, CTX.n, dtype=np.uint64)


def test_encrypt_decrypt_round_trip(rng):
    k = keys(3)
    for _ in range(100):
        v = rand(rng)
        assert np.array_equal(decrypt(encrypt(v, k), k), v)
    zero = np.zeros(CTX.n, dtype=np.uint64)
    assert not decrypt(encrypt(zero, k), k).any()


def test_different_seeds_mask_differently(rng):
    v = rand(rng)
    a, b = encrypt(v, keys(1)), encrypt(v, keys(2))
    assert not np.array_equal(a.mask, b.mask)
    assert np.array_equal(decrypt(a, keys(1)), decrypt(b, keys(2)))


def test_same_seed_reproduces_masks(rng):
    v = rand(rng)
    assert np.array_equal(encrypt(v, keys(9)).slots, encrypt(v, keys(9)).slots)


def test_plaintext_length_checked():
    with pytest.raises(MockHEError):
        encrypt(np.zeros(CTX.n - 1, dtype=np.uint64), keys())


def test_pmult(rng):
    k, c = keys(), OpCounter(n=CTX.n)
    v, w = rand(rng), rand(rng)
    ct = encrypt(v, k)
    assert np.array_equal(decrypt(he_pmult(ct, np.ones(CTX.n, dtype=np.uint64), c, CTX), k), v)
    assert not decrypt(he_pmult(ct, np.zeros(CTX.n, dtype=np.uint64), c, CTX), k).any()
    out = he_pmult(ct, w, c, CTX)
    assert [int(x) for x in decrypt(out, k)] == [int(a) * int(b) % CTX.p for a, b in zip(v, w)]
    assert out.depth == 1 and c.n_pmult == 3


def test_rotation(rng):
    k, c = keys(), OpCounter(n=CTX.n)
    v = rand(rng)
    ct = encrypt(v, k)
    assert np.array_equal(decrypt(he_rot(ct, 0, c), k), v) and c.n_rot == 0
    ramp = encrypt(np.arange(CTX.n, dtype=np.uint64), k)
    assert decrypt(he_rot(ramp, 1, c), k).tolist() == list(range(1, CTX.n)) + [0]
    for a, b in [(3, 5), (60, 10), (1, 63)]:
        twice = he_rot(he_rot(ct, a, c), b, c)
        assert np.array_equal(decrypt(twice, k), np.roll(v, -((a + b) % CTX.n)))
    with pytest.raises(MockHEError):
        he_rot(ct, CTX.n, c)
    with pytest.raises(MockHEError):
        he_rot(ct, -1, c)


def test_add(rng):
    k, c = keys(), OpCounter(n=CTX.n)
    v, w = rand(rng), rand(rng)
    a, b = encrypt(v, k), encrypt(w, k)
    assert np.array_equal(decrypt(he_add(a, zero_ciphertext(CTX), c, CTX), k), v)
    assert np.array_equal(decrypt(he_add(a, b, c, CTX), k), decrypt(he_add(b, a, c, CTX), k))
    assert [int(x) for x in decrypt(he_add(a, b, c, CTX), k)] == [(int(x) + int(y)) % CTX.p for x, y in zip(v, w)]
    assert np.array_equal(decrypt(he_sub(he_add(a, b, c, CTX), b, c, CTX), k), v)


def test_ciphertext_size():
    assert OpCounter().ct_size_bytes == 223232
    c = OpCounter(n_ct_sent=3)
    assert c.bytes_sent == 3 * 223232


def _plain_apply(op, arg, v, w):
    p = CTX.p
    if op == "add":
        return [(int(a) + int(b)) % p for a, b in zip(v, w)]
    if op == "pmult":
        return [int(a) * int(b) % p for a, b in zip(v, w)]
    if op == "addp":
        return [(int(a) + int(b)) % p for a, b in zip(v, w)]
    return list(np.roll(np.asarray(v, dtype=np.uint64), -arg))


OPS = st.lists(st.tuples(st.sampled_from(["add", "pmult", "addp", "rot"]), st.integers(0, CTX.n - 1)), max_size=50)


@given(OPS, st.integers(0, 2**31))
def test_random_op_sequences_are_homomorphic(ops, seed):
    rng = np.random.default_rng(seed)
    k = keys(seed)
    counter = OpCounter(n=CTX.n)
    plain = rand(rng)
    other = rand(rng)
    ct, ct_other = encrypt(plain, k), encrypt(other, k)
    cur = [int(x) for x in plain]
    for op, arg in ops:
        pt = rand(rng)
        if op == "add":
            ct = he_add(ct, ct_other, counter, CTX)
            cur = _plain_apply(op, arg, cur, other)
        elif op == "pmult":
            ct = he_pmult(ct, pt, counter, CTX)
            cur = _plain_apply(op, arg, cur, pt)
        elif op == "addp":
            ct = he_add_plain(ct, pt, counter, CTX)
            cur = _plain_apply(op, arg, cur, pt)
        else:
            ct = he_rot(ct, arg, counter)
            cur = _plain_apply(op, arg, cur, None)
    assert [int(x) for x in decrypt(ct, k)] == [int(x) for x in cur]


@given(OPS)
def test_counters_depend_only_on_operations(ops):
    tallies = []
    for seed in (1, 2):
        rng = np.random.default_rng(seed)
        counter = OpCounter(n=CTX.n)
        ct = encrypt(rand(rng), keys(seed))
        for op, arg in ops:
            if op == "pmult":
                ct = he_pmult(ct, rand(rng), counter, CTX)
            elif op == "rot":
                ct = he_rot(ct, arg, counter)
            else:
                ct = he_add_plain(ct, rand(rng), counter, CTX)
        tallies.append(counter.as_dict())
    assert tallies[0] == tallies[1]


def test_counter_merge():
    a = OpCounter(n=64, n_pmult=2, n_rot=1)
    a.merge(OpCounter(n=64, n_pmult=3, n_ct_sent=4))
    assert (a.n_pmult, a.n_rot, a.n_ct_sent) == (5, 1, 4)
    with pytest.raises(MockHEError):
        a.merge(OpCounter(n=128))
