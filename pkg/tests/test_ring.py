import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cirche.ring import (
    Poly,
    RingError,
    default_context,
    find_prime,
    is_prime,
    mulmod,
    ntt_cyclic,
    ntt_negacyclic,
    poly_mul_cyclic,
    poly_mul_negacyclic,
)
from cirche.verify import schoolbook_cyclic, schoolbook_negacyclic


def trial_division_prime(m):
    if m < 2:
        return False
    k = 2
    while k * k <= m:
        if m % k == 0:
            return False
        k += 1
    return True


def sieve_prime(bits, n):
    p = 1 << (bits - 1)
    while not (p % (2 * n) == 1 and trial_division_prime(p)):
        p += 1
    return p


def test_default_modulus_pinned():
    ctx = default_context()
    assert (ctx.p, ctx.n, ctx.root_2n) == (1099511922689, 8192, 299284966050)
    assert ctx.p.bit_length() == 41


@pytest.mark.parametrize(
    "n,p,root",
    [
        (64, 1099511628161, 662405200669),
        (256, 1099511630849, 92385197730),
        (512, 1099511630849, 915831568638),
        (1024, 1099511678977, 928976858506),
    ],
)
def test_reduced_contexts_pinned(n, p, root):
    ctx = find_prime(41, n)
    assert (ctx.p, ctx.root_2n) == (p, root)


@pytest.mark.parametrize("bits,n", [(14, 8), (14, 16), (20, 64), (24, 256)])
def test_find_prime_matches_trial_division(bits, n):
    assert find_prime(bits, n).p == sieve_prime(bits, n)


def test_find_prime_small_value():
    # smallest p >= 8192 with p = 1 mod 16
    assert find_prime(14, 8).p == 8209


@pytest.mark.parametrize("n", [8, 64, 256, 8192])
def test_root_has_order_2n(n):
    ctx = find_prime(41, n) if n != 8192 else default_context()
    assert pow(ctx.root_2n, 2 * n, ctx.p) == 1
    assert pow(ctx.root_2n, n, ctx.p) == ctx.p - 1


def test_find_prime_rejects_bad_arguments():
    with pytest.raises(RingError):
        find_prime(63, 8)
    with pytest.raises(RingError):
        find_prime(20, 12)
    with pytest.raises(RingError):
        find_prime(10, 1024)


def test_is_prime_agrees_with_trial_division():
    assert [m for m in range(2000) if is_prime(m)] == [m for m in range(2000) if trial_division_prime(m)]


@given(st.lists(st.integers(0, 2**62), min_size=1, max_size=30), st.integers(0, 2**62))
def test_mulmod_exact(xs, y):
    p = default_context().p
    a = np.array([x % p for x in xs], dtype=np.uint64)
    got = mulmod(a, np.uint64(y % p), p)
    assert [int(v) for v in got] == [x % p * (y % p) % p for x in xs]


def test_mulmod_near_62_bits():
    p = (1 << 62) - 57  # prime below 2**62
    assert is_prime(p)
    a = np.array([p - 1, p - 2, 1 << 61], dtype=np.uint64)
    b = np.array([p - 1, p - 3, (1 << 61) + 5], dtype=np.uint64)
    assert [int(v) for v in mulmod(a, b, p)] == [int(x) * int(y) % p for x, y in zip(a, b)]


@pytest.mark.parametrize("length", [1, 2, 4, 8, 16, 64])
def test_cyclic_round_trip_and_convolution(contexts, rng, length):
    ctx = contexts[64]
    for _ in range(20):
        a = rng.integers(0, ctx.p, length, dtype=np.uint64)
        b = rng.integers(0, ctx.p, length, dtype=np.uint64)
        assert np.array_equal(ntt_cyclic(ntt_cyclic(a, ctx), ctx, inverse=True), a)
        prod = mulmod(ntt_cyclic(a, ctx), ntt_cyclic(b, ctx), ctx.p)
        want = schoolbook_cyclic(a, b, ctx.p)
        assert np.array_equal(ntt_cyclic(want.astype(np.uint64), ctx), prod)


def test_cyclic_of_zero_is_zero(contexts):
    ctx = contexts[64]
    assert not ntt_cyclic(np.zeros(16, dtype=np.uint64), ctx).any()


def test_cyclic_small_example(contexts):
    ctx = contexts[64]
    assert poly_mul_cyclic([1, 2], [3, 4], ctx).tolist() == [11, 10]


def test_cyclic_identity_and_commutativity(contexts, rng):
    ctx = contexts[256]
    a = rng.integers(0, ctx.p, 32, dtype=np.uint64)
    b = rng.integers(0, ctx.p, 32, dtype=np.uint64)
    one = np.zeros(32, dtype=np.uint64)
    one[0] = 1
    assert np.array_equal(poly_mul_cyclic(a, one, ctx), a)
    assert np.array_equal(poly_mul_cyclic(a, b, ctx), poly_mul_cyclic(b, a, ctx))


def test_cyclic_rejects_bad_lengths(contexts):
    ctx = contexts[64]
    with pytest.raises(RingError):
        ntt_cyclic(np.zeros(6, dtype=np.uint64), ctx)
    with pytest.raises(RingError):
        ntt_cyclic(np.zeros(256, dtype=np.uint64), ctx)
    with pytest.raises(RingError):
        poly_mul_cyclic([1, 2], [1, 2, 3, 4], ctx)


@pytest.mark.parametrize("n", [64, 256, 512])
def test_negacyclic_round_trip_and_product(contexts, rng, n):
    ctx = contexts[n]
    for _ in range(5):
        a = rng.integers(0, ctx.p, n, dtype=np.uint64)
        b = rng.integers(0, ctx.p, n, dtype=np.uint64)
        assert np.array_equal(ntt_negacyclic(ntt_negacyclic(a, ctx), ctx, inverse=True), a)
        assert np.array_equal(poly_mul_negacyclic(a, b, ctx), schoolbook_negacyclic(a, b, ctx.p).astype(np.uint64))


def test_negacyclic_wraps_with_sign_flip(contexts):
    ctx = contexts[64]
    x = np.zeros(64, dtype=np.uint64)
    x[1] = 1
    x63 = np.zeros(64, dtype=np.uint64)
    x63[63] = 1
    out = poly_mul_negacyclic(x, x63, ctx)  # x^64 = -1
    assert int(out[0]) == ctx.p - 1 and not out[1:].any()


def test_constant_polynomial_slots_are_constant(contexts):
    ctx = contexts[256]
    v = np.zeros(256, dtype=np.uint64)
    v[0] = 7
    assert np.all(ntt_negacyclic(v, ctx) == 7)


def test_negacyclic_rejects_wrong_length(contexts):
    with pytest.raises(RingError):
        ntt_negacyclic(np.zeros(32, dtype=np.uint64), contexts[64])


def test_poly_domains(contexts, rng):
    ctx = contexts[64]
    v = rng.integers(0, ctx.p, 64, dtype=np.uint64)
    poly = Poly(v, ctx)
    assert np.array_equal(poly.to_slots().to_coeffs().values, v)
    with pytest.raises(RingError):
        Poly(v[:10], ctx)
    with pytest.raises(RingError):
        Poly(np.full(64, ctx.p, dtype=np.uint64), ctx)
