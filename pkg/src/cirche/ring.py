"""Exact arithmetic over an NTT-friendly prime field.

Everything here works on ``numpy.uint64`` arrays holding residues in
``[0, p)``.  Products are formed limb by limb so that no intermediate value
leaves 63 bits, which keeps the arithmetic exact for any ``p < 2**62``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

DEFAULT_BITS = 41
DEFAULT_N = 8192

_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


class RingError(ValueError):
    """Raised on malformed transform sizes, lengths or parameters."""


def is_prime(m: int) -> bool:
    """Deterministic Miller-Rabin, exact for every m < 3.3e24."""
    if m < 2:
        return False
    for q in _MR_BASES:
        if m % q == 0:
            return m == q
    d, s = m - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, m)
        if x in (1, m - 1):
            continue
        for _ in range(s - 1):
            x = x * x % m
            if x == m - 1:
                break
        else:
            return False
    return True


def is_power_of_two(x: int) -> bool:
    return x > 0 and (x & (x - 1)) == 0


def next_power_of_two(x: int) -> int:
    if x < 1:
        raise RingError(f"next_power_of_two needs a positive argument, got {x}")
    return 1 << (x - 1).bit_length()


@dataclass(frozen=True)
class PrimeContext:
    """Prime field Z_p supporting a nega-cyclic NTT of size n.

    Because ``p = 1 (mod 2n)``, a cyclic NTT of every power-of-two length
    dividing ``n`` also exists; its root is derived from ``root_2n`` so the
    roots of different lengths are mutually consistent
    (``root(l) ** (l // m) == root(m)``).
    """

    p: int
    n: int
    root_2n: int
    _roots: dict = field(default_factory=dict, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if not is_power_of_two(self.n):
            raise RingError(f"ring degree must be a power of two, got {self.n}")
        if (self.p - 1) % (2 * self.n):
            raise RingError(f"p={self.p} is not 1 mod 2n={2 * self.n}")
        if pow(self.root_2n, self.n, self.p) != self.p - 1:
            raise RingError("root_2n does not have order 2n")

    def root(self, length: int) -> int:
        """Primitive ``length``-th root of unity, for power-of-two ``length | 2n``."""
        if not is_power_of_two(length) or (2 * self.n) % length:
            raise RingError(f"no cached root for length {length} (n={self.n})")
        r = self._roots.get(length)
        if r is None:
            r = pow(self.root_2n, (2 * self.n) // length, self.p)
            self._roots[length] = r
        return r

    def reduce(self, values) -> np.ndarray:
        """Map integers (possibly negative, possibly Python ints) into [0, p)."""
        arr = np.asarray(values)
        if arr.dtype == np.uint64:
            return arr % np.uint64(self.p)
        if arr.dtype.kind in "iu":
            return np.mod(arr.astype(np.int64), self.p).astype(np.uint64)
        # object arrays / big ints
        flat = [int(v) % self.p for v in arr.ravel()]
        return np.array(flat, dtype=np.uint64).reshape(arr.shape)

    def centered(self, values) -> np.ndarray:
        """Lift residues to the symmetric range (-p/2, p/2] as int64."""
        arr = np.asarray(values, dtype=np.uint64).astype(np.int64)
        half = self.p // 2
        return np.where(arr > half, arr - self.p, arr)

    def mul(self, a, b) -> np.ndarray:
        return mulmod(a, b, self.p)

    def add(self, a, b) -> np.ndarray:
        return addmod(a, b, self.p)

    def sub(self, a, b) -> np.ndarray:
        return submod(a, b, self.p)


def _find_root_2n(p: int, n: int) -> int:
    # smallest quadratic non-residue g gives g^((p-1)/2n) of order exactly 2n
    exp = (p - 1) // (2 * n)
    g = 2
    while pow(g, (p - 1) // 2, p) != p - 1:
        g += 1
    return pow(g, exp, p)


def find_prime(bits: int = DEFAULT_BITS, n: int = DEFAULT_N) -> PrimeContext:
    """Smallest prime ``p >= 2**(bits-1)`` with ``p = 1 (mod 2n)``.

    The root of unity is fixed deterministically (first quadratic
    non-residue raised to ``(p-1)/2n``) so golden values stay stable.
    """
    if bits > 62:
        raise RingError(f"bits must be <= 62 for exact uint64 arithmetic, got {bits}")
    if not is_power_of_two(n):
        raise RingError(f"n must be a power of two, got {n}")
    if 2 * n >= 1 << bits:
        raise RingError(f"2n={2 * n} does not fit below 2**{bits}")
    step = 2 * n
    p = 1 << (bits - 1)
    p += (1 - p) % step
    while p < 1 << bits:
        if is_prime(p):
            return PrimeContext(p=p, n=n, root_2n=_find_root_2n(p, n))
        p += step
    raise RingError(f"no prime = 1 mod {step} in [2**{bits - 1}, 2**{bits})")


@lru_cache(maxsize=None)
def default_context() -> PrimeContext:
    """The toolkit modulus: 41-bit prime, n = 8192 (p = 1099511922689)."""
    return find_prime(DEFAULT_BITS, DEFAULT_N)


# ---------------------------------------------------------------- modular ops


def addmod(a, b, p: int) -> np.ndarray:
    s = np.asarray(a, dtype=np.uint64) + np.asarray(b, dtype=np.uint64)
    pu = np.uint64(p)
    return np.where(s >= pu, s - pu, s)


def submod(a, b, p: int) -> np.ndarray:
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    pu = np.uint64(p)
    return np.where(a >= b, a - b, a + (pu - b))


def negmod(a, p: int) -> np.ndarray:
    a = np.asarray(a, dtype=np.uint64)
    return np.where(a == 0, a, np.uint64(p) - a)


def mulmod(a, b, p: int) -> np.ndarray:
    """Elementwise ``a * b mod p`` for residues below ``p < 2**62``.

    ``b`` is consumed in chunks of ``63 - bits(p)`` bits, Horner style,
    so every partial product stays below ``2**63``.
    """
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    bits = p.bit_length()
    pu = np.uint64(p)
    if 2 * bits <= 64:
        return (a * b) % pu
    k = 63 - bits
    chunks = -(-bits // k)
    mask = np.uint64((1 << k) - 1)
    shift = np.uint64(k)
    acc = None
    for c in reversed(range(chunks)):
        part = (b >> np.uint64(c * k)) & mask
        term = (a * part) % pu
        if acc is None:
            acc = term
        else:
            acc = ((acc << shift) % pu + term) % pu
    return acc


def powmod_vec(base: int, count: int, p: int) -> np.ndarray:
    """[base**0, base**1, ..., base**(count-1)] mod p."""
    out = np.empty(count, dtype=np.uint64)
    x = 1
    for i in range(count):
        out[i] = x
        x = x * base % p
    return out


# ------------------------------------------------------------------ transforms


@lru_cache(maxsize=None)
def _bitrev(length: int) -> np.ndarray:
    bits = length.bit_length() - 1
    idx = np.arange(length)
    rev = np.zeros(length, dtype=np.int64)
    for i in range(bits):
        rev |= ((idx >> i) & 1) << (bits - 1 - i)
    return rev


@lru_cache(maxsize=None)
def _stage_twiddles(p: int, root: int, length: int) -> tuple:
    tw = []
    half = 1
    while half < length:
        w = pow(root, length // (2 * half), p)
        tw.append(powmod_vec(w, half, p))
        half *= 2
    return tuple(tw)


def _cyclic_core(v: np.ndarray, p: int, root: int) -> np.ndarray:
    length = v.shape[-1]
    x = v[..., _bitrev(length)].copy()
    lead = x.shape[:-1]
    half = 1
    for tw in _stage_twiddles(p, root, length):
        x = x.reshape(*lead, length // (2 * half), 2, half)
        u = x[..., 0, :]
        t = mulmod(x[..., 1, :], tw, p)
        x = np.stack([addmod(u, t, p), submod(u, t, p)], axis=-2)
        half *= 2
    return x.reshape(*lead, length)


def _check_length(length: int, ctx: PrimeContext):
    if not is_power_of_two(length):
        raise RingError(f"transform length must be a power of two, got {length}")
    if ctx.n % length:
        raise RingError(f"transform length {length} does not divide n={ctx.n}")


def ntt_cyclic(v, ctx: PrimeContext, inverse: bool = False) -> np.ndarray:
    """Cyclic NTT over Z_p[x]/(x^l - 1) along the last axis (natural order).

    Forward output ``k`` is the evaluation at ``root(l)**k``.  Leading axes
    are treated as a batch.
    """
    v = np.asarray(v, dtype=np.uint64)
    length = v.shape[-1]
    _check_length(length, ctx)
    if length == 1:
        return v.copy()
    p = ctx.p
    w = ctx.root(length)
    if not inverse:
        return _cyclic_core(v, p, w)
    out = _cyclic_core(v, p, pow(w, p - 2, p))
    return mulmod(out, np.uint64(pow(length, p - 2, p)), p)


@lru_cache(maxsize=None)
def _twist(p: int, psi: int, n: int) -> tuple:
    return powmod_vec(psi, n, p), powmod_vec(pow(psi, p - 2, p), n, p)


def ntt_negacyclic(v, ctx: PrimeContext, inverse: bool = False) -> np.ndarray:
    """Nega-cyclic NTT over Z_p[x]/(x^n + 1); slot k is the value at psi^(2k+1)."""
    v = np.asarray(v, dtype=np.uint64)
    if v.shape[-1] != ctx.n:
        raise RingError(f"nega-cyclic transform needs length n={ctx.n}, got {v.shape[-1]}")
    fwd, inv = _twist(ctx.p, ctx.root_2n, ctx.n)
    if not inverse:
        return ntt_cyclic(mulmod(v, fwd, ctx.p), ctx)
    return mulmod(ntt_cyclic(v, ctx, inverse=True), inv, ctx.p)


def poly_mul_cyclic(a, b, ctx: PrimeContext) -> np.ndarray:
    """Product in Z_p[x]/(x^l - 1) for equal power-of-two lengths l | n."""
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    if a.shape[-1] != b.shape[-1]:
        raise RingError(f"length mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    fa = ntt_cyclic(a, ctx)
    fb = ntt_cyclic(b, ctx)
    return ntt_cyclic(mulmod(fa, fb, ctx.p), ctx, inverse=True)


def poly_mul_negacyclic(a, b, ctx: PrimeContext) -> np.ndarray:
    fa = ntt_negacyclic(a, ctx)
    fb = ntt_negacyclic(b, ctx)
    return ntt_negacyclic(mulmod(fa, fb, ctx.p), ctx, inverse=True)


# ------------------------------------------------------------------- Poly view


@dataclass
class Poly:
    """Length-n residue vector tagged with its domain ("coeff" or "slot")."""

    values: np.ndarray
    ctx: PrimeContext
    domain: str = "coeff"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.uint64)
        if self.values.shape != (self.ctx.n,):
            raise RingError(f"Poly needs exactly n={self.ctx.n} entries, got {self.values.shape}")
        if self.domain not in ("coeff", "slot"):
            raise RingError(f"unknown domain {self.domain!r}")
        if np.any(self.values >= np.uint64(self.ctx.p)):
            raise RingError("Poly entries must be reduced mod p")

    def to_slots(self) -> "Poly":
        if self.domain == "slot":
            return self
        return Poly(ntt_negacyclic(self.values, self.ctx), self.ctx, "slot")

    def to_coeffs(self) -> "Poly":
        if self.domain == "coeff":
            return self
        return Poly(ntt_negacyclic(self.values, self.ctx, inverse=True), self.ctx, "coeff")
