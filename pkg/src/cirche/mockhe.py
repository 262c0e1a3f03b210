"""Deterministic stand-in for the BFV operations used by the protocols.

A ciphertext is a slot vector hidden under an additive pseudorandom mask.
The mask travels with the ciphertext and is transformed by every operation
exactly like the payload, so decryption is ``slots - mask``.  This keeps the
algebra (and the operation counts) of BFV without any of its security.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ring import PrimeContext, addmod, mulmod, negmod, ntt_negacyclic, submod

Q_BITS = 218


class MockHEError(ValueError):
    pass


@dataclass
class OpCounter:
    n: int = 8192
    q_bits: int = Q_BITS
    n_pmult: int = 0
    n_rot: int = 0
    n_add: int = 0
    n_ct_sent: int = 0

    @property
    def ct_size_bytes(self) -> int:
        return math.ceil(self.n * self.q_bits / 8)

    @property
    def bytes_sent(self) -> int:
        return self.n_ct_sent * self.ct_size_bytes

    def merge(self, other: "OpCounter") -> "OpCounter":
        if (other.n, other.q_bits) != (self.n, self.q_bits):
            raise MockHEError("cannot merge counters of different ciphertext sizes")
        self.n_pmult += other.n_pmult
        self.n_rot += other.n_rot
        self.n_add += other.n_add
        self.n_ct_sent += other.n_ct_sent
        return self

    def as_dict(self) -> dict:
        return {
            "n_pmult": self.n_pmult,
            "n_rot": self.n_rot,
            "n_add": self.n_add,
            "n_ct_sent": self.n_ct_sent,
            "bytes_sent": self.bytes_sent,
        }


@dataclass
class KeyContext:
    """Mask generator; identical seeds give identical mask streams."""

    seed: int
    ctx: PrimeContext
    _next_id: int = field(default=0, repr=False)

    def fresh_mask(self) -> tuple[int, np.ndarray]:
        mask_id = self._next_id
        self._next_id += 1
        return mask_id, self.stream(mask_id, self.ctx.n)

    def stream(self, stream_id: int, size: int, domain: int = 0) -> np.ndarray:
        """Uniform residues mod p from a counter-based generator."""
        bitgen = np.random.Philox(key=[self.seed & (2**64 - 1), (domain << 32) | stream_id])
        return np.random.Generator(bitgen).integers(0, self.ctx.p, size=size, dtype=np.uint64)


@dataclass
class Ciphertext:
    slots: np.ndarray
    mask: np.ndarray = field(repr=False)
    mask_id: int
    depth: int = 0

    @property
    def n(self) -> int:
        return self.slots.shape[0]


def _as_slots(pt, ctx: PrimeContext) -> np.ndarray:
    arr = np.asarray(pt, dtype=np.uint64)
    if arr.shape != (ctx.n,):
        raise MockHEError(f"plaintext must have n={ctx.n} slots, got shape {arr.shape}")
    return arr


def encrypt(pt, keys: KeyContext) -> Ciphertext:
    pt = _as_slots(pt, keys.ctx)
    mask_id, mask = keys.fresh_mask()
    return Ciphertext(addmod(pt, mask, keys.ctx.p), mask, mask_id)


def decrypt(ct: Ciphertext, keys: KeyContext) -> np.ndarray:
    return submod(ct.slots, ct.mask, keys.ctx.p)


def encode_coeffs(coeffs, ctx: PrimeContext) -> np.ndarray:
    """Coefficient-domain polynomial -> slot vector (nega-cyclic NTT)."""
    return ntt_negacyclic(coeffs, ctx)


def decode_slots(slots, ctx: PrimeContext) -> np.ndarray:
    return ntt_negacyclic(slots, ctx, inverse=True)


def he_add(ct1: Ciphertext, ct2: Ciphertext, counter: OpCounter, ctx: PrimeContext) -> Ciphertext:
    counter.n_add += 1
    return Ciphertext(
        addmod(ct1.slots, ct2.slots, ctx.p),
        addmod(ct1.mask, ct2.mask, ctx.p),
        ct1.mask_id,
        max(ct1.depth, ct2.depth),
    )


def he_sub(ct1: Ciphertext, ct2: Ciphertext, counter: OpCounter, ctx: PrimeContext) -> Ciphertext:
    counter.n_add += 1
    return Ciphertext(
        submod(ct1.slots, ct2.slots, ctx.p),
        submod(ct1.mask, ct2.mask, ctx.p),
        ct1.mask_id,
        max(ct1.depth, ct2.depth),
    )


def he_add_plain(ct: Ciphertext, pt, counter: OpCounter, ctx: PrimeContext) -> Ciphertext:
    counter.n_add += 1
    return Ciphertext(addmod(ct.slots, _as_slots(pt, ctx), ctx.p), ct.mask, ct.mask_id, ct.depth)


def he_sub_plain(ct: Ciphertext, pt, counter: OpCounter, ctx: PrimeContext) -> Ciphertext:
    counter.n_add += 1
    return Ciphertext(submod(ct.slots, _as_slots(pt, ctx), ctx.p), ct.mask, ct.mask_id, ct.depth)


def he_pmult(ct: Ciphertext, pt, counter: OpCounter, ctx: PrimeContext) -> Ciphertext:
    pt = _as_slots(pt, ctx)
    counter.n_pmult += 1
    return Ciphertext(
        mulmod(ct.slots, pt, ctx.p), mulmod(ct.mask, pt, ctx.p), ct.mask_id, ct.depth + 1
    )


def he_rot(ct: Ciphertext, r: int, counter: OpCounter) -> Ciphertext:
    """Cyclic left rotation by ``r`` slots over the whole n-slot vector."""
    n = ct.n
    if not 0 <= r < n:
        raise MockHEError(f"rotation offset must be in [0, {n}), got {r}")
    if r == 0:
        return Ciphertext(ct.slots.copy(), ct.mask.copy(), ct.mask_id, ct.depth)
    counter.n_rot += 1
    return Ciphertext(np.roll(ct.slots, -r), np.roll(ct.mask, -r), ct.mask_id, ct.depth)


def he_negate(ct: Ciphertext, ctx: PrimeContext) -> Ciphertext:
    return Ciphertext(negmod(ct.slots, ctx.p), negmod(ct.mask, ctx.p), ct.mask_id, ct.depth)


def zero_ciphertext(ctx: PrimeContext) -> Ciphertext:
    """Trivial encryption of zero (mask 0); used as an accumulator seed."""
    z = np.zeros(ctx.n, dtype=np.uint64)
    return Ciphertext(z, z.copy(), -1)
