"""Coefficient and slot encodings for circulant blocks.

A b x d1' input block is laid out row by row with a row stride ``stride``
(default ``d1'``).  Any stride >= d1' keeps the cyclic product exact, so
callers pad to a power of two when they want an NTT-friendly length.
Convolution blocks use a channel stride (default H*W) the same way.
"""

from __future__ import annotations

import numpy as np

from ..ring import (
    PrimeContext,
    RingError,
    default_context,
    is_power_of_two,
    mulmod,
    next_power_of_two,
    ntt_cyclic,
)


class EncodingError(ValueError):
    pass


def _ctx(ctx):
    return default_context() if ctx is None else ctx


def _check_fit(length: int, ctx: PrimeContext):
    if length > ctx.n:
        raise EncodingError(f"encoded length {length} exceeds ring degree n={ctx.n}")


# ---------------------------------------------------------------- GEMM blocks


def encode_block_gemm_input(X, ctx: PrimeContext | None = None, stride: int | None = None) -> np.ndarray:
    """x[i*stride + j] = X[i, j]."""
    ctx = _ctx(ctx)
    X = ctx.reduce(X)
    if X.ndim != 2:
        raise EncodingError(f"input block must be 2-D, got shape {X.shape}")
    b, d1t = X.shape
    stride = d1t if stride is None else stride
    if stride < d1t:
        raise EncodingError(f"stride {stride} smaller than tile width {d1t}")
    _check_fit(b * stride, ctx)
    out = np.zeros((b, stride), dtype=np.uint64)
    out[:, :d1t] = X
    return out.reshape(-1)


def decode_block_gemm_output(y, b: int, d1_tile: int, stride: int | None = None) -> np.ndarray:
    """Inverse index map: Y[i, j] = y[i*stride + j]."""
    stride = d1_tile if stride is None else stride
    y = np.asarray(y)
    if y.shape[-1] != b * stride:
        raise EncodingError(f"expected length {b * stride}, got {y.shape[-1]}")
    return y.reshape(*y.shape[:-1], b, stride)[..., :d1_tile]


def encode_block_gemm_weight(gen, d1_tile: int, ctx: PrimeContext | None = None, stride: int | None = None) -> np.ndarray:
    """w[i*stride] = gen[i], every other coefficient zero."""
    ctx = _ctx(ctx)
    gen = ctx.reduce(gen)
    if gen.ndim != 1:
        raise EncodingError("generator must be a vector")
    stride = d1_tile if stride is None else stride
    if stride < d1_tile:
        raise EncodingError(f"stride {stride} smaller than tile width {d1_tile}")
    b = gen.shape[0]
    _check_fit(b * stride, ctx)
    out = np.zeros((b, stride), dtype=np.uint64)
    out[:, 0] = gen
    return out.reshape(-1)


def block_gemm_via_polymul(gen, X, ctx: PrimeContext | None = None) -> np.ndarray:
    """Circulant block times a b x d1' matrix as one cyclic polynomial product."""
    ctx = _ctx(ctx)
    X = np.asarray(X)
    b, d1t = X.shape
    if len(gen) != b:
        raise EncodingError(f"generator length {len(gen)} != block rows {b}")
    stride = next_power_of_two(d1t)
    xh = encode_block_gemm_input(X, ctx, stride)
    wh = encode_block_gemm_weight(gen, d1t, ctx, stride)
    if not is_power_of_two(b):
        raise EncodingError(f"block size must be a power of two, got {b}")
    yh = _cyclic_product(wh, xh, ctx)
    return decode_block_gemm_output(yh, b, d1t, stride)


def gemm_weight_slots(gens, stride: int, ctx: PrimeContext) -> np.ndarray:
    """Slot form of encoded weights without a length-(b*stride) transform.

    The encoded weight is nonzero only on multiples of ``stride``, so its
    length-(b*stride) DFT is the length-b DFT of the generator tiled
    ``stride`` times.  Leading axes of ``gens`` are a batch.
    """
    small = ntt_cyclic(ctx.reduce(gens), ctx)
    reps = (1,) * (small.ndim - 1) + (stride,)
    return np.tile(small, reps)


# ---------------------------------------------------------------- conv blocks


def encode_conv_input(X, ctx: PrimeContext | None = None, stride: int | None = None) -> np.ndarray:
    """x[i*stride + j*W + k] = X[i, j, k] for a b x H x W input block."""
    ctx = _ctx(ctx)
    X = ctx.reduce(X)
    if X.ndim != 3:
        raise EncodingError(f"conv input block must be b x H x W, got {X.shape}")
    b, H, W = X.shape
    stride = H * W if stride is None else stride
    if stride < H * W:
        raise EncodingError(f"stride {stride} smaller than H*W={H * W}")
    _check_fit(b * stride, ctx)
    out = np.zeros((b, stride), dtype=np.uint64)
    out[:, : H * W] = X.reshape(b, H * W)
    return out.reshape(-1)


def encode_conv_weight(K, H: int, W: int, ctx: PrimeContext | None = None, stride: int | None = None) -> np.ndarray:
    """w[i*stride + (W+1)(R-1) - j*W - k] = K[i, j, k] for the b x R x R first-column slice."""
    ctx = _ctx(ctx)
    K = ctx.reduce(K)
    if K.ndim != 3 or K.shape[1] != K.shape[2]:
        raise EncodingError(f"kernel slice must be b x R x R, got {K.shape}")
    b, R, _ = K.shape
    if R > H or R > W:
        raise EncodingError(f"kernel size {R} exceeds spatial size {H}x{W}")
    stride = H * W if stride is None else stride
    if stride < H * W:
        raise EncodingError(f"stride {stride} smaller than H*W={H * W}")
    _check_fit(b * stride, ctx)
    j, k = np.meshgrid(np.arange(R), np.arange(R), indexing="ij")
    offs = (W + 1) * (R - 1) - j * W - k
    out = np.zeros((b, stride), dtype=np.uint64)
    out[:, offs.reshape(-1)] = K.reshape(b, R * R)
    return out.reshape(-1)


def conv_output_index(b: int, H: int, W: int, R: int, stride: int | None = None) -> np.ndarray:
    """Coefficient positions holding Y[i, j, k] (valid conv, unit stride)."""
    stride = H * W if stride is None else stride
    i, j, k = np.meshgrid(np.arange(b), np.arange(H - R + 1), np.arange(W - R + 1), indexing="ij")
    return i * stride + (W + 1) * (R - 1) + j * W + k


def decode_conv_output(y, b: int, H: int, W: int, R: int, stride: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    return y[..., conv_output_index(b, H, W, R, stride)]


def block_conv_via_polymul(K, X, ctx: PrimeContext | None = None) -> np.ndarray:
    """One block of circulant convolution as a single cyclic product."""
    ctx = _ctx(ctx)
    X = np.asarray(X)
    K = np.asarray(K)
    b, H, W = X.shape
    if K.shape[0] != b:
        raise EncodingError(f"kernel block rows {K.shape[0]} != input channels {b}")
    if not is_power_of_two(b):
        raise EncodingError(f"block size must be a power of two, got {b}")
    R = K.shape[1]
    stride = next_power_of_two(H * W)
    xh = encode_conv_input(X, ctx, stride)
    wh = encode_conv_weight(K, H, W, ctx, stride)
    yh = _cyclic_product(wh, xh, ctx)
    return decode_conv_output(yh, b, H, W, R, stride)


# ---------------------------------------------------------------- SIMD packing


def pack_blocks_simd(block_polys, ctx: PrimeContext | None = None) -> np.ndarray:
    """Concatenate the length-l cyclic DFTs of M blocks into one n-slot vector."""
    ctx = _ctx(ctx)
    blocks = np.asarray(block_polys, dtype=np.uint64)
    if blocks.ndim != 2:
        raise EncodingError(f"expected an (M, l) array of blocks, got shape {blocks.shape}")
    m, ell = blocks.shape
    if m * ell != ctx.n:
        raise EncodingError(f"M*l = {m}*{ell} != n={ctx.n}")
    try:
        return ntt_cyclic(blocks, ctx).reshape(-1)
    except RingError as exc:
        raise EncodingError(str(exc)) from exc


def unpack_blocks_simd(slots, ell: int, ctx: PrimeContext | None = None) -> np.ndarray:
    ctx = _ctx(ctx)
    slots = np.asarray(slots, dtype=np.uint64)
    if slots.shape != (ctx.n,) or ctx.n % ell:
        raise EncodingError(f"cannot split {slots.shape} slots into blocks of {ell}")
    return ntt_cyclic(slots.reshape(ctx.n // ell, ell), ctx, inverse=True)


def slotwise_mul(a, b, ctx: PrimeContext | None = None) -> np.ndarray:
    ctx = _ctx(ctx)
    return mulmod(a, b, ctx.p)


# ---------------------------------------------------------------- helpers


def _cyclic_product(a: np.ndarray, b: np.ndarray, ctx: PrimeContext) -> np.ndarray:
    if a.shape[-1] > ctx.n:
        raise EncodingError(f"product length {a.shape[-1]} exceeds n={ctx.n}")
    fa = ntt_cyclic(a, ctx)
    fb = ntt_cyclic(b, ctx)
    return ntt_cyclic(mulmod(fa, fb, ctx.p), ctx, inverse=True)
