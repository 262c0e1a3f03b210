"""Batch-norm folding that keeps convolution kernels block circulant."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cirencode.matrices import BlockCirculantConvKernel
from .ring import PrimeContext, default_context

DEFAULT_SCALE_BITS = 12


@dataclass
class BnParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        for name in ("gamma", "beta", "running_mean", "running_var"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        C = self.gamma.shape
        if any(getattr(self, f).shape != C for f in ("beta", "running_mean", "running_var")) or len(C) != 1:
            raise ValueError("batch-norm parameters must be equal-length vectors")
        if self.eps <= 0 or np.any(self.running_var + self.eps <= 0):
            raise ValueError("running_var + eps must be positive")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def scale(self) -> np.ndarray:
        return self.gamma / np.sqrt(self.running_var + self.eps)

    def shift(self) -> np.ndarray:
        return self.beta - self.running_mean * self.scale()

    def apply(self, y: np.ndarray) -> np.ndarray:
        """Inference-mode batch norm over the leading (channel) axis."""
        shape = (-1,) + (1,) * (y.ndim - 1)
        return y * self.scale().reshape(shape) + self.shift().reshape(shape)


def _group_mean(v: np.ndarray, b: int) -> np.ndarray:
    return np.repeat(v.reshape(-1, b).mean(axis=1), b)


def group_average_bn(params: BnParams, b: int) -> BnParams:
    """Replace every b-sized channel group of each parameter by its mean."""
    if params.channels % b:
        raise ValueError(f"block size {b} does not divide {params.channels} channels")
    return BnParams(
        _group_mean(params.gamma, b),
        _group_mean(params.beta, b),
        _group_mean(params.running_mean, b),
        _group_mean(params.running_var, b),
        params.eps,
    )


def is_block_constant(params: BnParams, b: int) -> bool:
    return all(
        np.array_equal(v, _group_mean(v, b)) for v in (params.gamma, params.beta, params.running_mean, params.running_var)
    )


def fuse_convbn(kernel: BlockCirculantConvKernel, params: BnParams, b: int | None = None):
    """Fold group-averaged batch norm into a circulant kernel.

    Returns ``(fused_kernel, bias)``.  Output channel k is scaled by a factor
    shared across its block, so every block stays circulant.
    """
    b = kernel.b if b is None else b
    if b != kernel.b:
        raise ValueError(f"block size {b} does not match kernel block size {kernel.b}")
    if params.channels != kernel.K:
        raise ValueError(f"batch norm has {params.channels} channels, kernel has K={kernel.K}")
    avg = group_average_bn(params, b)
    scale = avg.scale().reshape(kernel.K // b, b)[:, 0]  # one factor per output block
    gens = np.asarray(kernel.generators, dtype=float) * scale[:, None, None, None, None]
    return BlockCirculantConvKernel(gens, b), avg.shift()


def approximation_gap(params: BnParams, b: int) -> float:
    """Max abs deviation of the per-channel affine map caused by group averaging."""
    avg = group_average_bn(params, b)
    return float(max(np.abs(avg.scale() - params.scale()).max(), np.abs(avg.shift() - params.shift()).max()))


def conv2d_valid(kernel: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Dense stride-1 valid cross-correlation: (K, C, R, R) * (C, H, W) -> (K, H-R+1, W-R+1)."""
    K, C, R, _ = kernel.shape
    _, H, W = x.shape
    win = np.lib.stride_tricks.sliding_window_view(x, (R, R), axis=(1, 2))  # (C, H', W', R, R)
    return np.einsum("kcrs,cijrs->kij", kernel, win)


def quantize(x, scale_bits: int = DEFAULT_SCALE_BITS, ctx: PrimeContext | None = None) -> np.ndarray:
    """Round ``x * 2**scale_bits`` to the nearest integer and map into Z_p."""
    ctx = default_context() if ctx is None else ctx
    q = np.rint(np.asarray(x, dtype=float) * (1 << scale_bits)).astype(np.int64)
    return ctx.reduce(q)


def dequantize(v, scale_bits: int = DEFAULT_SCALE_BITS, ctx: PrimeContext | None = None) -> np.ndarray:
    ctx = default_context() if ctx is None else ctx
    return ctx.centered(v).astype(float) / (1 << scale_bits)
