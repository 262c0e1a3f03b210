"""Block-circulant weight containers.

Each b x b block is stored as its first column ``c`` (``c[i] = W[i, 0]``),
so the full block is ``W[i, j] = c[(i - j) mod b]``; equivalently
``W[i, j] = W[0, (b - i + j) mod b]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..ring import is_power_of_two


class ShapeError(ValueError):
    pass


def _check_block(b: int, *dims: int):
    if not is_power_of_two(b):
        raise ShapeError(f"block size must be a power of two, got {b}")
    for d in dims:
        if d % b:
            raise ShapeError(f"block size {b} does not divide dimension {d}")


def circulant_index(b: int) -> np.ndarray:
    """idx[i, j] = (i - j) mod b: generator index of entry (i, j)."""
    i = np.arange(b)
    return (i[:, None] - i[None, :]) % b


@dataclass
class BlockCirculantMatrix:
    """A d3 x d2 block-circulant matrix; ``generators`` has shape (d3/b, d2/b, b)."""

    generators: np.ndarray
    b: int

    def __post_init__(self):
        self.generators = np.asarray(self.generators)
        if self.generators.ndim != 3 or self.generators.shape[2] != self.b:
            raise ShapeError(f"generators must be (d3/b, d2/b, b), got {self.generators.shape}")
        _check_block(self.b)

    @property
    def d3(self) -> int:
        return self.generators.shape[0] * self.b

    @property
    def d2(self) -> int:
        return self.generators.shape[1] * self.b

    def block(self, row: int, col: int) -> np.ndarray:
        return self.generators[row, col][circulant_index(self.b)]

    def to_dense(self) -> np.ndarray:
        D3, D2, b = self.generators.shape
        full = self.generators[:, :, circulant_index(b)]  # (D3, D2, b, b)
        return full.transpose(0, 2, 1, 3).reshape(D3 * b, D2 * b)

    @classmethod
    def from_dense(cls, W, b: int, check: bool = True) -> "BlockCirculantMatrix":
        W = np.asarray(W)
        d3, d2 = W.shape
        _check_block(b, d3, d2)
        blocks = W.reshape(d3 // b, b, d2 // b, b).transpose(0, 2, 1, 3)
        gens = blocks[:, :, :, 0]
        out = cls(gens.copy(), b)
        if check and not np.array_equal(out.to_dense(), W):
            raise ShapeError("matrix is not block circulant with block size %d" % b)
        return out

    @classmethod
    def random(cls, d3: int, d2: int, b: int, rng: np.random.Generator, high: int) -> "BlockCirculantMatrix":
        _check_block(b, d3, d2)
        return cls(rng.integers(0, high, size=(d3 // b, d2 // b, b), dtype=np.uint64), b)


@dataclass
class BlockCirculantConvKernel:
    """K x C x R x R kernel, block circulant over (K, C); generators (K/b, C/b, b, R, R)."""

    generators: np.ndarray
    b: int

    def __post_init__(self):
        self.generators = np.asarray(self.generators)
        g = self.generators
        if g.ndim != 5 or g.shape[2] != self.b or g.shape[3] != g.shape[4]:
            raise ShapeError(f"generators must be (K/b, C/b, b, R, R), got {g.shape}")
        _check_block(self.b)

    @property
    def K(self) -> int:
        return self.generators.shape[0] * self.b

    @property
    def C(self) -> int:
        return self.generators.shape[1] * self.b

    @property
    def R(self) -> int:
        return self.generators.shape[3]

    def to_dense(self) -> np.ndarray:
        Kb, Cb, b, R, _ = self.generators.shape
        full = self.generators[:, :, circulant_index(b)]  # (Kb, Cb, b, b, R, R)
        return full.transpose(0, 2, 1, 3, 4, 5).reshape(Kb * b, Cb * b, R, R)

    @classmethod
    def from_dense(cls, W, b: int, check: bool = True) -> "BlockCirculantConvKernel":
        W = np.asarray(W)
        K, C, R, R2 = W.shape
        _check_block(b, K, C)
        blocks = W.reshape(K // b, b, C // b, b, R, R2).transpose(0, 2, 1, 3, 4, 5)
        out = cls(blocks[:, :, :, 0].copy(), b)
        if check and not np.array_equal(out.to_dense(), W):
            raise ShapeError("kernel is not block circulant with block size %d" % b)
        return out

    @classmethod
    def random(cls, K: int, C: int, R: int, b: int, rng: np.random.Generator, high: int) -> "BlockCirculantConvKernel":
        _check_block(b, K, C)
        return cls(rng.integers(0, high, size=(K // b, C // b, b, R, R), dtype=np.uint64), b)


def is_block_circulant(W, b: int) -> bool:
    """Check the index rule W[i, j] = W[0, (b - i + j) mod b] on every block.

    Works on (rows, cols) matrices and on (K, C, R, R) kernels (the rule is
    checked per spatial tap).
    """
    W = np.asarray(W)
    rows, cols = W.shape[:2]
    if rows % b or cols % b:
        return False
    blocks = W.reshape(rows // b, b, cols // b, b, *W.shape[2:])
    i = np.arange(b)
    ref_cols = (b - i[:, None] + i[None, :]) % b  # (b, b)
    first_row = blocks[:, 0]  # (rows/b, cols/b, b, ...)
    rebuilt = first_row[:, :, ref_cols]  # (rows/b, cols/b, b, b, ...)
    rebuilt = np.moveaxis(rebuilt, 2, 1)  # (rows/b, b, cols/b, b, ...)
    return bool(np.allclose(rebuilt, blocks)) if W.dtype.kind == "f" else bool(np.array_equal(rebuilt, blocks))
