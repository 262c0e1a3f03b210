"""Baby-step giant-step evaluation of block-circulant layers over mock-HE.

Layout.  A ciphertext has ``P`` block positions of ``l`` slots; position
``q`` of input ciphertext ``t2`` carries the slot form of input block
``t2*d + (q mod d)`` for ``q < in_span``.  Rotating by ``k*l`` slots moves
blocks by ``k`` positions.  When ``d < P`` the input is replicated
(``in_span = out_span + d - 1``) so that block rotations never need to wrap.
Output position ``m`` of ciphertext ``t3`` holds block ``t3*d + (m mod d)``
for ``m < out_span`` and zero elsewhere.

Weights are plaintexts prepared by the server, so their transforms are not
counted; only HE-Pmult, HE-Rot and HE-Add are.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import mockhe
from ..mockhe import Ciphertext, KeyContext, OpCounter
from ..ring import PrimeContext, ntt_cyclic
from .encoding import (
    conv_output_index,
    decode_block_gemm_output,
    encode_conv_input,
    encode_conv_weight,
)
from .matrices import BlockCirculantConvKernel, BlockCirculantMatrix
from .planner import BsgsPlan


class PlanMismatch(ValueError):
    pass


def input_span(plan: BsgsPlan, out_span: int | None = None) -> int:
    P, d = plan.positions, plan.d
    out_span = d if out_span is None else out_span
    if d == P:
        return P
    span = out_span + d - 1
    if out_span < d or span > P:
        raise PlanMismatch(f"output span {out_span} does not fit {P} positions with d={d}")
    return span


# ---------------------------------------------------------------- weights


class GemmWeights:
    """Slot-form blocks of a block-circulant matrix, built on demand."""

    def __init__(self, W: BlockCirculantMatrix, plan: BsgsPlan, ctx: PrimeContext):
        if (W.b, W.d2 // W.b, W.d3 // W.b) != (plan.b, plan.D2, plan.D3) or plan.kind != "gemm":
            raise PlanMismatch("matrix does not match plan dimensions")
        self.small = ntt_cyclic(ctx.reduce(W.generators), ctx)  # (D3, D2, b)
        self.stride = plan.stride

    def blocks(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        return np.tile(self.small[rows, cols], (1, self.stride))


class ConvWeights:
    def __init__(self, kernel: BlockCirculantConvKernel, plan: BsgsPlan, ctx: PrimeContext):
        if (kernel.b, kernel.C // kernel.b, kernel.K // kernel.b, kernel.R) != (plan.b, plan.D2, plan.D3, plan.R):
            raise PlanMismatch("kernel does not match plan dimensions")
        if plan.kind != "conv":
            raise PlanMismatch("plan is not a convolution plan")
        g = kernel.generators
        coeffs = np.stack(
            [
                np.stack([encode_conv_weight(g[i, j], plan.H, plan.W, ctx, plan.stride) for j in range(g.shape[1])])
                for i in range(g.shape[0])
            ]
        )
        self.slots = ntt_cyclic(coeffs, ctx)  # (D3, D2, l)

    def blocks(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        return self.slots[rows, cols]


def _diagonal(weights, plan: BsgsPlan, t2: int, t3: int, t: int, shift: int, out_span: int) -> np.ndarray:
    """Plaintext for diagonal ``t`` of tile (t2, t3), pre-rotated right by ``shift`` positions."""
    P, d = plan.positions, plan.d
    s = np.arange(P)
    m = (s - shift) % P
    live = m < out_span
    mm = m % d
    rows = t3 * d + mm
    cols = t2 * d + (mm + t) % d
    live &= (rows < plan.D3) & (cols < plan.D2)
    out = np.zeros((P, plan.block_len), dtype=np.uint64)
    if live.any():
        out[live] = weights.blocks(rows[live], cols[live])
    return out.reshape(-1)


# ---------------------------------------------------------------- engine


def place_blocks(block_slots: np.ndarray, plan: BsgsPlan, groups: int, span: int) -> np.ndarray:
    """(T1, D, l) blocks -> (T1, groups, n): position q of group g holds block g*d + (q mod d), q < span."""
    T1, D, ell = block_slots.shape
    P, d = plan.positions, plan.d
    out = np.zeros((T1, groups, P, ell), dtype=np.uint64)
    q = np.arange(span)
    for g in range(groups):
        idx = g * d + q % d
        ok = idx < D
        out[:, g, q[ok]] = block_slots[:, idx[ok]]
    return out.reshape(T1, groups, plan.n)


def pack_input(block_slots: np.ndarray, plan: BsgsPlan, out_span: int | None = None) -> np.ndarray:
    """(T1, D2, l) slot-form input blocks -> (T1, T2, n) plaintext slot vectors."""
    if block_slots.shape != (plan.T1, plan.D2, plan.block_len):
        raise PlanMismatch(f"input blocks {block_slots.shape} do not match plan")
    return place_blocks(block_slots, plan, plan.T2, input_span(plan, out_span))


def unpack_output(slots: np.ndarray, plan: BsgsPlan) -> np.ndarray:
    """(T1, T3, n) output slot vectors -> (T1, D3, l) slot-form output blocks."""
    T1, T3 = plan.T1, plan.T3
    P, d, ell = plan.positions, plan.d, plan.block_len
    grid = np.asarray(slots).reshape(T1, T3, P, ell)[:, :, :d]
    return grid.reshape(T1, T3 * d, ell)[:, : plan.D3]


def evaluate(
    cts: list[list[Ciphertext]],
    weights,
    plan: BsgsPlan,
    counter: OpCounter,
    ctx: PrimeContext,
    out_span: int | None = None,
) -> list[list[Ciphertext]]:
    """BSGS block-diagonal product; ``cts[t1][t2]`` -> ``out[t1][t3]``."""
    P, d, B, G, ell = plan.positions, plan.d, plan.B, plan.G, plan.block_len
    out_span = d if out_span is None else out_span
    input_span(plan, out_span)
    if len(cts) != plan.T1 or any(len(row) != plan.T2 for row in cts):
        raise PlanMismatch("ciphertext grid does not match plan tiling")
    out = []
    diag_cache: dict = {}
    for t1 in range(plan.T1):
        baby = [[mockhe.he_rot(ct, (i * ell) % ctx.n, counter) if i else ct for i in range(B)] for ct in cts[t1]]
        row = []
        for t3 in range(plan.T3):
            acc = None
            for j in range(G):
                inner = None
                for t2 in range(plan.T2):
                    for i in range(B):
                        key = (t2, t3, j, i)
                        pt = diag_cache.get(key)
                        if pt is None:
                            pt = _diagonal(weights, plan, t2, t3, j * B + i, j * B, out_span)
                            if plan.T1 > 1:
                                diag_cache[key] = pt
                        term = mockhe.he_pmult(baby[t2][i], pt, counter, ctx)
                        inner = term if inner is None else mockhe.he_add(inner, term, counter, ctx)
                if j:
                    inner = mockhe.he_rot(inner, (j * B * ell) % ctx.n, counter)
                acc = inner if acc is None else mockhe.he_add(acc, inner, counter, ctx)
            row.append(acc)
        out.append(row)
    return out


def encrypt_grid(slot_grid: np.ndarray, keys: KeyContext) -> list[list[Ciphertext]]:
    return [[mockhe.encrypt(v, keys) for v in row] for row in slot_grid]


def decrypt_grid(cts: list[list[Ciphertext]], keys: KeyContext) -> np.ndarray:
    return np.stack([np.stack([mockhe.decrypt(ct, keys) for ct in row]) for row in cts])


# ---------------------------------------------------------------- GEMM


def _gemm_blocks(X: np.ndarray, plan: BsgsPlan, ctx: PrimeContext) -> np.ndarray:
    rows = X.shape[0]
    b, T1, w, S = plan.b, plan.T1, plan.d1_tile, plan.stride
    padded = np.zeros((rows, T1 * w), dtype=np.uint64)
    padded[:, : plan.d1] = X
    tiles = padded.reshape(rows // b, b, T1, w).transpose(2, 0, 1, 3)  # (T1, D, b, w)
    coeffs = np.zeros((T1, rows // b, b, S), dtype=np.uint64)
    coeffs[..., :w] = tiles
    return ntt_cyclic(coeffs.reshape(T1, rows // b, b * S), ctx)


def gemm_input_blocks(X, plan: BsgsPlan, ctx: PrimeContext) -> np.ndarray:
    """d2 x d1 input -> (T1, D2, l) slot-form blocks."""
    X = ctx.reduce(X)
    if X.shape != (plan.D2 * plan.b, plan.d1):
        raise PlanMismatch(f"input shape {X.shape} does not match plan (d2={plan.D2 * plan.b}, d1={plan.d1})")
    return _gemm_blocks(X, plan, ctx)


def gemm_output_matrix(block_slots: np.ndarray, plan: BsgsPlan, ctx: PrimeContext) -> np.ndarray:
    """(T1, D3, l) slot-form output blocks -> d3 x d1 matrix."""
    coeffs = ntt_cyclic(block_slots, ctx, inverse=True)
    tiles = decode_block_gemm_output(coeffs, plan.b, plan.d1_tile, plan.stride)  # (T1, D3, b, w)
    d3 = plan.D3 * plan.b
    Y = tiles.transpose(1, 2, 0, 3).reshape(d3, plan.T1 * plan.d1_tile)
    return Y[:, : plan.d1]


def execute_gemm(
    plan: BsgsPlan,
    W: BlockCirculantMatrix,
    X,
    keys: KeyContext,
    counter: OpCounter,
) -> np.ndarray:
    """Encrypt X, evaluate W @ X homomorphically, decrypt and decode (d3 x d1)."""
    ctx = keys.ctx
    if ctx.n != plan.n:
        raise PlanMismatch(f"plan is for n={plan.n}, key context has n={ctx.n}")
    weights = GemmWeights(W, plan, ctx)
    cts = encrypt_grid(pack_input(gemm_input_blocks(X, plan, ctx), plan), keys)
    outs = evaluate(cts, weights, plan, counter, ctx)
    return gemm_output_matrix(unpack_output(decrypt_grid(outs, keys), plan), plan, ctx)


# ---------------------------------------------------------------- conv


def conv_input_blocks(X, plan: BsgsPlan, ctx: PrimeContext) -> np.ndarray:
    """C x H x W input -> (1, D2, l) slot-form blocks."""
    X = ctx.reduce(X)
    if X.shape != (plan.D2 * plan.b, plan.H, plan.W):
        raise PlanMismatch(f"input shape {X.shape} does not match plan ({plan.D2 * plan.b}, {plan.H}, {plan.W})")
    b = plan.b
    coeffs = np.stack([encode_conv_input(X[J * b : (J + 1) * b], ctx, plan.stride) for J in range(plan.D2)])
    return ntt_cyclic(coeffs, ctx)[None]


def conv_output_tensor(block_slots: np.ndarray, plan: BsgsPlan, ctx: PrimeContext) -> np.ndarray:
    """(1, D3, l) slot-form output blocks -> K x (H-R+1) x (W-R+1)."""
    coeffs = ntt_cyclic(block_slots[0], ctx, inverse=True)
    idx = conv_output_index(plan.b, plan.H, plan.W, plan.R, plan.stride)
    Y = coeffs[:, idx]  # (D3, b, h, w)
    return Y.reshape(plan.D3 * plan.b, *Y.shape[2:])


def execute_conv(
    plan: BsgsPlan,
    kernel: BlockCirculantConvKernel,
    X,
    keys: KeyContext,
    counter: OpCounter,
) -> np.ndarray:
    ctx = keys.ctx
    if ctx.n != plan.n:
        raise PlanMismatch(f"plan is for n={plan.n}, key context has n={ctx.n}")
    weights = ConvWeights(kernel, plan, ctx)
    cts = encrypt_grid(pack_input(conv_input_blocks(X, plan, ctx), plan), keys)
    outs = evaluate(cts, weights, plan, counter, ctx)
    return conv_output_tensor(unpack_output(decrypt_grid(outs, keys), plan), plan, ctx)


def conv_output_blocks(Y, plan: BsgsPlan, ctx: PrimeContext) -> np.ndarray:
    """K x (H-R+1) x (W-R+1) tensor -> (1, D3, l) slot-form blocks in output position."""
    Y = ctx.reduce(Y)
    b = plan.b
    idx = conv_output_index(b, plan.H, plan.W, plan.R, plan.stride).reshape(-1)
    coeffs = np.zeros((plan.D3, plan.block_len), dtype=np.uint64)
    coeffs[:, idx] = Y.reshape(plan.D3, -1)
    return ntt_cyclic(coeffs, ctx)[None]


@dataclass
class LayerCodec:
    """Plaintext-side encode/decode for one planned layer (used by the protocols)."""

    plan: BsgsPlan
    ctx: PrimeContext

    def encode_input(self, X, out_span: int | None = None) -> np.ndarray:
        blocks = (gemm_input_blocks if self.plan.kind == "gemm" else conv_input_blocks)(X, self.plan, self.ctx)
        return pack_input(blocks, self.plan, out_span)

    def encode_output(self, Y, out_span: int | None = None) -> np.ndarray:
        """(T1, T3, n) plaintext with Y where the evaluation leaves its result."""
        plan = self.plan
        if plan.kind == "gemm":
            Y = self.ctx.reduce(Y)
            if Y.shape != (plan.D3 * plan.b, plan.d1):
                raise PlanMismatch(f"output shape {Y.shape} does not match plan")
            blocks = _gemm_blocks(Y, plan, self.ctx)
        else:
            blocks = conv_output_blocks(Y, plan, self.ctx)
        span = plan.d if out_span is None else out_span
        return place_blocks(blocks, plan, plan.T3, span)

    def decode_output(self, slot_grid) -> np.ndarray:
        blocks = unpack_output(slot_grid, self.plan)
        if self.plan.kind == "gemm":
            return gemm_output_matrix(blocks, self.plan, self.ctx)
        return conv_output_tensor(blocks, self.plan, self.ctx)

    def weights(self, layer):
        if self.plan.kind == "gemm":
            return GemmWeights(layer, self.plan, self.ctx)
        return ConvWeights(layer, self.plan, self.ctx)
