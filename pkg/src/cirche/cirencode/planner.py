"""Baby-step giant-step planning for block-circulant GEMM and convolution.

A ciphertext holds ``P = n / l`` block positions of ``l`` slots.  A plan
packs ``d`` input blocks per ciphertext and evaluates each d x d tile of the
block grid with ``B`` baby and ``G`` giant rotations (``B * G = d``).

Counts for tile counts T1 (over d1), T2 (input blocks), T3 (output blocks):

    n_pmult  = T1 * T2 * T3 * d
    n_rot    = T1 * T2 * (B - 1) + T1 * T3 * (G - 1)
    n_ct_in  = T1 * T2
    n_ct_out = T1 * T3

Search space.  Preferred points fill the ring exactly: ``l * d = n`` with
``l = b * pow2(d1')`` and ``d <= min(D2, D3)``.  Only when no such point
exists (small layers) do we fall back to ``d1' = d1`` and the largest
``d <= min(D2, D3, P)`` that fits the replicated input layout: either
``d == P`` or ``2d - 1 <= P``.  Leaving ``d`` free there would always pick
``d = 1`` (no rotations, no packing).
Ties are broken by (n_rot, n_pmult, G, -d1').
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from ..ring import is_power_of_two, next_power_of_two


class PlanInfeasible(ValueError):
    pass


@dataclass(frozen=True)
class BsgsPlan:
    kind: str  # "gemm" or "conv"
    n: int
    b: int
    d1: int
    D2: int  # input blocks
    D3: int  # output blocks
    d1_tile: int
    stride: int  # row stride (gemm) or channel stride (conv) inside a block
    d: int
    B: int
    G: int
    n_rot: int
    n_pmult: int
    n_ct_in: int
    n_ct_out: int
    full_packing: bool
    H: int = 0
    W: int = 0
    R: int = 0

    @property
    def block_len(self) -> int:
        return self.b * self.stride

    @property
    def positions(self) -> int:
        return self.n // self.block_len

    @property
    def T1(self) -> int:
        return math.ceil(self.d1 / self.d1_tile)

    @property
    def T2(self) -> int:
        return math.ceil(self.D2 / self.d)

    @property
    def T3(self) -> int:
        return math.ceil(self.D3 / self.d)

    @property
    def n_ct(self) -> int:
        return self.n_ct_in + self.n_ct_out

    def key(self) -> tuple:
        return (self.n_rot, self.n_pmult, self.G, -self.d1_tile)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["block_len"] = self.block_len
        out["positions"] = self.positions
        return out


def bsgs_counts(T1: int, T2: int, T3: int, d: int, B: int, G: int) -> dict:
    return {
        "n_pmult": T1 * T2 * T3 * d,
        "n_rot": T1 * T2 * (B - 1) + T1 * T3 * (G - 1),
        "n_ct_in": T1 * T2,
        "n_ct_out": T1 * T3,
    }


def layout_fits(d: int, positions: int) -> bool:
    """d blocks fit a ciphertext of ``positions`` blocks under cyclic block rotation."""
    return d == positions or 2 * d - 1 <= positions


def boundary_d(D2: int, D3: int, positions: int) -> int:
    d = min(D2, D3, positions)
    return d if layout_fits(d, positions) else positions // 2


def _make(kind, n, b, d1, D2, D3, d1_tile, stride, d, B, full, **extra) -> BsgsPlan:
    G = d // B
    T1 = math.ceil(d1 / d1_tile)
    counts = bsgs_counts(T1, math.ceil(D2 / d), math.ceil(D3 / d), d, B, G)
    return BsgsPlan(kind, n, b, d1, D2, D3, d1_tile, stride, d, B, G, full_packing=full, **counts, **extra)


def _best_split(kind, n, b, d1, D2, D3, d1_tile, stride, d, full, **extra) -> BsgsPlan:
    best = None
    for B in range(1, d + 1):
        if d % B == 0:
            cand = _make(kind, n, b, d1, D2, D3, d1_tile, stride, d, B, full, **extra)
            if best is None or cand.key() < best.key():
                best = cand
    return best


def _check_common(b: int, n: int, D2: int, D3: int):
    if not is_power_of_two(n):
        raise PlanInfeasible(f"ring degree must be a power of two, got {n}")
    if not is_power_of_two(b):
        raise PlanInfeasible(f"block size must be a power of two, got {b}")
    if D2 < 1 or D3 < 1:
        raise PlanInfeasible("layer has no blocks")


def plan_bsgs_gemm(d1: int, d2: int, d3: int, b: int, n: int = 8192) -> BsgsPlan:
    """Rotation-optimal plan for a (d1, d2, d3) GEMM with b x b circulant blocks."""
    if d1 < 1 or d2 % b or d3 % b:
        raise PlanInfeasible(f"block size {b} must divide d2={d2} and d3={d3} (d1={d1})")
    D2, D3 = d2 // b, d3 // b
    _check_common(b, n, D2, D3)
    best = None
    d = 1
    while d <= min(D2, D3) and b * d <= n:
        stride = n // (d * b)
        d1_tile = min(d1, stride)
        if next_power_of_two(d1_tile) == stride:
            cand = _best_split("gemm", n, b, d1, D2, D3, d1_tile, stride, d, True)
            if best is None or cand.key() < best.key():
                best = cand
        d *= 2
    if best is not None:
        return best
    stride = next_power_of_two(d1)
    if b * stride > n:
        raise PlanInfeasible(f"block length b*pow2(d1) = {b * stride} exceeds n={n}")
    d = boundary_d(D2, D3, n // (b * stride))
    return _best_split("gemm", n, b, d1, D2, D3, d1, stride, d, False)


def conv_spatial(H: int, W: int, R: int, padding: str) -> tuple[int, int]:
    """Spatial size of the encoded input; "same" means the caller pre-pads by R-1."""
    if padding == "valid":
        return H, W
    if padding == "same":
        return H + R - 1, W + R - 1
    raise PlanInfeasible(f"unknown padding {padding!r}")


def plan_bsgs_conv(H: int, W: int, C: int, K: int, R: int, b: int, n: int = 8192, padding: str = "valid") -> BsgsPlan:
    """Rotation-optimal plan for a stride-1 circulant convolution.

    ``H, W`` are the spatial dims of the input the executor sees; with
    ``padding="same"`` they are the unpadded dims and the plan is made for
    the pre-padded input.
    """
    if C % b or K % b:
        raise PlanInfeasible(f"block size {b} must divide C={C} and K={K}")
    Hp, Wp = conv_spatial(H, W, R, padding)
    if R < 1 or R > Hp or R > Wp:
        raise PlanInfeasible(f"kernel size {R} does not fit {Hp}x{Wp}")
    D2, D3 = C // b, K // b
    _check_common(b, n, D2, D3)
    stride = next_power_of_two(Hp * Wp)
    if b * stride > n:
        raise PlanInfeasible(f"block length b*pow2(H*W) = {b * stride} exceeds n={n}")
    positions = n // (b * stride)
    extra = dict(H=Hp, W=Wp, R=R)
    if positions <= min(D2, D3):
        return _best_split("conv", n, b, 1, D2, D3, 1, stride, positions, True, **extra)
    d = boundary_d(D2, D3, positions)
    return _best_split("conv", n, b, 1, D2, D3, 1, stride, d, False, **extra)


# ------------------------------------------------------------ brute force


def enumerate_gemm_plans(d1: int, d2: int, d3: int, b: int, n: int = 8192) -> list[BsgsPlan]:
    """Every feasible (d1', d, B) point, by literal enumeration (test oracle)."""
    D2, D3 = d2 // b, d3 // b
    full = []
    for d1_tile in range(1, d1 + 1):
        ell = b * next_power_of_two(d1_tile)
        for d in range(1, min(D2, D3) + 1):
            if ell * d != n:
                continue
            for B in range(1, d + 1):
                if d % B == 0:
                    full.append(_make("gemm", n, b, d1, D2, D3, d1_tile, ell // b, d, B, True))
    if full:
        return full
    ell = b * next_power_of_two(d1)
    if ell > n:
        return []
    positions = n // ell
    out = []
    for d in range(1, min(D2, D3, positions) + 1):
        # largest layout-compatible tile only
        if not layout_fits(d, positions) or any(layout_fits(e, positions) for e in range(d + 1, min(D2, D3, positions) + 1)):
            continue
        for B in range(1, d + 1):
            if d % B == 0:
                out.append(_make("gemm", n, b, d1, D2, D3, d1, ell // b, d, B, False))
    return out


def enumerate_conv_plans(H, W, C, K, R, b, n=8192, padding="valid") -> list[BsgsPlan]:
    Hp, Wp = conv_spatial(H, W, R, padding)
    D2, D3 = C // b, K // b
    ell = b * next_power_of_two(Hp * Wp)
    if ell > n or not 1 <= R <= min(Hp, Wp):
        return []
    positions = n // ell
    extra = dict(H=Hp, W=Wp, R=R)
    out = []
    top = min(D2, D3, positions)
    for full in (True, False):
        for d in range(1, min(D2, D3) + 1):
            if full:
                ok = d == positions
            else:
                ok = layout_fits(d, positions) and not any(layout_fits(e, positions) for e in range(d + 1, top + 1))
            if not ok:
                continue
            for B in range(1, d + 1):
                if d % B == 0:
                    out.append(_make("conv", n, b, 1, D2, D3, 1, ell // b, d, B, full, **extra))
        if out:
            return out
    return out


def best_of(plans: list[BsgsPlan]) -> BsgsPlan | None:
    return min(plans, key=BsgsPlan.key, default=None)
