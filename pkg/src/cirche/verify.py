"""Randomized oracle-equivalence suites.

Every check compares fast code against a schoolbook or dense reference
evaluated in exact Python integers.  Case ``k`` of a run with seed ``s``
draws from ``default_rng(s + k)``, so ``--seed s+k --cases 1`` replays it.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field

import numpy as np

from .cirencode.encoding import (
    block_conv_via_polymul,
    block_gemm_via_polymul,
    pack_blocks_simd,
    slotwise_mul,
    unpack_blocks_simd,
)
from .cirencode.executor import execute_conv, execute_gemm
from .cirencode.matrices import BlockCirculantConvKernel, BlockCirculantMatrix, circulant_index
from .cirencode.planner import PlanInfeasible, plan_bsgs_conv, plan_bsgs_gemm
from .mockhe import KeyContext, OpCounter
from .ring import PrimeContext, find_prime, next_power_of_two, ntt_cyclic, ntt_negacyclic, poly_mul_cyclic, poly_mul_negacyclic
from .twoparty import check_fusable, encrypt_residual, reconstruct, run_ir_fused, run_ir_unfused, run_linear_layer, share

SUITES = ("ring", "encode", "conv", "protocol")
DEFAULT_SIZES = (64, 256, 512)


# ------------------------------------------------------------------ oracles


def _obj(a) -> np.ndarray:
    return np.asarray(a).astype(object)


def schoolbook_cyclic(a, b, p: int) -> np.ndarray:
    a, b = _obj(a), _obj(b)
    out = np.zeros(len(a), dtype=object)
    for i, ai in enumerate(a):
        out += ai * np.roll(b, i)
    return out % p


def schoolbook_negacyclic(a, b, p: int) -> np.ndarray:
    a, b = _obj(a), _obj(b)
    n = len(a)
    out = np.zeros(n, dtype=object)
    for i, ai in enumerate(a):
        shifted = np.roll(b, i)
        shifted[:i] = -shifted[:i]
        out += ai * shifted
    return out % p


def dense_matmul(W, X, p: int) -> np.ndarray:
    return _obj(W).dot(_obj(X)) % p


def dense_conv(kernel, X, p: int) -> np.ndarray:
    """Valid stride-1 cross-correlation (K, C, R, R) * (C, H, W) in exact integers."""
    kernel, X = _obj(kernel), _obj(X)
    K, _, R, _ = kernel.shape
    _, H, W = X.shape
    Y = np.zeros((K, H - R + 1, W - R + 1), dtype=object)
    for i in range(H - R + 1):
        for j in range(W - R + 1):
            Y[:, i, j] = np.einsum("kcrs,crs->k", kernel, X[:, i : i + R, j : j + R])
    return Y % p


def circulant_block(gen) -> np.ndarray:
    gen = np.asarray(gen)
    return gen[circulant_index(len(gen))]


# ------------------------------------------------------------------ bookkeeping


@dataclass
class Failure:
    suite: str
    check: str
    params: dict
    detail: str = ""

    def repro(self) -> str:
        args = " ".join(f"{k}={v}" for k, v in self.params.items())
        return f"[{self.suite}/{self.check}] {args} {self.detail}".rstrip()


@dataclass
class SuiteResult:
    name: str
    checks: int = 0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def record(self, check: str, ok: bool, params: dict, detail: str = ""):
        self.checks += 1
        if not ok:
            self.failures.append(Failure(self.name, check, params, detail))


def _context(n: int) -> PrimeContext:
    return find_prime(41, n)


def _pow2_below(rng, limit: int, low: int = 1) -> int:
    choices = [1 << k for k in range(limit.bit_length()) if low <= (1 << k) <= limit]
    return int(rng.choice(choices))


# ------------------------------------------------------------------ ring


def check_ring_case(rng, n: int, res: SuiteResult, seed: int):
    ctx = _context(n)
    p = ctx.p
    ell = _pow2_below(rng, n)
    a = rng.integers(0, p, ell, dtype=np.uint64)
    b = rng.integers(0, p, ell, dtype=np.uint64)
    params = {"seed": seed, "n": n, "ell": ell}
    res.record("cyclic-roundtrip", np.array_equal(ntt_cyclic(ntt_cyclic(a, ctx), ctx, inverse=True), a), params)
    got = poly_mul_cyclic(a, b, ctx)
    res.record("cyclic-product", np.array_equal(_obj(got), schoolbook_cyclic(a, b, p)), params)
    a = rng.integers(0, p, n, dtype=np.uint64)
    b = rng.integers(0, p, n, dtype=np.uint64)
    res.record("negacyclic-roundtrip", np.array_equal(ntt_negacyclic(ntt_negacyclic(a, ctx), ctx, inverse=True), a), params)
    got = poly_mul_negacyclic(a, b, ctx)
    res.record("negacyclic-product", np.array_equal(_obj(got), schoolbook_negacyclic(a, b, p)), params)


# ------------------------------------------------------------------ encode


def check_block_gemm(gen, X, ctx: PrimeContext, res: SuiteResult, params: dict):
    got = block_gemm_via_polymul(gen, X, ctx)
    want = dense_matmul(circulant_block(gen), X, ctx.p)
    res.record("block-gemm", np.array_equal(_obj(got), want), params)


def check_simd(blocks_a, blocks_b, ctx: PrimeContext, res: SuiteResult, params: dict):
    ell = blocks_a.shape[1]
    prod = slotwise_mul(pack_blocks_simd(blocks_a, ctx), pack_blocks_simd(blocks_b, ctx), ctx)
    got = unpack_blocks_simd(prod, ell, ctx)
    want = np.stack([schoolbook_cyclic(x, y, ctx.p) for x, y in zip(blocks_a, blocks_b)])
    res.record("simd-blocks", np.array_equal(_obj(got), want), params)


def check_gemm_execution(d1, d2, d3, b, ctx: PrimeContext, rng, res: SuiteResult, params: dict):
    try:
        plan = plan_bsgs_gemm(d1, d2, d3, b, ctx.n)
    except PlanInfeasible:
        return
    W = BlockCirculantMatrix.random(d3, d2, b, rng, ctx.p)
    X = rng.integers(0, ctx.p, (d2, d1), dtype=np.uint64)
    counter = OpCounter(n=ctx.n)
    Y = execute_gemm(plan, W, X, KeyContext(int(rng.integers(1 << 31)), ctx), counter)
    ok = np.array_equal(_obj(Y), dense_matmul(W.to_dense(), X, ctx.p))
    res.record("bsgs-gemm", ok, params)
    counts = (counter.n_pmult, counter.n_rot)
    res.record("bsgs-gemm-counts", counts == (plan.n_pmult, plan.n_rot), params, f"counted {counts}")


def check_encode_case(rng, n: int, res: SuiteResult, seed: int):
    ctx = _context(n)
    b = _pow2_below(rng, min(16, n))
    d1 = int(rng.integers(1, max(2, n // b // 2) + 1))
    d1 = min(d1, n // b)
    if next_power_of_two(d1) * b > n:
        d1 = n // b
    gen = rng.integers(0, ctx.p, b, dtype=np.uint64)
    X = rng.integers(0, ctx.p, (b, d1), dtype=np.uint64)
    check_block_gemm(gen, X, ctx, res, {"seed": seed, "n": n, "b": b, "d1": d1})

    M = int(rng.choice([1, 2, 4, 8]))
    ell = n // M
    A = rng.integers(0, ctx.p, (M, ell), dtype=np.uint64)
    B = rng.integers(0, ctx.p, (M, ell), dtype=np.uint64)
    check_simd(A, B, ctx, res, {"seed": seed, "n": n, "M": M})

    b = int(rng.choice([1, 2, 4]))
    dims = (int(rng.integers(1, 17)), b * int(rng.integers(1, 7)), b * int(rng.integers(1, 7)))
    check_gemm_execution(*dims, b, ctx, rng, res, {"seed": seed, "n": n, "d1": dims[0], "d2": dims[1], "d3": dims[2], "b": b})


def encode_exhaustive(n: int, res: SuiteResult, seed: int = 0, limit: int = 16):
    """Every (b, d1') with b * d1' <= limit, plus every M for the SIMD bridge."""
    ctx = _context(n)
    rng = np.random.default_rng(seed)
    for b in (1, 2, 4, 8, 16):
        for d1 in range(1, limit // b + 1):
            gen = rng.integers(0, ctx.p, b, dtype=np.uint64)
            X = rng.integers(0, ctx.p, (b, d1), dtype=np.uint64)
            check_block_gemm(gen, X, ctx, res, {"n": n, "b": b, "d1": d1, "exhaustive": 1})
    for M in (1, 2, 4, 8):
        A = rng.integers(0, ctx.p, (M, n // M), dtype=np.uint64)
        B = rng.integers(0, ctx.p, (M, n // M), dtype=np.uint64)
        check_simd(A, B, ctx, res, {"n": n, "M": M, "exhaustive": 1})


# ------------------------------------------------------------------ conv


def check_block_conv(K, X, ctx: PrimeContext, res: SuiteResult, params: dict):
    b = K.shape[0]
    got = block_conv_via_polymul(K, X, ctx)
    dense = K[circulant_index(b)]  # (b, b, R, R): entry (k, c) = K[(k - c) mod b]
    res.record("block-conv", np.array_equal(_obj(got), dense_conv(dense, X, ctx.p)), params)


def check_conv_execution(H, W, C, Kc, R, b, ctx, rng, res, params):
    try:
        plan = plan_bsgs_conv(H, W, C, Kc, R, b, ctx.n)
    except PlanInfeasible:
        return
    kernel = BlockCirculantConvKernel.random(Kc, C, R, b, rng, ctx.p)
    X = rng.integers(0, ctx.p, (C, H, W), dtype=np.uint64)
    counter = OpCounter(n=ctx.n)
    Y = execute_conv(plan, kernel, X, KeyContext(int(rng.integers(1 << 31)), ctx), counter)
    res.record("bsgs-conv", np.array_equal(_obj(Y), dense_conv(kernel.to_dense(), X, ctx.p)), params)
    counts = (counter.n_pmult, counter.n_rot)
    res.record("bsgs-conv-counts", counts == (plan.n_pmult, plan.n_rot), params, f"counted {counts}")


def _conv_block_dims(rng, n: int):
    while True:
        b = _pow2_below(rng, 8)
        H = int(rng.integers(1, 9))
        W = int(rng.integers(1, 9))
        if b * next_power_of_two(H * W) <= n:
            R = int(rng.integers(1, min(H, W) + 1))
            return b, H, W, R


def check_conv_case(rng, n: int, res: SuiteResult, seed: int):
    ctx = _context(n)
    b, H, W, R = _conv_block_dims(rng, n)
    K = rng.integers(0, ctx.p, (b, R, R), dtype=np.uint64)
    X = rng.integers(0, ctx.p, (b, H, W), dtype=np.uint64)
    check_block_conv(K, X, ctx, res, {"seed": seed, "n": n, "b": b, "H": H, "W": W, "R": R})
    b = int(rng.choice([1, 2, 4]))
    H, W = int(rng.integers(2, 8)), int(rng.integers(2, 8))
    R = int(rng.integers(1, min(H, W, 3) + 1))
    C, Kc = b * int(rng.integers(1, 4)), b * int(rng.integers(1, 4))
    params = {"seed": seed, "n": n, "H": H, "W": W, "C": C, "K": Kc, "R": R, "b": b}
    check_conv_execution(H, W, C, Kc, R, b, ctx, rng, res, params)


def conv_exhaustive(n: int, res: SuiteResult, seed: int = 0, limit: int = 16):
    """Every (b, H, W, R) block with b * H * W <= limit."""
    ctx = _context(n)
    rng = np.random.default_rng(seed)
    for b in (1, 2, 4, 8, 16):
        for H, W in itertools.product(range(1, limit + 1), repeat=2):
            if b * H * W > limit:
                continue
            for R in range(1, min(H, W) + 1):
                K = rng.integers(0, ctx.p, (b, R, R), dtype=np.uint64)
                X = rng.integers(0, ctx.p, (b, H, W), dtype=np.uint64)
                check_block_conv(K, X, ctx, res, {"n": n, "b": b, "H": H, "W": W, "R": R, "exhaustive": 1})


# ------------------------------------------------------------------ protocol


def check_linear_protocol(ctx, rng, res, params, kind="gemm"):
    p = ctx.p
    keys = KeyContext(int(rng.integers(1 << 31)), ctx)
    b = int(rng.choice([1, 2, 4]))
    if kind == "gemm":
        d1, d2, d3 = int(rng.integers(1, 17)), b * int(rng.integers(1, 7)), b * int(rng.integers(1, 7))
        plan = plan_bsgs_gemm(d1, d2, d3, b, ctx.n)
        layer = BlockCirculantMatrix.random(d3, d2, b, rng, p)
        X = rng.integers(0, p, (d2, d1), dtype=np.uint64)
        oracle = lambda bias: (dense_matmul(layer.to_dense(), X, p) + _obj(bias)[:, None]) % p  # noqa: E731
    else:
        H = int(rng.integers(3, 6))
        R = int(rng.choice([1, 3]))
        C, Kc = b * int(rng.integers(1, 4)), b * int(rng.integers(1, 4))
        plan = plan_bsgs_conv(H, H, C, Kc, R, b, ctx.n)
        layer = BlockCirculantConvKernel.random(Kc, C, R, b, rng, p)
        X = rng.integers(0, p, (C, H, H), dtype=np.uint64)
        oracle = lambda bias: (dense_conv(layer.to_dense(), X, p) + _obj(bias)[:, None, None]) % p  # noqa: E731
    bias = rng.integers(0, p, plan.D3 * b, dtype=np.uint64)
    xc, xs = share(X, rng, ctx)
    yc, ys, tr = run_linear_layer(layer, xc, xs, plan, keys, bias=bias)
    params = dict(params, kind=kind, b=b)
    res.record("linear-layer", np.array_equal(_obj(reconstruct(yc, ys, ctx)), oracle(bias)), params)
    res.record("linear-rounds", tr.rounds == 1, params, f"rounds={tr.rounds}")


def fusable_pair(ctx, rng, kind="gemm", attempts: int = 50):
    """Random layer shapes whose plans satisfy the fusion layout constraints."""
    for _ in range(attempts):
        b = int(rng.choice([1, 2, 4]))
        ch = b * int(rng.integers(1, 5))
        try:
            if kind == "gemm":
                d1 = int(rng.integers(1, 17))
                p1 = plan_bsgs_gemm(d1, ch, ch, b, ctx.n)
                p2 = plan_bsgs_gemm(d1, ch, ch, b, ctx.n)
            else:
                H = int(rng.integers(3, 6))
                R = int(rng.choice([1, 3]))
                p1 = plan_bsgs_conv(H, H, ch, ch, 1, b, ctx.n)
                p2 = plan_bsgs_conv(H, H, ch, ch, R, b, ctx.n)
            check_fusable(p1, p2)
        except (PlanInfeasible, ValueError):
            continue
        return p1, p2
    return None


def _random_layer(plan, rng, p):
    b = plan.b
    if plan.kind == "gemm":
        return BlockCirculantMatrix.random(plan.D3 * b, plan.D2 * b, b, rng, p)
    return BlockCirculantConvKernel.random(plan.D3 * b, plan.D2 * b, plan.R, b, rng, p)


def _dense_apply(layer, X, p):
    if isinstance(layer, BlockCirculantMatrix):
        return dense_matmul(layer.to_dense(), X, p)
    return dense_conv(layer.to_dense(), X, p)


def _input_tensor(plan, rng, p):
    if plan.kind == "gemm":
        return rng.integers(0, p, (plan.D2 * plan.b, plan.d1), dtype=np.uint64)
    return rng.integers(0, p, (plan.D2 * plan.b, plan.H, plan.W), dtype=np.uint64)


def check_fused_protocol(ctx, rng, res, params, kind="gemm"):
    pair = fusable_pair(ctx, rng, kind)
    if pair is None:
        return
    p1, p2 = pair
    p = ctx.p
    keys = KeyContext(int(rng.integers(1 << 31)), ctx)
    W1, W2 = _random_layer(p1, rng, p), _random_layer(p2, rng, p)
    X = _input_tensor(p1, rng, p)
    Xr = _input_tensor(p2, rng, p)
    b1 = rng.integers(0, p, p1.D3 * p1.b, dtype=np.uint64)
    b2 = rng.integers(0, p, p2.D3 * p2.b, dtype=np.uint64)
    tail = (None,) * (X.ndim - 1)
    y1 = (_dense_apply(W1, X, p) + _obj(b1)[(slice(None),) + tail]) % p
    want = (_dense_apply(W2, (y1 + _obj(Xr)) % p, p) + _obj(b2)[(slice(None),) + tail]) % p
    xc, xs = share(X, rng, ctx)
    rc, rs = share(Xr, rng, ctx)
    yc, ys, tr = run_ir_fused(W1, W2, xc, xs, encrypt_residual(Xr, p2, keys), (p1, p2), keys, b1, b2)
    uc, us, tu = run_ir_unfused(W1, W2, xc, xs, rc, rs, (p1, p2), keys, b1, b2)
    params = dict(params, kind=kind, b=p1.b, d=p1.d)
    res.record("fused-ir", np.array_equal(_obj(reconstruct(yc, ys, ctx)), want), params)
    res.record("unfused-ir", np.array_equal(_obj(reconstruct(uc, us, ctx)), want), params)
    res.record("fused-rounds", (tr.rounds, tu.rounds) == (1, 2), params, f"fused={tr.rounds} unfused={tu.rounds}")


def check_protocol_case(rng, n: int, res: SuiteResult, seed: int):
    ctx = _context(n)
    kind = "conv" if n >= 256 and rng.random() < 0.5 else "gemm"
    check_linear_protocol(ctx, rng, res, {"seed": seed, "n": n}, kind)
    check_fused_protocol(ctx, rng, res, {"seed": seed, "n": n}, kind)


# ------------------------------------------------------------------ driver

_CASES = {
    "ring": check_ring_case,
    "encode": check_encode_case,
    "conv": check_conv_case,
    "protocol": check_protocol_case,
}
_EXHAUSTIVE = {"encode": encode_exhaustive, "conv": conv_exhaustive}


def run_suite(name: str, seed: int = 0, n: int | None = None, cases: int = 20, exhaustive: bool = True) -> SuiteResult:
    """Run ``cases`` random cases, cycling ring sizes unless ``n`` is fixed."""
    if name not in _CASES:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    res = SuiteResult(name)
    sizes = (n,) if n else DEFAULT_SIZES
    for k in range(cases):
        case_seed = seed + k
        size = sizes[random.Random(case_seed).randrange(len(sizes))]
        _CASES[name](np.random.default_rng(case_seed), size, res, case_seed)
    if exhaustive and name in _EXHAUSTIVE:
        for size in sizes:
            _EXHAUSTIVE[name](size, res, seed)
    return res


def run_suites(names, seed: int = 0, n: int | None = None, cases: int = 20, exhaustive: bool = True) -> list[SuiteResult]:
    return [run_suite(s, seed, n, cases, exhaustive) for s in names]
