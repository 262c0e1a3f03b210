import numpy as np
import pytest

from cirche.cirencode import BlockCirculantConvKernel, BlockCirculantMatrix, plan_bsgs_conv, plan_bsgs_gemm
from cirche.fusion import BnParams, dequantize, fuse_convbn, quantize
from cirche.mockhe import KeyContext
from cirche.ring import find_prime
from cirche.twoparty import (
    Party,
    ProtocolError,
    Share,
    check_fusable,
    encrypt_residual,
    reconstruct,
    run_ir_fused,
    run_ir_unfused,
    run_linear_layer,
    share,
)

CTX = find_prime(41, 256)
P = CTX.p


def dense(W, X):
    return (np.asarray(W).astype(object).dot(np.asarray(X).astype(object))) % P


def conv(kernel, X):
    kernel, X = np.asarray(kernel).astype(object), np.asarray(X).astype(object)
    K, C, R, _ = kernel.shape
    _, H, W = X.shape
    out = np.zeros((K, H - R + 1, W - R + 1), dtype=object)
    for y in range(H - R + 1):
        for x in range(W - R + 1):
            out[:, y, x] = np.einsum("kcrs,crs->k", kernel, X[:, y : y + R, x : x + R])
    return out % P


def gemm_setup(rng, d1=5, d2=8, d3=8, b=2):
    plan = plan_bsgs_gemm(d1, d2, d3, b, CTX.n)
    W = BlockCirculantMatrix.random(d3, d2, b, rng, P)
    X = rng.integers(0, P, (d2, d1), dtype=np.uint64)
    return plan, W, X


def test_sharing_is_additive(rng):
    x = rng.integers(0, P, 10, dtype=np.uint64)
    c, s = share(x, rng, CTX)
    assert np.array_equal(reconstruct(c, s, CTX), x)
    with pytest.raises(ProtocolError):
        reconstruct(c, c, CTX)


def test_linear_layer_reconstructs(rng):
    plan, W, X = gemm_setup(rng)
    xc, xs = share(X, rng, CTX)
    yc, ys, tr = run_linear_layer(W, xc, xs, plan, KeyContext(3, CTX))
    assert np.array_equal(reconstruct(yc, ys, CTX).astype(object), dense(W.to_dense(), X))
    assert tr.rounds == 1
    assert tr.op_counter.n_ct_sent == plan.n_ct_in + plan.n_ct_out
    assert tr.bytes_c2s + tr.bytes_s2c == tr.op_counter.n_ct_sent * 256 * 218 // 8


def test_client_holding_everything(rng):
    plan, W, X = gemm_setup(rng)
    yc, ys, _ = run_linear_layer(W, Share(X, Party.CLIENT), Share(np.zeros_like(X), Party.SERVER), plan, KeyContext(3, CTX))
    assert np.array_equal(reconstruct(yc, ys, CTX).astype(object), dense(W.to_dense(), X))


def test_bias_is_added(rng):
    plan, W, X = gemm_setup(rng)
    bias = rng.integers(0, P, 8, dtype=np.uint64)
    xc, xs = share(X, rng, CTX)
    yc, ys, _ = run_linear_layer(W, xc, xs, plan, KeyContext(3, CTX), bias=bias)
    want = (dense(W.to_dense(), X) + bias.astype(object)[:, None]) % P
    assert np.array_equal(reconstruct(yc, ys, CTX).astype(object), want)


def test_mask_seed_changes_shares_not_result(rng):
    plan, W, X = gemm_setup(rng)
    xc, xs = share(X, rng, CTX)
    a = run_linear_layer(W, xc, xs, plan, KeyContext(3, CTX), server_seed=1)
    b = run_linear_layer(W, xc, xs, plan, KeyContext(3, CTX), server_seed=2)
    assert not np.array_equal(a[1].value, b[1].value)
    assert np.array_equal(reconstruct(a[0], a[1], CTX), reconstruct(b[0], b[1], CTX))


def test_server_share_is_spread_over_field(rng):
    plan, W, X = gemm_setup(rng, d1=16, d2=16, d3=16)
    xc, xs = share(X, rng, CTX)
    _, ys, _ = run_linear_layer(W, xc, xs, plan, KeyContext(3, CTX))
    vals = ys.value.astype(float).ravel() / P
    assert 0.35 < vals.mean() < 0.65 and len(np.unique(ys.value)) == ys.value.size


def test_linear_layer_shape_errors(rng):
    plan, W, X = gemm_setup(rng)
    with pytest.raises(ProtocolError):
        xc, xs = share(X[:, :2], rng, CTX)
        run_linear_layer(W, xc, xs, plan, KeyContext(3, CTX))


def _fused_pair(rng, b=2, ch=4, d1=6):
    p1 = plan_bsgs_gemm(d1, ch, ch, b, CTX.n)
    p2 = plan_bsgs_gemm(d1, ch, ch, b, CTX.n)
    W1 = BlockCirculantMatrix.random(ch, ch, b, rng, P)
    W2 = BlockCirculantMatrix.random(ch, ch, b, rng, P)
    return (p1, p2), W1, W2


def test_fused_matches_composed_oracle(rng):
    plans, W1, W2 = _fused_pair(rng)
    keys = KeyContext(8, CTX)
    X = rng.integers(0, P, (4, 6), dtype=np.uint64)
    Xr = rng.integers(0, P, (4, 6), dtype=np.uint64)
    xc, xs = share(X, rng, CTX)
    rc, rs = share(Xr, rng, CTX)
    want = dense(W2.to_dense(), (dense(W1.to_dense(), X) + Xr.astype(object)) % P)
    yc, ys, tr = run_ir_fused(W1, W2, xc, xs, encrypt_residual(Xr, plans[1], keys), plans, keys)
    uc, us, tu = run_ir_unfused(W1, W2, xc, xs, rc, rs, plans, keys)
    assert np.array_equal(reconstruct(yc, ys, CTX).astype(object), want)
    assert np.array_equal(reconstruct(uc, us, CTX).astype(object), want)
    assert (tr.rounds, tu.rounds) == (1, 2)
    assert tr.output_depth == 2


def test_fused_conv_pair(rng):
    b, ch, H = 2, 4, 4
    p1 = plan_bsgs_conv(H, H, ch, ch, 1, b, CTX.n)
    p2 = plan_bsgs_conv(H, H, ch, ch, 3, b, CTX.n)
    K1 = BlockCirculantConvKernel.random(ch, ch, 1, b, rng, P)
    K2 = BlockCirculantConvKernel.random(ch, ch, 3, b, rng, P)
    keys = KeyContext(4, CTX)
    X = rng.integers(0, P, (ch, H, H), dtype=np.uint64)
    Xr = rng.integers(0, P, (ch, H, H), dtype=np.uint64)
    xc, xs = share(X, rng, CTX)
    yc, ys, tr = run_ir_fused(K1, K2, xc, xs, encrypt_residual(Xr, p2, keys), (p1, p2), keys)
    want = conv(K2.to_dense(), (conv(K1.to_dense(), X) + Xr.astype(object)) % P)
    assert np.array_equal(reconstruct(yc, ys, CTX).astype(object), want)
    assert tr.rounds == 1


def test_fused_with_identity_second_layer(rng):
    b, ch, H = 1, 1, 4
    p1 = plan_bsgs_conv(H, H, ch, ch, 1, b, CTX.n)
    p2 = plan_bsgs_conv(H, H, ch, ch, 1, b, CTX.n)
    K1 = BlockCirculantConvKernel.random(ch, ch, 1, b, rng, P)
    K2 = BlockCirculantConvKernel(np.ones((1, 1, 1, 1, 1), dtype=np.uint64), 1)
    keys = KeyContext(4, CTX)
    X = rng.integers(0, P, (ch, H, H), dtype=np.uint64)
    xc, xs = share(X, rng, CTX)
    zero = np.zeros((ch, H, H), dtype=np.uint64)
    yc, ys, _ = run_ir_fused(K1, K2, xc, xs, encrypt_residual(zero, p2, keys), (p1, p2), keys)
    lc, ls, _ = run_linear_layer(K1, xc, xs, p1, keys)
    assert np.array_equal(reconstruct(yc, ys, CTX), reconstruct(lc, ls, CTX))


def test_fusion_requires_equal_blocks(rng):
    p1 = plan_bsgs_gemm(6, 4, 4, 2, CTX.n)
    p2 = plan_bsgs_gemm(6, 4, 4, 4, CTX.n)
    with pytest.raises(ProtocolError):
        check_fusable(p1, p2)
    W1 = BlockCirculantMatrix.random(4, 4, 2, rng, P)
    W2 = BlockCirculantMatrix.random(4, 4, 4, rng, P)
    keys = KeyContext(1, CTX)
    xc, xs = share(rng.integers(0, P, (4, 6), dtype=np.uint64), rng, CTX)
    with pytest.raises(ProtocolError):
        run_ir_fused(W1, W2, xc, xs, encrypt_residual(np.zeros((4, 6), dtype=np.uint64), p2, keys), (p1, p2), keys)


def test_fused_convbn_in_fixed_point(rng):
    b, ch, H, bits = 2, 4, 4, 8
    def draw():
        return np.repeat(rng.uniform(0.5, 1.5, ch // b), b)
    bn1 = BnParams(draw(), draw() - 1, draw() - 1, draw())
    bn2 = BnParams(draw(), draw() - 1, draw() - 1, draw())
    k1 = BlockCirculantConvKernel(rng.integers(-3, 4, (ch // b, ch // b, b, 1, 1)).astype(float), b)
    k2 = BlockCirculantConvKernel(rng.integers(-3, 4, (ch // b, ch // b, b, 3, 3)).astype(float), b)
    f1, c1 = fuse_convbn(k1, bn1)
    f2, c2 = fuse_convbn(k2, bn2)
    X = rng.integers(-4, 5, (ch, H, H)).astype(float)
    Xr = rng.integers(-4, 5, (ch, H, H)).astype(float)

    def q(v, s=bits):
        return quantize(v, s, CTX)

    K1 = BlockCirculantConvKernel(q(f1.generators), b)
    K2 = BlockCirculantConvKernel(q(f2.generators), b)
    plans = (plan_bsgs_conv(H, H, ch, ch, 1, b, CTX.n), plan_bsgs_conv(H, H, ch, ch, 3, b, CTX.n))
    keys = KeyContext(2, CTX)
    xc, xs = share(q(X, 0), rng, CTX)
    # scales: layer 1 output at 2^bits, layer 2 output at 2^(2 bits)
    yc, ys, _ = run_ir_fused(K1, K2, xc, xs, encrypt_residual(q(Xr), plans[1], keys), plans, keys, q(c1), q(c2, 2 * bits))
    got = dequantize(reconstruct(yc, ys, CTX), 2 * bits, CTX)
    from cirche.fusion import conv2d_valid

    want = bn2.apply(conv2d_valid(k2.to_dense(), bn1.apply(conv2d_valid(k1.to_dense(), X)) + Xr))
    assert np.allclose(got, want, atol=0.5)
