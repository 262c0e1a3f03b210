"""Whole-network drivers: block assignment from configs and layer-by-layer protocol runs.

Activation ``k`` is the input of layer ``k`` (activation 0 is the network
input).  A layer with ``residual_from = k`` consumes its predecessor's output
plus activation ``k``.  A layer marked ``fuse_with_next`` is evaluated together
with its successor in one round when fusion is enabled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import mockhe
from .assign import AssignmentSolution, LayerSnapshot, assign_blocks, sensitivity_table
from .cirencode.executor import LayerCodec
from .cirencode.matrices import BlockCirculantConvKernel, BlockCirculantMatrix
from .cirencode.planner import BsgsPlan
from .costmodel import latency_table, plan_layer
from .mockhe import KeyContext, OpCounter
from .ring import PrimeContext, find_prime
from .tensorio import ConfigError, NetworkConfig, layer_snapshot_arrays, read_tsr
from .twoparty import (
    Party,
    ProtocolError,
    Share,
    Transcript,
    check_fusable,
    input_shape,
    output_shape,
    reconstruct,
    run_ir_fused,
    run_linear_layer,
    share,
)
from .verify import dense_conv, dense_matmul

# ------------------------------------------------------------------ assignment


@dataclass
class NetworkAssignment:
    names: list
    solution: AssignmentSolution
    limit_fraction: float
    limit: float
    uncompressed_latency: float
    block_options: tuple
    sensitivities: list
    latencies: list

    def as_dict(self) -> dict:
        def num(v):
            return None if math.isinf(v) else v

        return {
            "layers": [
                {"name": nm, "b": b, "sensitivity": num(self.sensitivities[i][j]), "latency": num(self.latencies[i][j])}
                for i, (nm, b, j) in enumerate(zip(self.names, self.solution.blocks, self.solution.choices))
            ],
            "total_sensitivity": self.solution.total_sensitivity,
            "total_latency": self.solution.total_latency,
            "latency_limit": self.limit,
            "limit_fraction": self.limit_fraction,
            "uncompressed_latency": self.uncompressed_latency,
            "method": self.solution.method,
        }


def assign_network(cfg: NetworkConfig, limit_fraction: float | None = None, init: str = "lossaware") -> NetworkAssignment:
    """Pick one block size per layer minimizing total sensitivity under a latency budget.

    The budget is ``limit_fraction`` times the latency of the network with
    every layer at block size 1.  Raises AssignmentInfeasible.
    """
    fraction = cfg.latency_limit if limit_fraction is None else limit_fraction
    if fraction is None or fraction <= 0:
        raise ConfigError("$.latency_limit", "a positive latency limit fraction is required")
    options = tuple(sorted({1} | {b for layer in cfg.layers for b in layer.allowed_block_sizes}))
    snapshots = []
    for i, layer in enumerate(cfg.layers):
        W, G = layer_snapshot_arrays(cfg, i)
        snapshots.append(LayerSnapshot(W, G, layer.shape, layer.name))
    omega = sensitivity_table(snapshots, options, init).values
    lat = latency_table(cfg.shapes(), options, cfg.unit_costs, cfg.n)
    base = sum(row[0] for row in lat)
    if math.isinf(base):
        raise ConfigError("$.layers", "some layer has no feasible plan at block size 1, so the uncompressed latency is undefined")
    for i, layer in enumerate(cfg.layers):
        for j, b in enumerate(options):
            if b not in layer.allowed_block_sizes:
                omega[i][j] = math.inf
                lat[i][j] = math.inf
    limit = fraction * base
    sol = assign_blocks(omega, lat, limit, options)
    return NetworkAssignment([layer.name for layer in cfg.layers], sol, fraction, limit, base, options, omega, lat)


# ------------------------------------------------------------------ protocol network


@dataclass
class ProtocolLayer:
    name: str
    layer: object  # BlockCirculantMatrix or BlockCirculantConvKernel
    plan: BsgsPlan
    bias: np.ndarray
    residual_from: int | None = None
    fuse_with_next: bool = False


def _load_weight(cfg: NetworkConfig, index: int, plan: BsgsPlan, ctx: PrimeContext):
    base = cfg.source.parent if cfg.source else None
    dense = read_tsr(base / cfg.layers[index].weight if base else cfg.layers[index].weight, expect_dtype=np.uint64)
    dense = ctx.reduce(dense)
    cls = BlockCirculantMatrix if plan.kind == "gemm" else BlockCirculantConvKernel
    try:
        return cls.from_dense(dense, plan.b)
    except ValueError as exc:
        raise ConfigError(f"$.layers[{index}].weight", str(exc)) from exc


def build_protocol_network(cfg: NetworkConfig, seed: int, n: int | None = None, weight_range: int = 8):
    """Plan every layer at its largest allowed block size and draw small integer weights.

    Returns ``(ctx, layers)``.  Weight files, when given, hold dense uint64
    residues that must already be block circulant.
    """
    n = cfg.n if n is None else n
    ctx = find_prime(cfg.prime_bits, n)
    rng = np.random.default_rng([seed, 0x5EED])
    out = []
    for i, lc in enumerate(cfg.layers):
        if lc.shape.kind == "conv" and lc.shape.padding != "valid":
            raise ConfigError(f"$.layers[{i}].padding", "protocol runs execute valid convolutions only")
        b = max(lc.allowed_block_sizes)
        plan = plan_layer(lc.shape, n, b)
        if lc.weight:
            layer = _load_weight(cfg, i, plan, ctx)
        elif plan.kind == "gemm":
            gens = rng.integers(-weight_range, weight_range + 1, (plan.D3, plan.D2, b))
            layer = BlockCirculantMatrix(ctx.reduce(gens), b)
        else:
            gens = rng.integers(-weight_range, weight_range + 1, (plan.D3, plan.D2, b, plan.R, plan.R))
            layer = BlockCirculantConvKernel(ctx.reduce(gens), b)
        bias = ctx.reduce(rng.integers(-weight_range, weight_range + 1, plan.D3 * b))
        out.append(ProtocolLayer(lc.name, layer, plan, bias, lc.residual_from, lc.fuse_with_next))
    _check_chain(out)
    return ctx, out


def _check_chain(layers: list[ProtocolLayer]):
    shapes = [input_shape(layers[0].plan)] + [output_shape(pl.plan) for pl in layers]
    for i, pl in enumerate(layers):
        if input_shape(pl.plan) != shapes[i]:
            raise ConfigError(f"$.layers[{i}].dims", f"input shape {input_shape(pl.plan)} != previous output {shapes[i]}")
        k = pl.residual_from
        if k is not None and shapes[k] != shapes[i]:
            raise ConfigError(f"$.layers[{i}].residual_from", f"activation {k} has shape {shapes[k]}, layer input is {shapes[i]}")


def _bias_view(bias, ndim: int):
    return np.asarray(bias).astype(object).reshape((-1,) + (1,) * (ndim - 1))


def dense_forward(layers: list[ProtocolLayer], x, p: int) -> list[np.ndarray]:
    """Exact integer activations [x_0, ..., x_L]."""
    acts = [np.asarray(x).astype(object) % p]
    for pl in layers:
        inp = acts[-1]
        if pl.residual_from is not None:
            inp = (inp + acts[pl.residual_from]) % p
        if pl.plan.kind == "gemm":
            y = dense_matmul(pl.layer.to_dense(), inp, p)
        else:
            y = dense_conv(pl.layer.to_dense(), inp, p)
        acts.append((y + _bias_view(pl.bias, y.ndim)) % p)
    return acts


@dataclass
class ProtocolRun:
    steps: list = field(default_factory=list)  # one dict per protocol invocation
    transcript: Transcript = field(default_factory=Transcript)
    outputs: dict = field(default_factory=dict)  # activation index -> (client share, server share)

    def summary(self) -> dict:
        t = self.transcript
        return {
            "rounds": t.rounds,
            "bytes_c2s": t.bytes_c2s,
            "bytes_s2c": t.bytes_s2c,
            "ops": t.op_counter.as_dict(),
            "steps": self.steps,
        }


def _absorb(total: Transcript, part: Transcript, step: int):
    total.rounds += part.rounds
    total.bytes_c2s += part.bytes_c2s
    total.bytes_s2c += part.bytes_s2c
    total.op_counter.merge(part.op_counter)
    total.output_depth = max(total.output_depth, part.output_depth)
    total.messages.extend(dict(m, step=step) for m in part.messages)


def _add_shares(a: tuple, b: tuple, ctx) -> tuple:
    return Share(ctx.add(a[0].value, b[0].value), Party.CLIENT), Share(ctx.add(a[1].value, b[1].value), Party.SERVER)


def _shared_residual(res: tuple, plan2: BsgsPlan, keys: KeyContext, counter: OpCounter):
    """Client encrypts its residual share, server adds its own: Enc(x_res) with no reveal."""
    ctx = keys.ctx
    codec = LayerCodec(plan2, ctx)
    mine = codec.encode_input(res[0].value)
    theirs = codec.encode_input(res[1].value)
    cts = [[mockhe.encrypt(v, keys) for v in row] for row in mine]
    cts = [[mockhe.he_add_plain(ct, theirs[i, j], counter, ctx) for j, ct in enumerate(row)] for i, row in enumerate(cts)]
    return cts, sum(len(r) for r in cts)


def run_protocol_network(layers: list[ProtocolLayer], x, ctx: PrimeContext, seed: int, fuse: bool = False) -> ProtocolRun:
    rng = np.random.default_rng([seed, 1])
    keys = KeyContext(seed, ctx)
    server_base = (seed * 0x9E3779B1 + 7) % (1 << 62)
    run = ProtocolRun(transcript=Transcript(op_counter=OpCounter(n=ctx.n)))
    acts = {0: share(x, rng, ctx)}
    i = 0
    while i < len(layers):
        pl = layers[i]
        inp = acts.get(i)
        if inp is None:
            raise ProtocolError(f"activation {i} is internal to a fused pair and cannot be consumed")
        if pl.residual_from is not None:
            inp = _add_shares(inp, _need(acts, pl.residual_from), ctx)
        step = len(run.steps)
        if fuse and pl.fuse_with_next and i + 1 < len(layers):
            nxt = layers[i + 1]
            check_fusable(pl.plan, nxt.plan, pl.layer, nxt.layer)
            res = _need(acts, nxt.residual_from) if nxt.residual_from is not None else _zero_shares(input_shape(nxt.plan), ctx)
            pre = OpCounter(n=ctx.n)
            enc_res, n_res = _shared_residual(res, nxt.plan, keys, pre)
            yc, ys, tr = run_ir_fused(
                pl.layer, nxt.layer, inp[0], inp[1], enc_res, (pl.plan, nxt.plan), keys, pl.bias, nxt.bias, server_seed=server_base + i
            )
            # the residual ciphertexts ride along with the first client message
            pre.n_ct_sent += n_res
            tr.bytes_c2s += n_res * pre.ct_size_bytes
            tr.messages[0]["ciphertexts"] += n_res
            tr.messages[0]["bytes"] += n_res * pre.ct_size_bytes
            tr.op_counter.merge(pre)
            names = [pl.name, nxt.name]
            acts[i + 2] = (yc, ys)
            i += 2
        else:
            yc, ys, tr = run_linear_layer(pl.layer, inp[0], inp[1], pl.plan, keys, pl.bias, server_seed=server_base + i)
            names = [pl.name]
            acts[i + 1] = (yc, ys)
            i += 1
        _absorb(run.transcript, tr, step)
        run.steps.append(
            {
                "layers": names,
                "rounds": tr.rounds,
                "n_pmult": tr.op_counter.n_pmult,
                "n_rot": tr.op_counter.n_rot,
                "ciphertexts": tr.op_counter.n_ct_sent,
                "bytes": tr.bytes_c2s + tr.bytes_s2c,
            }
        )
    run.outputs = acts
    return run


def _need(acts: dict, k: int) -> tuple:
    if k not in acts:
        raise ProtocolError(f"activation {k} is internal to a fused pair and cannot be consumed")
    return acts[k]


def _zero_shares(shape, ctx) -> tuple:
    z = np.zeros(shape, dtype=np.uint64)
    return Share(z, Party.CLIENT), Share(z.copy(), Party.SERVER)


def check_reconstruction(run: ProtocolRun, acts: list[np.ndarray], ctx: PrimeContext) -> list[int]:
    """Activation indices whose reconstructed shares differ from the dense oracle."""
    bad = []
    for k, (c, s) in sorted(run.outputs.items()):
        if not np.array_equal(reconstruct(c, s, ctx).astype(object), acts[k]):
            bad.append(k)
    return bad


def random_input(layers: list[ProtocolLayer], ctx: PrimeContext, seed: int, value_range: int = 64) -> np.ndarray:
    rng = np.random.default_rng([seed, 2])
    return ctx.reduce(rng.integers(-value_range, value_range + 1, input_shape(layers[0].plan)))
