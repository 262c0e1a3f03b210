"""Client/server secret-sharing protocols for circulant linear layers over mock-HE.

The client owns the key.  Each protocol is a short alternating script:
the client encrypts its input share and sends it; the server folds in its
own share, evaluates, masks the result with fresh randomness and replies.
The server keeps the mask as its output share.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import mockhe
from .cirencode.executor import LayerCodec, PlanMismatch, evaluate, input_span
from .cirencode.matrices import BlockCirculantConvKernel, BlockCirculantMatrix
from .cirencode.planner import BsgsPlan
from .mockhe import Ciphertext, KeyContext, OpCounter
from .ring import PrimeContext


class ProtocolError(ValueError):
    pass


class Party(str, Enum):
    CLIENT = "client"
    SERVER = "server"


@dataclass
class Share:
    value: np.ndarray
    owner: Party


def share(x, rng: np.random.Generator, ctx: PrimeContext) -> tuple[Share, Share]:
    """Split x into uniformly random additive shares mod p."""
    x = ctx.reduce(x)
    r = rng.integers(0, ctx.p, size=x.shape, dtype=np.uint64)
    return Share(ctx.sub(x, r), Party.CLIENT), Share(r, Party.SERVER)


def reconstruct(a: Share, b: Share, ctx: PrimeContext) -> np.ndarray:
    if a.owner == b.owner:
        raise ProtocolError("reconstruction needs one client and one server share")
    return ctx.add(a.value, b.value)


@dataclass
class Transcript:
    rounds: int = 0
    bytes_c2s: int = 0
    bytes_s2c: int = 0
    op_counter: OpCounter = field(default_factory=OpCounter)
    messages: list = field(default_factory=list)
    output_depth: int = 0

    def as_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "bytes_c2s": self.bytes_c2s,
            "bytes_s2c": self.bytes_s2c,
            "ciphertexts": self.op_counter.n_ct_sent,
            "ops": self.op_counter.as_dict(),
            "output_depth": self.output_depth,
            "messages": self.messages,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


class Channel:
    """In-memory duplex queue that meters ciphertext traffic.

    A round is one client message answered by one server message.
    """

    def __init__(self, transcript: Transcript):
        self.transcript = transcript
        self._queues = {Party.CLIENT: deque(), Party.SERVER: deque()}
        self._awaiting_reply = False

    def send(self, sender: Party, cts: list[Ciphertext], label: str = ""):
        t = self.transcript
        size = len(cts) * t.op_counter.ct_size_bytes
        t.op_counter.n_ct_sent += len(cts)
        if sender is Party.CLIENT:
            t.bytes_c2s += size
            self._awaiting_reply = True
            receiver = Party.SERVER
        else:
            t.bytes_s2c += size
            if self._awaiting_reply:
                t.rounds += 1
                self._awaiting_reply = False
            receiver = Party.CLIENT
        t.messages.append({"from": sender.value, "label": label, "ciphertexts": len(cts), "bytes": size})
        self._queues[receiver].append(cts)

    def recv(self, receiver: Party) -> list[Ciphertext]:
        q = self._queues[receiver]
        if not q:
            raise ProtocolError(f"{receiver.value} has no pending message")
        return q.popleft()


# ------------------------------------------------------------ helpers


def _flatten(grid):
    return [ct for row in grid for ct in row]


def _regrid(flat, rows: int, cols: int):
    if len(flat) != rows * cols:
        raise ProtocolError(f"expected {rows * cols} ciphertexts, got {len(flat)}")
    return [flat[r * cols : (r + 1) * cols] for r in range(rows)]


def _check_layer(layer, plan: BsgsPlan):
    if plan.kind == "gemm" and not isinstance(layer, BlockCirculantMatrix):
        raise ProtocolError("GEMM plan needs a BlockCirculantMatrix")
    if plan.kind == "conv" and not isinstance(layer, BlockCirculantConvKernel):
        raise ProtocolError("conv plan needs a BlockCirculantConvKernel")
    if layer.b != plan.b:
        raise ProtocolError(f"layer block size {layer.b} differs from plan block size {plan.b}")


def output_shape(plan: BsgsPlan) -> tuple:
    if plan.kind == "gemm":
        return (plan.D3 * plan.b, plan.d1)
    return (plan.D3 * plan.b, plan.H - plan.R + 1, plan.W - plan.R + 1)


def input_shape(plan: BsgsPlan) -> tuple:
    if plan.kind == "gemm":
        return (plan.D2 * plan.b, plan.d1)
    return (plan.D2 * plan.b, plan.H, plan.W)


def _bias_tensor(bias, plan: BsgsPlan, ctx: PrimeContext) -> np.ndarray:
    shape = output_shape(plan)
    bias = ctx.reduce(bias)
    if bias.shape == shape:
        return bias
    if bias.shape == (shape[0],):
        return np.broadcast_to(bias.reshape((-1,) + (1,) * (len(shape) - 1)), shape).copy()
    raise ProtocolError(f"bias shape {bias.shape} matches neither {shape} nor ({shape[0]},)")


def _add_bias(cts, bias, plan, ctx, counter, out_span=None):
    if bias is None:
        return cts
    grid = LayerCodec(plan, ctx).encode_output(_bias_tensor(bias, plan, ctx), out_span)
    return [[mockhe.he_add_plain(ct, grid[i][j], counter, ctx) for j, ct in enumerate(row)] for i, row in enumerate(cts)]


def _mask_and_reply(cts, keys: KeyContext, server_seed: int, counter: OpCounter, ctx: PrimeContext):
    """Server subtracts a fresh uniform slot vector from every output ciphertext."""
    masks = []
    out = []
    for t1, row in enumerate(cts):
        mrow, orow = [], []
        for t3, ct in enumerate(row):
            stream = KeyContext(server_seed, ctx).stream((t1 << 16) | t3, ctx.n, domain=1)
            mrow.append(stream)
            orow.append(mockhe.he_sub_plain(ct, stream, counter, ctx))
        masks.append(mrow)
        out.append(orow)
    return out, np.asarray(masks, dtype=np.uint64)


def _server_seed(keys: KeyContext, server_seed):
    return (keys.seed * 0x9E3779B1 + 1) % (1 << 63) if server_seed is None else server_seed


# ------------------------------------------------------------ protocols


def run_linear_layer(
    W,
    x_client: Share,
    x_server: Share,
    plan: BsgsPlan,
    keys: KeyContext,
    bias=None,
    server_seed: int | None = None,
    transcript: Transcript | None = None,
) -> tuple[Share, Share, Transcript]:
    """One-round linear layer: shares of X in, shares of W X (+ bias) out."""
    ctx = keys.ctx
    _check_layer(W, plan)
    if ctx.n != plan.n:
        raise PlanMismatch(f"plan is for n={plan.n}, keys for n={ctx.n}")
    shape = input_shape(plan)
    if np.shape(x_client.value) != shape or np.shape(x_server.value) != shape:
        raise ProtocolError(f"input shares must have shape {shape}")
    transcript = transcript or Transcript(op_counter=OpCounter(n=ctx.n))
    chan = Channel(transcript)
    codec = LayerCodec(plan, ctx)
    counter = transcript.op_counter

    # client
    grid = codec.encode_input(x_client.value)
    chan.send(Party.CLIENT, [mockhe.encrypt(v, keys) for v in grid.reshape(-1, ctx.n)], "enc(x_c)")

    # server
    cts = _regrid(chan.recv(Party.SERVER), plan.T1, plan.T2)
    own = codec.encode_input(x_server.value)
    cts = [[mockhe.he_add_plain(ct, own[i, j], counter, ctx) for j, ct in enumerate(row)] for i, row in enumerate(cts)]
    out = evaluate(cts, codec.weights(W), plan, counter, ctx)
    out = _add_bias(out, bias, plan, ctx, counter)
    out, masks = _mask_and_reply(out, keys, _server_seed(keys, server_seed), counter, ctx)
    transcript.output_depth = max(ct.depth for ct in _flatten(out))
    chan.send(Party.SERVER, _flatten(out), "enc(y - r)")

    # client
    reply = chan.recv(Party.CLIENT)
    dec = np.stack([mockhe.decrypt(ct, keys) for ct in reply]).reshape(plan.T1, plan.T3, ctx.n)
    y_client = Share(codec.decode_output(dec), Party.CLIENT)
    y_server = Share(codec.decode_output(masks), Party.SERVER)
    return y_client, y_server, transcript


def check_fusable(plan1: BsgsPlan, plan2: BsgsPlan, W1=None, W2=None):
    """Raise unless the first layer's output layout is the second layer's input layout."""
    b1 = W1.b if W1 is not None else plan1.b
    b2 = W2.b if W2 is not None else plan2.b
    if b1 != b2 or plan1.b != plan2.b:
        raise ProtocolError(f"fusion needs equal block sizes, got {b1} and {b2}")
    if plan1.kind != plan2.kind:
        raise ProtocolError("fusion needs two layers of the same kind")
    same = ("n", "stride", "d", "d1", "d1_tile")
    diff = [f for f in same if getattr(plan1, f) != getattr(plan2, f)]
    if diff:
        raise ProtocolError(f"layer layouts differ in {', '.join(diff)}")
    if plan1.D3 != plan2.D2:
        raise ProtocolError(f"first layer outputs {plan1.D3} blocks, second expects {plan2.D2}")
    if plan1.kind == "conv":
        if plan1.R != 1:
            raise ProtocolError("the first fused convolution must be 1x1")
        if (plan1.H, plan1.W) != (plan2.H, plan2.W):
            raise ProtocolError("fused convolutions must share spatial size")
    if plan1.d != plan1.positions:
        input_span(plan1, input_span(plan2))


def encrypt_residual(x_res, plan2: BsgsPlan, keys: KeyContext) -> list[list[Ciphertext]]:
    """Encrypt a residual tensor in the second fused layer's input layout."""
    grid = LayerCodec(plan2, keys.ctx).encode_input(x_res)
    return [[mockhe.encrypt(v, keys) for v in row] for row in grid]


def run_ir_fused(
    W1,
    W2,
    x_client: Share,
    x_server: Share,
    enc_res: list[list[Ciphertext]],
    plans: tuple[BsgsPlan, BsgsPlan],
    keys: KeyContext,
    bias1=None,
    bias2=None,
    server_seed: int | None = None,
) -> tuple[Share, Share, Transcript]:
    """Two chained layers plus a residual in a single round.

    Output shares reconstruct W2 (x_res + W1 x + bias1) + bias2.
    """
    plan1, plan2 = plans
    ctx = keys.ctx
    _check_layer(W1, plan1)
    _check_layer(W2, plan2)
    check_fusable(plan1, plan2, W1, W2)
    if len(enc_res) != plan2.T1 or any(len(r) != plan2.T2 for r in enc_res):
        raise ProtocolError("encrypted residual does not match the second layer's input tiling")
    transcript = Transcript(op_counter=OpCounter(n=ctx.n))
    chan = Channel(transcript)
    counter = transcript.op_counter
    codec1 = LayerCodec(plan1, ctx)
    codec2 = LayerCodec(plan2, ctx)
    span2 = input_span(plan2)
    span2 = None if plan2.d == plan2.positions else span2

    # client: the first layer's input must be replicated wide enough for a replicated output
    grid = codec1.encode_input(x_client.value, out_span=span2)
    chan.send(Party.CLIENT, [mockhe.encrypt(v, keys) for v in grid.reshape(-1, ctx.n)], "enc(x1_c)")

    # server
    cts = _regrid(chan.recv(Party.SERVER), plan1.T1, plan1.T2)
    own = codec1.encode_input(x_server.value, out_span=span2)
    cts = [[mockhe.he_add_plain(ct, own[i, j], counter, ctx) for j, ct in enumerate(row)] for i, row in enumerate(cts)]
    y1 = evaluate(cts, codec1.weights(W1), plan1, counter, ctx, out_span=span2)
    y1 = _add_bias(y1, bias1, plan1, ctx, counter, out_span=span2)
    mid = [[mockhe.he_add(a, r, counter, ctx) for a, r in zip(row, rrow)] for row, rrow in zip(y1, enc_res)]
    y2 = evaluate(mid, codec2.weights(W2), plan2, counter, ctx)
    y2 = _add_bias(y2, bias2, plan2, ctx, counter)
    out, masks = _mask_and_reply(y2, keys, _server_seed(keys, server_seed), counter, ctx)
    transcript.output_depth = max(ct.depth for ct in _flatten(out))
    chan.send(Party.SERVER, _flatten(out), "enc(y2 - r)")

    # client
    reply = chan.recv(Party.CLIENT)
    dec = np.stack([mockhe.decrypt(ct, keys) for ct in reply]).reshape(plan2.T1, plan2.T3, ctx.n)
    return Share(codec2.decode_output(dec), Party.CLIENT), Share(codec2.decode_output(masks), Party.SERVER), transcript


def run_ir_unfused(
    W1,
    W2,
    x_client: Share,
    x_server: Share,
    res_client: Share,
    res_server: Share,
    plans: tuple[BsgsPlan, BsgsPlan],
    keys: KeyContext,
    bias1=None,
    bias2=None,
) -> tuple[Share, Share, Transcript]:
    """Baseline: the same computation as two independent linear-layer rounds."""
    ctx = keys.ctx
    plan1, plan2 = plans
    transcript = Transcript(op_counter=OpCounter(n=ctx.n))
    y1c, y1s, _ = run_linear_layer(W1, x_client, x_server, plan1, keys, bias1, transcript=transcript)
    mid_c = Share(ctx.add(y1c.value, res_client.value), Party.CLIENT)
    mid_s = Share(ctx.add(y1s.value, res_server.value), Party.SERVER)
    y2c, y2s, _ = run_linear_layer(W2, mid_c, mid_s, plan2, keys, bias2, server_seed=_server_seed(keys, None) + 1, transcript=transcript)
    return y2c, y2s, transcript
