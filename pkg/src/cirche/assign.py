"""Circulant initialization, layer sensitivity and block-size assignment."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cirencode.matrices import circulant_index
from .costmodel import LayerShape

DEFAULT_BLOCKS = (1, 2, 4, 8, 16)


class AssignmentInfeasible(ValueError):
    def __init__(self, limit: float, min_latency: float):
        super().__init__(f"latency limit {limit} is below the minimum achievable latency {min_latency}")
        self.limit = limit
        self.min_latency = min_latency


# ------------------------------------------------------------ initialization


def _blocks(W: np.ndarray, b: int) -> np.ndarray:
    """(rows, cols, *tail) -> (rows/b, cols/b, b, b, *tail)."""
    rows, cols = W.shape[:2]
    if rows % b or cols % b:
        raise ValueError(f"block size {b} does not divide {rows} x {cols}")
    tail = W.shape[2:]
    return W.reshape(rows // b, b, cols // b, b, *tail).swapaxes(1, 2)


def _unblocks(blocks: np.ndarray) -> np.ndarray:
    Rb, Cb, b, _ = blocks.shape[:4]
    return blocks.swapaxes(1, 2).reshape(Rb * b, Cb * b, *blocks.shape[4:])


def _diagonals(blocks: np.ndarray, b: int) -> np.ndarray:
    """(..., b, b, tail) blocks -> (..., t, k, tail): entry (k, (k - t) mod b) of each block."""
    k = np.arange(b)
    rows = np.broadcast_to(k[None, :], (b, b))
    cols = (k[None, :] - k[:, None]) % b
    return blocks[:, :, rows, cols]


def _as_numeric(W) -> np.ndarray:
    W = np.asarray(W)
    if W.dtype.kind in "iub":
        return W.astype(float)
    return W


def _from_generators(gens: np.ndarray, b: int) -> np.ndarray:
    """(Rb, Cb, t, tail) generator values -> dense matrix with entry (i, j) = gen[(i - j) mod b]."""
    return _unblocks(gens[:, :, circulant_index(b)])


def init_circulant_frobenius(W, b: int) -> np.ndarray:
    """Nearest block-circulant matrix in Frobenius norm: mean along each wrapped diagonal."""
    W = _as_numeric(W)
    if b == 1:
        return W.copy()
    diag = _diagonals(_blocks(W, b), b)
    return _from_generators(diag.sum(axis=3) / b, b)


def init_circulant_lossaware(W, G, b: int) -> np.ndarray:
    """Gradient-squared weighted diagonal means; plain means where a diagonal has zero gradient."""
    W = _as_numeric(W)
    G = _as_numeric(G)
    if W.shape != G.shape:
        raise ValueError(f"weight {W.shape} and gradient {G.shape} shapes differ")
    if b == 1:
        return W.copy()
    dw = _diagonals(_blocks(W, b), b)
    g2 = _diagonals(_blocks(G * G, b), b)
    num = (dw * g2).sum(axis=3)
    den = g2.sum(axis=3)
    plain = dw.sum(axis=3) / b
    if W.dtype == object or G.dtype == object:
        flat = [n / d if d != 0 else m for n, d, m in zip(num.ravel(), den.ravel(), plain.ravel())]
        gens = np.array(flat, dtype=object).reshape(num.shape)
    else:
        with np.errstate(invalid="ignore", divide="ignore"):
            gens = np.where(den > 0, num / np.where(den > 0, den, 1), plain)
    return _from_generators(gens, b)


INITS = ("lossaware", "frobenius")


def circulant_init(W, G, b: int, init: str = "lossaware") -> np.ndarray:
    if init == "lossaware":
        return init_circulant_lossaware(W, G, b)
    if init == "frobenius":
        return init_circulant_frobenius(W, b)
    raise ValueError(f"unknown init {init!r}; choose from {', '.join(INITS)}")


def sensitivity(W, G, b: int, init: str = "lossaware") -> float:
    """Fisher-diagonal estimate of the loss increase: sum of G^2 * (W' - W)^2."""
    W = _as_numeric(W)
    G = _as_numeric(G)
    delta = circulant_init(W, G, b, init) - W
    return float((G * G * delta * delta).sum())


# ------------------------------------------------------------ tables


@dataclass
class LayerSnapshot:
    weight: np.ndarray
    grad: np.ndarray
    shape: LayerShape | None = None
    name: str = ""

    def __post_init__(self):
        self.weight = np.asarray(self.weight)
        self.grad = np.asarray(self.grad)
        if self.weight.shape != self.grad.shape:
            raise ValueError(f"{self.name or 'layer'}: weight {self.weight.shape} vs grad {self.grad.shape}")
        if self.weight.dtype != object and not (np.isfinite(self.weight).all() and np.isfinite(self.grad).all()):
            raise ValueError(f"{self.name or 'layer'}: non-finite weights or gradients")


@dataclass
class SensitivityTable:
    block_options: tuple
    values: list  # values[i][k]; inf where the block size does not divide the layer

    def as_dict(self) -> dict:
        return {"block_options": list(self.block_options), "values": [[_json_num(v) for v in row] for row in self.values]}


def sensitivity_table(snapshots, block_options=DEFAULT_BLOCKS, init: str = "lossaware") -> SensitivityTable:
    rows = []
    for snap in snapshots:
        out_dim, in_dim = snap.weight.shape[:2]
        rows.append(
            [
                sensitivity(snap.weight, snap.grad, b, init) if out_dim % b == 0 and in_dim % b == 0 else math.inf
                for b in block_options
            ]
        )
    return SensitivityTable(tuple(block_options), rows)


# ------------------------------------------------------------ solver


@dataclass
class AssignmentSolution:
    blocks: list
    choices: list
    total_sensitivity: float
    total_latency: float
    method: str = "dp"

    def as_dict(self) -> dict:
        return {
            "blocks": list(self.blocks),
            "total_sensitivity": self.total_sensitivity,
            "total_latency": self.total_latency,
            "method": self.method,
        }


def _json_num(v):
    return None if math.isinf(v) else v


def _options(omega, lat, block_options):
    L = len(omega)
    if L == 0 or len(lat) != L:
        raise ValueError("sensitivity and latency tables must have the same non-zero number of layers")
    k = len(omega[0])
    if block_options is None:
        block_options = tuple(DEFAULT_BLOCKS[:k]) if k <= len(DEFAULT_BLOCKS) else tuple(range(k))
    opts = []
    for i in range(L):
        row = [
            (float(omega[i][j]), float(lat[i][j]), j)
            for j in range(k)
            if math.isfinite(omega[i][j]) and math.isfinite(lat[i][j])
        ]
        if not row:
            raise ValueError(f"layer {i} has no feasible block size")
        opts.append(row)
    return opts, tuple(block_options)


def assign_blocks(
    omega,
    lat,
    limit: float,
    block_options=None,
    resolution: float = 1e-6,
    max_states: int = 2_000_000,
) -> AssignmentSolution:
    """Minimize total sensitivity subject to total latency <= limit.

    Multiple-choice knapsack.  Latencies are scaled to integer multiples of
    ``resolution`` (each layer shifted by its own minimum) and solved by
    exact-capacity dynamic programming; when the scaled range exceeds
    ``max_states`` a branch-and-bound search on the unscaled values is used.
    Ties prefer lower latency, then larger block sizes.
    """
    opts, block_options = _options(omega, lat, block_options)
    min_lat = sum(min(o[1] for o in row) for row in opts)
    slack = len(opts) * resolution * 0.5
    if min_lat > limit + slack:
        raise AssignmentInfeasible(limit, min_lat)
    base = [min(o[1] for o in row) for row in opts]
    scaled = [[(o[0], int(round((o[1] - m) / resolution)), o[2]) for o in row] for row, m in zip(opts, base)]
    cap = int(math.floor((limit - min_lat) / resolution + 1e-9))
    cap = max(cap, 0)
    span = min(cap, sum(max(s[1] for s in row) for row in scaled))
    if span + 1 <= max_states:
        choice = _dp(scaled, span)
        method = "dp"
    else:
        choice = _branch_and_bound(opts, limit)
        method = "branch-and-bound"
    return _solution(omega, lat, choice, block_options, method)


def _dp(scaled, span: int) -> list[int]:
    size = span + 1
    dp = np.full(size, np.inf)
    dp[0] = 0.0
    back = []
    for row in scaled:
        new = np.full(size, np.inf)
        pick = np.full(size, -1, dtype=np.int64)
        # larger block sizes first so strict improvement keeps them on ties
        for omega_k, q, j in sorted(row, key=lambda o: -o[2]):
            if q >= size:
                continue
            cand = np.full(size, np.inf)
            cand[q:] = dp[: size - q] + omega_k
            better = cand < new
            new[better] = cand[better]
            pick[better] = j
        dp = new
        back.append((pick, {j: q for _, q, j in row}))
    best_val = dp.min()
    t = int(np.flatnonzero(dp == best_val)[0])
    choice = []
    for pick, qs in reversed(back):
        j = int(pick[t])
        choice.append(j)
        t -= qs[j]
    return choice[::-1]


def _branch_and_bound(opts, limit: float, tol: float = 1e-9) -> list[int]:
    """Layer-by-layer branching over partial assignments.

    A node is pruned when it cannot meet the limit even with the fastest
    remaining choices, when its sensitivity plus the smallest remaining
    sensitivities cannot beat the incumbent, or when another node at the same
    depth is at least as good in both latency and sensitivity.
    """
    L = len(opts)
    om_tail = np.zeros(L + 1)
    lat_tail = np.zeros(L + 1)
    for i in range(L - 1, -1, -1):
        om_tail[i] = om_tail[i + 1] + min(o[0] for o in opts[i])
        lat_tail[i] = lat_tail[i + 1] + min(o[1] for o in opts[i])
    incumbent = _greedy_incumbent(opts, limit, tol)
    lat = np.zeros(1)
    om = np.zeros(1)
    history = []  # per layer: (parent index, choice) for surviving nodes
    for i, row in enumerate(opts):
        # larger block sizes first so the stable sort keeps them on exact ties
        row = sorted(row, key=lambda o: -o[2])
        k = len(row)
        c_om = (om[:, None] + np.array([o[0] for o in row])[None, :]).ravel()
        c_lat = (lat[:, None] + np.array([o[1] for o in row])[None, :]).ravel()
        parent = np.repeat(np.arange(len(om)), k)
        choice = np.tile(np.array([o[2] for o in row]), len(om))
        keep = (c_lat + lat_tail[i + 1] <= limit + tol) & (c_om + om_tail[i + 1] <= incumbent)
        c_om, c_lat, parent, choice = c_om[keep], c_lat[keep], parent[keep], choice[keep]
        order = np.lexsort((c_om, c_lat))  # by latency, then sensitivity
        c_om, c_lat, parent, choice = c_om[order], c_lat[order], parent[order], choice[order]
        best_before = np.minimum.accumulate(np.concatenate(([np.inf], c_om)))[:-1]
        front = c_om < best_before
        om, lat = c_om[front], c_lat[front]
        history.append((parent[front], choice[front]))
        if not len(om):
            raise AssignmentInfeasible(limit, float(lat_tail[0]))
    t = int(np.argmin(om))  # first minimum has the lowest latency
    picks = []
    for parent, choice in reversed(history):
        picks.append(int(choice[t]))
        t = int(parent[t])
    return picks[::-1]


def _greedy_incumbent(opts, limit: float, tol: float) -> float:
    """Objective of a feasible assignment built by cheapest-sensitivity-per-latency upgrades."""
    picks = [min(row, key=lambda o: (o[1], o[0])) for row in opts]
    total = sum(o[1] for o in picks)
    if total > limit + tol:
        return np.inf
    improved = True
    while improved:
        improved = False
        best = None
        for i, row in enumerate(opts):
            cur = picks[i]
            for o in row:
                gain = cur[0] - o[0]
                extra = o[1] - cur[1]
                if gain > 0 and total + extra <= limit + tol:
                    score = gain / max(extra, 1e-300)
                    if best is None or score > best[0]:
                        best = (score, i, o, extra)
        if best is not None:
            _, i, o, extra = best
            picks[i] = o
            total += extra
            improved = True
    # small slack so the incumbent itself survives floating-point reassociation
    return sum(o[0] for o in picks) * (1 + 1e-12) + 1e-300


def _solution(omega, lat, choice, block_options, method) -> AssignmentSolution:
    tot_om = float(sum(omega[i][j] for i, j in enumerate(choice)))
    tot_lat = float(sum(lat[i][j] for i, j in enumerate(choice)))
    blocks = [block_options[j] for j in choice]
    return AssignmentSolution(blocks, list(choice), tot_om, tot_lat, method)


def assign_exhaustive(omega, lat, limit: float, tol: float = 1e-9) -> tuple[float, list[int] | None]:
    """Reference solver: evaluate every one of the k**L assignments."""
    om = np.zeros(1)
    la = np.zeros(1)
    for row_om, row_lat in zip(omega, lat):
        om = (om[:, None] + np.asarray(row_om, dtype=float)[None, :]).ravel()
        la = (la[:, None] + np.asarray(row_lat, dtype=float)[None, :]).ravel()
    ok = la <= limit + tol
    if not ok.any():
        return math.inf, None
    masked = np.where(ok, om, np.inf)
    idx = int(np.argmin(masked))
    shape = tuple(len(r) for r in omega)
    return float(masked[idx]), [int(j) for j in np.unravel_index(idx, shape)]
