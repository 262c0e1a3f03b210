"""Operation and ciphertext counts for circulant and dense HE encodings.

Circulant counts come straight from the BSGS planner, so they match what the
executor does.  Dense baselines are closed-form estimates with the ceiling
conventions written out below; every report says whether it reproduces the
published reference number for the reference shape and, if not, by how much.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from enum import Enum

from .cirencode.planner import PlanInfeasible, plan_bsgs_conv, plan_bsgs_gemm
from .mockhe import Q_BITS

N_DEFAULT = 8192


class Framework(str, Enum):
    CRYPTFLOW2 = "CrypTFlow2"
    CHEETAH = "Cheetah"
    IRON = "Iron"
    BUMBLEBEE = "Bumblebee"
    NEUJEANS = "Neujeans+BSGS"
    BOLT = "Bolt+BSGS"
    CIRENCODE = "CirEncode"


BASELINES = (
    Framework.CRYPTFLOW2,
    Framework.CHEETAH,
    Framework.IRON,
    Framework.BUMBLEBEE,
    Framework.NEUJEANS,
    Framework.BOLT,
)


@dataclass(frozen=True)
class LayerShape:
    kind: str  # "gemm" or "conv"
    dims: tuple  # (d1, d2, d3) or (H, W, C, K, R)
    b: int = 1
    padding: str = "valid"  # conv only
    name: str = ""

    @classmethod
    def gemm(cls, d1, d2, d3, b=1, name=""):
        return cls("gemm", (d1, d2, d3), b, name=name)

    @classmethod
    def conv(cls, H, W, C, K, R, b=1, padding="valid", name=""):
        return cls("conv", (H, W, C, K, R), b, padding, name)

    def with_block(self, b: int) -> "LayerShape":
        return replace(self, b=b)

    def divisible(self, b: int | None = None) -> bool:
        b = self.b if b is None else b
        if self.kind == "gemm":
            _, d2, d3 = self.dims
            return d2 % b == 0 and d3 % b == 0
        _, _, C, K, _ = self.dims
        return C % b == 0 and K % b == 0

    def __str__(self):
        return f"{self.kind}{self.dims} b={self.b}"


@dataclass(frozen=True)
class UnitCosts:
    """Seconds per HE-Pmult, HE-Rot and per ciphertext sent."""

    t_pmult: float = 1e-3
    t_rot: float = 1e-2
    t_comm: float = math.ceil(N_DEFAULT * Q_BITS / 8) / 384e6

    def __post_init__(self):
        if min(self.t_pmult, self.t_rot, self.t_comm) < 0:
            raise ValueError("unit costs must be non-negative")

    def scaled(self, k: float) -> "UnitCosts":
        return UnitCosts(self.t_pmult * k, self.t_rot * k, self.t_comm * k)

    def latency(self, n_pmult: int, n_rot: int, n_ct: int) -> float:
        return n_pmult * self.t_pmult + n_rot * self.t_rot + n_ct * self.t_comm


@dataclass
class CostReport:
    framework: str
    shape: LayerShape
    n_pmult: int
    n_rot: int
    n_ct: int
    latency_estimate: float
    reference: tuple | None = None  # printed (pmult, rot, ct) for this shape, if any
    residual: dict = field(default_factory=dict)

    @property
    def matches_reference(self) -> bool | None:
        if self.reference is None:
            return None
        return not self.residual

    def counts(self) -> tuple:
        return (self.n_pmult, self.n_rot, self.n_ct)

    def as_dict(self) -> dict:
        return {
            "framework": self.framework,
            "shape": str(self.shape),
            "n_pmult": self.n_pmult,
            "n_rot": self.n_rot,
            "n_ct": self.n_ct,
            "latency_estimate": self.latency_estimate,
            "reference": list(self.reference) if self.reference else None,
            "exact": self.matches_reference,
            "residual": self.residual,
        }


# Published reference counts (pmult, rot, ct) at n = 8192.
TABLE2_GEMM_SHAPE = (512, 768, 3072)
TABLE2_CONV_SHAPE = (16, 16, 128, 128, 3)
TABLE2_BLOCK = 8
TABLE2 = {
    (Framework.CRYPTFLOW2, "gemm"): (147456, 3312, 240),
    (Framework.CRYPTFLOW2, "conv"): (9216, 208, 16),
    (Framework.CHEETAH, "gemm"): (147456, 0, 3120),
    (Framework.CHEETAH, "conv"): (1408, 0, 134),
    (Framework.IRON, "gemm"): (147456, 0, 960),
    (Framework.IRON, "conv"): (12672, 0, 257),
    (Framework.BUMBLEBEE, "gemm"): (147456, 6144, 240),
    (Framework.BUMBLEBEE, "conv"): (1408, 256, 16),
    (Framework.NEUJEANS, "gemm"): (147456, 588, 240),
    (Framework.NEUJEANS, "conv"): (1024, 48, 16),
    (Framework.BOLT, "gemm"): (147456, 528, 240),
    (Framework.BOLT, "conv"): (11700, 106, 100),
    (Framework.CIRENCODE, "gemm"): (18432, 48, 240),
    (Framework.CIRENCODE, "conv"): (128, 8, 16),
}

# Published (rot, pmult) per layer; keys are (label, dims, b).  Conv dims are (H, C, R)
# with K = C and H = W.
TABLE3_GEMM_SHAPES = ((1024, 96, 24), (64, 64, 384), (16, 160, 960), (256, 192, 192), (256, 192, 576), (256, 384, 192))
TABLE3_CONV_SHAPES = ((32, 64, 3), (16, 128, 3), (8, 256, 3))
TABLE3 = {
    ("Neujeans+BSGS", 1): [(32, 288), (44, 384), (88, 1024), (90, 1152), (150, 3456), (120, 2304), (32, 1024), (48, 1024), (42, 1134)],
    ("Bolt+BSGS", 1): [(21, 288), (33, 384), (55, 960), (60, 1152), (94, 3456), (78, 2304), (63, 9216), (106, 11700), (116, 4608)],
    ("CirEncode", 2): [(9, 144), (21, 192), (37, 480), (36, 576), (60, 1728), (54, 1152), (16, 512), (32, 726), (28, 567)],
    ("CirEncode", 8): [(0, 36), (7, 48), (15, 120), (12, 144), (18, 432), (18, 288), (0, 64), (8, 128), (12, 135)],
}


def table3_shapes() -> list[LayerShape]:
    out = [LayerShape.gemm(*s) for s in TABLE3_GEMM_SHAPES]
    out += [LayerShape.conv(H, H, C, C, R) for H, C, R in TABLE3_CONV_SHAPES]
    return out


def _cdiv(a: int, b: int) -> int:
    return -(-a // b)


def _isqrt_ceil(x: int) -> int:
    r = math.isqrt(x)
    return r if r * r == x else r + 1


def _reference(framework: Framework, shape: LayerShape, n: int) -> tuple | None:
    if n != N_DEFAULT:
        return None
    if shape.kind == "gemm" and shape.dims == TABLE2_GEMM_SHAPE:
        pass
    elif shape.kind == "conv" and shape.dims == TABLE2_CONV_SHAPE:
        pass
    else:
        return None
    if framework is Framework.CIRENCODE and shape.b != TABLE2_BLOCK:
        return None
    return TABLE2.get((framework, shape.kind))


def printed_reference(framework, shape: LayerShape, n: int = N_DEFAULT) -> dict:
    """All published counts for this framework and shape, keyed by CostReport field."""
    framework = Framework(framework)
    out = {}
    if n != N_DEFAULT:
        return out
    ref = _reference(framework, shape, n)
    if ref is not None:
        out.update(zip(("n_pmult", "n_rot", "n_ct"), ref))
    b = shape.b if framework is Framework.CIRENCODE else 1
    rows = TABLE3.get((framework.value, b))
    if rows:
        for s, (rot, pm) in zip(table3_shapes(), rows):
            if (s.kind, s.dims) == (shape.kind, shape.dims):
                out.update(n_rot=rot, n_pmult=pm)
    return out


# Cells where our counts differ from the published value: key -> (ours, printed).
# Baseline and conv-pmult conventions behind each are recorded in the project notes;
# --golden treats these as expected and fails on any other difference.
KNOWN_DEVIATIONS = {
    ('CrypTFlow2', 'conv', (16, 16, 128, 128, 3), 1, 'n_pmult'): (512, 9216),
    ('CrypTFlow2', 'conv', (16, 16, 128, 128, 3), 1, 'n_rot'): (136, 208),
    ('CrypTFlow2', 'conv', (16, 16, 128, 128, 3), 1, 'n_ct'): (8, 16),
    ('Cheetah', 'conv', (16, 16, 128, 128, 3), 1, 'n_pmult'): (512, 1408),
    ('Iron', 'gemm', (512, 768, 3072), 1, 'n_ct'): (384, 960),
    ('Iron', 'conv', (16, 16, 128, 128, 3), 1, 'n_pmult'): (4608, 12672),
    ('Iron', 'conv', (16, 16, 128, 128, 3), 1, 'n_ct'): (68, 257),
    ('Bumblebee', 'gemm', (512, 768, 3072), 1, 'n_rot'): (112957, 6144),
    ('Bumblebee', 'conv', (16, 16, 128, 128, 3), 1, 'n_pmult'): (512, 1408),
    ('Bumblebee', 'conv', (16, 16, 128, 128, 3), 1, 'n_rot'): (2354, 256),
    ('Bumblebee', 'conv', (16, 16, 128, 128, 3), 1, 'n_ct'): (8, 16),
    ('Neujeans+BSGS', 'gemm', (512, 768, 3072), 1, 'n_rot'): (528, 588),
    ('Neujeans+BSGS', 'gemm', (1024, 96, 24), 1, 'n_rot'): (21, 32),
    ('Neujeans+BSGS', 'gemm', (64, 64, 384), 1, 'n_rot'): (33, 44),
    ('Neujeans+BSGS', 'gemm', (16, 160, 960), 1, 'n_rot'): (55, 88),
    ('Neujeans+BSGS', 'gemm', (16, 160, 960), 1, 'n_pmult'): (960, 1024),
    ('Neujeans+BSGS', 'gemm', (256, 192, 192), 1, 'n_rot'): (60, 90),
    ('Neujeans+BSGS', 'gemm', (256, 192, 576), 1, 'n_rot'): (96, 150),
    ('Neujeans+BSGS', 'gemm', (256, 384, 192), 1, 'n_rot'): (78, 120),
    ('Neujeans+BSGS', 'conv', (8, 8, 256, 256, 3), 1, 'n_rot'): (56, 42),
    ('Neujeans+BSGS', 'conv', (8, 8, 256, 256, 3), 1, 'n_pmult'): (1024, 1134),
    ('Bolt+BSGS', 'conv', (16, 16, 128, 128, 3), 1, 'n_pmult'): (4608, 11700),
    ('Bolt+BSGS', 'conv', (16, 16, 128, 128, 3), 1, 'n_rot'): (96, 106),
    ('Bolt+BSGS', 'conv', (16, 16, 128, 128, 3), 1, 'n_ct'): (40, 100),
    ('Bolt+BSGS', 'gemm', (256, 192, 576), 1, 'n_rot'): (96, 94),
    ('Bolt+BSGS', 'conv', (32, 32, 64, 64, 3), 1, 'n_rot'): (56, 63),
    ('Bolt+BSGS', 'conv', (32, 32, 64, 64, 3), 1, 'n_pmult'): (4608, 9216),
    ('CirEncode', 'conv', (16, 16, 128, 128, 3), 2, 'n_rot'): (24, 32),
    ('CirEncode', 'conv', (16, 16, 128, 128, 3), 2, 'n_pmult'): (256, 726),
    ('CirEncode', 'conv', (16, 16, 128, 128, 3), 8, 'n_pmult'): (64, 128),
    ('CirEncode', 'conv', (16, 16, 128, 128, 3), 8, 'n_ct'): (8, 16),
    ('CirEncode', 'conv', (32, 32, 64, 64, 3), 2, 'n_pmult'): (256, 512),
    ('CirEncode', 'conv', (8, 8, 256, 256, 3), 2, 'n_pmult'): (256, 567),
    ('CirEncode', 'conv', (8, 8, 256, 256, 3), 8, 'n_pmult'): (64, 135),
}


def golden_drift(report: CostReport, framework, n: int = N_DEFAULT) -> list[str]:
    """Printed cells this report fails to reproduce, excluding pinned known deviations."""
    framework = Framework(framework)
    b = report.shape.b if framework is Framework.CIRENCODE else 1
    drift = []
    for name, want in printed_reference(framework, report.shape, n).items():
        got = getattr(report, name)
        known = KNOWN_DEVIATIONS.get((framework.value, report.shape.kind, report.shape.dims, b, name))
        if got == want or (known is not None and known[0] == got):
            continue
        drift.append(f"{framework.value} {report.shape} {name}: got {got}, expected {known[0] if known else want}")
    return drift


def _report(framework, shape, counts, costs, n) -> CostReport:
    pm, rot, ct = counts
    ref = _reference(framework, shape, n)
    residual = {}
    if ref is not None:
        for name, got, want in zip(("n_pmult", "n_rot", "n_ct"), counts, ref):
            if got != want:
                residual[name] = got - want
    return CostReport(framework.value, shape, pm, rot, ct, costs.latency(pm, rot, ct), ref, residual)


def plan_layer(shape: LayerShape, n: int, b: int | None = None):
    b = shape.b if b is None else b
    if shape.kind == "gemm":
        return plan_bsgs_gemm(*shape.dims, b, n)
    H, W, C, K, R = shape.dims
    return plan_bsgs_conv(H, W, C, K, R, b, n, shape.padding)


def count_cirencode(shape: LayerShape, n: int = N_DEFAULT, costs: UnitCosts | None = None) -> CostReport:
    """Counts of the planned circulant BSGS evaluation; raises PlanInfeasible."""
    plan = plan_layer(shape, n)
    return _report(Framework.CIRENCODE, shape, (plan.n_pmult, plan.n_rot, plan.n_ct), costs or UnitCosts(), n)


def _dense_gemm_counts(framework: Framework, d1, d2, d3, n) -> tuple:
    mults = _cdiv(d1 * d2 * d3, n)
    io_cts = _cdiv(d1 * (d2 + d3), n)
    if framework is Framework.CRYPTFLOW2:
        return mults, io_cts + d3, io_cts
    if framework is Framework.CHEETAH:
        return mults, 0, _cdiv(d1 * d2, n) + _cdiv(d1, n) * d3
    if framework is Framework.IRON:
        return mults, 0, _isqrt_ceil(mults)
    if framework is Framework.BUMBLEBEE:
        rot = math.ceil(d1 * d3 * math.log2(n) / (2 * math.sqrt(n)))
        return mults, rot, io_cts
    # Neujeans and Bolt: dense BSGS, i.e. the circulant planner with 1 x 1 blocks
    plan = plan_bsgs_gemm(d1, d2, d3, 1, n)
    return plan.n_pmult, plan.n_rot, plan.n_ct


def _dense_conv_counts(framework: Framework, H, W, C, K, R, n) -> tuple:
    hw = H * W
    mults = _cdiv(hw * C * K, n)
    io_cts = _cdiv(hw * (C + K), n)
    if framework is Framework.CRYPTFLOW2:
        return mults, io_cts + K, io_cts
    if framework is Framework.CHEETAH:
        # input is zero-padded by R - 1 before packing
        hwp = (H + R - 1) * (W + R - 1)
        return mults, 0, _cdiv(hwp * C, n) + _cdiv(hwp, n) * K
    if framework is Framework.IRON:
        m = _cdiv(hw * C * K * R * R, n)
        return m, 0, _isqrt_ceil(m)
    if framework is Framework.BUMBLEBEE:
        rot = math.ceil(hw * K * math.log2(n) / (2 * math.sqrt(n)))
        return mults, rot, io_cts
    if framework is Framework.NEUJEANS:
        plan = plan_bsgs_conv(H, W, C, K, R, 1, n, padding="same")
        return plan.n_pmult, plan.n_rot, plan.n_ct
    # Bolt: im2col GEMM (d1, d2, d3) = (HW, C R^2, K) through dense BSGS
    plan = plan_bsgs_gemm(hw, C * R * R, K, 1, n)
    return plan.n_pmult, plan.n_rot, plan.n_ct


def count_baseline(framework, shape: LayerShape, n: int = N_DEFAULT, costs: UnitCosts | None = None) -> CostReport:
    """Closed-form counts for a dense-weight baseline encoding (block size ignored)."""
    framework = Framework(framework)
    if framework is Framework.CIRENCODE:
        return count_cirencode(shape, n, costs)
    if shape.kind == "gemm":
        counts = _dense_gemm_counts(framework, *shape.dims, n)
    elif shape.kind == "conv":
        counts = _dense_conv_counts(framework, *shape.dims, n)
    else:
        raise ValueError(f"unsupported layer kind {shape.kind!r}")
    return _report(framework, shape, counts, costs or UnitCosts(), n)


def latency_table(network, block_options=(1, 2, 4, 8, 16), costs: UnitCosts | None = None, n: int = N_DEFAULT) -> list[list[float]]:
    """LAT[i][k] for layer i at block size block_options[k]; inf where infeasible."""
    costs = costs or UnitCosts()
    table = []
    for shape in network:
        row = []
        for b in block_options:
            if not shape.divisible(b):
                row.append(math.inf)
                continue
            try:
                plan = plan_layer(shape, n, b)
            except PlanInfeasible:
                row.append(math.inf)
                continue
            row.append(costs.latency(plan.n_pmult, plan.n_rot, plan.n_ct))
        table.append(row)
    return table


# ------------------------------------------------------------------ tables


def table2_reports(n: int = N_DEFAULT, costs: UnitCosts | None = None) -> list[tuple[CostReport, CostReport]]:
    """(gemm, conv) report pairs for every framework at the reference shapes."""
    gemm = LayerShape.gemm(*TABLE2_GEMM_SHAPE)
    conv = LayerShape.conv(*TABLE2_CONV_SHAPE)
    rows = [(count_baseline(f, gemm, n, costs), count_baseline(f, conv, n, costs)) for f in BASELINES]
    rows.append(
        (count_cirencode(gemm.with_block(TABLE2_BLOCK), n, costs), count_cirencode(conv.with_block(TABLE2_BLOCK), n, costs))
    )
    return rows


def table2_rows(n: int = N_DEFAULT) -> list[dict]:
    rows = []
    for g, c in table2_reports(n):
        rows.append(
            {
                "framework": g.framework,
                "gemm_pmult": g.n_pmult,
                "gemm_rot": g.n_rot,
                "gemm_ct": g.n_ct,
                "gemm_exact": g.matches_reference,
                "conv_pmult": c.n_pmult,
                "conv_rot": c.n_rot,
                "conv_ct": c.n_ct,
                "conv_exact": c.matches_reference,
            }
        )
    return rows


def table3_rows(n: int = N_DEFAULT, padding: str = "valid") -> list[dict]:
    """Rotation / pmult per reference conv and GEMM layer for the dense BSGS and circulant encoders."""
    rows = []
    for (label, b), printed in TABLE3.items():
        for shape, (p_rot, p_pm) in zip(table3_shapes(), printed):
            if label == "CirEncode":
                s = shape.with_block(b)
                if s.kind == "conv":
                    s = replace(s, padding=padding)
                try:
                    got = count_cirencode(s, n).counts()[:2]
                except PlanInfeasible:
                    got = (None, None)
            else:
                got = count_baseline(label, shape, n).counts()[:2]
            pm, rot = got
            rows.append(
                {
                    "method": label if label != "CirEncode" else f"CirEncode(b{b})",
                    "layer": str(shape.dims),
                    "rot": rot,
                    "pmult": pm,
                    "printed_rot": p_rot,
                    "printed_pmult": p_pm,
                    "exact": (rot, pm) == (p_rot, p_pm),
                }
            )
    return rows


def to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def to_markdown(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for r in rows:
        lines.append("| " + " | ".join(str(r[c]) for c in cols) + " |")
    return "\n".join(lines) + "\n"


def scaling_rows(shapes, block_options=(1, 2, 4, 8, 16), n: int = N_DEFAULT) -> list[dict]:
    """Planner counts of each shape across block sizes; infeasible cells are skipped."""
    rows = []
    for shape in shapes:
        for b in block_options:
            if not shape.divisible(b):
                continue
            try:
                plan = plan_layer(shape, n, b)
            except PlanInfeasible:
                continue
            rows.append(
                {
                    "layer": str(shape.dims),
                    "b": b,
                    "rot": plan.n_rot,
                    "pmult": plan.n_pmult,
                    "ct": plan.n_ct,
                    "pmult_x_b": plan.n_pmult * b,
                }
            )
    return rows
