"""Command-line entry point: ``cirche {verify,plan,count,assign,protocol,table}``.

Exit codes: 0 success, 1 verification mismatch or golden drift, 2 usage or
config error, 3 infeasible instance.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import costmodel, report
from .assign import INITS, AssignmentInfeasible
from .cirencode.planner import PlanInfeasible
from .costmodel import BASELINES, Framework, LayerShape, UnitCosts
from .tensorio import ConfigError, TsrError, load_network, write_json

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2, 3

FRAMEWORK_ALIASES = {
    "cryptflow2": Framework.CRYPTFLOW2,
    "cheetah": Framework.CHEETAH,
    "iron": Framework.IRON,
    "bumblebee": Framework.BUMBLEBEE,
    "neujeans": Framework.NEUJEANS,
    "bolt": Framework.BOLT,
    "cirencode": Framework.CIRENCODE,
}


class UsageError(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get("CIRC_HE_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"CIRC_HE_SEED must be an integer, got {raw!r}") from None


def parse_shape(text: str, padding: str = "valid") -> LayerShape:
    """``gemm:d1,d2,d3`` or ``conv:H,W,C,K,R``."""
    kind, _, rest = text.partition(":")
    try:
        dims = [int(v) for v in rest.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse shape {text!r}") from None
    if kind == "gemm" and len(dims) == 3:
        return LayerShape.gemm(*dims)
    if kind == "conv" and len(dims) == 5:
        return LayerShape.conv(*dims, padding=padding)
    raise UsageError(f"shape must be gemm:d1,d2,d3 or conv:H,W,C,K,R, got {text!r}")


def parse_frameworks(text: str) -> list[Framework]:
    if text == "all":
        return list(BASELINES) + [Framework.CIRENCODE]
    out = []
    for name in text.split(","):
        key = name.strip().lower()
        if key not in FRAMEWORK_ALIASES:
            raise UsageError(f"unknown framework {name!r}; choose from {', '.join(FRAMEWORK_ALIASES)} or all")
        out.append(FRAMEWORK_ALIASES[key])
    return out


def _emit(rows: list[dict], fmt: str, out=None):
    out = out or sys.stdout
    if fmt == "csv":
        out.write(costmodel.to_csv(rows))
    elif fmt == "json":
        out.write(json.dumps(rows, indent=2) + "\n")
    else:
        out.write(costmodel.to_markdown(rows))


# ------------------------------------------------------------------ subcommands


def cmd_verify(args) -> int:
    from .verify import SUITES, run_suites

    names = SUITES if args.suite == "all" else (args.suite,)
    seed = args.seed if args.seed is not None else _default_seed()
    results = run_suites(names, seed=seed, n=args.n, cases=args.cases, exhaustive=not args.no_exhaustive)
    status = EXIT_OK
    for res in results:
        print(f"{res.name:10s} {'PASS' if res.ok else 'FAIL'}  {res.checks} checks, {len(res.failures)} mismatches")
        if res.failures:
            status = EXIT_MISMATCH
            first = res.failures[0]
            print(f"  first mismatch: {first.repro()}", file=sys.stderr)
            if "seed" in first.params:
                p = first.params
                print(f"  replay: cirche verify --suite {res.name} --seed {p['seed']} --n {p['n']} --cases 1", file=sys.stderr)
    return status


def cmd_plan(args) -> int:
    shape = parse_shape(args.shape, args.padding)
    n = args.n
    try:
        rep = costmodel.count_cirencode(shape.with_block(args.b), n)
        plan = costmodel.plan_layer(shape, n, args.b)
    except PlanInfeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    info = plan.as_dict()
    info["latency_estimate"] = rep.latency_estimate
    if args.format == "json":
        print(json.dumps(info, indent=2))
    else:
        for k, v in info.items():
            print(f"{k:18s} {v}")
    return EXIT_OK


def _count_row(fw: Framework, shape: LayerShape, b: int, n: int, costs: UnitCosts) -> tuple[dict, object]:
    s = shape.with_block(b if fw is Framework.CIRENCODE else 1)
    rep = costmodel.count_cirencode(s, n, costs) if fw is Framework.CIRENCODE else costmodel.count_baseline(fw, s, n, costs)
    ref = costmodel.printed_reference(fw, s, n)
    row = {
        "framework": fw.value,
        "shape": f"{shape.kind}:{','.join(map(str, shape.dims))}",
        "b": s.b,
        "he_pmult": rep.n_pmult,
        "he_rot": rep.n_rot,
        "ciphertexts": rep.n_ct,
        "latency_s": round(rep.latency_estimate, 6),
        "ref_pmult": ref.get("n_pmult", ""),
        "ref_rot": ref.get("n_rot", ""),
        "ref_ct": ref.get("n_ct", ""),
    }
    return row, rep


def cmd_count(args) -> int:
    frameworks = parse_frameworks(args.framework)
    shapes = [parse_shape(s, args.padding) for s in args.shape] if args.shape else _reference_shapes(args.padding)
    blocks = args.b or [costmodel.TABLE2_BLOCK]
    rows, drift = [], []
    for shape in shapes:
        for fw in frameworks:
            for b in blocks if fw is Framework.CIRENCODE else [1]:
                try:
                    row, rep = _count_row(fw, shape, b, args.n, UnitCosts())
                except PlanInfeasible as exc:
                    if args.shape:
                        print(f"infeasible: {shape} b={b}: {exc}", file=sys.stderr)
                        return EXIT_INFEASIBLE
                    continue
                rows.append(row)
                if args.golden:
                    drift += costmodel.golden_drift(rep, fw, args.n)
    _emit(rows, args.format)
    if args.golden:
        for line in drift:
            print(f"drift: {line}", file=sys.stderr)
        print(f"golden: {'FAIL' if drift else 'PASS'} ({len(drift)} drifting cells)", file=sys.stderr)
        return EXIT_MISMATCH if drift else EXIT_OK
    return EXIT_OK


def _reference_shapes(padding: str) -> list[LayerShape]:
    shapes = [LayerShape.gemm(*costmodel.TABLE2_GEMM_SHAPE), LayerShape.conv(*costmodel.TABLE2_CONV_SHAPE, padding=padding)]
    for s in costmodel.table3_shapes():
        s = LayerShape(s.kind, s.dims, padding=padding if s.kind == "conv" else "valid")
        if s not in shapes:
            shapes.append(s)
    return shapes


def cmd_assign(args) -> int:
    from .pipeline import assign_network

    cfg = load_network(args.network)
    try:
        result = assign_network(cfg, args.limit, args.init)
    except AssignmentInfeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        print(json.dumps({"infeasible": True, "limit": exc.limit, "min_latency": exc.min_latency}))
        return EXIT_INFEASIBLE
    doc = result.as_dict()
    doc["network"] = cfg.name
    doc["init"] = args.init
    print(json.dumps(doc, indent=2))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(doc, out / "assignment.json")
        report.plot_assignment(result.names, result.solution.blocks, out / "assignment.png", f"{cfg.name} @ {result.limit_fraction:g}")
    return EXIT_OK


def cmd_protocol(args) -> int:
    from .pipeline import build_protocol_network, check_reconstruction, dense_forward, random_input, run_protocol_network

    cfg = load_network(args.network)
    seed = args.seed if args.seed is not None else _default_seed()
    ctx, layers = build_protocol_network(cfg, seed, args.n)
    x = random_input(layers, ctx, seed)
    run = run_protocol_network(layers, x, ctx, seed, fuse=args.fuse_ir)
    bad = check_reconstruction(run, dense_forward(layers, x, ctx.p), ctx)
    summary = run.summary()
    summary.update(network=cfg.name, n=ctx.n, p=ctx.p, fused=args.fuse_ir, seed=seed, reconstruction="exact" if not bad else "MISMATCH")
    if args.transcript:
        Path(args.transcript).write_text(run.transcript.to_json() + "\n")
    if args.format == "json":
        print(json.dumps(summary, indent=2))
    else:
        print(f"network {cfg.name}  n={ctx.n}  fuse-ir={'on' if args.fuse_ir else 'off'}  seed={seed}")
        rows = [dict(step=i, layers="+".join(s["layers"]), **{k: v for k, v in s.items() if k != "layers"}) for i, s in enumerate(run.steps)]
        _emit(rows, "md")
        ops = summary["ops"]
        print(
            f"total: rounds={summary['rounds']} pmult={ops['n_pmult']} rot={ops['n_rot']} "
            f"ciphertexts={ops['n_ct_sent']} bytes={summary['bytes_c2s'] + summary['bytes_s2c']}"
        )
        print(f"reconstruction: {summary['reconstruction']}")
    if bad:
        print(f"reconstruction mismatch at activations {bad}", file=sys.stderr)
        return EXIT_MISMATCH
    return EXIT_OK


def cmd_table(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t2 = costmodel.table2_rows(args.n)
    t3 = costmodel.table3_rows(args.n, args.padding)
    grid = [LayerShape.gemm(*s) for s in costmodel.TABLE3_GEMM_SHAPES] + [costmodel.table3_shapes()[-1]]
    scaling = costmodel.scaling_rows(grid, n=args.n)
    written = []
    for name, rows in (("table2", t2), ("table3", t3), ("scaling", scaling)):
        for ext, fn in (("csv", costmodel.to_csv), ("md", costmodel.to_markdown)):
            path = out / f"{name}.{ext}"
            path.write_text(fn(rows))
            written.append(path)
    written.append(report.plot_framework_counts(t2, out / "table2_counts.png"))
    written.append(report.plot_printed_vs_ours(t3, out / "table3_printed_vs_computed.png"))
    written.append(report.plot_scaling(scaling, out / "scaling.png"))
    print("## Framework operation counts")
    _emit(t2, args.format)
    print("\n## Per-layer rotations / pmult")
    _emit(t3, args.format)
    print()
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cirche", description="Circulant HE encoding toolkit: planning, counting, verification.")
    sub = ap.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run oracle-equivalence suites")
    v.add_argument("--suite", choices=["ring", "encode", "conv", "protocol", "all"], default="all")
    v.add_argument("--seed", type=int, default=None, help="base seed (default: $CIRC_HE_SEED or 0)")
    v.add_argument("--n", type=int, choices=[64, 256, 512, 1024], default=None, help="fix the ring size")
    v.add_argument("--cases", type=int, default=20)
    v.add_argument("--no-exhaustive", action="store_true", help="skip the exhaustive small-block sweep")
    v.set_defaults(func=cmd_verify)

    p = sub.add_parser("plan", help="show the BSGS plan for one layer")
    p.add_argument("--shape", required=True, help="gemm:d1,d2,d3 or conv:H,W,C,K,R")
    p.add_argument("--b", type=int, default=8)
    p.add_argument("--n", type=int, default=costmodel.N_DEFAULT)
    p.add_argument("--padding", choices=["valid", "same"], default="valid")
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_plan)

    c = sub.add_parser("count", help="HE operation counts per framework")
    c.add_argument("--shape", action="append", help="repeatable; default: every reference shape")
    c.add_argument("--b", type=int, action="append", help="block size(s) for the circulant encoder (default 8)")
    c.add_argument("--framework", default="cirencode", help="name, comma list, or all")
    c.add_argument("--n", type=int, default=costmodel.N_DEFAULT)
    c.add_argument("--padding", choices=["valid", "same"], default="valid")
    c.add_argument("--format", choices=["md", "csv", "json"], default="md")
    c.add_argument("--golden", action="store_true", help="fail on drift from the pinned reference counts")
    c.set_defaults(func=cmd_count)

    a = sub.add_parser("assign", help="latency-constrained block-size assignment")
    a.add_argument("--network", required=True)
    a.add_argument("--limit", type=float, default=None, help="latency budget as a fraction of the b=1 network")
    a.add_argument("--init", choices=INITS, default="lossaware")
    a.add_argument("--out", default=None, help="directory for assignment.json and a bar chart")
    a.set_defaults(func=cmd_assign)

    r = sub.add_parser("protocol", help="simulate the two-party protocol over a network config")
    r.add_argument("--network", required=True)
    r.add_argument("--fuse-ir", action="store_true")
    r.add_argument("--seed", type=int, default=None, help="default: $CIRC_HE_SEED or 0")
    r.add_argument("--n", type=int, default=None, help="override the config ring size")
    r.add_argument("--transcript", default=None, help="write the full transcript JSON here")
    r.add_argument("--format", choices=["text", "json"], default="text")
    r.set_defaults(func=cmd_protocol)

    t = sub.add_parser("table", help="write reference tables (CSV/MD) and figures (PNG)")
    t.add_argument("--out", required=True)
    t.add_argument("--n", type=int, default=costmodel.N_DEFAULT)
    t.add_argument("--padding", choices=["valid", "same"], default="valid")
    t.add_argument("--format", choices=["md", "csv"], default="md")
    t.set_defaults(func=cmd_table)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, TsrError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PlanInfeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
