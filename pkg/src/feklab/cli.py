"""Command-line front end.

Subcommands: cost, verify, search, compare, solve, report.
Exit codes: 0 success/verified, 1 verification failed, 2 usage error,
3 search budget exhausted.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict

import numpy as np

from . import banks, cost, mma
from .mesh import build_mesh
from .operator import BACKENDS, BlockOperator
from .solver import ConfigError, RunConfig, apply_overrides, load_config, run_solve

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2
EXIT_SEARCH_EXHAUSTED = 3

PRODUCTION_SHAPES = [
    "25x5x4",
    "25x5x5",
    "25x4x5",
    "20x4x5",
    "16x4x5",
    "16x5x4",
    "20x5x4",
]

COMPARE_VARIANTS = [("PA", b) for b in BACKENDS] + [
    ("FusedPA", b) for b in BACKENDS
] + [("FusedMF", b) for b in BACKENDS]

ALL_VARIANTS = [
    (s, b) for s in ("PA", "MF", "FusedPA", "FusedMF") for b in BACKENDS
]


def _write_output(text: str, path: str | None) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        print(text)


# ---------------------------------------------------------------------------
# cost
# ---------------------------------------------------------------------------


def cmd_cost(args) -> int:
    try:
        shapes = [mma.GemmShape.parse(s) for s in args.shapes]
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    rows = [cost.shape_row(s) for s in shapes]
    header = f"{'shape':>10} {'bytes_scalar':>12} {'bytes_mma':>10} {'flops':>8} {'intensity':>10} {'reduction':>10}"
    lines = [header]
    for r in rows:
        lines.append(
            f"{r['shape']:>10} {r['smem_bytes_scalar']:>12d} {r['smem_bytes_mma']:>10d} "
            f"{r['flops']:>8d} {r['intensity_scalar']:>10.2f} {r['read_reduction']:>10.1f}"
        )
    print("\n".join(lines))
    if args.json:
        _write_output(cost.emit_json(shapes), args.json)
    if args.csv:
        _write_output(cost.emit_csv(shapes), args.csv)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def cmd_verify(args) -> int:
    try:
        mapping = mma.load_mapping(args.mapping)
    except FileNotFoundError:
        print(f"error: mapping file not found: {args.mapping}", file=sys.stderr)
        return EXIT_USAGE
    except (mma.MappingFormatError, mma.CoverageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    shape = mapping.shape
    layouts = banks.default_gemm_layouts(shape)
    report = banks.verify_mapping(shape, mapping, *layouts)
    print(f"mapping {args.mapping}: shape {shape}, warps {mapping.num_warps}")
    print(f"conflict_free: {report.conflict_free}  max_degree: {report.max_degree}")
    if not report.conflict_free:
        for (kind, p), st in sorted(report.stats.items()):
            if st.max_degree > 1:
                print(f"  {kind} phase{p + 1}: degree {st.max_degree} "
                      f"histogram {st.histogram.tolist()}")
    if args.diagram:
        print(report.diagram())
    if args.json:
        _write_output(report.to_json(), args.json)
    return EXIT_OK if report.conflict_free else EXIT_VERIFY_FAILED


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------


def cmd_search(args) -> int:
    try:
        shape = mma.GemmShape.parse(args.shape)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    result = banks.search_mapping(shape, budget=args.budget)
    if not result.found:
        print(
            f"NOT_FOUND for {shape}: budget {args.budget} exhausted "
            f"after {result.nodes} nodes (checks: {result.checks})",
            file=sys.stderr,
        )
        return EXIT_SEARCH_EXHAUSTED
    report = banks.verify_mapping(shape, result.mapping, *banks.default_gemm_layouts(shape))
    print(
        f"found mapping for {shape}: family {result.family}, {result.nodes} nodes, "
        f"conflict_free {report.conflict_free}"
    )
    if args.output:
        mma.save_mapping(result.mapping, args.output)
        print(f"wrote {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------


def cmd_compare(args) -> int:
    mesh = build_mesh(args.nx, args.ny, args.nz)
    rng = np.random.default_rng(args.seed)
    variants = ALL_VARIANTS if args.all else COMPARE_VARIANTS
    ops = {}
    for strategy, backend in variants:
        ops[(strategy, backend)] = BlockOperator(
            mesh, strategy=strategy, backend=backend, coupling_scale=args.coupling_scale
        )
    ref_key = variants[0]
    template = ops[ref_key].zero_state()
    state = template.copy()
    state.u = rng.standard_normal(state.u.shape)
    state.p = rng.standard_normal(state.p.shape)

    outputs, rows = {}, []
    for key, op in ops.items():
        op.counters.reset()
        t0 = time.perf_counter()
        outputs[key] = op.apply(state).pack()
        wall = time.perf_counter() - t0
        row = {
            "strategy": key[0],
            "backend": key[1],
            "d_reads": op.counters.d_reads,
            "flops": op.counters.flops,
        }
        if not args.no_timing:
            row["wall_ms_informational"] = round(1e3 * wall, 3)
        rows.append(row)

    ref = outputs[ref_key]
    scale = float(np.max(np.abs(ref))) or 1.0
    max_dev = 0.0
    for key, out in outputs.items():
        for key2, out2 in outputs.items():
            max_dev = max(max_dev, float(np.max(np.abs(out - out2))) / scale)

    d_pa = next(r["d_reads"] for r in rows if r["strategy"] == "PA")
    d_fused = next(r["d_reads"] for r in rows if r["strategy"] == "FusedPA")
    doc = {
        "mesh": [args.nx, args.ny, args.nz],
        "seed": args.seed,
        "max_pairwise_rel_deviation": max_dev,
        "d_read_ratio_pa_over_fusedpa": (d_pa / d_fused) if d_fused else None,
        "variants": rows,
    }
    for row in rows:
        extras = (
            f" wall_ms={row['wall_ms_informational']}" if "wall_ms_informational" in row else ""
        )
        print(
            f"{row['strategy']:>8}/{row['backend']:<6} d_reads={row['d_reads']:>8d} "
            f"flops={row['flops']:>10d}{extras}"
        )
    print(f"max pairwise relative deviation: {max_dev:.3e}")
    if d_fused:
        print(f"D-read ratio PA/FusedPA: {d_pa / d_fused}")
    if args.json:
        _write_output(json.dumps(doc, indent=2, sort_keys=True), args.json)
    return EXIT_OK


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def cmd_solve(args) -> int:
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = apply_overrides(cfg, args.overrides)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    result = run_solve(cfg)
    rep = result.report()
    for t, e in zip(result.times, result.energies):
        print(f"t={t:.6f} energy={e:.12e}")
    print(f"final max|p|={rep['max_abs_p']:.6e} max|u|={rep['max_abs_u']:.6e}")
    if args.json:
        doc = dict(rep)
        doc["config"] = asdict(cfg)
        _write_output(json.dumps(doc, indent=2, sort_keys=True), args.json)
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def cmd_report(args) -> int:
    shapes = [mma.GemmShape.parse(s) for s in PRODUCTION_SHAPES]
    doc = {"cost": [cost.shape_row(s) for s in shapes], "mappings": []}
    for shape in shapes:
        result = banks.search_mapping(shape, budget=args.budget)
        entry = {"shape": str(shape), "found": result.found, "nodes": result.nodes}
        if result.found:
            report = banks.verify_mapping(
                shape, result.mapping, *banks.default_gemm_layouts(shape)
            )
            entry["conflict_free"] = report.conflict_free
            entry["family"] = result.family
        doc["mappings"].append(entry)
    text = json.dumps(doc, indent=2, sort_keys=True)
    _write_output(text, args.output)
    if args.output:
        print(f"wrote {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="feklab",
        description="Sum-factorized finite element kernel lab: cost models, "
        "warp-MMA mappings, bank-conflict checks and desk-scale wave solves.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_cost = sub.add_parser("cost", help="byte/FLOP table for GEMM shapes")
    p_cost.add_argument("shapes", nargs="+", metavar="MxNxK")
    p_cost.add_argument("--json", metavar="PATH")
    p_cost.add_argument("--csv", metavar="PATH")
    p_cost.set_defaults(func=cmd_cost)

    p_verify = sub.add_parser("verify", help="check a mapping file for bank conflicts")
    p_verify.add_argument("mapping", metavar="MAPFILE")
    p_verify.add_argument("--diagram", action="store_true", help="print bank diagram")
    p_verify.add_argument("--json", metavar="PATH")
    p_verify.set_defaults(func=cmd_verify)

    p_search = sub.add_parser("search", help="search a conflict-free mapping")
    p_search.add_argument("shape", metavar="MxNxK")
    p_search.add_argument("-o", "--output", metavar="PATH")
    p_search.add_argument("--budget", type=int, default=500_000)
    p_search.set_defaults(func=cmd_search)

    p_cmp = sub.add_parser("compare", help="cross-check operator variants")
    p_cmp.add_argument("--nx", type=int, default=2)
    p_cmp.add_argument("--ny", type=int, default=2)
    p_cmp.add_argument("--nz", type=int, default=2)
    p_cmp.add_argument("--seed", type=int, default=0)
    p_cmp.add_argument("--coupling-scale", type=float, default=1.0)
    p_cmp.add_argument("--all", action="store_true", help="include plain MF variants")
    p_cmp.add_argument("--no-timing", action="store_true", help="deterministic output")
    p_cmp.add_argument("--json", metavar="PATH")
    p_cmp.set_defaults(func=cmd_compare)

    p_solve = sub.add_parser("solve", help="run a configured wave solve")
    p_solve.add_argument("--config", metavar="PATH")
    p_solve.add_argument("--json", metavar="PATH")
    p_solve.add_argument("overrides", nargs="*", metavar="key=value")
    p_solve.set_defaults(func=cmd_solve)

    p_rep = sub.add_parser("report", help="cost + mapping summary for the production shapes")
    p_rep.add_argument("-o", "--output", metavar="PATH")
    p_rep.add_argument("--budget", type=int, default=500_000)
    p_rep.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
