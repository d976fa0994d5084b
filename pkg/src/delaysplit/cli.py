"""Command-line entry point: ``delaysplit <subcommand> ...``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness
from .constants import CSV_COLUMNS, DEFAULT_RHO, compute_constants, gap_margin, sweep_constants
from .errors import DelaySplitError
from .model import kernel_from_config, lag_zero, load_config, require_hypothesis, scalar_delay, zero_kernel
from .special import build_special_solution, check_driver_properties
from .splitting import SamplerConfig, analyze_splitting, prepare_table, random_segments, verify_dichotomy

BUILTIN = ("zero", "scalar", "rotation")


def _kernel(args):
    """Kernel from --kernel (config path or builtin name) and optional --r override."""
    name = args.kernel
    r = args.r
    if name in BUILTIN:
        r = 0.1 if r is None else r
        if name == "zero":
            return zero_kernel(1, r, args.M)
        if name == "scalar":
            return scalar_delay(args.M, r)
        return lag_zero([[0.0, -args.M], [args.M, 0.0]], r)
    return kernel_from_config(load_config(name), r=r)


def _block(pairs):
    width = max(len(k) for k, _ in pairs)
    for k, v in pairs:
        if isinstance(v, float):
            v = f"{v:.12g}"
        print(f"{k:<{width}}  {v}")


def _emit_csv(rows, out, columns=None):
    text = harness.csv_text(rows, columns)
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_constants(args):
    c = compute_constants(args.M, args.r, args.rho)
    pairs = [(k, v) for k, v in c.as_dict().items()]
    if args.K_f is not None:
        m = gap_margin(c, args.K_f)
        pairs += [("K_f", args.K_f), ("gap_margin", m), ("gap_condition", "holds" if m > 0 else "fails")]
    _block(pairs)
    return 0


def cmd_sweep(args):
    rs = args.r_list or list(np.geomspace(args.r_max, args.r_min, args.num))
    sw = sweep_constants(args.M, args.rho, rs)
    _emit_csv([e.as_dict() for e in sw.entries], args.out, CSV_COLUMNS)
    print(f"# r*lambda decreasing: {sw.rlam_decreasing}; gap increasing: {sw.gap_increasing}; "
          f"L_r increasing over tail: {sw.L_tail_increasing}", file=sys.stderr)
    return 0


def cmd_special(args):
    kernel = _kernel(args)
    require_hypothesis(kernel)
    back = args.back * kernel.r
    fwd = args.fwd * kernel.r
    table = build_special_solution(kernel, args.t0, window=(back, fwd), tol=args.tol)
    rep = check_driver_properties(table, compute_constants(kernel.M, kernel.r, args.rho))
    if args.out:
        table.to_csv(args.out)
    _block([("window", f"[{table.window[0]:.6g}, {table.window[1]:.6g}]"), ("nodes", table.times.size),
            ("iterations", table.iterations), ("residual", float(table.residual))]
           + [(k, "pass" if v else "FAIL") for k, v in rep.flags().items()])
    return 0 if rep.passed else 1


def cmd_split(args):
    kernel = _kernel(args)
    table = prepare_table(kernel, args.s, args.horizon_tol)
    cfg = SamplerConfig(seed=args.seed, samples=args.samples, pairs=args.pairs)
    rep = analyze_splitting(kernel, args.s, cfg, args.rho, args.horizon_tol, table=table)
    _block([(k, v if not isinstance(v, (bool, np.bool_)) else ("yes" if v else "NO")) for k, v in rep.row().items()]
           + [("note", rep.direction)])
    if args.out:
        l = rep.l_samples
        rows = [{"sample": i, **{f"l_{j + 1}": l[j, i] for j in range(l.shape[0])}} for i in range(l.shape[1])]
        _emit_csv(rows, args.out)
    ok = rep.bound_consistent and rep.sandwich_ok and rep.delta_ok
    return 0 if ok else 1


def cmd_verify(args):
    kernel = _kernel(args)
    const = compute_constants(kernel.M, kernel.r, args.rho)
    table = prepare_table(kernel, args.s, args.horizon_tol)
    segs = random_segments(np.random.default_rng(args.seed), kernel.r, kernel.dim, args.samples)
    rep = verify_dichotomy(kernel, table, const, args.s, segs, slack=args.slack, tol=args.horizon_tol)
    _block([
        ("K2", const.K2), ("beta", const.beta), ("lambda_r", const.lambda_r),
        ("forward_ratio", rep.forward_ratio), ("forward_worst_t", rep.forward_worst_t),
        ("forward", "pass" if rep.forward_ok else "FAIL"),
        ("backward_ratio", rep.backward_ratio), ("backward", "pass" if rep.backward_ok else "FAIL"),
        ("commutation_residual", rep.commutation_residual),
        ("commutation", "pass" if rep.commutation_ok else "FAIL"),
    ])
    return 0 if rep.passed else 1


def cmd_gronwall(args):
    rows = harness.gronwall_suite(args.seed, args.instances)
    _emit_csv(rows, args.out)
    bad = sum(not r["passed"] for r in rows)
    print(f"# {len(rows) - bad}/{len(rows)} checks passed", file=sys.stderr)
    return 0 if bad == 0 else 1


def cmd_growth(args):
    rows = harness.growth_suite(args.seed, args.pairs)
    _emit_csv(rows, args.out)
    bad = sum(not r["passed"] for r in rows)
    print(f"# {len(rows) - bad}/{len(rows)} pairs passed", file=sys.stderr)
    return 0 if bad == 0 else 1


def cmd_run(args):
    cfg = harness.ScenarioConfig.load(args.config)
    if args.out_dir:
        cfg.out_dir = args.out_dir
    code, bundle = harness.scenario_exit_code(cfg)
    if code == 2:
        print(f"configuration error: {bundle}", file=sys.stderr)
        return 2
    print(bundle.summary())
    for f in bundle.files:
        print(f"wrote {f}")
    return code


def _add_kernel(p):
    p.add_argument("--kernel", default="scalar", help="config file (JSON/YAML) or one of: " + ", ".join(BUILTIN))
    p.add_argument("--r", type=float, default=None, help="delay override")
    p.add_argument("--M", type=float, default=1.0, help="coefficient for builtin kernels")
    p.add_argument("--rho", type=float, default=DEFAULT_RHO)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="delaysplit", description="Dichotomy constants and splittings for linear delay equations.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("constants", help="explicit constants for one (M, r)")
    p.add_argument("--M", type=float, required=True)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--rho", type=float, default=DEFAULT_RHO)
    p.add_argument("--K-f", dest="K_f", type=float, default=None, help="Lipschitz constant for the gap condition")
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("sweep", help="constants over a decreasing list of delays (CSV)")
    p.add_argument("--M", type=float, default=1.0)
    p.add_argument("--rho", type=float, default=DEFAULT_RHO)
    p.add_argument("--r", dest="r_list", type=float, nargs="+", default=None)
    p.add_argument("--r-max", type=float, default=1e-1)
    p.add_argument("--r-min", type=float, default=1e-5)
    p.add_argument("--num", type=int, default=5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("special", help="special matrix solution table and property checks")
    _add_kernel(p)
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--back", type=float, default=10.0, help="backward window in units of r")
    p.add_argument("--fwd", type=float, default=10.0, help="forward window in units of r")
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_special)

    p = sub.add_parser("split", help="sampled projection norms and splitting indices")
    _add_kernel(p)
    p.add_argument("--s", type=float, default=0.0)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--pairs", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon-tol", type=float, default=1e-10)
    p.add_argument("--out", default=None, help="CSV of per-sample limit values")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("verify", help="dichotomy inequalities and commutation on seeded samples")
    _add_kernel(p)
    p.add_argument("--s", type=float, default=0.0)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--slack", type=float, default=1e-6)
    p.add_argument("--horizon-tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gronwall", help="delay-Gronwall checks on saturated instances")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gronwall)

    p = sub.add_parser("growth", help="exponential growth bound on seeded kernel/history pairs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pairs", type=int, default=50)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_growth)

    p = sub.add_parser("run", help="full scenario from a config file")
    p.add_argument("config")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DelaySplitError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
