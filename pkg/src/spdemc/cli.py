"""Command-line entry point.

Subcommands: validate, localize, exitprob, proptest, dump-paths.
Exit codes: 0 success, 1 assumption/validation failure, 2 numerical
failure, 64 usage error.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from . import experiments
from .coefficients import build_scenario_coefficients
from .experiments import AssumptionError
from .flow import FlowError, integrate_flow, integrate_flow_from
from .noise import NoisePlan
from .reference import StabilityError
from .scenario import ScenarioError, load_scenario_file
from .weights import concatenation_check

USAGE_EXIT = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(USAGE_EXIT)


def _build_parser() -> _Parser:
    p = _Parser(prog="spdemc", description=__doc__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--scenario", required=True, help="scenario JSON file")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the master seed")
        sp.add_argument("--samples", type=int, default=None)
        sp.add_argument("--out-dir", default="out")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")

    sp = sub.add_parser("validate", help="Feynman-Kac vs pathwise FD")
    common(sp)
    sp.add_argument("--seeds", type=int, default=3, help="number of w seeds")
    sp.add_argument("--fd-cells", type=int, default=256)

    sp = sub.add_parser("localize", help="artificial-boundary error sweep")
    common(sp)
    sp.add_argument("--radii", default="1.5,2,2.5,3")
    sp.add_argument("--epsilon", type=float, default=1.0)
    sp.add_argument("--nu", type=float, default=0.25)
    sp.add_argument("--p", default="2,4", help="Sobolev exponents")
    sp.add_argument("--seeds", type=int, default=8)
    sp.add_argument("--cells-per-unit", type=int, default=64)

    sp = sub.add_parser("exitprob", help="flow exit-probability decay")
    common(sp)
    sp.add_argument("--radii", default="1.5,2,2.5,3")
    sp.add_argument("--epsilon", type=float, default=1.0)
    sp.add_argument("--nu", type=float, default=0.25)

    sp = sub.add_parser("proptest", help="quick structural invariant checks")
    common(sp)

    sp = sub.add_parser("dump-paths", help="write binary Wiener path dumps")
    common(sp)
    return p


def _load(args):
    cfg = load_scenario_file(args.scenario)
    if args.seed is not None:
        cfg = cfg.with_master_seed(args.seed)
    return cfg


def _cmd_validate(args) -> int:
    cfg = _load(args)
    samples = args.samples if args.samples is not None else cfg.samples
    rep = experiments.run_validation(cfg, n_seeds=args.seeds, samples=samples,
                                     fd_cells=args.fd_cells)
    path = experiments.emit_validation(rep, args.out_dir, args.format)
    print(f"validate: scenario={cfg.name} seeds={args.seeds} samples={samples} "
          f"worst_rel_l2={rep.worst_l2_rel:.4g} -> {path}")
    return 0


def _cmd_localize(args) -> int:
    cfg = _load(args)
    radii = [float(v) for v in args.radii.split(",") if v]
    p_values = [float(v) for v in args.p.split(",") if v]
    rep = experiments.run_localization(cfg, radii, eps=args.epsilon,
                                       nu=args.nu, p_values=p_values,
                                       n_seeds=args.seeds,
                                       cells_per_unit=args.cells_per_unit)
    path = experiments.emit_localization(rep, args.out_dir, args.format)
    print(f"localize: scenario={cfg.name} radii={radii} slope={rep.slope:.4g} "
          f"e={np.array2string(rep.e_mean, precision=3)} -> {path}")
    return 0


def _cmd_exitprob(args) -> int:
    cfg = _load(args)
    radii = [float(v) for v in args.radii.split(",") if v]
    samples = args.samples if args.samples is not None else 10_000
    rep = experiments.run_exit_probability(cfg, radii, eps=args.epsilon,
                                           nu=args.nu, samples=samples)
    path = experiments.emit_exit_probability(rep, args.out_dir, args.format)
    print(f"exitprob: scenario={cfg.name} radii={radii} "
          f"p={np.array2string(rep.p_hat, precision=4)} -> {path}")
    return 0


def _cmd_proptest(args) -> int:
    """Structural invariants on the configured scenario, report-style."""
    cfg = _load(args)
    plan = NoisePlan(cfg.master_seed, m=cfg.m, d=cfg.d)
    grid = cfg.time
    w = plan.sample_w(grid, stream=0)
    what = plan.sample_w_hat(grid, replicate=0)
    coeffs = build_scenario_coefficients(cfg, w_path=w)
    lo, hi = cfg.domain.bounding_interval()
    y0 = np.full((4, cfg.d), 0.5 * (lo + hi))
    y0 += np.linspace(-0.1, 0.1, 4)[:, None] * (hi - lo)

    rows = []
    full = integrate_flow(coeffs, w, what, y0)
    split = grid.n_steps // 2
    tail = integrate_flow_from(coeffs, w, what, split, full.states[split])
    dev = float(np.max(np.abs(tail.states[-1] - full.states[-1])))
    rows.append({"check": "flow_split_composition", "deviation": dev,
                 "passed": dev == 0.0})
    rep = concatenation_check(coeffs, w, what, split, y0)
    rows.append({"check": "weights_concat_eta", "deviation": rep.max_rel_eta,
                 "passed": rep.max_rel_eta <= 1e-12})
    rows.append({"check": "weights_concat_U", "deviation": rep.max_rel_U,
                 "passed": rep.max_rel_U <= 1e-12})
    w2 = plan.sample_w(grid, stream=0)
    rows.append({"check": "noise_determinism",
                 "deviation": 0.0 if np.array_equal(w.dw, w2.dw) else 1.0,
                 "passed": bool(np.array_equal(w.dw, w2.dw))})
    ok = all(r["passed"] for r in rows)
    path = experiments.write_report(args.out_dir, "proptest", "proptest",
                                    ["check", "deviation", "passed"], rows,
                                    {"scenario": cfg.name}, args.format)
    print(f"proptest: scenario={cfg.name} "
          f"{'all passed' if ok else 'FAILURES'} -> {path}")
    return 0 if ok else 1


def _cmd_dump_paths(args) -> int:
    import os
    cfg = _load(args)
    plan = NoisePlan(cfg.master_seed, m=cfg.m, d=cfg.d)
    os.makedirs(args.out_dir, exist_ok=True)
    w = plan.sample_w(cfg.time, stream=0)
    what = plan.sample_w_hat(cfg.time, replicate=0)
    wp = os.path.join(args.out_dir, f"{cfg.name}_w.path")
    hp = os.path.join(args.out_dir, f"{cfg.name}_what_r0.path")
    w.dump(wp)
    what.dump(hp)
    print(f"dump-paths: wrote {wp} and {hp}")
    return 0


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else USAGE_EXIT
    if args.command is None:
        parser.print_usage(sys.stderr)
        return USAGE_EXIT
    handlers = {
        "validate": _cmd_validate,
        "localize": _cmd_localize,
        "exitprob": _cmd_exitprob,
        "proptest": _cmd_proptest,
        "dump-paths": _cmd_dump_paths,
    }
    try:
        return handlers[args.command](args)
    except (ScenarioError, AssumptionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FlowError, StabilityError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
