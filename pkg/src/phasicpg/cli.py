"""Command line entry point: ``phasicpg {run,sweep,plot,validate-config,gradcheck}``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config, parse_overrides
from .nn import ConfigurationError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _overrides(args) -> dict[str, str]:
    out = parse_overrides(args.set)
    for key in ("seeds", "out_dir", "env", "variant"):
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    if getattr(args, "budget", None) is not None:
        out["total_timesteps"] = str(args.budget)
    return out


def cmd_run(args) -> int:
    from .harness import run_experiment, summary_line

    cfg = load_config(args.config, _overrides(args))
    summary = run_experiment(cfg, force=args.force, jobs=args.jobs)
    print(summary_line(summary))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .config import read_sections
    from .harness import SUITES, run_sweep, suite_configs

    if args.suite not in SUITES:
        print(f"unknown suite {args.suite!r}; available suites:", file=sys.stderr)
        for name, suite in SUITES.items():
            print(f"  {name:20s} {suite.description}", file=sys.stderr)
        return EXIT_CONFIG
    sections = read_sections(args.config) if args.config else None
    overrides = _overrides(args)
    out_dir = overrides.pop("out_dir", "sweeps")
    configs = suite_configs(args.suite, sections, overrides)
    run_sweep(args.suite, configs, out_dir, window=args.window, force=args.force, jobs=args.jobs, progress=print)
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import plot_runs

    labels = args.labels.split(",") if args.labels else None
    try:
        path = plot_runs(args.runs, args.output, window=args.window, labels=labels)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(path)
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    print(cfg.to_ini(), end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import LOSSES, run_suite

    results = run_suite(args.instances, args.seed)
    failed = False
    for loss in LOSSES:
        errs = [r.rel_error for r in results if r.loss == loss]
        worst = max(errs)
        ok = worst <= args.tol
        failed |= not ok
        print(f"{'PASS' if ok else 'FAIL'} {loss:13s} worst rel. error {worst:.2e} over {len(errs)} instances")
    return EXIT_RUNTIME if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phasicpg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp, config_required: bool):
        if config_required:
            sp.add_argument("config", help="INI experiment config")
        else:
            sp.add_argument("--config", help="INI base config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override, e.g. --set phasic.n_pi=8")
        sp.add_argument("--variant")
        sp.add_argument("--env")
        sp.add_argument("--seeds", help="comma-separated seed list")
        sp.add_argument("--out-dir", dest="out_dir")
        sp.add_argument("--budget", type=int, help="total environment steps per run")

    sp = sub.add_parser("run", help="train one configuration over its seeds")
    add_common(sp, True)
    sp.add_argument("--force", action="store_true", help="rerun even if results exist")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="run a named sweep suite and plot the comparison")
    sp.add_argument("suite")
    add_common(sp, False)
    sp.add_argument("--window", type=int, default=10, help="EMA window for the plot")
    sp.add_argument("--force", action="store_true")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("plot", help="plot learning curves from run directories")
    sp.add_argument("runs", nargs="+", help="run directories or metrics.csv files")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--window", type=int, default=10)
    sp.add_argument("--labels", help="comma-separated labels, one per run")
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("validate-config", help="parse, validate and echo a config")
    add_common(sp, True)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every loss gradient")
    sp.add_argument("--instances", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-5)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        logging.getLogger("phasicpg").debug("failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
