"""Command-line entry point: ``cimsim run | sweep | validate``.

Exit status is 0 when every grid point (or check) succeeds, 2 when any fails,
and 1 for configuration or I/O errors.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import replace

import numpy as np

from .errors import CIMError, ConfigInvalid
from .harness import load_config, run_sweep, with_overrides, write_outputs
from .model import VARIANTS

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2


def _common(p, config_required=True):
    p.add_argument("--config", required=config_required, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--threads", type=int, help="worker threads inside each ensemble")
    p.add_argument("--variant", choices=VARIANTS, help="model variant (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cimsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="simulate a single (zeta, T_max) point")
    _common(run)
    run.add_argument("--zeta", type=float, help="pick one zeta value from the config")
    run.add_argument("--t-max", type=float, help="pick one T_max value from the config")
    _common(sub.add_parser("sweep", help="simulate every (zeta, T_max) point of the config"))
    val = sub.add_parser("validate", help="run the quick oracle suite")
    _common(val, config_required=False)
    return parser


def _print_row(row):
    if row.failed:
        print(f"zeta={row.zeta:g} T_max={row.t_max:g}: FAILED ({row.error})", flush=True)
    else:
        print(
            f"zeta={row.zeta:g} T_max={row.t_max:g} steps={row.n_steps}: "
            f"success {row.success_rate:.4f} +/- {row.success_stderr:.4f} "
            f"diverged={row.diverged} ({row.wall_s:.1f}s)",
            flush=True,
        )


def _pick(values, chosen, name):
    if chosen is None:
        if len(values) != 1:
            raise ConfigInvalid(f"config lists {len(values)} {name} values; choose one with --{name.replace('_', '-')}",
                                field=name)
        return values
    if not any(math.isclose(chosen, v, rel_tol=0, abs_tol=1e-12) for v in values):
        raise ConfigInvalid(f"{name}={chosen} is not in the config", field=name)
    return (float(chosen),)


def _simulate(args, single: bool) -> int:
    cfg = with_overrides(load_config(args.config), args.seed, args.out, args.threads, args.variant)
    if single:
        cfg = replace(cfg, zeta=_pick(cfg.zeta, args.zeta, "zeta"), t_max=_pick(cfg.t_max, args.t_max, "t_max"))
    rows = run_sweep(cfg, progress=_print_row)
    out = write_outputs(cfg, rows)
    print(f"wrote {out}")
    return EXIT_FAILED if any(r.failed for r in rows) else EXIT_OK


def _validate(args) -> int:
    from .validation import run_checks

    seed = 0 if args.seed is None else args.seed
    ok = True
    for check in run_checks(seed=seed, workers=args.threads or 1):
        start = time.perf_counter()
        passed, detail = check.run()
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {check.name}: {detail} ({time.perf_counter() - start:.1f}s)",
              flush=True)
    return EXIT_OK if ok else EXIT_FAILED


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    np.seterr(all="ignore")
    try:
        if args.command == "validate":
            return _validate(args)
        return _simulate(args, single=args.command == "run")
    except ConfigInvalid as exc:
        where = "".join(f" {k}={v}" for k, v in (("field", exc.field), ("line", exc.line)) if v is not None)
        print(f"config error:{where} {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CIMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
