"""Command line entry point ``ubm``.

Exit codes: 0 every verdict passed, 1 some verdict failed, 2 configuration
error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError, UBMError
from .oracles import (haar_moment_fourth_bound, haar_moment_second, mixed_moment, second_moment,
                      u_cd, v_cd)
from .presets import PRESETS, emit_report, run_preset
from .scenario import load_document, load_scenario, read_matrix_file

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ubm", description="Unitary Brownian motion experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a preset experiment")
    r.add_argument("preset", choices=sorted(PRESETS))
    r.add_argument("--config", help="TOML scenario whose keys override the preset defaults")
    r.add_argument("--seed", type=int)
    r.add_argument("--replications", type=int)
    r.add_argument("--out", default=".", help="output directory (default: current)")
    r.add_argument("--format", choices=("csv", "json"), default="csv")
    r.add_argument("--threads", type=int, help="worker threads (default: UBM_THREADS or 1)")

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("config")

    o = sub.add_parser("oracles", help="print closed-form moments for matrices in a file")
    o.add_argument("matrix_file")
    o.add_argument("--n", type=int, required=True)
    o.add_argument("--t", type=float, required=True)
    return p


def _overrides(args) -> dict:
    doc = {}
    if args.config:
        doc.update(load_document(args.config))
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.replications is not None:
        doc["replications"] = args.replications
    return doc


def _cmd_run(args) -> int:
    record = run_preset(args.preset, _overrides(args), threads=args.threads)
    path = emit_report(record, args.format, args.out)
    failed = [r for r in record.reports if not r.passed]
    print(f"{args.preset}: {len(record.reports) - len(failed)}/{len(record.reports)} checks passed -> {path}")
    for r in failed:
        print(f"  FAIL t={r.time:g} {r.statistic}: empirical={complex(r.empirical):.6g} "
              f"oracle={complex(r.oracle):.6g} ({r.sigma_distance:.2f} se)")
    return EXIT_PASS if not failed else EXIT_FAIL


def _cmd_validate(args) -> int:
    sc = load_scenario(args.config)
    print(json.dumps(sc.to_dict(), indent=1))
    return EXIT_PASS


def _num(z):
    z = complex(z)
    return z.real if z.imag == 0 else [z.real, z.imag]


def _cmd_oracles(args) -> int:
    mats = read_matrix_file(args.matrix_file)
    if mats.shape[1] != args.n:
        raise ConfigError("--n", f"file holds {mats.shape[1]}x{mats.shape[1]} matrices, not n = {args.n}")
    if args.t < 0:
        raise ConfigError("--t", "time must be nonnegative")
    n, t = args.n, args.t
    for l, a in enumerate(mats):
        ah = a.conj().T
        row = {"matrix": l + 1, "n": n, "t": t,
               "mixed_moment": _num(mixed_moment(a, n, t)),
               "u(A,A*)": _num(u_cd(a, ah, n, t)),
               "v(A,A*)": _num(v_cd(a, ah, n, t)),
               "haar_second": haar_moment_second(a, n)}
        if n >= 3:
            row["second_moment"] = second_moment(a, n, t)
            row["haar_fourth_bound"] = haar_moment_fourth_bound(a, n)
        print(json.dumps(row))
    return EXIT_PASS


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    cmd = {"run": _cmd_run, "validate": _cmd_validate, "oracles": _cmd_oracles}[args.command]
    try:
        return cmd(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (UBMError, OSError, ArithmeticError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
