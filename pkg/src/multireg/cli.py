"""Command line interface.

``multireg run`` runs an experiment and writes its tables, traces, vectors
and metadata; ``multireg landscape`` tabulates the value-function criterion
on a log grid; ``multireg certify`` runs the value-function property checks.

Every ``run`` flag can also be given in a TOML file passed with
``--config``; keys are the :class:`~multireg.harness.ExperimentConfig` field
names (``eps``, ``seeds``, ``rule``, ``gamma``, ``c_m``, ``ratio``, ...)
plus ``out``. Flags given on the command line take precedence.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .exceptions import MultiregError
from .harness import EXAMPLES, ExperimentConfig, emit_outputs, make_example, make_quadratic_toy, run_experiment
from .selection_rules import GAMMA_STRATEGIES, RULES, balance_fixed_point_II
from .value_function import (
    certify_concavity,
    certify_sandwich,
    landscape,
    log_grid,
    phi_psi_gap,
    write_landscape_csv,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("multireg")

CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list:
    return [int(v) for v in text.split(",") if v.strip()]


def _grid(text: str):
    """``lo,hi,per_decade`` -> log grid."""
    vals = _floats(text)
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("grid must be 'lo,hi,points_per_decade'")
    return log_grid(*vals)


def load_config(path) -> dict:
    """Read a TOML run configuration and validate its keys."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    unknown = set(data) - set(CONFIG_FIELDS) - {"out"}
    if unknown:
        raise ValueError(f"unknown keys in {path}: {sorted(unknown)}")
    return data


def build_config(args) -> tuple[ExperimentConfig, Path]:
    """Merge defaults, the config file and explicit flags (in that order)."""
    values = {}
    if args.config:
        values.update(load_config(args.config))
    flags = {
        "example": args.example, "eps": args.eps, "seeds": args.seeds, "rule": args.rule,
        "gamma": args.gamma, "gamma_strategy": args.gamma_strategy, "c_m": args.cm, "ratio": args.ratio,
        "beta": args.beta, "beta0": args.beta0, "tol": args.tol, "max_iter": args.max_iter, "n": args.n,
        "coarse_per_decade": args.coarse, "fine_per_decade": args.fine,
        "coarse_per_decade_2d": args.coarse_2d, "fine_per_decade_2d": args.fine_2d,
        "landscape_gamma": args.landscape_gamma, "out": args.out,
    }
    values.update({k: v for k, v in flags.items() if v is not None})
    if args.single_step:
        values["two_step"] = False
    if args.no_oracle:
        values["oracle_2d"] = False
    if args.no_singles:
        values["singles"] = False
    out = Path(values.pop("out", "results"))
    example = int(values.pop("example", 1))
    if example not in EXAMPLES:
        raise ValueError(f"unknown example {example}; expected one of {sorted(EXAMPLES)}")
    cfg = ExperimentConfig(example=example)
    cfg.eps = EXAMPLES[example].default_eps
    for k, v in values.items():
        if k in ("eps", "seeds"):
            v = tuple(v)
        setattr(cfg, k, v)
    if cfg.rule not in RULES + ("oracle",):
        raise ValueError(f"unknown rule {cfg.rule!r}")
    return cfg, out


def cmd_run(args) -> int:
    cfg, out = build_config(args)
    report = run_experiment(cfg.example, config=cfg)
    paths = emit_outputs(report, out)
    for row in report.table_rows():
        print(",".join(f"{v:.4g}" if isinstance(v, float) else str(v) for v in row))
    print(f"wrote {len(paths)} files to {out}")
    return 1 if any(c.failure for c in report.cells) else 0


def cmd_landscape(args) -> int:
    problem = make_example(args.example)(args.eps, args.seed)
    axis = args.grid if args.grid is not None else log_grid(1e-8, 1.0, 2)
    rows = landscape(problem, axis, axis, args.gamma)
    write_landscape_csv(args.out, rows)
    i = int(np.nanargmin(rows[:, 6]))
    print(f"{len(rows)} points written to {args.out}; min Phi at eta=({rows[i, 0]:.3e}, {rows[i, 1]:.3e})")
    return 0


def certify(gamma: float = 5.0, n_random: int = 20, seed: int = 0, verbose: bool = True) -> dict:
    """Value-function property checks; returns ``{name: passed}``.

    Runs monotonicity and concavity on a 10 x 10 grid for Example 2 and on a
    20 x 20 grid for the quadratic toy, the one-sided derivative sandwich at
    random points, and ``Psi <= Phi`` over every solve made.
    """
    results = {}
    ex2 = make_example(2)(5e-3, seed)
    toy = make_quadratic_toy(seed=seed)
    for name, problem, k in (("example2", ex2, 10), ("quadratic_toy", toy, 20)):
        axis = np.geomspace(1e-8, 1.0, k)
        rep = certify_concavity(problem, [axis, axis])
        results[f"concavity[{name}]"] = rep.ok
        if verbose:
            print(f"concavity[{name}]: monotonicity={len(rep.monotonicity)} "
                  f"concavity={len(rep.concavity)} midpoints={rep.n_midpoints}")
    rng = np.random.default_rng(seed)
    for name, problem in (("example2", ex2), ("quadratic_toy", toy)):
        etas = 10.0 ** rng.uniform(-8, 0, size=(n_random, 2))
        rep = certify_sandwich(problem, etas)
        results[f"sandwich[{name}]"] = rep.ok
        if verbose:
            print(f"sandwich[{name}]: violations={len(rep.violations)}")
    balance_fixed_point_II(ex2, gamma)
    bad = sum(phi_psi_gap(a.phi, a.psi, a.eta, gamma) < -1e-12 for p in (ex2, toy) for a in p.audit)
    results["psi_le_phi"] = bad == 0
    if verbose:
        print(f"psi_le_phi: violations={bad}")
    return results


def cmd_certify(args) -> int:
    results = certify(gamma=args.gamma, seed=args.seed)
    for name, ok in results.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if all(results.values()) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multireg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write its outputs")
    run.add_argument("--config", help="TOML file with run settings")
    run.add_argument("--example", type=int, choices=sorted(EXAMPLES))
    run.add_argument("--eps", type=_floats, help="comma separated noise levels")
    run.add_argument("--rule", choices=RULES + ("oracle",))
    run.add_argument("--gamma", type=float, help="initial balancing weight")
    run.add_argument("--gamma-strategy", choices=sorted(GAMMA_STRATEGIES))
    run.add_argument("--single-step", action="store_true", help="keep gamma fixed (no second run)")
    run.add_argument("--cm", type=float, help="discrepancy factor c_m >= 1")
    run.add_argument("--ratio", type=float, help="eta1/eta2 ray of the discrepancy rule")
    run.add_argument("--beta", type=float)
    run.add_argument("--beta0", type=float)
    run.add_argument("--tol", type=float)
    run.add_argument("--max-iter", type=int)
    run.add_argument("--seeds", type=_ints, help="comma separated seeds")
    run.add_argument("--n", type=int, help="problem size")
    run.add_argument("--coarse", type=float, help="coarse oracle points per decade (1-D)")
    run.add_argument("--fine", type=float, help="fine oracle points per decade (1-D)")
    run.add_argument("--coarse-2d", type=float)
    run.add_argument("--fine-2d", type=float)
    run.add_argument("--no-oracle", action="store_true", help="skip the 2-D oracle")
    run.add_argument("--no-singles", action="store_true", help="skip single-penalty baselines")
    run.add_argument("--landscape-gamma", type=float, help="also tabulate Phi for the first cell")
    run.add_argument("--out", help="output directory (default: results)")
    run.set_defaults(func=cmd_run)

    land = sub.add_parser("landscape", help="tabulate F, Phi and Psi on a log grid")
    land.add_argument("--example", type=int, choices=sorted(EXAMPLES), default=1)
    land.add_argument("--eps", type=float, default=5e-2)
    land.add_argument("--seed", type=int, default=0)
    land.add_argument("--gamma", type=float, default=5.0)
    land.add_argument("--grid", type=_grid, help="lo,hi,points_per_decade (default 1e-8,1,2)")
    land.add_argument("--out", default="landscape.csv")
    land.set_defaults(func=cmd_landscape)

    cert = sub.add_parser("certify", help="run the value-function property checks")
    cert.add_argument("--gamma", type=float, default=5.0)
    cert.add_argument("--seed", type=int, default=0)
    cert.set_defaults(func=cmd_certify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MultiregError, ValueError, OSError) as exc:
        print(f"multireg: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
