"""Command-line front end: ``generate``, ``solve``, ``adapt-audit`` and ``report``."""
import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import driver
from .driver import RunConfig, _parse_bool, _parse_list
from .errors import AmbddcError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MAX_ITERS = 2

_HELP = {
    "problem": "generator (cube, bars, variable_bars), 'mesh' or 'matrix'",
    "formulation": "poisson or elasticity",
    "n": "elements per axis of the generated cube",
    "contrast": "stiffness ratio of bars to matrix material",
    "load": "auto, body or random",
    "subdomains": "comma-separated subdomain count per level",
    "coarse_partition": "auto, regular or graph for levels above the first",
    "policy": "c, c+e, c+e+f or adaptive",
    "tau": "adaptive target per level",
    "indicator": "evaluate pair eigenvalues without adding constraints",
    "output": "directory for report, residual and pair files",
}


def _kind(f):
    t = f.type
    if t in ("bool", bool):
        return _parse_bool
    if t in ("int", int):
        return int
    if t in ("float", float):
        return float
    if t in ("list", list):
        return _parse_list
    return str


def _add_config_flags(p):
    p.add_argument("--config", help="flat key = value config file; flags override it")
    for f in dataclasses.fields(RunConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=_kind(f),
                       default=None, help=_HELP.get(f.name, f"default {f.default!r}"
                                                    if f.default is not dataclasses.MISSING
                                                    else None))


def config_from_args(args):
    over = {f: getattr(args, f) for f in RunConfig.fields() if getattr(args, f, None) is not None}
    if args.config:
        return driver.load_config(args.config, over)
    return RunConfig.from_dict(over)


def cmd_generate(args):
    cfg = config_from_args(args)
    if cfg.problem in ("mesh", "matrix"):
        raise ValueError("generate needs a generator problem (cube, bars, variable_bars)")
    _, material, ps = driver.generate_problem(cfg)
    lp = driver.from_problem_system(ps)
    dec = driver._partition(cfg, lp, 0, cfg.subdomains[0])
    if driver.resolve_load(cfg) == "random":
        ps.f = np.random.default_rng(cfg.seed).standard_normal(ps.n)
    paths = driver.export_problem(args.out, ps, dec.elem_part, material)
    print(json.dumps(paths, indent=2))
    return EXIT_OK


def cmd_solve(args):
    cfg = config_from_args(args)
    state = driver.run(cfg)
    if args.dump:
        driver.dump_subdomains(state, args.dump)
    fmt = args.format
    d = state.report.to_dict()
    if fmt == "json":
        print(json.dumps(d, indent=2))
    else:
        sys.stdout.write(driver.report_csv(state.report))
    return EXIT_OK if state.report.converged else EXIT_MAX_ITERS


def cmd_adapt_audit(args):
    cfg = config_from_args(args)
    if not (cfg.adaptive or cfg.indicator):
        cfg = dataclasses.replace(cfg, indicator=True)
    state = driver.setup(cfg)
    path = args.out or (os.path.join(cfg.output, "pairs.csv") if cfg.output else None)
    if path:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        driver.write_pair_audit(path, state.reports)
    print("level,s,t,omega_pre,omega_post,added,iterations,converged,capped")
    for rep in state.reports:
        for r in rep.pairs:
            print(f"{rep.level},{r.s},{r.t},{r.omega_pre:.6g},{r.omega_post:.6g},{r.added},"
                  f"{r.iterations},{int(r.converged)},{int(r.capped)}")
    print(f"# omega = {driver.condition_indicator(state.reports):.6g}")
    return EXIT_OK


def cmd_report(args):
    rep = driver.read_report(args.path)
    if args.format == "json":
        print(json.dumps(rep.to_dict(), indent=2))
    else:
        sys.stdout.write(driver.report_csv(rep))
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1; exit code 2 is reserved for max_iters."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="ambddc", description="Adaptive-multilevel BDDC solver")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    g = sub.add_parser("generate", help="generate a benchmark and export it to files")
    _add_config_flags(g)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_generate)
    s = sub.add_parser("solve", help="set up and solve; exit 2 if PCG hits max_iters")
    _add_config_flags(s)
    s.add_argument("--format", choices=("json", "csv"), default="json")
    s.add_argument("--dump", help="write per-subdomain C, Psi and weights here")
    s.set_defaults(func=cmd_solve)
    a = sub.add_parser("adapt-audit", help="pair eigenvalue audit per level")
    _add_config_flags(a)
    a.add_argument("--out", help="pairs csv path")
    a.set_defaults(func=cmd_adapt_audit)
    r = sub.add_parser("report", help="print a saved report.json")
    r.add_argument("path")
    r.add_argument("--format", choices=("json", "csv"), default="csv")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (AmbddcError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
