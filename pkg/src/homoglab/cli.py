"""Command line interface.

Exit codes: 0 success, 1 usage error (unknown subcommand or flag),
2 configuration error, 3 solver failure, 4 I/O error.  Failures print one
JSON line on stderr: ``{"error": <kind>, "exit_code": <n>, "message": ...}``.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from fractions import Fraction

import numpy as np

from .cellsolve import CellGrid, load_law, persist_law, tabulate_effective_law
from .config import StudyConfig
from .errors import ConfigError, HomogLabError, SchemaError
from .evolver import ProblemData, apriori_monitor, phi_certificate, solve_parabolic
from .fitz import RepresentativeFn, import_graph
from .persist import (load_trajectory, output_path, persist_certificate, persist_trajectory)
from .presets import parse_material
from .study import run_convergence_study
from .twoscale import TwoScaleTest, default_family, twoscale_gap

EXIT_USAGE = 1


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _fraction(text):
    """Float or fraction such as ``1/16``; argparse turns a ValueError into a usage error."""
    return float(Fraction(text.strip()))


def _fraction_list(text):
    from .config import _number
    return [_number(t) for t in text.split(",") if t.strip()]


def _build_parser():
    p = _Parser(prog="homoglab", description="Periodic homogenization toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("cell-tabulate", help="tabulate an effective law")
    c.add_argument("--preset", required=True)
    c.add_argument("--p", type=float, default=None, help="growth exponent override")
    c.add_argument("--N", type=int, default=1)
    c.add_argument("--M", type=int, default=1024)
    c.add_argument("--xi-range", type=float, default=4.0)
    c.add_argument("--xi-points", type=int, default=321)
    c.add_argument("--f0", action="store_true", help="also tabulate F0")
    c.add_argument("--out", required=True)

    s = sub.add_parser("solve", help="solve an eps-problem")
    _problem_args(s)
    s.add_argument("--eps", type=_fraction, required=True)
    s.add_argument("--mesh-factor", type=int, default=16)
    s.add_argument("--out", required=True)

    h = sub.add_parser("homogenize", help="solve the homogenized problem")
    _problem_args(h)
    h.add_argument("--law", required=True)
    h.add_argument("--n-el", type=int, default=512)
    h.add_argument("--out", required=True)

    r = sub.add_parser("certify", help="certificate of a stored trajectory")
    r.add_argument("--traj", required=True)
    r.add_argument("--data", default=None,
                   help="'zero' for zero data; default rebuilds data from the trajectory")
    r.add_argument("--graph", default=None, help="Fitzpatrick graph CSV for the flux part")
    r.add_argument("--out", default=None)

    t = sub.add_parser("twoscale-check", help="two-scale gap table of a model sequence")
    t.add_argument("--sequence", default="weaktwo", choices=["weaktwo", "double", "constant"])
    t.add_argument("--eps", type=_fraction_list, default=[1 / 16, 1 / 32, 1 / 64])
    t.add_argument("--out", default=None)

    y = sub.add_parser("study", help="run a convergence study")
    y.add_argument("--config", required=True)
    y.add_argument("--out", default=None, help="output directory")
    return p


def _problem_args(p):
    p.add_argument("--config", default=None)
    p.add_argument("--phi", default="quadratic(1)")
    p.add_argument("--gamma", default="two-phase(1,4,1/2)")
    p.add_argument("--source", default="zero")
    p.add_argument("--initial", default="sine(1)")
    p.add_argument("--T", type=float, default=0.1)
    p.add_argument("--m", type=int, default=64)


def _problem_from(args):
    if args.config:
        cfg = StudyConfig.from_file(args.config)
        return cfg.phi, cfg.gamma, cfg.source, cfg.initial, cfg.T, cfg.m, cfg.hash
    return args.phi, args.gamma, args.source, args.initial, args.T, args.m, "none"


def _print_cert(cert):
    print(f"certificate total={cert.total!r} alpha={cert.alpha!r} gamma={cert.gamma!r} "
          f"scale={cert.scale!r} representative={cert.representative}")


def cmd_cell_tabulate(args):
    mat = parse_material(args.preset, p=args.p)
    xi = np.linspace(-args.xi_range, args.xi_range, args.xi_points)
    law = tabulate_effective_law(mat, xi, xi, CellGrid(args.N, args.M), with_f0=args.f0)
    out = output_path(args.out)
    persist_law(law, out)
    print(f"wrote {out} conjugacy_gap={law.meta['conjugacy_gap']!r}")
    return 0


def cmd_solve(args):
    phi, gamma, src, w0, T, m, chash = _problem_from(args)
    data = ProblemData.epsilon(phi, gamma, args.eps, T=T, m=m, mesh_factor=args.mesh_factor,
                               source=src, w0=w0)
    traj = solve_parabolic(data)
    out = output_path(args.out)
    persist_trajectory(traj, out, config_hash=chash)
    cert = phi_certificate(traj, data)
    persist_certificate(cert, out + ".cert.csv", run_id=f"eps={args.eps!r}", config_hash=chash)
    _print_cert(cert)
    print("norms " + " ".join(f"{k}={v!r}" for k, v in apriori_monitor(traj).as_dict().items()))
    return 0


def cmd_homogenize(args):
    phi, _, src, w0, T, m, chash = _problem_from(args)
    law = load_law(args.law)
    data = ProblemData.homogenized(law, phi, T=T, m=m, n_el=args.n_el, source=src, w0=w0)
    traj = solve_parabolic(data)
    out = output_path(args.out)
    persist_trajectory(traj, out, config_hash=chash)
    _print_cert(phi_certificate(traj, data))
    return 0


def _data_for(traj, how):
    meta = traj.meta
    T = float(traj.t[-1]) if traj.t[-1] > 0 else 1.0
    n_el = traj.x.size - 1
    if how == "zero":
        return ProblemData(parse_material("quadratic(1)"), parse_material("quadratic(1)"),
                           _zero_source(), _zero_datum(), T, traj.m, n_el, None)
    if meta.get("mode") == "homogenized":
        raise ConfigError("certifying a homogenized trajectory needs its law; use homogenize")
    if how is not None:
        cfg = StudyConfig.from_file(how)
        phi, gamma, src, w0 = cfg.phi, cfg.gamma, cfg.source, cfg.initial
    else:
        try:
            phi, gamma, src, w0 = meta["phi"], meta["gamma"], meta["source"], meta["w0"]
        except KeyError:
            raise ConfigError("trajectory carries no problem data; pass --data") from None
    from .presets import parse_initial, parse_source
    eps = meta.get("eps")
    return ProblemData(parse_material(phi), parse_material(gamma), parse_source(src),
                       parse_initial(w0), T, traj.m, n_el, None if eps is None else float(eps))


def _zero_source():
    from .presets import Source
    return Source()


def _zero_datum():
    from .presets import InitialDatum
    return InitialDatum()


def cmd_certify(args):
    traj = load_trajectory(args.traj)
    data = _data_for(traj, args.data)
    rep = RepresentativeFn.fitzpatrick(import_graph(args.graph)) if args.graph else None
    cert = phi_certificate(traj, data, rep=rep)
    _print_cert(cert)
    if args.out:
        persist_certificate(cert, output_path(args.out))
    return 0


def _sequence(name):
    if name == "weaktwo":
        return (lambda e: (lambda x: x * np.sin(2 * np.pi * x / e)),
                lambda x, y: x * np.sin(2 * np.pi * y))
    if name == "double":
        return (lambda e: (lambda x: x * np.sin(2 * np.pi * x / e) + x * np.sin(2 * np.pi * x / e ** 2)),
                lambda x, y: x * np.sin(2 * np.pi * y))
    return (lambda e: (lambda x: np.ones_like(x)), lambda x, y: np.ones(np.broadcast(x, y).shape))


def cmd_twoscale_check(args):
    make, limit = _sequence(args.sequence)
    seq = {float(e): make(float(e)) for e in args.eps}
    table = twoscale_gap(seq, limit, default_family())
    if args.out:
        table.to_csv(output_path(args.out))
    for e in table.eps_values:
        print(f"eps={e!r} max_gap={table.max_gap(e)!r} "
              f"gap[x^0*sin(2pi*1y)]={table.gaps(e)[TwoScaleTest(0, 'sin', 1).id]!r}")
    return 0


def cmd_study(args):
    cfg = StudyConfig.from_file(args.config)
    if args.out:
        cfg.out_dir = args.out
    report = run_convergence_study(cfg)
    for r in report.rows:
        print(f"eps={r['eps']!r} status={r['status']} rel_error={r.get('rel_error', math.nan)!r}")
    print(f"report {os.path.join(output_path('', cfg.out_dir), 'report.csv')} partial={report.partial}")
    return 0


COMMANDS = {"cell-tabulate": cmd_cell_tabulate, "solve": cmd_solve, "homogenize": cmd_homogenize,
            "certify": cmd_certify, "twoscale-check": cmd_twoscale_check, "study": cmd_study}


def _fail(kind, code, message):
    print(json.dumps({"error": kind, "exit_code": code, "message": str(message)}), file=sys.stderr)
    return code


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        return _fail("UsageError", EXIT_USAGE, exc)
    try:
        return COMMANDS[args.command](args)
    except (SchemaError, OSError) as exc:
        return _fail(type(exc).__name__, 4, exc)
    except ConfigError as exc:
        return _fail("ConfigError", 2, exc)
    except HomogLabError as exc:
        return _fail(type(exc).__name__, exc.exit_code, exc)


if __name__ == "__main__":
    sys.exit(main())
