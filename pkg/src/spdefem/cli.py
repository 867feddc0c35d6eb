"""Command-line front end.

Subcommands: `eigen` (eigenvalue table), `sample` (one noise realization),
`rates` (theoretical rate for a power-law covariance), `converge` (coupled
Monte Carlo study from a config file), `truncate` (mode-truncation study).
Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .covariance import PowerLaw, sample_projected_noise
from .eigenbasis import Domain, build_basis, weyl_ratios
from .errors import ConfigError, SolveError
from .harness import load_study_config, predicted_rate, run_study, run_truncation_study


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so bad flags map to exit 1."""

    def error(self, message):
        raise ConfigError(message)


def _write_rows(path, header, rows):
    out = sys.stdout if path is None else open(path, "w")
    try:
        out.write(header + "\n")
        for row in rows:
            out.write(",".join(row) + "\n")
    finally:
        if path is not None:
            out.close()


def _cmd_eigen(args) -> int:
    basis = build_basis(Domain(dim=args.dim), args.count)
    ratios = weyl_ratios(basis)
    rows = (
        (str(k + 1), repr(float(basis.lambdas[k])), repr(float(ratios[k])))
        for k in range(len(basis))
    )
    _write_rows(args.csv, "k,lambda,weyl_ratio", rows)
    return 0


def _cmd_sample(args) -> int:
    domain = Domain(dim=args.dim)
    basis = build_basis(domain, args.n)
    sample = sample_projected_noise(PowerLaw(rho=args.rho), basis, args.n, args.seed)
    rows = ((str(m + 1), repr(float(c))) for m, c in enumerate(sample.coeffs))
    _write_rows(args.csv, "m,coeff", rows)
    return 0


def _cmd_rates(args) -> int:
    rate = predicted_rate(args.dim, args.rho, r=args.r).net_h_rate
    print(f"predicted_rate={rate:g}")
    return 0


def _run_from_config(args, runner, report_name: str) -> int:
    config = load_study_config(args.config)
    report = runner(config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{report_name}.csv"
    report.write_csv(csv_path)
    report.write_gnuplot(out_dir / f"{report_name}.gp", csv_name=csv_path.name)
    print(
        f"fitted_rate={report.fitted_rate:.6g} "
        f"predicted_rate={report.predicted_rate:.6g} "
        f"pass={str(report.passed).lower()}"
    )
    return 0


def _cmd_converge(args) -> int:
    return _run_from_config(args, run_study, "report")


def _cmd_truncate(args) -> int:
    return _run_from_config(args, run_truncation_study, "report")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spdefem", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eigen", help="dump (k, lambda_k, lambda_k/k^(2/d)) as CSV")
    p.add_argument("--dim", type=int, required=True, choices=(1, 2))
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--csv", default=None, help="output path (stdout if omitted)")
    p.set_defaults(func=_cmd_eigen)

    p = sub.add_parser("sample", help="dump one projected noise sample as CSV")
    p.add_argument("--dim", type=int, required=True, choices=(1, 2))
    p.add_argument("--rho", type=float, required=True, help="power-law exponent")
    p.add_argument("--n", type=int, required=True, help="truncation level")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("rates", help="print the theoretical coupled convergence rate")
    p.add_argument("--dim", type=int, required=True, choices=(1, 2))
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--r", type=int, default=1, help="element degree for the prediction")
    p.set_defaults(func=_cmd_rates)

    p = sub.add_parser("converge", help="run a coupled Monte Carlo convergence study")
    p.add_argument("--config", required=True, help="TOML or JSON study description")
    p.add_argument("--out", default=".", help="directory for report.csv / report.gp")
    p.set_defaults(func=_cmd_converge)

    p = sub.add_parser("truncate", help="run a mode-truncation error study")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=".")
    p.set_defaults(func=_cmd_truncate)
    return parser


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SolveError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli())
