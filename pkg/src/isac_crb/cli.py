"""Command line entry point: ``isac-crb <verb> SCENARIO [options]``.

Exit codes: 0 success, 2 validation error, 3 infeasible, 4 solver
non-convergence, 1 anything else raised by the package.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .errors import IsacError, ValidationError
from .fim import crb_of
from .harness import (
    CRB_SOURCES,
    OUTPUTS,
    SCHEMES,
    VARIABLES,
    SweepSpec,
    csv_header,
    parse_grid,
    run_beampattern,
    run_sweep,
    solve_scheme,
    subspace_report,
    write_csv,
)
from .scenario import Beamformer
from .scenario_io import parse_scenario
from .sdp import SolverOptions
from .sdr import REDUCTION_MODES



def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _range(text: str) -> tuple[float, float, float]:
    try:
        start, stop, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}") from None
    return start, stop, step


def _common(p: argparse.ArgumentParser):
    p.add_argument("scenario", help="scenario YAML path or shipped name (default, single_pair, tradeoff)")
    p.add_argument("-o", "--out", help="output CSV path (stdout when omitted)")
    p.add_argument("--seed", type=int, help="override the scenario's channel seed")
    p.add_argument("--gap-tol", type=float, default=1e-9, help="relative duality gap tolerance")
    p.add_argument("--feas-tol", type=float, default=1e-9, help="primal/dual feasibility tolerance")
    p.add_argument("--max-iter", type=int, default=100, help="interior point iteration cap")
    p.add_argument("--draws", type=int, default=100, help="Gaussian randomizations for extraction")
    p.add_argument("--rng-seed", type=int, default=0, help="randomization seed")
    p.add_argument("--mode", choices=REDUCTION_MODES, default="augmented", help="SDR subspace reduction")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="isac-crb", description="CRB-optimal ISAC transmit beamforming")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("crb", help="evaluate a given beamformer")
    _common(p)
    p.add_argument("--beamformer", required=True, help=".npy file holding a complex N_t x K matrix")

    p = sub.add_parser("optimize", help="solve one scheme and report its CRB")
    _common(p)
    p.add_argument("--scheme", choices=SCHEMES, default="sdr")
    p.add_argument("--save-beamformer", help="write the beamformer to this .npy file")
    p.add_argument("--subspace-report", action="store_true", help="also compare full and reduced relaxations")

    p = sub.add_parser("sweep", help="sweep power or a rate threshold")
    _common(p)
    p.add_argument("--variable", choices=VARIABLES, default="power_dbm")
    p.add_argument("--range", type=_range, required=True, metavar="START:STOP:STEP")
    p.add_argument("--schemes", type=_csv_list, default=("sdr",), help=f"comma list from {SCHEMES}")
    p.add_argument(
        "--outputs", type=_csv_list, default=("crb_theta", "crb_tau", "crb_position", "rate", "bound"),
        help=f"comma list from {OUTPUTS}",
    )
    p.add_argument("--user-index", type=int, help="user whose threshold is swept (0-based, default all)")
    p.add_argument("--crb-source", choices=CRB_SOURCES, default="beamformer")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--plot", help="also save a PNG of --plot-column (needs matplotlib)")
    p.add_argument("--plot-column", default="trace_crb")

    p = sub.add_parser("beampattern", help="transmit beampattern of one scheme")
    _common(p)
    p.add_argument("--scheme", choices=SCHEMES, default="sdr")
    p.add_argument("--grid", default="-90:90:0.5", metavar="START:STOP:STEP", help="angles in degrees")
    p.add_argument("--plot", help="also save a PNG (needs matplotlib)")

    p = sub.add_parser("baselines", help="ZF and MRT next to the optimized scheme")
    _common(p)
    return ap


def _options(args) -> SolverOptions:
    try:
        return SolverOptions(
            max_iterations=args.max_iter,
            duality_gap_tol=args.gap_tol,
            feasibility_tol=args.feas_tol,
            randomization_count=args.draws,
            rng_seed=args.rng_seed,
        )
    except ValueError as e:
        raise ValidationError(str(e), "solver") from None


def _report_row(config, scenario_id: str, scheme: str, res) -> dict:
    row = res.crb.to_row(scenario_id, scheme)
    if res.beamformer is not None:
        row.update({f"rate_{k + 1}": float(r) for k, r in enumerate(res.beamformer.per_user_rate)})
        row["total_power_w"] = float(res.beamformer.total_power_w)
    if res.bound is not None:
        row["bound"] = res.bound
        row["extraction_loss"] = res.extraction_loss
    for k, v in res.extra.items():
        if isinstance(v, (str, int, float)) and k not in row:
            row[k] = v
    return row


def _run(args) -> list[dict] | None:
    opts = _options(args)
    config = parse_scenario(args.scenario, seed=args.seed)
    sid = config.name
    header = csv_header(args.scenario, config, opts, {"verb": args.verb})

    if args.verb == "crb":
        try:
            W = np.load(args.beamformer)
        except (OSError, ValueError) as e:
            raise ValidationError(f"cannot read beamformer: {e}", "beamformer") from None
        W = np.atleast_2d(np.asarray(W, dtype=complex))
        if W.shape[0] != config.n_tx:
            W = W.T
        bf = Beamformer.from_matrix(W, config.users)
        row = crb_of(config, bf).to_row(sid, "given")
        row.update({f"rate_{k + 1}": float(r) for k, r in enumerate(bf.per_user_rate)})
        row["total_power_w"] = float(bf.total_power_w)
        rows = [row]

    elif args.verb == "optimize":
        res = solve_scheme(config, args.scheme, opts, args.mode)
        rows = [_report_row(config, sid, args.scheme, res)]
        if args.subspace_report:
            rows[0].update(subspace_report(config, opts))
        if args.save_beamformer:
            np.save(args.save_beamformer, res.beamformer.w)

    elif args.verb == "baselines":
        rows = [_report_row(config, sid, s, solve_scheme(config, s, opts, args.mode)) for s in ("sdr", "zf", "mrt")]

    elif args.verb == "sweep":
        spec = SweepSpec(
            args.variable, *args.range, schemes=args.schemes, outputs=args.outputs,
            user_index=args.user_index, crb_source=args.crb_source, mode=args.mode,
        )
        rows = run_sweep(config, spec, opts, jobs=args.jobs)
        header.append(f"# sweep: {args.variable} {':'.join(repr(v) for v in args.range)} schemes={','.join(spec.schemes)}")
        if args.plot:
            from .plotting import plot_sweep

            plot_sweep(rows, args.variable, args.plot_column, args.plot)

    else:  # beampattern
        rows = run_beampattern(config, args.scheme, parse_grid(args.grid), opts, args.mode)
        header.append(f"# scheme: {args.scheme}")
        if args.plot:
            from .plotting import plot_beampattern

            plot_beampattern(rows, args.plot, f"{sid} {args.scheme}")

    text = write_csv(rows, args.out, header)
    if args.out is None:
        sys.stdout.write(text)
    return rows


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except IsacError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
