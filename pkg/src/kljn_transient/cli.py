"""Command-line front end.

Every subcommand reads the same flat configuration (``--config FILE`` plus
repeatable ``--set key=value`` overrides). Exit codes: 0 success, 1 invalid
configuration, I/O failure or failed reproduction, 2 non-physical resistor
configuration, 3 defense pairing exhaustion.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from .attack import Channel
from .config import RunConfig, load_config, parse_overrides
from .errors import InvalidParameterError, NonPhysicalConfigurationError, PairingExhaustedError
from .montecarlo import (
    REFERENCE_CASES,
    STATE_ROLES,
    CaseError,
    Scenario,
    build_database,
    defense_settings,
    reproduce_tables,
    run_scenario,
    run_traces,
    steady_state_check,
)
from .noise import NoiseDatabase, read_record
from .vmg import LoopState, solve_vmg
from .wireline import write_traces_csv

log = logging.getLogger("kljn_transient")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_NON_PHYSICAL = 2
EXIT_PAIRING = 3

RESULTS_HEADER = ["case", "state", "defense", "tau_fly", "channel", "repeat", "p_e"]
SUMMARY_HEADER = ["case", "channel", "p_e_mean", "p_e_std", "paper_value", "paper_std", "pass"]


def package_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def fmt(x: float) -> str:
    """Round-trip float formatting for CSV and reports."""
    return repr(float(x))


# -- solve -------------------------------------------------------------------


def cmd_solve(cfg: RunConfig, args) -> int:
    quad = cfg.quad()
    temps = solve_vmg(quad, cfg.u_la, cfg.bandwidth)
    rms = temps.role_rms()
    print(f"VMG solution for U_LA = {cfg.u_la:g} V, B = {cfg.bandwidth:g} Hz")
    print()
    print(f"{'':8}{'HL state':>28}{'LH state':>28}")
    print(f"{'':8}{'R_HA':>14}{'R_LB':>14}{'R_LA':>14}{'R_HB':>14}")
    print(f"{'R (ohm)':8}{quad.r_ha:>14.6g}{quad.r_lb:>14.6g}{quad.r_la:>14.6g}{quad.r_hb:>14.6g}")
    print(f"{'T (K)':8}{temps.t_ha:>14.4e}{temps.t_lb:>14.4e}{temps.t_la:>14.4e}{temps.t_hb:>14.4e}")
    print(f"{'U (V)':8}{rms['HA']:>14.6f}{rms['LB']:>14.6f}{rms['LA']:>14.6f}{rms['HB']:>14.6f}")
    return EXIT_OK


# -- noise database ------------------------------------------------------------


def _database_matches(directory: Path, cfg: RunConfig, rms: dict, roles) -> bool:
    """True when `directory` holds exactly the records this configuration would generate."""
    fs = cfg.cable().sample_rate
    for role in roles:
        paths = sorted(directory.glob(f"noise_{role}_*.knr"))
        if len(paths) != cfg.records_per_role:
            return False
        for p in paths:
            spec = read_record(p).spec
            if not (
                np.isclose(spec.sample_rate, fs, rtol=1e-12)
                and spec.bandwidth == cfg.bandwidth
                and np.isclose(spec.target_rms, rms[role], rtol=1e-12)
                and spec.length == cfg.record_length
            ):
                return False
    return True


def open_database(cfg: RunConfig, roles) -> NoiseDatabase:
    """Use the stored database when it fits the configuration, otherwise generate in memory."""
    temps = solve_vmg(cfg.quad(), cfg.u_la, cfg.bandwidth)
    directory = Path(cfg.database_dir)
    roles = sorted(set(roles))
    if directory.is_dir() and _database_matches(directory, cfg, temps.role_rms(), roles):
        log.info("using noise records in %s", directory)
        return NoiseDatabase.load(directory, roles)
    log.info("generating noise records in memory (no matching database in %s)", directory)
    return build_database(cfg, temps, roles)


def cmd_gen_noise(cfg: RunConfig, args) -> int:
    temps = solve_vmg(cfg.quad(), cfg.u_la, cfg.bandwidth)
    db = build_database(cfg, temps)
    paths = db.save(cfg.database_dir)
    for p in paths:
        rec = read_record(p)
        print(f"{p}  role={rec.role}  samples={len(rec)}  rms={rec.rms():.6g} V  target={rec.spec.target_rms:.6g} V")
    return EXIT_OK


# -- reproduce -----------------------------------------------------------------


def _write_results(path: Path, results) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULTS_HEADER)
        for case, res in results.items():
            s = res.scenario
            for r, (pv, pi) in enumerate(res.per_repeat):
                for channel, p in ((Channel.VOLTAGE, pv), (Channel.CURRENT, pi)):
                    w.writerow([case, s.state.value, str(s.defense).lower(), fmt(s.tau_fly_multiples),
                                channel.value, r, fmt(p)])


def _verdict_text(passed) -> str:
    return "void" if passed is None else ("pass" if passed else "fail")


def _write_summary(path: Path, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        for row in rows:
            w.writerow([row.case, row.channel.value, fmt(row.p_e_mean), fmt(row.p_e_std),
                        fmt(row.reference_value), fmt(row.reference_std), _verdict_text(row.passed)])


def _write_report(path: Path, cfg: RunConfig, payload: dict) -> None:
    report = {
        "version": package_version(),
        "master_seed": cfg.master_seed,
        "noise_seed": cfg.noise_seed,
        "config": cfg.to_text(),
        **payload,
    }
    path.write_text(json.dumps(report, indent=2) + "\n")


def cmd_reproduce(cfg: RunConfig, args) -> int:
    if args.smoke:
        cfg = cfg.replace(runs=10, repeats=2)
    cases = [c.strip().upper() for c in args.cases.split(",") if c.strip()] if args.cases else list(REFERENCE_CASES)
    for c in cases:
        if c not in REFERENCE_CASES:
            raise InvalidParameterError(f"unknown case {c!r}; choose from {','.join(REFERENCE_CASES)}")
    roles = {r for c in cases for r in STATE_ROLES[REFERENCE_CASES[c][0]]}
    db = open_database(cfg, roles)
    report = reproduce_tables(cfg, cases, db=db, workers=args.workers, smoke=args.smoke)

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_results(out / "results.csv", report.results)
    _write_summary(out / "summary.csv", report.rows)
    _write_report(
        out / "report.json",
        cfg,
        {
            "smoke": args.smoke,
            "cases": {
                case: {
                    "state": res.scenario.state.value,
                    "defense": res.scenario.defense,
                    "tau_fly": res.scenario.tau_fly_multiples,
                    "runs": res.scenario.runs_per_batch,
                    "repeats": res.scenario.repeats,
                    "p_ev_mean": res.p_ev_mean,
                    "p_ev_std": res.p_ev_std,
                    "p_ei_mean": res.p_ei_mean,
                    "p_ei_std": res.p_ei_std,
                    "identical_decisions": res.identical_decisions,
                    "runtime_s": res.runtime,
                }
                for case, res in report.results.items()
            },
            "rows": [
                {
                    "case": r.case,
                    "channel": r.channel.value,
                    "p_e_mean": r.p_e_mean,
                    "p_e_std": r.p_e_std,
                    "paper_value": r.reference_value,
                    "paper_std": r.reference_std,
                    "verdict": _verdict_text(r.passed),
                }
                for r in report.rows
            ],
            "pair_checks": report.pair_checks,
            "passed": None if args.smoke else report.passed,
        },
    )

    print(f"{'case':5}{'channel':9}{'p_E mean':>10}{'std':>9}{'reference':>11}{'ref std':>9}  verdict")
    for r in report.rows:
        print(f"{r.case:5}{r.channel.value:9}{r.p_e_mean:>10.4f}{r.p_e_std:>9.4f}"
              f"{r.reference_value:>11.3f}{r.reference_std:>9.3f}  {_verdict_text(r.passed)}")
    for name, ok in report.pair_checks.items():
        print(f"defense effectiveness {name}: {'pass' if ok else 'fail'}")
    if args.smoke:
        print("smoke run (runs=10, repeats=2): verdicts are statistically void")
        return EXIT_OK
    print("overall:", "pass" if report.passed else "fail")
    return EXIT_OK if report.passed else EXIT_FAILURE


# -- steady state --------------------------------------------------------------


def cmd_steady_state(cfg: RunConfig, args) -> int:
    quad = cfg.quad()
    temps = solve_vmg(quad, cfg.u_la, cfg.bandwidth)
    cable = cfg.steady_state_cable()
    rep = steady_state_check(quad, temps, cable, cfg.ss_duration, seed=cfg.master_seed)
    print(f"line z0 = {cable.z0:g} ohm, fly time = {cable.fly_time:g} s, "
          f"{rep.realizations} realizations, {rep.duration:.3g} s of signal per state")
    names = (("u_ms", "V^2", 0.02), ("i_ms", "A^2", 0.02), ("p_flow", "W", 0.05))
    rows = {}
    ok_all = True
    for name, unit, tol in names:
        for state in LoopState:
            est = getattr(rep.estimates[state], name)
            err = getattr(rep.estimates[state], name + "_err")
            ref = getattr(rep.oracle[state], name)
            rel = rep.relative_error(state, name)
            ok = rel <= tol
            ok_all &= ok
            print(f"{name:7}{state.value:3}{est:>14.6e} +- {err:.2e} {unit:4} lumped {ref:>12.6e}  "
                  f"rel err {rel:.4f} (tol {tol})  {'pass' if ok else 'fail'}")
            rows[f"{name}_{state.value}"] = {"value": est, "stderr": err, "lumped": ref, "rel_error": rel}
        diff = rep.hl_lh_difference(name)
        mc = rep.mc_error(name)
        ok = diff < mc
        ok_all &= ok
        print(f"{name:7}HL-LH difference {diff:.3e} vs Monte Carlo error {mc:.3e} (95%)  {'pass' if ok else 'fail'}")
        rows[f"{name}_hl_lh"] = {"difference": diff, "stderr": rep.difference_stderr(name), "mc_error": mc}
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_report(out / "steady_state.json", cfg, {"observables": rows, "passed": bool(ok_all)})
    print("overall:", "pass" if ok_all else "fail")
    return EXIT_OK if ok_all else EXIT_FAILURE


# -- single scenarios ----------------------------------------------------------


def _custom_scenario(cfg: RunConfig, tau: float) -> Scenario:
    label = f"{cfg.state}{'-defense' if cfg.defense else ''}-tau{tau:g}"
    return Scenario(label, cfg.loop_state(), cfg.defense, tau, cfg.runs, cfg.repeats, cfg.master_seed)


def cmd_run(cfg: RunConfig, args) -> int:
    quad = cfg.quad()
    temps = solve_vmg(quad, cfg.u_la, cfg.bandwidth)
    db = open_database(cfg, STATE_ROLES[cfg.loop_state()])
    results = {}
    for tau in cfg.tau_multiples:
        s = _custom_scenario(cfg, tau)
        res = run_scenario(s, quad, temps, cfg.cable(), db, defense_settings(cfg), args.workers)
        results[s.case_label] = res
        print(f"{s.case_label}: p_EV = {res.p_ev_mean:.4f} +- {res.p_ev_std:.4f}, "
              f"p_EI = {res.p_ei_mean:.4f} +- {res.p_ei_std:.4f}  ({res.runtime:.1f} s)")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_results(out / "results.csv", results)
    return EXIT_OK


def cmd_dump_traces(cfg: RunConfig, args) -> int:
    quad = cfg.quad()
    solve_vmg(quad, cfg.u_la, cfg.bandwidth)
    db = open_database(cfg, STATE_ROLES[cfg.loop_state()])
    s = Scenario("dump", cfg.loop_state(), cfg.defense, cfg.tau_multiples[0], args.run + 1, args.repeat + 1,
                 cfg.master_seed)
    traces = run_traces(s, quad, cfg.cable(), db, defense_settings(cfg), args.repeat, args.run)
    out = Path(args.output) if args.output else Path(cfg.output_dir) / "traces.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_traces_csv(traces, out)
    print(f"wrote {len(traces)} samples to {out}")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------


def _nonnegative(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(
        prog="kljn-transient",
        description="Transient attack and slope-matching defense on a VMG-KLJN key exchanger.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {package_version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("solve", parents=[common], help="print the generator noise temperatures")
    sub.add_parser("gen-noise", parents=[common], help="write the noise database to database_dir")

    p = sub.add_parser("reproduce", parents=[common], help="run the eight reference cases")
    p.add_argument("--cases", help="comma separated subset, e.g. A,E")
    p.add_argument("--smoke", action="store_true", help="runs=10, repeats=2; verdicts are void")
    p.add_argument("--workers", type=_positive, default=1, help="parallel worker processes")

    sub.add_parser("steady-state", parents=[common], help="check the steady-state security identities")

    p = sub.add_parser("run", parents=[common], help="run one custom scenario per tau multiple")
    p.add_argument("--workers", type=_positive, default=1, help="parallel worker processes")

    p = sub.add_parser("dump-traces", parents=[common], help="write the traces of a single run as CSV")
    p.add_argument("--repeat", type=_nonnegative, default=0)
    p.add_argument("--run", type=_nonnegative, default=0)
    p.add_argument("--output", help="CSV path (default: output_dir/traces.csv)")
    return parser


COMMANDS = {
    "solve": cmd_solve,
    "gen-noise": cmd_gen_noise,
    "reproduce": cmd_reproduce,
    "steady-state": cmd_steady_state,
    "run": cmd_run,
    "dump-traces": cmd_dump_traces,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; that code is reserved here
        return EXIT_OK if exc.code == 0 else EXIT_FAILURE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, parse_overrides(args.overrides))
        return COMMANDS[args.command](cfg, args)
    except CaseError as exc:
        return _report_error(exc.cause, f"case {exc.case}: ")
    except Exception as exc:  # noqa: BLE001 - mapped to documented exit codes
        return _report_error(exc)


def _report_error(exc: Exception, prefix: str = "") -> int:
    if isinstance(exc, NonPhysicalConfigurationError):
        print(f"error: non-physical configuration: {prefix}{exc}", file=sys.stderr)
        return EXIT_NON_PHYSICAL
    if isinstance(exc, PairingExhaustedError):
        print(f"error: defense pairing exhausted: {prefix}{exc}", file=sys.stderr)
        return EXIT_PAIRING
    if isinstance(exc, (InvalidParameterError, OSError, ValueError)):
        print(f"error: {prefix}{exc}", file=sys.stderr)
        return EXIT_FAILURE
    raise exc


if __name__ == "__main__":
    sys.exit(main())
