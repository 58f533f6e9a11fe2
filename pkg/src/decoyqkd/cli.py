"""Command-line front end.

Exit codes
----------
0  success
2  configuration or usage error (unreadable/invalid scenario, unknown preset)
3  analysis infeasible (no channel consistent with the observed counts)
4  reconciliation failure (verification parities disagree)

Outputs go to ``--out``, else ``$DECOYQKD_OUT``, else ``./decoyqkd-out``.
Nothing is written unless the command succeeds.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, presets
from .analysis import InconsistentObservations
from .optimizer import ZeroRateLandscape, optimize, predict_rate
from .protocol import SessionTallies
from .scenario import (
    FIGURE_COLUMNS,
    SWEEP_COLUMNS,
    ConfigError,
    ReconciliationFailure,
    ScenarioConfig,
    analyze_tallies,
    csv_text,
    default_out_dir,
    distance_rows,
    key_file_text,
    load_scenario,
    run_pipeline,
    simulate,
    time_rows,
    with_seed,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_RECONCILIATION = 4

log = logging.getLogger("decoyqkd")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _scenario(args) -> ScenarioConfig:
    if bool(args.config) == bool(args.preset):
        raise ConfigError("give exactly one of --config PATH or --preset NAME")
    sc = load_scenario(args.config) if args.config else ScenarioConfig.from_preset(args.preset)
    return with_seed(sc, args.seed)


def _out_dir(args, scenario: ScenarioConfig | None = None) -> Path:
    if args.out:
        return Path(args.out)
    if scenario is not None and scenario.out_dir:
        return Path(scenario.out_dir)
    return default_out_dir()


def _write(out: Path, files: dict[str, str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text)
        log.info("wrote %s", out / name)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _report_files(stem: str, flat: dict, fmt: str) -> dict[str, str]:
    if fmt == "csv":
        return {f"{stem}.csv": csv_text([flat], list(flat))}
    return {f"{stem}.json": _dump(flat)}


def _tallies_csv(t: SessionTallies) -> str:
    rows = [
        {"level": j, "pulses_sent": t.pulses_sent[j], "sifted_detections": t.sifted_detections[j],
         "sifted_errors": t.sifted_errors[j], "sifted_zeros": t.sifted_zeros[j]}
        for j in range(t.levels)
    ]
    return csv_text(rows, list(rows[0]))


# -------------------------------------------------------------------------- verbs


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    tallies, _ = simulate(sc)
    if args.format == "csv":
        files = {"tallies.csv": _tallies_csv(tallies)}
    else:
        files = {"tallies.json": _dump(tallies.to_dict())}
    _write(_out_dir(args, sc), files)
    print(f"sifted bits at mu0: {tallies.sifted_detections[0]}  qber: {tallies.qber(0):.4f}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    sc = _scenario(args)
    if args.tallies:
        try:
            tallies = SessionTallies.from_dict(json.loads(Path(args.tallies).read_text()))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"cannot load tallies from {args.tallies}: {exc}") from exc
    else:
        tallies, _ = simulate(sc)
    report = analyze_tallies(sc, tallies)
    flat = report.to_flat_dict()
    _write(_out_dir(args, sc), _report_files("report", flat, args.format))
    print(f"N_sec = {report.key.n_sec}  ({report.secret_bit_rate:.2f} bit/s)")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    sc = _scenario(args)
    result = run_pipeline(sc)
    summary = result.summary()
    files = _report_files("report", summary, args.format)
    if result.alice_key is not None:
        files["final_key.hex"] = key_file_text(result.alice_key, result.report, sc.digest())
    if sc.distances:
        rows = distance_rows(sc, result.tallies)
        files["sweep_distance.csv"] = csv_text(rows, SWEEP_COLUMNS)
    if sc.time_factors:
        rows = time_rows(sc, result.tallies)
        files["sweep_time.csv"] = csv_text(rows, SWEEP_COLUMNS)
    _write(_out_dir(args, sc), files)
    print(
        f"N_sec = {result.report.key.n_sec}  leaked = {result.leaked_bits}  "
        f"verified = {result.verified}  rate = {result.report.secret_bit_rate:.2f} bit/s"
    )
    return EXIT_OK


def _sweep(args, kind: str) -> int:
    sc = _scenario(args)
    tallies, _ = simulate(sc)
    if kind == "distance":
        rows = distance_rows(sc, tallies)
        fig = [{"distance_km": r["x"], "rate_bps": r["rate_bps"]} for r in rows]
        files = {"sweep_distance.csv": csv_text(rows, SWEEP_COLUMNS), "fig2.csv": csv_text(fig, FIGURE_COLUMNS["fig2"])}
    else:
        rows = time_rows(sc, tallies)
        fig = [{"time_s": r["x"], "y1_lower": r["y1_lower"], "b1_upper": r["b1_upper"], "rate_bps": r["rate_bps"]} for r in rows]
        files = {"sweep_time.csv": csv_text(rows, SWEEP_COLUMNS), "fig3.csv": csv_text(fig, FIGURE_COLUMNS["fig3"])}
    _write(_out_dir(args, sc), files)
    print(f"{len(rows)} rows")
    return EXIT_OK


def cmd_optimize(args) -> int:
    sc = _scenario(args)
    res = optimize(sc.channel, sc.decoy.duration, epsilon=sc.decoy.epsilon, clock_rate=sc.decoy.clock_rate,
                   f_ec=sc.f_ec, n_max=sc.n_max)
    buf = ["mu0,mu1,mu2,p0,p1,p2,rate_bps"]
    for cfg, rate in res.search_trace:
        buf.append(",".join(repr(v) for v in (*cfg.intensities, *cfg.send_probabilities, rate)))
    summary = {
        "best": res.best_config.to_dict(),
        "predicted_rate": res.predicted_rate,
        "evaluations": res.evaluations,
        "configured_rate": predict_rate(sc.decoy, sc.channel, f_ec=sc.f_ec, n_max=sc.n_max),
    }
    _write(_out_dir(args, sc), {"optimization.json": _dump(summary), "search_trace.csv": "\n".join(buf) + "\n"})
    mus = ", ".join(f"{m:.4g}" for m in res.best_config.intensities)
    ps = ", ".join(f"{p:.4g}" for p in res.best_config.send_probabilities)
    print(f"best mu = [{mus}]  p = [{ps}]  rate = {res.predicted_rate:.2f} bit/s")
    return EXIT_OK


def cmd_preset(args) -> int:
    if not args.name:
        for n in presets.names():
            print(n)
        return EXIT_OK
    sc = with_seed(ScenarioConfig.from_preset(args.name), args.seed)
    text = _dump(sc.to_dict())
    if args.out:
        _write(Path(args.out), {f"{args.name}.json": text})
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="scenario JSON file")
    common.add_argument("--preset", metavar="NAME", help=f"built-in scenario ({', '.join(presets.names())})")
    common.add_argument("--seed", type=int, metavar="N", help="override the scenario seed")
    common.add_argument("--out", metavar="DIR", help="output directory (default: $DECOYQKD_OUT or ./decoyqkd-out)")
    common.add_argument("--format", choices=("json", "csv"), default="json", help="report format")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="decoyqkd", description="Decoy-state BB84 simulation and finite-key analysis.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("simulate", parents=[common], help="simulate a session and write its tallies").set_defaults(func=cmd_simulate)
    a = sub.add_parser("analyze", parents=[common], help="bound the single-photon yield and the secret key length")
    a.add_argument("--tallies", metavar="PATH", help="tallies JSON from `simulate` (default: simulate now)")
    a.set_defaults(func=cmd_analyze)
    sub.add_parser("pipeline", parents=[common], help="simulate, reconcile, analyze and amplify").set_defaults(func=cmd_pipeline)
    sub.add_parser("sweep-distance", parents=[common], help="secret rate versus distance").set_defaults(
        func=lambda a: _sweep(a, "distance"))
    sub.add_parser("sweep-time", parents=[common], help="bounds and rate versus acquisition time").set_defaults(
        func=lambda a: _sweep(a, "time"))
    sub.add_parser("optimize", parents=[common], help="search intensities and send probabilities").set_defaults(func=cmd_optimize)
    pr = sub.add_parser("preset", parents=[common], help="list presets, or print one as a scenario file")
    pr.add_argument("name", nargs="?")
    pr.set_defaults(func=cmd_preset)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InconsistentObservations as exc:
        print(f"analysis infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ZeroRateLandscape as exc:
        print(f"analysis infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ReconciliationFailure as exc:
        print(f"reconciliation failed: {exc}", file=sys.stderr)
        return EXIT_RECONCILIATION


if __name__ == "__main__":
    sys.exit(main())
