"""Command-line front end: sweeps, self-test, and plot-data emission.

Exit codes: 0 on success, 1 when a run or self-test fails, 2 for usage and
configuration errors (argparse's own convention).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace

from .errors import ConfigError, OtfsError
from .sim import (
    CSV_HEADER,
    ITER_CSV_HEADER,
    SimConfig,
    apply_overrides,
    load_config,
    resolve_threads,
    simulate,
    sweep_iterations,
    sweep_snr,
    sweep_velocity,
    write_iteration_results,
    write_results,
)

_SWEEPS = {
    "simulate": (simulate, "run the full SNR x velocity grid"),
    "sweep-snr": (sweep_snr, "BER versus SNR at the configured velocity"),
    "sweep-velocity": (sweep_velocity, "BER versus velocity at the first SNR"),
    "sweep-iterations": (sweep_iterations, "iteration-resolved BER traces"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otfsdet",
        description="Delay-Doppler grid link simulator with iterative detectors.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_text) in _SWEEPS.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", metavar="PATH",
                        help="JSON config file mirroring SimConfig fields")
        sp.add_argument("--out", metavar="PATH",
                        help=f"output CSV path (default {name}.csv)")
        sp.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override a config entry; dotted keys reach "
                             "nested sections (repeatable)")
        sp.add_argument("--seed", type=int, metavar="U64",
                        help="override master_seed")
        sp.add_argument("--threads", type=int, metavar="N",
                        help="worker threads (else OTFS_SIM_THREADS, "
                             "else machine parallelism)")
    sub.add_parser("selftest", help="run the fast invariant checks")
    ep = sub.add_parser("emit-plot-data",
                        help="convert a results CSV into columnar plot files")
    ep.add_argument("results", metavar="RESULTS_CSV",
                    help="CSV produced by a sweep command")
    ep.add_argument("--out-dir", default=".", metavar="DIR",
                    help="directory for the .dat files (default: .)")
    return parser


def _load_cfg(args) -> SimConfig:
    cfg = load_config(args.config) if args.config else SimConfig()
    if args.overrides:
        cfg = apply_overrides(cfg, args.overrides)
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    return cfg


def _run_sweep(args) -> int:
    cfg = _load_cfg(args)
    threads = resolve_threads(args.threads)
    runner, _ = _SWEEPS[args.command]
    records = runner(cfg, threads=threads)
    out = args.out if args.out else f"{args.command}.csv"
    if args.command == "sweep-iterations":
        write_iteration_results(records, out, cfg)
        finals = {}
        for r in records:
            key = (r.detector, r.snr_db, r.velocity_mps)
            if key not in finals or r.iteration > finals[key].iteration:
                finals[key] = r
        for (det, snr, vel), r in sorted(finals.items()):
            print(f"{det}: snr={snr:g} dB v={vel:g} m/s "
                  f"ber(iter {r.iteration})={r.ber:.3e} over {r.frames} frames")
    else:
        write_results(records, out, cfg)
        for r in sorted(records, key=lambda r: (r.detector, r.snr_db,
                                                r.velocity_mps)):
            flag = " censored" if r.censored else ""
            print(f"{r.detector}: snr={r.snr_db:g} dB v={r.velocity_mps:g} m/s "
                  f"ber={r.ber:.3e} ({r.bit_errors}/{r.bits} bits, "
                  f"{r.frames} frames){flag}")
    print(f"wrote {out}")
    return 0


def _read_rows(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            fields = tuple(reader.fieldnames or ())
            rows = list(reader)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return fields, rows


def _write_panel(path, xname, blocks):
    """Columnar text: one block per fixed setting, one column per detector."""
    with open(path, "w", encoding="utf-8") as fh:
        first = True
        for label, xs, detectors, table in blocks:
            if not first:
                fh.write("\n")
            first = False
            fh.write(f"# {label}\n")
            fh.write("# " + " ".join([xname] + list(detectors)) + "\n")
            for x in xs:
                cells = [f"{x:g}"]
                for det in detectors:
                    ber = table.get((det, x))
                    cells.append(f"{ber:.6e}" if ber is not None else "nan")
                fh.write(" ".join(cells) + "\n")


def _blocks(rows, xkey, fixed_keys):
    """Group rows by the fixed keys; pivot detector x value inside each group."""
    groups = {}
    for row in rows:
        fixed = tuple(float(row[k]) for k in fixed_keys)
        groups.setdefault(fixed, []).append(row)
    blocks = []
    for fixed in sorted(groups):
        grouped = groups[fixed]
        detectors = sorted({row["detector"] for row in grouped})
        xs = sorted({float(row[xkey]) for row in grouped})
        table = {(row["detector"], float(row[xkey])): float(row["ber"])
                 for row in grouped}
        label = " ".join(f"{k}={v:g}" for k, v in zip(fixed_keys, fixed))
        blocks.append((label, xs, detectors, table))
    return blocks


def _emit_plot_data(results_path, out_dir) -> int:
    fields, rows = _read_rows(results_path)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if fields == ITER_CSV_HEADER:
        path = os.path.join(out_dir, "ber_vs_iteration.dat")
        _write_panel(path, "iteration",
                     _blocks(rows, "iteration", ("snr_db", "velocity_mps")))
        written.append(path)
    elif fields == CSV_HEADER:
        path = os.path.join(out_dir, "ber_vs_snr.dat")
        _write_panel(path, "snr_db", _blocks(rows, "snr_db", ("velocity_mps",)))
        written.append(path)
        path = os.path.join(out_dir, "ber_vs_velocity.dat")
        _write_panel(path, "velocity_mps",
                     _blocks(rows, "velocity_mps", ("snr_db",)))
        written.append(path)
    else:
        raise ConfigError(
            f"{results_path} has header {fields}; expected a sweep CSV")
    for path in written:
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "selftest":
        from .selftest import run_selftest
        return 0 if run_selftest() else 1
    try:
        if args.command == "emit-plot-data":
            return _emit_plot_data(args.results, args.out_dir)
        return _run_sweep(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OtfsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
