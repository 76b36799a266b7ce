"""Command-line interface: ``frhom {fisher,simulate,analyze,reproduce}``.

Laboratory units on the command line: delays in ps, frequencies in THz.
A "THz" value is read as ``1e12 rad/s`` (angular frequency), the same
scale the beat frequencies are quoted in.  ``--frequency-convention
cycles`` instead reads it as ``2 pi * 1e12 rad/s``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical
failure, 4 I/O failure.
"""

import argparse
import configparser
import csv
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .coincidence import CoincidenceConfig, aggregate, classify_and_count, write_matrix_csv
from .errors import ConfigurationError, FitError, NumericalError
from .fisher import (
    _map,
    _threads,
    appendix_grid,
    fisher_curves,
    nonresolved_ratio,
    write_curves_csv,
)
from .inference import dumps, estimate_record, fit_record
from .manifest import RunManifest, _pairs
from .model import SpectralModel
from .pipeline import (
    beat_series,
    bounds,
    dip_series_from_runs,
    fit_all_beats,
    fit_dip_series,
    mle_rows,
    nr_rows,
    split_runs,
)
from .simulate import (
    DEFAULT_BIN_WIDTH,
    DEFAULT_PITCH,
    DEFAULT_PIXEL_COUNT,
    ExperimentConfig,
    bucket_grid,
    detector_grid,
    generate_run,
)
from .tagfile import read_stream, write_stream

PS = 1e-12
THZ = 1e12

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


class UsageError(Exception):
    pass


def _freq(args, value_thz):
    scale = 2 * math.pi if args.frequency_convention == "cycles" else 1.0
    return value_thz * THZ * scale


def _write_text(path, text):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_rows(path, header, rows):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def _num(x):
    return repr(float(x))


def _model(args):
    if not args.tau_ps > 0:
        raise UsageError("--tau-ps must be positive")
    return SpectralModel.from_coherence_time(
        args.tau_ps * PS, args.visibility, allow_high_visibility=args.allow_high_visibility
    )


# ---------------------------------------------------------------------------
# fisher
# ---------------------------------------------------------------------------


def cmd_fisher(args):
    model = _model(args)
    if args.points < 1 or not args.delay_max_tau > args.delay_min_tau:
        raise UsageError("delay range is empty: need --points >= 1 and max > min")
    delays = np.linspace(args.delay_min_tau, args.delay_max_tau, args.points) * model.tau
    res = [_freq(args, r) for r in (args.resolution_thz or [1.0])]
    if any(not r > 0 for r in res):
        raise UsageError("--resolution-thz values must be positive")
    grids = [appendix_grid(model, r) for r in res]
    curves = fisher_curves(model, grids[0], delays, grids[1:])
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "fisher_curves.csv")
    write_curves_csv(path, curves)
    print(f"wrote {path}")
    if args.audit:
        lo, hi = 0.5 * model.tau, 4 * model.tau
        audit = np.linspace(lo, hi, 36)
        ratio = nonresolved_ratio(model, audit)
        spread = float(np.max(np.abs(ratio / ratio[0] - 1)))
        print(f"audit: numeric/closed-form non-resolved information ratio = {ratio[0]:.12g}")
        print(f"audit: max relative variation over [0.5 tau, 4 tau] = {spread:.3e}")
        _write_rows(os.path.join(args.out, "fisher_audit.csv"), ("delay_s", "ratio"),
                    [(_num(d), _num(r)) for d, r in zip(audit, ratio)])
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _delays(args):
    if args.delays_ps:
        vals = [float(x) for x in args.delays_ps.split(",") if x.strip()]
    else:
        start, stop, count = args.delay_range_ps
        count = int(count)
        if count < 1:
            raise UsageError("delay range needs at least one point")
        vals = np.linspace(start, stop, count).tolist()
    if not vals:
        raise UsageError("no delays given")
    return tuple(round(v * PS, 18) for v in vals)


def _config_file(path):
    cp = configparser.ConfigParser(interpolation=None)
    if not cp.read(path):
        raise FileNotFoundError(path)
    return RunManifest.from_parser(cp)


def manifest_from_args(args):
    if args.config:
        base = _config_file(args.config)
        if args.delays_ps or args.delay_range_ps:
            base.delays = _delays(args)
        if not base.delays:
            raise UsageError("configuration has no [scan] delays")
        return base
    model = _model(args)
    if args.detector == "bucket":
        grid = bucket_grid(model)
    else:
        grid = detector_grid(model, args.pixels, _freq(args, args.pitch_thz),
                             _freq(args, args.bin_width_thz))
    experiment = ExperimentConfig(
        pair_rate=args.pair_rate,
        pulses_per_run=args.pulses,
        repetitions=args.repetitions,
        jitter_fwhm=args.jitter_ps * PS,
        tag_resolution=args.tag_resolution_ps * PS,
        crosstalk_probability=args.crosstalk,
        rng_seed=args.seed,
    )
    return RunManifest(model, grid, experiment, CoincidenceConfig(), _delays(args), args.detector)


def run_file_name(delay_index, rep):
    return f"run_d{delay_index:03d}_r{rep:02d}.homtag"


def simulate_to(manifest, out):
    os.makedirs(out, exist_ok=True)
    tasks = [(di, d, r) for di, d in enumerate(manifest.delays)
             for r in range(manifest.experiment.repetitions)]

    def job(task):
        di, d, r = task
        stream = generate_run(manifest.experiment, manifest.model, manifest.grid, d, r)
        name = run_file_name(di, r)
        write_stream(os.path.join(out, name), stream)
        return name, di, r

    manifest.files = _map(job, tasks, _threads())
    manifest.write(os.path.join(out, "manifest.ini"))
    return manifest


def cmd_simulate(args):
    manifest = manifest_from_args(args)
    t0 = time.perf_counter()
    simulate_to(manifest, args.out)
    print(f"wrote {len(manifest.files)} stream files to {args.out} "
          f"({time.perf_counter() - t0:.1f} s)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


def _coincidence_config(args, manifest):
    cc = manifest.coincidence
    return CoincidenceConfig(
        cc.window,
        cc.antibunch_center,
        _pairs(args.exclude_bunching) if args.exclude_bunching else cc.excluded_bunching,
        _pairs(args.exclude_antibunching) if args.exclude_antibunching
        else cc.excluded_antibunching,
        args.strict_fidelity or cc.strict_fidelity,
    )


def count_dataset(directory, cc, workers=None):
    """Read a simulated dataset and return ``(manifest, scan)``."""
    manifest = RunManifest.read(os.path.join(directory, "manifest.ini"))
    if not manifest.files:
        raise FileNotFoundError(f"{directory}: manifest lists no stream files")

    def job(entry):
        name, di, _ = entry
        stream = read_stream(os.path.join(directory, name))
        return di, classify_and_count(stream, cc, manifest.delays[di])

    results = _map(job, manifest.files, _threads() if workers is None else workers)
    scan = [[] for _ in manifest.delays]
    for di, m in results:
        scan[di].append(m)
    return manifest, scan


def _halves(scan, split):
    if not split:
        return scan, scan
    pairs = [split_runs(runs) for runs in scan]
    return [p[0] for p in pairs], [p[1] for p in pairs]


def _stats(scan, cc):
    return [aggregate(runs, cc) for runs in scan]


def analyze(args):
    """Run the full analysis and write every output file; returns a summary dict."""
    os.makedirs(args.out, exist_ok=True)
    summary = {"fits": [], "fit_failures": {}, "estimates": []}
    table = []
    main_manifest = None
    resolved = nr = None

    for directory in [args.data] + ([args.bucket] if args.bucket else []):
        probe = RunManifest.read(os.path.join(directory, "manifest.ini"))
        cc = _coincidence_config(args, probe)
        manifest, scan = count_dataset(directory, cc)
        if manifest.grid.size == 1:
            nr = (manifest, scan, cc)
        else:
            resolved = (manifest, scan, cc)
        main_manifest = main_manifest or manifest

    if resolved is None and nr is None:
        raise UsageError("no dataset to analyze")

    model = main_manifest.model
    crb_res = _freq(args, args.crb_resolution_thz)

    if nr is not None:
        manifest, scan, cc = nr
        fit_scan, est_scan = _halves(scan, args.split)
        dip_fit_data = dip_series_from_runs(fit_scan)
        est_data = dip_series_from_runs(est_scan)
        rows_out = []
        try:
            dfit = fit_dip_series(dip_fit_data)
            summary["fits"].append(fit_record(dfit))
            fit_vals = dfit(est_data.delays)
        except FitError as exc:
            dfit = None
            summary["fit_failures"]["dip"] = str(exc)
            fit_vals = np.full(est_data.delays.shape, math.nan)
        for d, c, e, f in zip(est_data.delays, est_data.mean, est_data.sem, fit_vals):
            rows_out.append((_num(d), _num(c), _num(e), _num(f)))
        _write_rows(os.path.join(args.out, "dip_scan.csv"),
                    ("delay_s", "mean_counts", "sem_counts", "fit_counts"), rows_out)
        if dfit is not None:
            for row in nr_rows(dfit, est_data, len(est_scan[0])):
                table.append(row)

    if resolved is not None:
        manifest, scan, cc = resolved
        grid = manifest.grid
        fit_scan, est_scan = _halves(scan, args.split)
        fit_stats = _stats(fit_scan, cc)
        est_stats = _stats(est_scan, cc)
        if nr is None:
            # no bucket data: use the pixel-summed antibunching total as the dip
            est_data = dip_series_from_runs(est_scan)
            _write_rows(os.path.join(args.out, "dip_scan.csv"),
                        ("delay_s", "mean_counts", "sem_counts", "fit_counts"),
                        [(_num(d), _num(c), _num(e), "nan")
                         for d, c, e in zip(est_data.delays, est_data.mean, est_data.sem)])
        series = beat_series(fit_stats, grid)
        fits, failures = fit_all_beats(series, grid.bin_width)
        for key, msg in failures.items():
            summary["fit_failures"][f"{key[0].value}{key[1]}"] = msg
            print(f"fit failed for {key[0].label} k={key[1]}: {msg}", file=sys.stderr)
        summary["fits"].extend(fit_record(f) for f in fits.values())
        beat_rows = []
        for key, s in sorted(series.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
            fit = fits.get(key)
            vals = fit(s.delays) if fit else np.full(s.delays.shape, math.nan)
            for d, c, e, f in zip(s.delays, s.mean, s.sem, vals):
                beat_rows.append((key[0].value, key[1], _num(s.delta_omega), _num(d), _num(c),
                                  _num(e), _num(f)))
        _write_rows(os.path.join(args.out, "beats.csv"),
                    ("branch", "k", "delta_omega_rad_s", "delay_s", "mean_counts",
                     "sem_counts", "fit_counts"), beat_rows)
        for di, st in enumerate(est_stats):
            write_matrix_csv(os.path.join(args.out, f"matrix_d{di:03d}.csv"), st, grid)
        if fits:
            table.extend(mle_rows(fits, est_stats, grid, args.search_halfwidth_ps * PS,
                                  model.tau, normalize=args.likelihood == "normalized"))

    det_grid = resolved[0].grid if resolved else None
    det_cc = resolved[2] if resolved else CoincidenceConfig()
    header = ("delay_setting_s", "method", "delay_hat_s", "uncertainty_s", "N_pairs",
              "sqrtN_uncertainty_s", "crb_quantum_s", "crb_finite_s", "crb_detector_s",
              "crb_nonresolved_s", "status")
    out_rows = []
    cache = {}
    for row in table:
        d = float(row.delay_setting)
        if d not in cache:
            cache[d] = bounds(model, d, crb_res, det_grid, det_cc)
        b = cache[d]
        hat = row.estimate.delay_hat if row.estimate else math.nan
        out_rows.append((_num(d), row.method.value, _num(hat), _num(row.uncertainty),
                         _num(row.N), _num(row.scaled), _num(b.quantum), _num(b.finite),
                         _num(b.detector), _num(b.nonresolved), row.status))
        if row.estimate:
            summary["estimates"].append(estimate_record(row.estimate, d))
    _write_rows(os.path.join(args.out, "uncertainty.csv"), header, out_rows)
    summary["settings"] = {
        "split_sample": bool(args.split),
        "likelihood": args.likelihood,
        "search_halfwidth_s": args.search_halfwidth_ps * PS,
        "crb_resolution_rad_s": crb_res,
    }
    _write_text(os.path.join(args.out, "fits.json"), dumps(summary) + "\n")
    return summary


def cmd_analyze(args):
    summary = analyze(args)
    print(f"analysis written to {args.out}: {len(summary['fits'])} fits, "
          f"{len(summary['fit_failures'])} fit failures, {len(summary['estimates'])} estimates")
    return EXIT_OK


# ---------------------------------------------------------------------------
# reproduce
# ---------------------------------------------------------------------------


SCALES = {
    # pulses per run, repetitions, delay points over [0, 5] ps
    "desk": (20_000_000, 10, 11),
    "full": (240_000_000, 10, 26),
}


def cmd_reproduce(args):
    pulses, reps, points = SCALES[args.scale]
    out = args.out
    spectrum = ["--visibility", repr(args.visibility), "--tau-ps", repr(args.tau_ps)]
    if args.allow_high_visibility:
        spectrum.append("--allow-high-visibility")
    fisher_args = build_parser().parse_args(
        ["--frequency-convention", args.frequency_convention, "fisher", *spectrum,
         "--out", os.path.join(out, "fisher"), "--audit"]
    )
    cmd_fisher(fisher_args)
    model = _model(args)
    delays = tuple(round(d, 18) for d in np.linspace(0, 5, points) * PS)
    experiment = ExperimentConfig(pulses_per_run=pulses, repetitions=reps, rng_seed=args.seed)
    array = RunManifest(model, detector_grid(model), experiment, CoincidenceConfig(), delays,
                        "array")
    bucket = RunManifest(model, bucket_grid(model), experiment, CoincidenceConfig(), delays,
                         "bucket")
    simulate_to(array, os.path.join(out, "array"))
    simulate_to(bucket, os.path.join(out, "bucket"))
    analyze_args = build_parser().parse_args([
        "--frequency-convention", args.frequency_convention,
        "analyze", os.path.join(out, "array"), "--bucket", os.path.join(out, "bucket"),
        "--out", os.path.join(out, "analysis"),
    ])
    cmd_analyze(analyze_args)
    print(f"figure datasets written under {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _spectrum_args(p):
    p.add_argument("--visibility", type=float, default=0.4)
    p.add_argument("--tau-ps", type=float, default=0.44, help="coherence time")
    p.add_argument("--allow-high-visibility", action="store_true",
                   help="permit V > 0.5 for a coherent source")


def build_parser():
    parser = argparse.ArgumentParser(prog="frhom", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"frhom {__version__}")
    parser.add_argument("--frequency-convention", choices=("angular", "cycles"),
                        default="angular",
                        help="read THz values as 1e12 rad/s (angular) or 2 pi 1e12 rad/s")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fisher", help="Fisher-information curves")
    _spectrum_args(p)
    p.add_argument("--resolution-thz", type=float, action="append",
                   help="frequency resolution; repeat for several curves (default 1)")
    p.add_argument("--delay-min-tau", type=float, default=0.0)
    p.add_argument("--delay-max-tau", type=float, default=5.0)
    p.add_argument("--points", type=int, default=50)
    p.add_argument("--audit", action="store_true",
                   help="print the numeric/closed-form non-resolved ratio")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_fisher)

    p = sub.add_parser("simulate", help="simulate time-tag streams")
    _spectrum_args(p)
    p.add_argument("--config", help="INI configuration (manifest layout)")
    p.add_argument("--out", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--delays-ps", help="comma-separated delay settings")
    g.add_argument("--delay-range-ps", nargs=3, type=float, metavar=("START", "STOP", "COUNT"))
    p.add_argument("--detector", choices=("array", "bucket"), default="array")
    p.add_argument("--pixels", type=int, default=DEFAULT_PIXEL_COUNT)
    p.add_argument("--pitch-thz", type=float, default=DEFAULT_PITCH / THZ)
    p.add_argument("--bin-width-thz", type=float, default=DEFAULT_BIN_WIDTH / THZ)
    p.add_argument("--pair-rate", type=float, default=1e-2)
    p.add_argument("--pulses", type=int, default=240_000_000)
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--jitter-ps", type=float, default=45.0, help="FWHM")
    p.add_argument("--tag-resolution-ps", type=float, default=1.5)
    p.add_argument("--crosstalk", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="coincidences, fits and delay estimates")
    p.add_argument("data", help="dataset directory (array or bucket)")
    p.add_argument("--bucket", help="bucket-detector dataset for the non-resolved route")
    p.add_argument("--out", required=True)
    p.add_argument("--strict-fidelity", action="store_true",
                   help="literal coincidence loop bound that skips the last tag")
    p.add_argument("--exclude-bunching", help='pairs like "0-0,0-1" or "default"')
    p.add_argument("--exclude-antibunching", help='pairs like "3-3" or "default"')
    p.add_argument("--no-split", dest="split", action="store_false",
                   help="fit and estimate on the same runs")
    p.add_argument("--search-halfwidth-ps", type=float, default=0.5)
    p.add_argument("--likelihood", choices=("normalized", "printed"), default="normalized")
    p.add_argument("--crb-resolution-thz", type=float, default=1.0)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("reproduce", help="generate every figure dataset")
    _spectrum_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", choices=tuple(SCALES), default="desk")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as exc:
        print(f"frhom: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"frhom: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"frhom: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
