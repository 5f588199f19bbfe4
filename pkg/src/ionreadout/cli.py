"""Command line interface.

Exit codes: 0 success, 1 invalid input, 2 reproduction mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from fractions import Fraction
from pathlib import Path


log = logging.getLogger("ionreadout")

EXIT_OK, EXIT_INVALID, EXIT_MISMATCH = 0, 1, 2


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors are validation errors: exit 1, keeping 2 for mismatches."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _emit(obj, path=None):
    text = json.dumps(obj, indent=2, default=str)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _seed(args):
    env = os.environ.get("IONREADOUT_SEED")
    return int(env) if env not in (None, "") else args.seed


def _model(args, detector):
    from . import calibration as cal
    from .detector import load_model
    if getattr(args, "model", None):
        return load_model(args.model)
    return cal.PMT_MODEL if detector == "pmt" else cal.CAMERA_MODEL


def cmd_simulate(args) -> int:
    from . import calibration as cal
    from .detector import NO_DEPUMPING, emccd_sample, pmt_sample
    from .histogram import CountHistogram
    seed = _seed(args)
    depump = NO_DEPUMPING if args.no_depumping else cal.DEPUMPING
    model = _model(args, args.detector)
    if args.series:
        from .scans import reference_grid, simulate_scan
        if not args.t_pi:
            raise CliError("--series needs at least one --t-pi")
        grid = reference_grid(args.step * 1e-6, args.stop * 1e-6)
        series = simulate_scan(model, grid, [t * 1e-6 for t in args.t_pi], args.shots, depump, seed,
                               sd=args.sd)
        series.to_csv(args.series)
        _emit({"points": len(series), "shots_per_point": args.shots, "path": args.series, "seed": seed})
        return EXIT_OK
    if args.frames:
        from .pipeline import Scenario, simulate_source, write_frames
        frames = simulate_source(Scenario(args.scheme, args.ions, args.shots), model, depump=depump,
                                 seed=seed)
        n = write_frames(frames, args.frames)
        _emit({"frames": n, "path": args.frames, "seed": seed})
        return EXIT_OK
    sampler = pmt_sample if args.detector == "pmt" else emccd_sample
    counts = sampler(model, args.state, depump, seed, args.shots)
    hist = CountHistogram.from_samples(counts)
    if args.out:
        hist.to_csv(args.out)
        _emit({"shots": hist.total, "mean": hist.mean(), "path": args.out, "seed": seed})
    else:
        sys.stdout.write(hist.to_csv())
    return EXIT_OK


def cmd_threshold(args) -> int:
    from .discriminator import check_camera_threshold, optimal_threshold, spam_curve
    from .histogram import CountHistogram
    hb, hd = CountHistogram.from_csv(args.bright), CountHistogram.from_csv(args.dark)
    t, s = optimal_threshold(hb, hd)
    if args.camera:
        check_camera_threshold(t)
    result = {"t": t, "spam": s}
    if args.curve:
        tt, ss = spam_curve(hb, hd)
        with open(args.curve, "w") as fh:
            fh.write("threshold,spam\n")
            fh.writelines(f"{a},{b!r}\n" for a, b in zip(tt.tolist(), ss.tolist()))
        result["curve"] = args.curve
    if args.plot:
        from .plotting import plot_spam_curves
        plot_spam_curves({"S(t)": spam_curve(hb, hd)}, args.plot, {"S(t)": (t, s)})
        result["plot"] = args.plot
    _emit(result, args.out)
    return EXIT_OK


def _pipeline_config(args):
    from .discriminator import TwoIonThresholds
    from .pipeline import PipelineConfig, load_config
    if getattr(args, "config", None):
        return load_config(args.config)
    if args.t1 is not None or args.t2 is not None:
        if args.t1 is None or args.t2 is None:
            raise CliError("--t1 and --t2 go together")
        th = TwoIonThresholds(args.t1, args.t2)
    else:
        th = tuple(args.threshold or [4284])
    return PipelineConfig(thresholds=th, seed=_seed(args))


def cmd_classify(args) -> int:
    from .pipeline import FrameKind, classify_offline, read_frames
    config = _pipeline_config(args)
    frames = list(read_frames(args.frames))
    rows = classify_offline(frames, config)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for idx, states, n in rows:
            out.write(json.dumps({"sequence_index": idx, "per_ion_state": [s.value for s in states],
                                  "global_bright": n}) + "\n")
    finally:
        if args.out:
            out.close()
    if args.out:
        n_data = sum(f.kind is FrameKind.DATA for f in frames)
        _emit({"frames": len(frames), "decisions": len(rows), "data_frames": n_data, "path": args.out})
    return EXIT_OK


def cmd_fit(args) -> int:
    from .fitters import RabiSeries, background_ratio, beat_envelope_minimum, fit_beat, fit_rabi
    series = RabiSeries.from_csv(Path(args.series))
    if args.baseline:
        series = RabiSeries(series.durations, series.mean_counts - args.baseline, series.sd,
                            series.shots_per_point)
    if args.model == "rabi":
        fit = fit_rabi(series)
        result = fit.as_dict()
        try:
            result["beta"] = background_ratio(fit)
        except ValueError as exc:
            result["beta_error"] = str(exc)
    else:
        fit = fit_beat(series)
        result = fit.as_dict()
        if fit.t_pi1 != fit.t_pi2:
            result["envelope_minimum_s"] = beat_envelope_minimum(fit)
    if args.plot:
        from .plotting import plot_rabi
        plot_rabi(series, fit, args.plot, title=f"{args.model} fit")
        result["plot"] = args.plot
    _emit(result, args.out)
    return EXIT_OK


def cmd_crosstalk(args) -> int:
    if args.separation is not None:
        from . import calibration as cal
        from .optics import FrameGeometry, PsfModel, roi_fraction, ion_pair, square_areas
        psf = cal.PSF if args.spike_angle is None else PsfModel(
            cal.PSF.core_sigma, cal.PSF.spike_fraction, cal.PSF.spike_decay, args.spike_angle)
        g = FrameGeometry()
        s1, s2 = ion_pair(g, args.separation)
        a1, a2 = square_areas([s1, s2], args.separation)
        _emit({"separation_px": args.separation, "area_side": a1.w,
               "own_fraction": roi_fraction(psf, s1, a1, g), "wrong_fraction": roi_fraction(psf, s1, a2, g),
               "crosstalk_fraction": cal.pair_crosstalk(psf, args.separation, g)}, args.out)
        return EXIT_OK
    from .discriminator import crosstalk_estimate
    if not args.bright or not args.dark:
        raise CliError("give --bright and --dark area means, or --separation")
    r = crosstalk_estimate(args.bright, args.dark, args.own - 1, args.noise_floor)
    _emit(r.as_floats(), args.out)
    return EXIT_OK


def cmd_schedule(args) -> int:
    from .sequencer import (CameraDutyModel, Detector, SequenceTimeline, build_standard_sequence,
                            decision_latency, gantt, throughput, to_ns, validate)
    if args.timeline:
        seq = SequenceTimeline.from_json(Path(args.timeline))
    else:
        pulses = [to_ns(Fraction(str(p)) / 10**6) for p in args.pulses]
        seq = build_standard_sequence(pulses, Detector(args.detector.upper()))
    duty = CameraDutyModel(Fraction(str(args.max_rate)))
    problems = validate(seq, duty)
    tp = throughput(seq, duty, args.detections)
    result = {"total_ms": float(Fraction(seq.total_ns, 10**6)), "violations": problems, **tp.as_dict(),
              "decision_latency_ms": float(decision_latency(seq, Fraction(str(args.processing_ms)) / 1000) * 1000)}
    print(gantt(seq), file=sys.stderr)
    if args.save:
        seq.to_json(args.save)
    if args.plot:
        from .plotting import plot_timeline
        plot_timeline(seq, args.plot)
    _emit(result, args.out)
    return EXIT_INVALID if problems else EXIT_OK


def cmd_stream(args) -> int:
    from . import calibration as cal
    from .pipeline import (Scenario, SocketFrameSource, read_frames, run_stream, simulate_source,
                           write_frames)
    config = _pipeline_config(args)
    if args.frames:
        source = read_frames(args.frames)
    elif args.listen is not None:
        src = SocketFrameSource(port=args.listen)
        log.info("listening on %s:%d", *src.address)
        source = iter(src)
    else:
        shared = config.n_areas == 1 and args.ions > 1
        if not shared and args.ions != config.n_areas:
            raise CliError(f"{args.ions} ions need one threshold per ion or a shared-area --t1/--t2 pair")
        model = cal.two_ion_camera_model() if shared and args.ions == 2 else cal.CAMERA_MODEL
        source = simulate_source(Scenario(args.scheme, args.ions, args.shots), model,
                                 fractions=[[1.0]] * args.ions if shared else None,
                                 depump=cal.DEPUMPING, seed=config.seed, frame_rate=config.frame_rate)
    decisions, summary = run_stream(config, source, args.max_frames)
    if args.out:
        write_frames(decisions, args.out)
    if args.plot:
        from .plotting import plot_latency
        plot_latency([d.ingest_to_decision for d in decisions], config.latency_budget, args.plot)
    _emit(summary.as_dict(), args.summary)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    from . import reproduce
    targets = args.targets or ["all"]
    if args.seed is None:
        args.seed = reproduce.SEED
    seed = _seed(args)
    checks = reproduce.run(targets, args.shots, seed)
    rerun = reproduce.run(targets, args.shots, seed)
    diffs = [(a.name, a.value, b.value) for a, b in zip(checks, rerun) if a.value != b.value]
    files = reproduce.write_report(checks, args.out, not args.no_figures, args.shots, seed)
    for c in checks:
        mark = {True: "PASS", False: "FAIL", None: "INFO"}[c.passed]
        print(f"{mark:4}  {c.target:8}  {c.name:34}  {c.value!s:>14}  ref {c.reference!s:>10}  {c.tolerance}")
    if diffs:
        for name, a, b in diffs:
            print(f"non-reproducible: {name}: {a} != {b}", file=sys.stderr)
        return EXIT_MISMATCH
    print(f"report: {files['json']}")
    return EXIT_OK if reproduce.all_passed(checks) else EXIT_MISMATCH


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ionreadout", description="Ion qubit readout simulation and discrimination")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="sample detector histograms or a frame stream")
    s.add_argument("--detector", choices=["pmt", "camera"], default="pmt")
    s.add_argument("--state", choices=["bright", "dark"], default="bright")
    s.add_argument("--shots", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--model", help="detector model JSON (default: calibrated model)")
    s.add_argument("--no-depumping", action="store_true")
    s.add_argument("--out", help="histogram CSV path (default: stdout)")
    s.add_argument("--frames", help="write an NDJSON frame stream instead of a histogram")
    s.add_argument("--scheme", default="alternate", choices=["bright", "dark", "alternate", "superposition"])
    s.add_argument("--ions", type=int, default=1)
    s.add_argument("--series", help="write a simulated pulse-length scan CSV instead")
    s.add_argument("--t-pi", type=float, action="append", help="pi-time in us, one per ion (repeatable)")
    s.add_argument("--step", type=float, default=0.4, help="scan step in us")
    s.add_argument("--stop", type=float, default=1300.0, help="longest pulse in us")
    s.add_argument("--sd", choices=["sample", "model"], default="sample",
                   help="per-point sd from the shots or exact under the model")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("threshold", help="optimal threshold from two histograms")
    s.add_argument("--bright", required=True)
    s.add_argument("--dark", required=True)
    s.add_argument("--camera", action="store_true", help="warn if the threshold is at or below the bias")
    s.add_argument("--curve", help="write S(t) as CSV")
    s.add_argument("--plot", help="render S(t) to an image file")
    s.add_argument("--out")
    s.set_defaults(func=cmd_threshold)

    def thresholds(sp):
        sp.add_argument("--config", help="pipeline config JSON")
        sp.add_argument("--threshold", type=int, action="append", help="per-area threshold (repeatable)")
        sp.add_argument("--t1", type=int)
        sp.add_argument("--t2", type=int)
        sp.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("classify", help="classify an NDJSON frame file offline")
    s.add_argument("--frames", required=True)
    s.add_argument("--out")
    thresholds(s)
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("fit", help="fit a Rabi or beat series CSV")
    s.add_argument("--series", required=True)
    s.add_argument("--model", choices=["rabi", "beat"], default="rabi")
    s.add_argument("--baseline", type=float, default=0.0, help="subtract before fitting")
    s.add_argument("--plot")
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("crosstalk", help="crosstalk from area means, or predicted from the PSF")
    s.add_argument("--bright", nargs="+")
    s.add_argument("--dark", nargs="+")
    s.add_argument("--own", type=int, default=1, help="1-based area holding the ion")
    s.add_argument("--noise-floor", type=float, default=0.0)
    s.add_argument("--separation", type=float, help="ion separation in pixels (PSF prediction)")
    s.add_argument("--spike-angle", type=float, help="radians")
    s.add_argument("--out")
    s.set_defaults(func=cmd_crosstalk)

    s = sub.add_parser("schedule", help="sequence timing, throughput and latency")
    s.add_argument("--detections", type=int, default=1)
    s.add_argument("--pulses", type=float, nargs="*", default=[], help="pulse lengths in us")
    s.add_argument("--detector", choices=["pmt", "emccd"], default="emccd")
    s.add_argument("--timeline", help="timeline JSON instead of the standard sequence")
    s.add_argument("--max-rate", type=float, default=200.0)
    s.add_argument("--processing-ms", type=float, default=0.0)
    s.add_argument("--save", help="write the timeline JSON")
    s.add_argument("--plot")
    s.add_argument("--out")
    s.set_defaults(func=cmd_schedule)

    s = sub.add_parser("stream", help="run the streaming classifier")
    thresholds(s)
    s.add_argument("--frames", help="NDJSON frame file")
    s.add_argument("--listen", type=int, help="accept frames on this localhost TCP port")
    s.add_argument("--scheme", default="alternate", choices=["bright", "dark", "alternate", "superposition"])
    s.add_argument("--ions", type=int, default=1)
    s.add_argument("--shots", type=int, default=10_000)
    s.add_argument("--max-frames", type=int)
    s.add_argument("--out", help="decisions NDJSON")
    s.add_argument("--summary", help="summary JSON (default: stdout)")
    s.add_argument("--plot", help="latency histogram image")
    s.set_defaults(func=cmd_stream)

    s = sub.add_parser("reproduce", help="regenerate reference results and write a report")
    s.add_argument("targets", nargs="*", help="preparation marginals crosstalk spam schedule beat (default all)")
    s.add_argument("--out", default="reproduce-report")
    s.add_argument("--shots", type=int, default=100_000)
    s.add_argument("--seed", type=int)
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    from .fitters import FitError
    from .pipeline import PipelineError
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, FitError, PipelineError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
