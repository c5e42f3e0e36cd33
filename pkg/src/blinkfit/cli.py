"""Command-line front end.

Subcommands: simulate (write a synthetic trace), analyze (estimate
lifetimes from a trace file), train-mfr (build regression models) and
bench (run the full comparison sweep).  All randomness is seeded with a
fixed default so repeated invocations produce byte-identical artifacts.

Exit codes: 0 success, 1 usage or I/O error, 2 analysis non-convergence.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

from . import bench as bench_mod
from . import ga as ga_mod
from . import mfr as mfr_mod
from .dwell import auto_threshold, binarize, dwell_histogram, empirical_density
from .emitter import EmitterModel, generate_trace, read_trace, write_trace
from .errors import BlinkfitError
from .levmar import fit_exponential

DEFAULT_SEED = 1234

_TIME_RE = re.compile(r"^\s*([0-9.eE+-]+)\s*(ms|s)?\s*$")


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the CLI contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(self._fail(message))

    @staticmethod
    def _fail(message) -> int:
        print(f"error: {message}", file=sys.stderr)
        return 1


def parse_time(text: str) -> float:
    """Parse a duration with optional ms/s suffix into seconds."""
    match = _TIME_RE.match(text)
    if not match:
        raise argparse.ArgumentTypeError(f"cannot parse time value {text!r}")
    try:
        value = float(match.group(1))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"cannot parse time value {text!r}") from exc
    if match.group(2) == "ms":
        value *= 1e-3
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="blinkfit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write a synthetic blinking trace")
    sim.add_argument("--tau-on", type=parse_time, default="15ms")
    sim.add_argument("--tau-off", type=parse_time, default="45ms")
    sim.add_argument("--duration", type=parse_time, default="200s")
    sim.add_argument("--bin-width", type=parse_time, default="1ms")
    sim.add_argument("--noise", choices=["none", "poisson"], default="poisson")
    sim.add_argument("--seed", type=int, default=DEFAULT_SEED)
    sim.add_argument("--out", required=True, help="output CSV path (JSON sidecar alongside)")

    ana = sub.add_parser("analyze", help="estimate lifetimes from a trace file")
    ana.add_argument("--trace", required=True)
    ana.add_argument("--method", choices=list(bench_mod.METHODS), required=True)
    ana.add_argument("--model", help="MFR model base path (expects <base>_on/_off.json)")
    ana.add_argument("--ga-config", help="GaConfig JSON file")
    ana.add_argument("--seed", type=int, default=DEFAULT_SEED)
    ana.add_argument("--report", help="optional JSON report path")

    tr = sub.add_parser("train-mfr", help="train regression models on synthetic corpora")
    tr.add_argument("--tau-min", type=parse_time, default=repr(mfr_mod.DEFAULT_TAU_RANGE[0]))
    tr.add_argument("--tau-max", type=parse_time, default=repr(mfr_mod.DEFAULT_TAU_RANGE[1]))
    tr.add_argument("--count", type=int, default=mfr_mod.DEFAULT_TRAINING_SETS)
    tr.add_argument("--duration", type=parse_time, default="0.2s")
    tr.add_argument("--bin-width", type=parse_time, default="1ms")
    tr.add_argument("--seed", type=int, default=DEFAULT_SEED)
    tr.add_argument("--out", required=True, help="model base path (writes <base>_on/_off.json)")

    be = sub.add_parser("bench", help="run the estimator comparison sweep")
    be.add_argument("--scenario", default="default", help="default, fig2 or a JSON file")
    be.add_argument("--trials", type=int, default=None)
    be.add_argument("--methods", default="lm,mfr,ga")
    be.add_argument("--out", required=True, help="output directory")
    return parser


def _cmd_simulate(args) -> int:
    if args.duration < args.bin_width:
        return _Parser._fail("duration must cover at least one bin")
    model = EmitterModel(tau_on=args.tau_on, tau_off=args.tau_off)
    noise = None if args.noise == "none" else args.noise
    trace = generate_trace(model, args.duration, args.bin_width, noise, rng=args.seed)
    write_trace(trace, args.out)
    print(
        f"wrote {len(trace)} bins to {args.out} "
        f"(tau_on={args.tau_on} s, tau_off={args.tau_off} s, seed={args.seed})"
    )
    return 0


def _print_estimate(state: str, est) -> None:
    print(
        f"tau_{state}: {est.tau_hat:.6g} s  std_err: {est.std_err:.3g} s  "
        f"converged: {est.converged}"
    )


def _cmd_analyze(args) -> int:
    try:
        trace = read_trace(args.trace)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        return _Parser._fail(str(exc))

    if args.method == "mfr" and not args.model:
        return _Parser._fail("--method mfr requires --model")

    try:
        threshold = auto_threshold(trace)
        hist_on, hist_off = dwell_histogram(binarize(trace, threshold))
    except (BlinkfitError, ValueError) as exc:
        print(f"analysis failed: {exc}", file=sys.stderr)
        return 2

    estimates = {}
    for state, hist in (("on", hist_on), ("off", hist_off)):
        try:
            if args.method == "lm":
                estimates[state] = fit_exponential(empirical_density(hist))
            elif args.method == "mfr":
                model = mfr_mod.MfrModel.load(f"{args.model}_{state}.json")
                if trace.bin_width != model.bin_width:
                    print(
                        f"warning: model bin width {model.bin_width} s differs from "
                        f"trace bin width {trace.bin_width} s",
                        file=sys.stderr,
                    )
                estimates[state] = mfr_mod.estimate(model, hist, trace.duration)
            else:
                if args.ga_config:
                    cfg = ga_mod.GaConfig.from_json(args.ga_config)
                else:
                    cfg = ga_mod.GaConfig(tau_range=bench_mod.DEFAULT_GA_TAU_RANGE)
                seed = bench_mod.stable_seed(args.seed, "ga", state)
                estimates[state] = ga_mod.run_ga(hist, cfg, rng=seed)
        except OSError as exc:
            return _Parser._fail(str(exc))
        except (BlinkfitError, ValueError) as exc:
            print(f"analysis failed for {state} state: {exc}", file=sys.stderr)
            estimates[state] = None

    all_converged = True
    report = {"method": args.method, "seed": args.seed, "threshold": threshold}
    for state, est in estimates.items():
        if est is None:
            all_converged = False
            report[f"tau_{state}_s"] = None
            continue
        _print_estimate(state, est)
        all_converged &= est.converged
        report[f"tau_{state}_s"] = est.tau_hat
        report[f"tau_{state}_std_err_s"] = est.std_err
        report[f"{state}_converged"] = est.converged
    if trace.truth is not None:
        print(f"sidecar truth: tau_on={trace.truth[0]} s tau_off={trace.truth[1]} s")
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0 if all_converged else 2


def _cmd_train_mfr(args) -> int:
    if not 0 < args.tau_min < args.tau_max:
        return _Parser._fail("need 0 < --tau-min < --tau-max")
    if args.count < 1:
        return _Parser._fail("--count must be at least 1")
    if args.count < 5:
        print(
            f"warning: {args.count} training sets leave the regression almost "
            "entirely to the ridge prior",
            file=sys.stderr,
        )
    corpus_on, corpus_off = mfr_mod.generate_training_corpus(
        (args.tau_min, args.tau_max),
        args.count,
        args.duration,
        bin_width=args.bin_width,
        rng=args.seed,
    )
    for state, corpus in (("on", corpus_on), ("off", corpus_off)):
        model = mfr_mod.train_model(
            corpus, bin_width=args.bin_width, trained_duration=args.duration
        )
        path = f"{args.out}_{state}.json"
        model.save(path)
        print(f"wrote {path} (n={model.n}, duration={args.duration} s)")
    return 0


def _load_scenario(spec: str, trials: int | None) -> bench_mod.Scenario:
    overrides = {} if trials is None else {"trials_per_cell": trials}
    if spec == "default":
        return bench_mod.default_scenario(**overrides)
    if spec == "fig2":
        return bench_mod.fig2_scenario(**overrides)
    payload = json.loads(Path(spec).read_text())
    payload.update(overrides)
    if "durations" in payload:
        payload["durations"] = tuple(payload["durations"])
    return bench_mod.Scenario(**payload)


def _cmd_bench(args) -> int:
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        return _Parser._fail(f"output directory not writable: {exc}")
    try:
        scenario = _load_scenario(args.scenario, args.trials)
    except (OSError, ValueError, TypeError, json.JSONDecodeError) as exc:
        return _Parser._fail(f"bad scenario: {exc}")
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    for m in methods:
        if m not in bench_mod.METHODS:
            return _Parser._fail(f"unknown method {m!r}")

    models = None
    if "mfr" in methods:
        print("training MFR models per duration ...")
        models = bench_mod.train_mfr_models(scenario)
    cells = bench_mod.sweep(scenario, methods, models=models)
    bench_mod.write_results_csv(cells, out_dir / "results.csv")
    bench_mod.write_heatmap_csv(cells, "on", out_dir / "heatmap_on.csv")
    bench_mod.write_heatmap_csv(cells, "off", out_dir / "heatmap_off.csv")
    print(bench_mod.summary_table(cells))
    print(f"wrote {out_dir}/results.csv and heatmap CSVs")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {
        "simulate": _cmd_simulate,
        "analyze": _cmd_analyze,
        "train-mfr": _cmd_train_mfr,
        "bench": _cmd_bench,
    }
    return handlers[args.command](args)


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
