"""``dronesense`` command line: calibrate, simulate, sweep, quickest, check.

Exit codes: 0 success, 1 parse/validation error (or failed check),
2 infeasible constraints or failed calibration, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import __version__, rng
from .config import ConfigError, load
from .detectors import (
    CalibrationError,
    CalibrationReport,
    InfeasibleConstraints,
    Scheme,
    _genie_prior,
    compute_regions,
    detector_from_offsets,
)
from .eval import run_trials, sweep_sensors_samples, sweep_tradeoff
from .fusion import HardFusionDetector, _HardRates, calibrate_fusion, fusion_label
from .output import check_file, confusion_rows, grid_rows, quickest_rows, tradeoff_rows, write_outputs
from .quickest import run_length_metrics
from .signal import Hypothesis

EXIT_OK, EXIT_VALIDATION, EXIT_INFEASIBLE, EXIT_IO = 0, 1, 2, 3
OUT_ENV = "DRONESENSE_OUT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _jnum(x):
    """JSON-safe float: non-finite values become '+inf', '-inf' or 'nan'."""
    if x is None:
        return None
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "+inf" if x > 0 else "-inf"
    return x


def _offset(s):
    try:
        return float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {s!r}") from None


def _regions_json(regions):
    return [{"lower": _jnum(r.lower), "upper": _jnum(r.upper), "hypothesis": Hypothesis(r.hypothesis).short}
            for r in regions]


def _emit(obj):
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _scenario(args):
    cfg = load(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    trials = args.trials
    if trials is not None and trials < 1:
        raise ConfigError("must be >= 1", "--trials")
    return cfg, seed, trials


def _out_dir(args):
    return Path(args.out or os.environ.get(OUT_ENV) or "dronesense_out")


def _base_manifest(cfg, command, seed, trials):
    return dict(cfg.manifest(), tool="dronesense", version=__version__, command=command, seed=seed, trials=trials)


def _detector(cfg, seed, trials, offsets=None):
    if offsets is None:
        return calibrate_fusion(cfg.model, cfg.network, cfg.scheme, cfg.constraints, cfg.rule, cfg.method,
                                seed=seed, truth=cfg.truth, trials=trials)
    o0, o1 = offsets
    if cfg.rule.is_hard:
        cfg.rule.check(cfg.network.sensor_count)
        genie = _genie_prior(cfg.truth) if cfg.scheme is Scheme.GENIE else None
        conf = _HardRates(cfg.model, cfg.network.per_sensor_gain, cfg.scheme, genie, cfg.truth,
                          cfg.rule).confusion(o0, o1)
        report = CalibrationReport("given", 1 - conf[0, 0], 1 - conf[1, 1], conf[2, 2], solver="none")
        return HardFusionDetector(cfg.scheme, cfg.model, cfg.network.per_sensor_gain, o0, o1, cfg.rule, genie,
                                  report)
    return detector_from_offsets(cfg.model, cfg.network, cfg.scheme, o0, o1, cfg.truth)


def _report_json(det):
    rep = det.report
    out = {
        "scheme": det.scheme.value,
        "fusion_rule": fusion_label(det),
        "offset_h0": _jnum(det.offset_h0),
        "offset_h1": _jnum(det.offset_h1),
    }
    if isinstance(det, HardFusionDetector):
        out["local_regions"] = {
            repr(g): _regions_json(compute_regions(det.model, g, det.scheme, det.genie_p2, det.offset_h0,
                                                   det.offset_h1))
            for g in sorted(set(det.gains))
        }
    else:
        out["regions"] = _regions_json(det.regions)
        out["region_statistic"] = "mean block energy over all sensors"
    if rep is not None:
        out.update(
            method=rep.method,
            solver=rep.solver,
            iterations=rep.iterations,
            calibration_trials=rep.trials,
            achieved_fa_h0=_jnum(rep.fa_h0),
            achieved_fa_h1=_jnum(rep.fa_h1),
            p_h2_given_h2=_jnum(rep.p_h2),
            half_width_fa_h0=_jnum(rep.half_width_h0),
            half_width_fa_h1=_jnum(rep.half_width_h1),
            half_width_p_h2=_jnum(rep.half_width_h2),
        )
    return out


def cmd_calibrate(args):
    cfg, seed, trials = _scenario(args)
    offsets = None
    if (args.offset_h0 is None) != (args.offset_h1 is None):
        raise ConfigError("give both --offset-h0 and --offset-h1 or neither", "--offset-h0")
    if args.offset_h0 is not None:
        offsets = (args.offset_h0, args.offset_h1)
    det = _detector(cfg, seed, trials or cfg.trials, offsets)
    out = _report_json(det)
    out["constraints"] = {"alpha": cfg.constraints.alpha, "beta": cfg.constraints.beta}
    _emit(out)
    return EXIT_OK


def cmd_simulate(args):
    cfg, seed, trials = _scenario(args)
    trials = trials or cfg.trials
    det = _detector(cfg, seed, max(trials, 100_000))
    cm = run_trials(cfg.model, cfg.network, det, trials, seed, cfg.truth)
    man = _base_manifest(cfg, "simulate", seed, trials)
    path = write_outputs(_out_dir(args), "confusion", confusion_rows(cm), man)
    _emit({"file": str(path), "entries": cm.entries, "trial_counts": cm.trial_counts,
           "achieved_fa_h0": cm.fa_h0, "achieved_fa_h1": cm.fa_h1, "p_h2_given_h2": cm.p_h2,
           "calibration": _report_json(det)})
    return EXIT_OK


def cmd_sweep(args):
    cfg, seed, trials = _scenario(args)
    trials = trials or cfg.trials
    if args.sweep == "tradeoff":
        res = sweep_tradeoff(cfg.model, cfg.network, cfg.schemes, cfg.alpha_beta_grid, cfg.tradeoff_samples,
                             trials, seed, cfg.truth, cfg.method, cfg.rule)
        rows = tradeoff_rows(res)
        grids = {"alpha_beta": list(cfg.alpha_beta_grid), "n_samples": list(cfg.tradeoff_samples)}
        man = dict(_base_manifest(cfg, "sweep tradeoff", seed, trials), schemes=list(cfg.schemes), grids=grids)
    else:
        res = sweep_sensors_samples(cfg.model, cfg.network, cfg.grid_sensors, cfg.grid_samples, cfg.constraints,
                                    cfg.scheme, cfg.rule, trials, seed, cfg.truth, cfg.method)
        rows = grid_rows(res)
        grids = {"m_sensors": list(cfg.grid_sensors), "n_samples": list(cfg.grid_samples)}
        man = dict(_base_manifest(cfg, "sweep grid", seed, trials), grids=grids)
    path = write_outputs(_out_dir(args), args.sweep, rows, man)
    errors = [{"scheme": p.scheme, "alpha_beta": p.alpha_beta, "n_samples": p.n_samples,
               "m_sensors": p.m_sensors, "error": p.error} for p in res.points if p.error]
    _emit({"file": str(path), "points": len(res.points), "errors": errors})
    return EXIT_OK


def cmd_quickest(args):
    cfg, seed, trials = _scenario(args)
    q = cfg.quickest
    trials = trials or q.trials
    if trials < 100:
        raise ConfigError("must be >= 100 for quickest", "--trials")
    gain = next(g for g in cfg.network.per_sensor_gain if g > 0)
    metrics = [run_length_metrics(cfg.model, h, q.change_time, trials, seed, gain, q.post_change_power)
               for h in q.thresholds]
    man = dict(_base_manifest(cfg, "quickest", seed, trials), grids={"threshold_h": list(q.thresholds)},
               change_time=q.change_time, post_change_power=q.post_change_power, gain=gain)
    path = write_outputs(_out_dir(args), "quickest", quickest_rows(metrics), man)
    _emit({"file": str(path), "rows": [
        {"threshold_h": m.threshold_h, "arl": m.average_run_length, "delay": m.average_detection_delay,
         "censored": m.censored, "false_alarms_before_change": m.false_alarms_before_change} for m in metrics]})
    return EXIT_OK


def cmd_check(args):
    target = Path(args.path)
    if not target.exists():
        raise FileNotFoundError(f"no such file or directory: {target}")
    files = sorted(target.glob("*.csv")) if target.is_dir() else [target]
    if not files:
        raise ConfigError("no CSV files to check", str(target))
    report, ok = [], True
    for f in files:
        kind, results = check_file(f)
        ok &= all(r.passed for r in results)
        report.append({"file": str(f), "kind": kind,
                       "checks": [{"name": r.name, "passed": r.passed, "detail": r.detail} for r in results]})
    _emit({"passed": ok, "files": report})
    return EXIT_OK if ok else EXIT_VALIDATION


def build_parser():
    p = _Parser(prog="dronesense", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"dronesense {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scenario(name, help):
        s = sub.add_parser(name, help=help)
        s.add_argument("config", help="scenario configuration file")
        s.add_argument("--seed", type=int, help="override experiment.seed")
        s.add_argument("--trials", type=int, help="override the trial count")
        s.add_argument("--threads", type=int, help="worker threads for the simulation kernels")
        s.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./dronesense_out)")
        return s

    c = scenario("calibrate", "calibrate thresholds and print the report")
    c.add_argument("--offset-h0", type=_offset, help="use this H0 offset instead of calibrating ('+inf' ok)")
    c.add_argument("--offset-h1", type=_offset, help="use this H1 offset instead of calibrating")
    c.set_defaults(func=cmd_calibrate)
    scenario("simulate", "calibrate, then estimate the confusion matrix").set_defaults(func=cmd_simulate)
    s = scenario("sweep", "detection probability sweeps")
    s.add_argument("--sweep", choices=("tradeoff", "grid"), default="tradeoff")
    s.set_defaults(func=cmd_sweep)
    scenario("quickest", "CUSUM run-length metrics").set_defaults(func=cmd_quickest)
    k = sub.add_parser("check", help="re-check emitted CSV files")
    k.add_argument("path", help="CSV file or directory of CSV files")
    k.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "threads", None) is not None:
            if args.threads < 1:
                raise ConfigError("must be >= 1", "--threads")
            rng.set_threads(args.threads)
        return args.func(args)
    except (InfeasibleConstraints, CalibrationError) as exc:
        print(f"dronesense: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConfigError as exc:
        print(f"dronesense: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"dronesense: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"dronesense: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
