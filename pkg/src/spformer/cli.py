"""Experiment runner.

Subcommands:
    run          train one model on one benchmark, emit report + artifacts
    sweep        run a Cartesian grid of config overrides, pick best rMAE
    compare      merge run reports into a comparison table CSV
    count-params parameter counts and FLOP estimates per architecture
    band-report  spectral band errors from an emitted heatmap CSV

Configuration is a flat INI file (``key = value`` under sections), with
every value overridable from the command line via ``--set section.key=v``.
Built-in defaults reproduce the benchmark baselines, so ``spformer run
--problem reaction1d --arch s_pformer`` works with no config file at all.

Exit codes: 0 success, 1 usage error, 2 training failure, 3 I/O error.
The environment variable ``SPFORMER_OUTPUT_ROOT`` reroots relative output
directories.
"""

import argparse
import configparser
import csv
import itertools
import json
import os
import subprocess
import sys
import time

import numpy as np

from . import __version__, analysis, data as data_mod
from .nn import (ModelConfig, build_model, flop_estimate, parameter_count,
                 save_checkpoint)
from .pde import (analytical_solution, get_problem, make_sequences, predict,
                  PROBLEM_NAMES)
from .training import TrainConfig, prepare_ns_batches, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_TRAINING = 2
EXIT_IO = 3

OUTPUT_ROOT_ENV = "SPFORMER_OUTPUT_ROOT"
EVAL_POINTS = 101

ARCHITECTURES = ("mlp", "pformer", "do_pformer", "s_pformer")


class UsageError(Exception):
    pass


class TrainingFailure(Exception):
    pass


# -- configuration ------------------------------------------------------------

# schema: section -> key -> (type, default); None defaults mean "decided
# later" (per-problem / per-architecture resolution)
_SCHEMA = {
    "run": {
        "problem": (str, "convection"),
        "arch": (str, "s_pformer"),
        "iterations": (int, 1000),
        "seed": (int, 0),
        "k": (int, None),
        "dt": (float, 1e-4),
        "output": (str, None),
    },
    "model": {
        "d_emb": (int, 32),
        "d_hidden": (int, 512),
        "d_ff": (int, 256),
        "d_mapping": (int, 64),
        "n_layers": (int, None),
        "n_heads": (int, 2),
    },
    "collocation": {
        "n_x": (int, None),
        "n_t": (int, None),
        "n_ic": (int, None),
        "n_bc": (int, None),
    },
    "ntk": {
        "period": (int, 50),
        "cap": (int, 256),
    },
    "ns": {
        "dataset": (str, ""),
        "points": (int, 2500),
        "test_time": (float, 20.0),
    },
}


def _coerce(section, key, raw):
    try:
        typ, _ = _SCHEMA[section][key]
    except KeyError:
        raise UsageError(f"unknown config key [{section}] {key}") from None
    try:
        return typ(raw)
    except (TypeError, ValueError):
        raise UsageError(
            f"bad value for [{section}] {key}: {raw!r} "
            f"(expected {typ.__name__})") from None


def default_config():
    return {sec: {k: d for k, (_, d) in keys.items()}
            for sec, keys in _SCHEMA.items()}


def read_config_file(path):
    """Parse an INI config into the schema dict; unknown keys are errors."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh, source=path)
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise UsageError(f"malformed config {path}: {exc}") from None
    out = {}
    for section in parser.sections():
        if section == "sweep":
            out.setdefault("sweep", {})
            for key, raw in parser.items(section):
                out["sweep"][key] = raw
            continue
        if section not in _SCHEMA:
            raise UsageError(f"unknown config section [{section}] in {path}")
        for key, raw in parser.items(section):
            out.setdefault(section, {})[key] = _coerce(section, key, raw)
    return out


def resolve_config(file_cfg=None, overrides=None):
    """Defaults, then file values, then ``section.key=value`` overrides."""
    cfg = default_config()
    for section, keys in (file_cfg or {}).items():
        if section == "sweep":
            continue
        cfg[section].update(keys)
    for spec in overrides or []:
        if "=" not in spec or "." not in spec.split("=", 1)[0]:
            raise UsageError(f"override must look like section.key=value: {spec!r}")
        dotted, raw = spec.split("=", 1)
        section, key = dotted.split(".", 1)
        if section not in _SCHEMA:
            raise UsageError(f"unknown config section {section!r}")
        cfg[section][key] = _coerce(section, key, raw.strip())
    _fill_problem_defaults(cfg)
    _validate(cfg)
    return cfg


def _fill_problem_defaults(cfg):
    problem, arch = cfg["run"]["problem"], cfg["run"]["arch"]
    mlp = arch == "mlp"
    if cfg["run"]["k"] is None:
        cfg["run"]["k"] = 1 if mlp else 5
    dense = EVAL_POINTS if mlp else 51
    for key in ("n_x", "n_t", "n_ic", "n_bc"):
        if cfg["collocation"][key] is None:
            cfg["collocation"][key] = dense
    if cfg["run"]["output"] is None:
        cfg["run"]["output"] = os.path.join(
            "runs", f"{problem}_{arch}_seed{cfg['run']['seed']}")


def _validate(cfg):
    problem = cfg["run"]["problem"]
    if problem not in PROBLEM_NAMES:
        raise UsageError(
            f"unknown problem {problem!r}; choose from {sorted(PROBLEM_NAMES)}")
    arch = cfg["run"]["arch"]
    if arch not in ARCHITECTURES:
        raise UsageError(
            f"unknown architecture {arch!r}; choose from {list(ARCHITECTURES)}")
    if cfg["run"]["iterations"] < 0:
        raise UsageError("iterations must be >= 0")
    if cfg["run"]["k"] < 1:
        raise UsageError("k must be >= 1")
    if problem == "ns2d" and not cfg["ns"]["dataset"]:
        raise UsageError("ns2d needs [ns] dataset = <path> (see data module docs)")


def _output_dir(cfg):
    path = cfg["run"]["output"]
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        path = os.path.join(root, path)
    return path


def _model_config(cfg, problem):
    run, model = cfg["run"], cfg["model"]
    return ModelConfig(architecture=run["arch"], d_in=problem.d_in,
                       d_out=problem.d_out, seed=run["seed"], **model)


# -- run ----------------------------------------------------------------------


def _version_string():
    try:
        here = os.path.dirname(os.path.abspath(__file__))
        head = subprocess.run(["git", "rev-parse", "--short", "HEAD"],
                              cwd=here, capture_output=True, text=True,
                              timeout=5)
        if head.returncode == 0:
            return f"{__version__}+g{head.stdout.strip()}"
    except OSError:
        pass
    return __version__


def _write_heatmap(path, xs, ts, pred, truth):
    """Long-form grid CSV, x-major row order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "t", "pred", "true", "abs_error"])
        for i, x in enumerate(xs):
            for j, t in enumerate(ts):
                p, tr = float(pred[i, j]), float(truth[i, j])
                w.writerow([repr(float(x)), repr(float(t)), repr(p), repr(tr),
                            repr(abs(p - tr))])


def read_heatmap(path):
    """Inverse of the heatmap writer; returns (xs, ts, pred, truth)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["x", "t", "pred", "true", "abs_error"]:
        raise ValueError(f"{path}: not a heatmap CSV")
    body = np.array([[float(v) for v in rec[:4]] for rec in rows[1:]])
    xs = np.unique(body[:, 0])
    ts = np.unique(body[:, 1])
    if body.shape[0] != xs.size * ts.size:
        raise ValueError(f"{path}: rows do not form a full grid")
    order = np.lexsort((body[:, 1], body[:, 0]))  # x-major
    pred = body[order, 2].reshape(xs.size, ts.size)
    truth = body[order, 3].reshape(xs.size, ts.size)
    return xs, ts, pred, truth


def _eval_analytic(problem, model, k, dt, out_dir):
    (x_lo, x_hi), (t_lo, t_hi) = problem.bounds
    xs = np.linspace(x_lo, x_hi, EVAL_POINTS)
    ts = np.linspace(t_lo, t_hi, EVAL_POINTS)
    xg, tg = np.meshgrid(xs, ts, indexing="ij")
    points = np.column_stack([xg.ravel(), tg.ravel()])
    pred = predict(problem, model, points, k=k, dt=dt)[:, 0]
    truth = analytical_solution(problem, xg.ravel(), tg.ravel())
    pred_grid = pred.reshape(EVAL_POINTS, EVAL_POINTS)
    truth_grid = truth.reshape(EVAL_POINTS, EVAL_POINTS)
    _write_heatmap(os.path.join(out_dir, "heatmap.csv"),
                   xs, ts, pred_grid, truth_grid)
    metrics = {"rmae": analysis.rmae(pred_grid, truth_grid),
               "rmse": analysis.rmse(pred_grid, truth_grid)}
    bands = None
    if problem.name == "convection":
        bands = analysis.band_errors(
            analysis.FieldGrid(xs, ts, pred_grid),
            analysis.FieldGrid(xs, ts, truth_grid))
        analysis.write_band_report(os.path.join(out_dir, "bands.csv"), bands)
        metrics["bands"] = {b.label: b.mae for b in bands}
    return metrics


def _ns_predict_fields(problem, model, pts, k, dt, chunk=256):
    """u, v, p at raw (x, y, t) points (velocities need the tape)."""
    us, vs, ps = [], [], []
    for i in range(0, len(pts), chunk):
        seqs = make_sequences(pts[i:i + chunk], k, dt)
        u, v, p = problem.velocity_pressure(model, seqs)
        us.append(u.data[:, 0, 0].copy())
        vs.append(v.data[:, 0, 0].copy())
        ps.append(p.data[:, 0, 0].copy())
    return np.concatenate(us), np.concatenate(vs), np.concatenate(ps)


def _eval_ns(problem, model, dataset, cfg, out_dir):
    t_test = cfg["ns"]["test_time"]
    coords, u_true, v_true, p_true = data_mod.test_slice(dataset, t_test)
    pts = np.column_stack([coords[:, 0], coords[:, 1],
                           np.full(len(coords), t_test)])
    u_pred, v_pred, p_raw = _ns_predict_fields(
        problem, model, pts, cfg["run"]["k"], cfg["run"]["dt"])
    p_pred, offset = analysis.pressure_offset(p_raw, p_true)
    with open(os.path.join(out_dir, "ns_slice.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "u_pred", "u_true", "v_pred", "v_true",
                    "p_pred", "p_true"])
        for row in zip(coords[:, 0], coords[:, 1], u_pred, u_true,
                       v_pred, v_true, p_pred, p_true):
            w.writerow([repr(float(v)) for v in row])
    return {
        "rmae_u": analysis.rmae(u_pred, u_true),
        "rmae_v": analysis.rmae(v_pred, v_true),
        "rmae_p": analysis.rmae(p_pred, p_true),
        "rmse_p": analysis.rmse(p_pred, p_true),
        "pressure_offset": offset,
        "test_time": t_test,
    }


def run_experiment(cfg):
    """Train + evaluate one configuration; returns (report, out_dir)."""
    problem = get_problem(cfg["run"]["problem"])
    out_dir = _output_dir(cfg)
    os.makedirs(out_dir, exist_ok=True)

    dataset = None
    checkpoint_extra = None
    if problem.name == "ns2d":
        dataset = data_mod.load_ns_dataset(cfg["ns"]["dataset"])
        problem.bounds = data_mod.domain_bounds(dataset)
        checkpoint_extra = {"bounds": [list(b) for b in problem.bounds]}

    model = build_model(_model_config(cfg, problem))
    tc = TrainConfig(
        iterations=cfg["run"]["iterations"],
        ntk_period=cfg["ntk"]["period"],
        ntk_cap=cfg["ntk"]["cap"],
        k=cfg["run"]["k"],
        dt=cfg["run"]["dt"],
        n_x=cfg["collocation"]["n_x"],
        n_t=cfg["collocation"]["n_t"],
        n_ic=cfg["collocation"]["n_ic"],
        n_bc=cfg["collocation"]["n_bc"],
        seed=cfg["run"]["seed"],
        trace_path=os.path.join(out_dir, "trace.csv"),
    )

    batches = None
    if dataset is not None:
        grid = data_mod.build_st_grid(dataset)
        subset = data_mod.sample_training_points(
            grid, cfg["ns"]["points"], seed=cfg["run"]["seed"])
        batches = prepare_ns_batches(subset.inputs, subset.targets,
                                     tc.k, tc.dt)

    t0 = time.time()
    state = train(model, problem, tc, data=batches)
    wall = time.time() - t0
    save_checkpoint(model, os.path.join(out_dir, "checkpoint.npz"),
                    extra=checkpoint_extra)

    if state.status == "aborted_nonfinite":
        report = {
            "version": _version_string(),
            "status": state.status,
            "diagnostics": state.diagnostics,
            "config": cfg,
        }
        _write_report(out_dir, report)
        raise TrainingFailure(
            f"training aborted with non-finite loss "
            f"(diagnostics: {state.diagnostics}); report in {out_dir}")

    if dataset is not None:
        metrics = _eval_ns(problem, model, dataset, cfg, out_dir)
    else:
        metrics = _eval_analytic(problem, model, tc.k, tc.dt, out_dir)

    mc = model.config
    report = {
        "version": _version_string(),
        "problem": problem.name,
        "architecture": cfg["run"]["arch"],
        "status": state.status,
        "metrics": metrics,
        "n_params": parameter_count(mc),
        "flop_estimate": flop_estimate(mc, tc.k),
        "final_loss": state.diagnostics.get("final_loss"),
        "iterations_run": state.diagnostics.get("iterations_run"),
        "wall_seconds": round(wall, 3),
        "config": cfg,
    }
    _write_report(out_dir, report)
    return report, out_dir


def _write_report(out_dir, report):
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- sweep --------------------------------------------------------------------


def parse_grid(specs):
    """``section.key=v1,v2`` strings -> ordered (section, key, [values])."""
    axes = []
    for spec in specs:
        if "=" not in spec or "." not in spec.split("=", 1)[0]:
            raise UsageError(f"grid axis must look like section.key=v1,v2: {spec!r}")
        dotted, raw = spec.split("=", 1)
        section, key = dotted.split(".", 1)
        values = [v.strip() for v in raw.split(",") if v.strip()]
        if not values:
            raise UsageError(f"grid axis {dotted} has no values")
        axes.append((section, key, values))
    if not axes:
        raise UsageError("sweep needs at least one grid axis")
    return axes


def run_sweep(base_cfg_sources, grid_axes, sweep_dir):
    file_cfg, overrides = base_cfg_sources
    axes = [(s, k, vals) for s, k, vals in grid_axes]
    combos = list(itertools.product(*[vals for _, _, vals in axes]))
    reports = []
    os.makedirs(sweep_dir, exist_ok=True)
    for idx, combo in enumerate(combos):
        extra = [f"{s}.{k}={v}" for (s, k, _), v in zip(axes, combo)]
        cfg = resolve_config(file_cfg, list(overrides) + extra)
        tag = "_".join(f"{k}{v}" for (_, k, _), v in zip(axes, combo))
        cfg["run"]["output"] = os.path.join(sweep_dir, f"run{idx:03d}_{tag}")
        report, out_dir = run_experiment(cfg)
        reports.append({"index": idx, "overrides": extra,
                        "rmae": _headline_rmae(report),
                        "report": os.path.join(out_dir, "report.json")})
    best = min(reports, key=lambda r: r["rmae"])
    summary = {"best": best, "runs": reports}
    with open(os.path.join(sweep_dir, "sweep.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _headline_rmae(report):
    m = report["metrics"]
    return m["rmae"] if "rmae" in m else m["rmae_p"]


# -- compare ------------------------------------------------------------------


def compare_reports(paths, out_fh):
    rows = []
    for path in paths:
        try:
            with open(path) as fh:
                rep = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise FileNotFoundError(f"cannot read report {path}: {exc}") from exc
        try:
            rows.append((rep["problem"], rep["architecture"],
                         _headline_rmae(rep),
                         rep["metrics"].get("rmse", rep["metrics"].get("rmse_p")),
                         rep["n_params"], rep["wall_seconds"]))
        except KeyError as exc:
            raise FileNotFoundError(
                f"report {path} is missing field {exc}") from None
    rows.sort(key=lambda r: (r[0], r[1]))
    w = csv.writer(out_fh)
    w.writerow(["problem", "model", "rmae", "rmse", "params", "seconds"])
    for problem, model, rmae_v, rmse_v, params, secs in rows:
        w.writerow([problem, model, repr(rmae_v), repr(rmse_v), params,
                    repr(secs)])


# -- entry points -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 1
        raise UsageError(message)


def build_parser():
    ap = _Parser(prog="spformer", description=__doc__,
                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--set", action="append", default=[], metavar="S.K=V",
                       dest="overrides", help="override one config value")
        p.add_argument("--problem", help="shorthand for --set run.problem=...")
        p.add_argument("--arch", help="shorthand for --set run.arch=...")
        p.add_argument("--iterations", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--output")

    p_run = sub.add_parser("run", help="train one model on one benchmark")
    add_config_args(p_run)

    p_sweep = sub.add_parser("sweep", help="grid of runs, best rMAE wins")
    add_config_args(p_sweep)
    p_sweep.add_argument("--grid", action="append", default=[],
                         metavar="S.K=V1,V2", help="one sweep axis")
    p_sweep.add_argument("--sweep-dir", default="runs/sweep")

    p_cmp = sub.add_parser("compare", help="merge reports into a table")
    p_cmp.add_argument("reports", nargs="+", help="report.json paths")
    p_cmp.add_argument("--out", default="-", help="output CSV ('-' = stdout)")

    p_cnt = sub.add_parser("count-params", help="parameter counts per arch")
    p_cnt.add_argument("--arch", default="all",
                       help="one architecture or 'all'")
    p_cnt.add_argument("--k", type=int, default=5,
                       help="sequence length for the FLOP estimate")
    p_cnt.add_argument("--set", action="append", default=[], metavar="S.K=V",
                       dest="overrides", help="model config override")

    p_band = sub.add_parser("band-report",
                            help="band errors from a heatmap CSV")
    src = p_band.add_mutually_exclusive_group(required=True)
    src.add_argument("--run-dir", help="run directory containing heatmap.csv")
    src.add_argument("--heatmap", help="explicit heatmap CSV path")
    p_band.add_argument("--out", default="-", help="output CSV ('-' = stdout)")
    return ap


def _merge_flag_overrides(args):
    overrides = list(args.overrides)
    for flag, dotted in (("problem", "run.problem"), ("arch", "run.arch"),
                         ("iterations", "run.iterations"), ("seed", "run.seed"),
                         ("output", "run.output")):
        val = getattr(args, flag, None)
        if val is not None:
            overrides.append(f"{dotted}={val}")
    return overrides


def _cmd_run(args):
    file_cfg = read_config_file(args.config) if args.config else None
    cfg = resolve_config(file_cfg, _merge_flag_overrides(args))
    report, out_dir = run_experiment(cfg)
    headline = _headline_rmae(report)
    print(f"{cfg['run']['problem']}/{cfg['run']['arch']}: "
          f"rmae={headline:.6g} status={report['status']} -> {out_dir}")
    return EXIT_OK


def _cmd_sweep(args):
    file_cfg = read_config_file(args.config) if args.config else None
    grid_specs = list(args.grid)
    if file_cfg and "sweep" in file_cfg:
        grid_specs = [f"{k}={v}" for k, v in file_cfg["sweep"].items()] + grid_specs
    axes = parse_grid(grid_specs)
    sweep_dir = args.sweep_dir
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(sweep_dir):
        sweep_dir = os.path.join(root, sweep_dir)
    summary = run_sweep((file_cfg, _merge_flag_overrides(args)), axes, sweep_dir)
    best = summary["best"]
    print(f"best: run {best['index']} rmae={best['rmae']:.6g} "
          f"({' '.join(best['overrides'])})")
    return EXIT_OK


def _cmd_compare(args):
    if args.out == "-":
        compare_reports(args.reports, sys.stdout)
    else:
        with open(args.out, "w", newline="") as fh:
            compare_reports(args.reports, fh)
    return EXIT_OK


def _cmd_count_params(args):
    archs = ARCHITECTURES if args.arch == "all" else (args.arch,)
    for arch in archs:
        if arch not in ARCHITECTURES:
            raise UsageError(
                f"unknown architecture {arch!r}; choose from {list(ARCHITECTURES)}")
    model_overrides = {}
    for spec in args.overrides:
        if "=" not in spec or not spec.startswith("model."):
            raise UsageError(f"count-params overrides use model.key=value: {spec!r}")
        dotted, raw = spec.split("=", 1)
        key = dotted.split(".", 1)[1]
        model_overrides[key] = _coerce("model", key, raw)
    w = csv.writer(sys.stdout)
    w.writerow(["architecture", "params", f"flops_k{args.k}"])
    for arch in archs:
        mc = ModelConfig(architecture=arch, **model_overrides)
        w.writerow([arch, parameter_count(mc), flop_estimate(mc, args.k)])
    return EXIT_OK


def _cmd_band_report(args):
    path = args.heatmap or os.path.join(args.run_dir, "heatmap.csv")
    xs, ts, pred, truth = read_heatmap(path)
    bands = analysis.band_errors(analysis.FieldGrid(xs, ts, pred),
                                 analysis.FieldGrid(xs, ts, truth))
    if args.out == "-":
        w = csv.writer(sys.stdout)
        w.writerow(["band", "f_lo", "f_hi", "mae"])
        for b in bands:
            w.writerow([b.label, repr(b.f_lo), repr(b.f_hi), repr(b.mae)])
    else:
        analysis.write_band_report(args.out, bands)
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "compare": _cmd_compare,
    "count-params": _cmd_count_params,
    "band-report": _cmd_band_report,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingFailure as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    # DatasetFormatError subclasses ValueError, so file problems must be
    # routed before the generic usage-error fallback
    except (FileNotFoundError, data_mod.DatasetFormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
