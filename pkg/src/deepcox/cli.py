"""``deepcox`` command-line entry point.

Every subcommand reads a JSON config (``--config``) and writes into an output
directory (``--out``).  Relative paths inside a config are resolved against
the config file's directory.  Outputs contain no timestamps, so reruns with the
same config and seed overwrite them byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import _seeding
from .data import N_COVARIATES, SimulationSpec, calibrated_rate, generate_case, load_dataset, save_dataset, true_risk, truncated_normal
from .ensemble import ensemble_predict, fit_ensemble, load_model, save_model, subsample_size
from .errors import DeepCoxError, InvalidArgumentError, ParseError
from .inference import (
    RateParams,
    alpha_range,
    format_alpha_report,
    infer_contrasts,
    infer_points,
    relative_risk_interval,
    single_overlap_cov_mc,
)
from .net import NetworkConfig, predict_g
from .study import StudyConfig, run_monte_carlo
from .trainer import TrainConfig, train

log = logging.getLogger("deepcox")

COMMANDS = ("simulate", "fit", "predict", "infer", "alpha-range", "benchmark", "oracle-zeta")


class ConfigError(DeepCoxError):
    pass


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top-level JSON value must be an object")
    return cfg


def _path(cfg, key, base):
    if key not in cfg:
        raise ConfigError(f"config is missing required key {key!r}")
    p = Path(cfg[key])
    return p if p.is_absolute() else base / p


def load_query(path):
    """Query points as ``(ids, X)``; an ``x_id`` first column is optional."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"query file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty query file", 1)
    header = [h.strip() for h in rows[0]]
    has_id = header[0] == "x_id"
    ids, X = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}: expected {len(header)} fields, got {len(row)}", lineno)
        try:
            vals = [float(v) for v in row[1:]] if has_id else [float(v) for v in row]
        except ValueError:
            raise ParseError(f"{path}: non-numeric covariate", lineno) from None
        ids.append(row[0] if has_id else str(len(ids)))
        X.append(vals)
    return ids, np.array(X, dtype=np.float64).reshape(len(X), -1)


def _seed(cfg, args):
    return args.seed if args.seed is not None else int(cfg.get("seed", 0))


# -- subcommands --------------------------------------------------------------


def cmd_simulate(cfg, args, base, out):
    """Write ``dataset.csv`` plus ``query.csv`` / ``query_truth.csv`` from a simulation case."""
    seed = _seed(cfg, args)
    case_id = int(cfg.get("case", 1))
    n = int(cfg.get("n", 400))
    m = int(cfg.get("query_points", 20))
    spec = SimulationSpec(case_id, n, float(cfg.get("censor_rate", 0.30)), seed)
    ds = generate_case(spec)
    save_dataset(ds, out / "dataset.csv")
    x = truncated_normal(_seeding.derive_rng(seed, _seeding.TEST_SET, case_id), (m, N_COVARIATES))
    g = true_risk(case_id, x)
    _write_csv(out / "query.csv", ["x_id"] + [f"x{k + 1}" for k in range(N_COVARIATES)],
               [[k, *row] for k, row in enumerate(x)])
    _write_csv(out / "query_truth.csv", ["x_id", "g0"], [[k, v] for k, v in enumerate(g)])
    print(f"simulated case {case_id}: n={n}, events={ds.n_events}, censored={ds.censoring_fraction:.3f}")


def _net_and_train(cfg, seed):
    widths = tuple(cfg.get("widths", (N_COVARIATES, 128, 64, 1)))
    train_cfg = dict(cfg.get("train", {}))
    train_cfg.setdefault("seed", seed)
    return NetworkConfig(widths, seed=seed), TrainConfig.from_dict(train_cfg)


def cmd_fit(cfg, args, base, out):
    """Train an ensemble from a dataset CSV into the model directory ``--out``."""
    seed = _seed(cfg, args)
    ds = load_dataset(_path(cfg, "data", base))
    if "r" in cfg:
        r, alpha = int(cfg["r"]), None
    else:
        alpha = float(cfg.get("alpha", 0.9))
        r = subsample_size(ds.n, alpha)
    net, tc = _net_and_train(cfg, seed)
    if net.p0 != ds.p0:
        net = NetworkConfig((ds.p0, *net.widths[1:]), seed=seed)
    model = fit_ensemble(ds, net, tc, r, int(cfg.get("B", 1000)), seed, threads=args.threads,
                         chunk_size=int(cfg.get("chunk_size", 200)), alpha=alpha)
    save_model(model, out)
    print(f"fitted {model.B} base learners with r={r} on n={ds.n}; model written to {out}")


def cmd_predict(cfg, args, base, out):
    model = load_model(_path(cfg, "model", base))
    ids, X = load_query(_path(cfg, "query", base))
    g = ensemble_predict(model, X)
    _write_csv(out / "predictions.csv", ["x_id", "estimate"], zip(ids, g))
    print(f"wrote {len(ids)} predictions to {out / 'predictions.csv'}")


def cmd_infer(cfg, args, base, out):
    """Pointwise and contrast intervals; contrasts are index pairs into the query rows."""
    level = args.level if args.level is not None else float(cfg.get("level", 0.95))
    model = load_model(_path(cfg, "model", base))
    ids, X = load_query(_path(cfg, "query", base))
    points = infer_points(model, X, level)
    _write_csv(out / "pointwise.csv", ["x_id", "estimate", "se", "ci_lo", "ci_hi", "clamped"],
               [[i, p.estimate, p.std_error, p.ci_lower, p.ci_upper, p.clamped] for i, p in zip(ids, points)])
    pairs = [tuple(int(v) for v in pair) for pair in cfg.get("contrasts", [])]
    for i, j in pairs:
        if not (0 <= i < len(ids) and 0 <= j < len(ids)):
            raise InvalidArgumentError(f"contrast pair ({i}, {j}) is outside the {len(ids)} query rows")
    contrasts = infer_contrasts(model, X, pairs, level)
    rows, report = [], []
    for k, ((i, j), c) in enumerate(zip(pairs, contrasts)):
        rr = relative_risk_interval(c)
        rows.append([k, ids[i], ids[j], c.estimate, c.std_error, c.ci_lower, c.ci_upper, c.clamped, *rr])
        report.append({"pair": k, "x1": ids[i], "x2": ids[j], "estimate": c.estimate, "se": c.std_error,
                       "ci": [c.ci_lower, c.ci_upper], "hazard_ratio": math.exp(c.estimate),
                       "hazard_ratio_ci": list(rr), "clamped": c.clamped})
    _write_csv(out / "contrasts.csv",
               ["pair_id", "x1_id", "x2_id", "estimate", "se", "ci_lo", "ci_hi", "clamped", "rr_lo", "rr_hi"], rows)
    _write_json(out / "report.json", {
        "level": level, "n": model.n, "r": model.r, "B": model.B,
        "points_clamped": sum(p.clamped for p in points), "contrasts": report,
    })
    print(f"wrote {len(points)} pointwise and {len(contrasts)} contrast intervals to {out}")


def cmd_alpha_range(cfg, args, base, out):
    try:
        params = RateParams(
            t=cfg["t"], gamma=cfg["gamma"], delta=float(cfg.get("delta", 0.0)),
            xi=float(cfg.get("xi", 0.1)), nu=float(cfg.get("nu", 1.0)),
        )
    except KeyError as exc:
        raise ConfigError(f"config is missing required key {exc.args[0]!r}") from None
    res = alpha_range(params)
    report = format_alpha_report(params, res)
    print(report)
    if out is not None:
        (out / "alpha_range.txt").write_text(report + "\n", encoding="utf-8")
        _write_json(out / "alpha_range.json", res.to_dict())


def cmd_benchmark(cfg, args, base, out):
    cfg = dict(cfg)
    cache = cfg.pop("cache_dir", None)
    if cache is not None:
        cache = Path(cache) if Path(cache).is_absolute() else base / cache
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.level is not None:
        cfg["level"] = args.level
    study = StudyConfig.from_dict(cfg)
    results = run_monte_carlo(study, out, threads=args.threads, cache_dir=cache)
    for c in results:
        pw = c.pointwise
        msg = "no successful replications" if pw is None else (
            f"CP={pw.coverage:.3f} SE={pw.mean_se:.3f} EmpSD="
            + ("NA" if pw.emp_sd is None else f"{pw.emp_sd:.3f}")
        )
        print(f"case {c.case_id} n={c.n} alpha={c.alpha:g} r={c.r} [{c.status}] {msg}")


def _sample_mean_problem():
    def generator(rng, size):
        return rng.standard_normal(size)

    def trainer(data, point, rng):
        return float(np.mean(data))

    return generator, trainer


def _cox_net_problem(cfg, seed):
    case_id = int(cfg.get("case", 1))
    rate = calibrated_rate(case_id, float(cfg.get("censor_rate", 0.30)))
    net, tc = _net_and_train(cfg, seed)

    def generator(rng, size):
        spec_seed = int(rng.integers(2**63))
        # specs need n >= 2; rows are i.i.d., so a prefix is a valid smaller sample
        ds = generate_case(SimulationSpec(case_id, max(size, 2), seed=spec_seed), censor_rate=rate)
        return ds.subset(np.arange(size))

    def trainer(data, point, rng):
        s = int(rng.integers(2**63))
        params = train(data, NetworkConfig(net.widths, seed=s), TrainConfig.from_dict({**tc.to_dict(), "seed": s}))
        return predict_g(params, point)

    return generator, trainer


def cmd_oracle_zeta(cfg, args, base, out):
    """Monte Carlo single-overlap covariance for a built-in estimator."""
    seed = _seed(cfg, args)
    estimator = cfg.get("estimator", "sample-mean")
    r = int(cfg.get("r", 10))
    reps = int(cfg.get("reps", 1000))
    if estimator == "sample-mean":
        gen, tr = _sample_mean_problem()
        x1 = x2 = None
    elif estimator == "cox-net":
        gen, tr = _cox_net_problem(cfg, seed)
        x1 = np.asarray(cfg.get("x1", [0.5] * N_COVARIATES), dtype=np.float64)
        x2 = np.asarray(cfg.get("x2", cfg.get("x1", [0.5] * N_COVARIATES)), dtype=np.float64)
    else:
        raise ConfigError(f"unknown estimator {estimator!r}; expected 'sample-mean' or 'cox-net'")
    zeta = single_overlap_cov_mc(tr, gen, r, x1, x2, reps, seed)
    print(f"single-overlap covariance ({estimator}, r={r}, reps={reps}): {zeta!r}")
    if out is not None:
        _write_json(out / "zeta.json", {"estimator": estimator, "r": r, "reps": reps, "seed": seed, "zeta": zeta})


HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "infer": cmd_infer,
    "alpha-range": cmd_alpha_range,
    "benchmark": cmd_benchmark,
    "oracle-zeta": cmd_oracle_zeta,
}
NEEDS_OUT = {"simulate", "fit", "predict", "infer", "benchmark"}


def build_parser():
    parser = argparse.ArgumentParser(prog="deepcox", description="Deep Cox ensembles with IJ inference.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name in COMMANDS:
        doc = (HANDLERS[name].__doc__ or "").strip().splitlines()
        p = sub.add_parser(name, help=doc[0] if doc else None)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
        p.add_argument("--level", type=float, help="confidence level (default 0.95)")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return parser


def run(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command in NEEDS_OUT and args.out is None:
        parser.error(f"{args.command} requires --out")
    if args.threads < 1:
        parser.error("--threads must be positive")
    if args.seed is not None:
        try:
            _seeding.check_seed(args.seed)
        except DeepCoxError as exc:
            parser.error(str(exc))
    try:
        cfg = load_config(args.config)
        base = Path(args.config).resolve().parent
        out = None
        if args.out is not None:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
        HANDLERS[args.command](cfg, args, base, out)
    except (DeepCoxError, OSError) as exc:
        print(f"deepcox {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())
