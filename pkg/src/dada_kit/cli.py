"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or input.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import zlib
from pathlib import Path

import numpy as np

from . import __version__
from .config import (Ar1DemoConfig, AttractorConfig, AttributeConfig, L63Model, SimulateConfig,
                     SweepFile, load_config)
from .conventional import run_ar1_demo
from .errors import ConfigError, DadaError, DomainError
from .evidence import causal_probs_from_evidence, evidence_trace
from .experiments import (SEED_ATTRACTOR, SEED_DA, SEED_TRUTH, attractor_figure, attractor_sample,
                          default_workers, evidence_figure_export, gini_by_contrast, gini_table,
                          roc_curve, run_sweep, sweep_config_dict, task_rng)
from .io import read_csv, read_matrix_csv, write_csv, write_json, write_manifest
from .models import ObservationSequence, Trajectory, observe, simulate_stationary

log = logging.getLogger("dada_kit")

SEED_AR1 = 7
STATE_UNITS = "model state units"


def _seed(args, cfg) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    if cfg is not None and getattr(cfg, "seed", None) is not None:
        return cfg.seed
    return 0


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model_key(model) -> int:
    blob = json.dumps(model.model_dump(by_alias=True), sort_keys=True).encode()
    return zlib.crc32(blob)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, SimulateConfig)
    seed = _seed(args, cfg)
    spec = cfg.model.spec()
    x0 = None if cfg.x0 is None else np.array(cfg.x0, dtype=float)
    if x0 is not None and x0.shape != (spec.state_dim,):
        raise ConfigError(f"{args.config}: x0 must have {spec.state_dim} entries")
    t0 = time.perf_counter()
    traj = simulate_stationary(spec, cfg.T + 1, task_rng(seed, SEED_TRUTH, 0), x0=x0, burn_in=cfg.burn_in)
    y = observe(traj, spec, task_rng(seed, SEED_TRUTH, 1))
    out = _out(args)
    files = [_write_states(out / "trajectory.csv", traj.states, "x", spec.dt),
             _write_states(out / "observations.csv", y.obs, "y", spec.dt)]
    write_manifest(out, "simulate", cfg.model_dump(by_alias=True), seed, files,
                   {"simulate": time.perf_counter() - t0})
    return 0


def _write_states(path, arr, prefix, dt):
    cols = ["t"] + [f"{prefix}{i + 1}" for i in range(arr.shape[1])]
    units = {"t": f"step (dt={dt:g} model time units)", **{c: STATE_UNITS for c in cols[1:]}}
    return write_csv(path, cols, ([t, *row] for t, row in enumerate(arr.tolist())), units)


def cmd_observe(args) -> int:
    cfg = load_config(args.config, SimulateConfig)
    seed = _seed(args, cfg)
    spec = cfg.model.spec()
    states = read_matrix_csv(args.trajectory, "x")
    if states.shape[1] != spec.state_dim:
        raise ConfigError(f"{args.trajectory}: {states.shape[1]} state columns, model expects {spec.state_dim}")
    y = observe(Trajectory(states), spec, task_rng(seed, SEED_TRUTH, 1))
    out = _out(args)
    f = _write_states(out / "observations.csv", y.obs, "y", spec.dt)
    write_manifest(out, "observe", cfg.model_dump(by_alias=True), seed, [f], {})
    return 0


def _prior(cfg: AttributeConfig, seed: int, path):
    explicit = cfg.prior.explicit()
    if explicit is not None:
        return explicit
    if not isinstance(cfg.model, L63Model):
        raise ConfigError(f"{path}: a linear model needs an explicit prior (mean and cov)")
    att = attractor_sample(cfg.model.params(), cfg.prior.attractor_samples,
                           task_rng(seed, SEED_ATTRACTOR, _model_key(cfg.model)),
                           thin=cfg.prior.attractor_thin)
    return att.prior()


def cmd_attribute(args) -> int:
    fac = load_config(args.factual, AttributeConfig)
    cf = load_config(args.counterfactual, AttributeConfig)
    seed = _seed(args, fac)
    y = ObservationSequence(read_matrix_csv(args.observations, "y"))
    spec_f, spec_c = fac.model.spec(), cf.model.spec()
    for spec, path in ((spec_f, args.factual), (spec_c, args.counterfactual)):
        if spec.obs_dim != y.dim:
            raise ConfigError(f"{args.observations}: {y.dim} observation columns, "
                              f"{path} expects {spec.obs_dim}")
    default_filter = "enkf" if not spec_f.is_linear or not spec_c.is_linear else "kf"
    filt = args.filter or fac.filter or default_filter
    ne = args.ensemble_size or fac.ensemble_size or 100
    if filt == "kf" and not (spec_f.is_linear and spec_c.is_linear):
        raise ConfigError("--filter kf needs linear models in both worlds")
    t0 = time.perf_counter()
    prior_f, prior_c = _prior(fac, seed, args.factual), _prior(cf, seed, args.counterfactual)
    tr1 = evidence_trace(spec_f, prior_f, y, filt, task_rng(seed, SEED_DA, 0), ne, fac.inflation, "factual")
    tr0 = evidence_trace(spec_c, prior_c, y, filt, task_rng(seed, SEED_DA, 0), ne, cf.inflation,
                         "counterfactual")
    table = evidence_figure_export(tr0, tr1)
    probs = causal_probs_from_evidence(tr0.total, tr1.total)
    out = _out(args)
    cols = ["t", "inc_counterfactual", "inc_factual", "cum_counterfactual", "cum_factual", "pn"]
    units = {"t": "step", "pn": "probability", **{c: "log density" for c in cols[1:5]}}
    f1 = write_csv(out / "evidence.csv", cols, table.rows(), units)
    f2 = write_json(out / "summary.json", {
        "log_f0": tr0.total, "log_f1": tr1.total, "log_ratio": tr1.total - tr0.total,
        "pn": probs.pn, "pn_clipped": probs.pn_clipped, "ps": probs.ps, "T": y.T,
        "filter": filt, "ensemble_size": ne if filt == "enkf" else None,
        "inflation": fac.inflation, "seed": seed})
    write_manifest(out, "attribute", {"factual": fac.model_dump(by_alias=True),
                                      "counterfactual": cf.model_dump(by_alias=True),
                                      "filter": filt, "ensemble_size": ne},
                   seed, [f1, f2], {"attribute": time.perf_counter() - t0})
    return 0


def _roc_rows(method, roc):
    return [(method, thr, fpr, tpr) for thr, (fpr, tpr) in zip(roc.thresholds, roc.points)]


def write_sweep_outputs(result, out: Path) -> list[Path]:
    files = []
    cols = ["quintuplet", "lambda", "sigma_q", "sigma_r", "direction", "sequence", "label",
            "pn_f", "log_ratio", "pn_p"]
    rows = [(s.quintuplet, s.lam, s.sigma_q, s.sigma_r, s.direction, s.sequence, s.label,
             s.score_dada, s.log_ratio, s.score_conv) for s in result.scores]
    files.append(write_csv(out / "scores.csv", cols, rows,
                           {"label": "1=factual 0=counterfactual", "log_ratio": "log(f1/f0)"}))
    qcols = ["quintuplet", "lambda", "sigma_q", "sigma_r", "direction", "phi1", "phi2", "phi3", "u",
             "p0", "p1", "se0", "se1", "n_factual", "n_counterfactual"]
    qrows = [(q.id, q.lam, q.sigma_q, q.sigma_r, q.direction, *q.phi, q.u, q.p0, q.p1, q.se0, q.se1,
              q.n_factual, q.n_counterfactual) for q in result.quintuplets]
    files.append(write_csv(out / "quintuplets.csv", qcols, qrows, {"u": STATE_UNITS}))
    lab, dada, conv = result.arrays()
    roc_rows = []
    if lab.any() and not lab.all():
        roc_rows = _roc_rows("dada", roc_curve(dada, lab)) + _roc_rows("conventional", roc_curve(conv, lab))
    files.append(write_csv(out / "roc_overall.csv", ["method", "threshold", "fpr", "tpr"], roc_rows,
                           {"fpr": "fraction", "tpr": "fraction"}))
    for key, name, col in (("lam", "gini_by_lambda.csv", "lambda"),
                           ("sigma_q", "gini_by_sigmaQ.csv", "sigma_q"),
                           ("sigma_r", "gini_by_sigmaR.csv", "sigma_r")):
        files.append(write_csv(out / name, [col, "n", "gini_dada", "gini_conv"], gini_table(result, key)))
    files.append(write_csv(out / "gini_by_contrast.csv",
                           ["log_p1_p0_lo", "log_p1_p0_hi", "n", "gini_dada", "gini_conv"],
                           gini_by_contrast(result)))
    gd, gc = result.gini()
    files.append(write_json(out / "summary.json", {
        "gini_dada": gd, "gini_conv": gc, "n_sequences": int(lab.size),
        "n_factual": int(lab.sum()), "n_failures": len(result.failures)}))
    return files


def cmd_sweep(args) -> int:
    cfg_file = load_config(args.config, SweepFile)
    seed = _seed(args, cfg_file)
    try:
        cfg = cfg_file.sweep_config(seed)
    except DomainError as exc:
        raise ConfigError(f"{args.config}: {exc}") from None
    if args.ensemble_size:
        cfg.ensemble_size = args.ensemble_size
    if args.filter == "kf":
        raise ConfigError("the L63 sweep needs --filter enkf")
    t0 = time.perf_counter()
    result = run_sweep(cfg, workers=args.workers)
    elapsed = time.perf_counter() - t0
    out = _out(args)
    files = write_sweep_outputs(result, out)
    write_manifest(out, "sweep", sweep_config_dict(cfg), seed, files, {"sweep": elapsed},
                   failures=result.failures)
    if not result.scores:
        log.error("every sweep task failed")
        return 1
    return 0


def cmd_roc(args) -> int:
    header, rows, linenos = read_csv(args.scores)
    if "label" not in header:
        raise ConfigError(f"{args.scores}: missing 'label' column")
    methods = [c for c in ("log_ratio", "pn_p", "score") if c in header]
    if not methods:
        raise ConfigError(f"{args.scores}: no score column (log_ratio, pn_p or score)")
    data = {}
    for c in ["label", *methods]:
        i = header.index(c)
        try:
            data[c] = np.array([float(r[i]) for r in rows])
        except (ValueError, IndexError):
            raise ConfigError(f"{args.scores}: column {c!r} has a malformed row") from None
    lab = data["label"].astype(int)
    if lab.all() or not lab.any():
        raise ConfigError(f"{args.scores}: ROC needs both factual and counterfactual rows")
    out = _out(args)
    roc_rows, summary = [], {}
    names = {"log_ratio": "dada", "pn_p": "conventional", "score": "score"}
    for c in methods:
        roc = roc_curve(data[c], lab)
        roc_rows += _roc_rows(names[c], roc)
        summary[names[c]] = {"auc": roc.auc, "gini": roc.gini}
    f1 = write_csv(out / "roc.csv", ["method", "threshold", "fpr", "tpr"], roc_rows)
    f2 = write_json(out / "gini.json", summary)
    write_manifest(out, "roc", {"scores": str(args.scores)}, 0, [f1, f2], {})
    return 0


def cmd_attractor(args) -> int:
    cfg = load_config(args.config, AttractorConfig)
    seed = _seed(args, cfg)
    t0 = time.perf_counter()
    fig = attractor_figure(cfg.model.params(), cfg.n_samples, seed, cfg.grid_size, cfg.thin)
    out = _out(args)
    mcols = ["world", "mean1", "mean2", "mean3"] + [f"cov{i + 1}{j + 1}" for i in range(3) for j in range(3)]
    mrows = [(w, *a.mean, *a.cov.ravel()) for w, a in (("factual", fig.factual),
                                                        ("counterfactual", fig.counterfactual))]
    files = [write_csv(out / "moments.csv", mcols, mrows,
                       {c: STATE_UNITS if c.startswith("mean") else "squared state units" for c in mcols}),
             write_csv(out / "plane.csv", ["vector", "c1", "c2", "c3"],
                       [("v1", *fig.v1), ("v2", *fig.v2)])]
    drows = []
    diff = fig.difference
    for ix, gx in enumerate(fig.grid_x):
        for iy, gy in enumerate(fig.grid_y):
            drows.append((ix, iy, gx, gy, fig.density_factual[ix, iy],
                          fig.density_counterfactual[ix, iy], diff[ix, iy]))
    files.append(write_csv(out / "density.csv", ["ix", "iy", "p1", "p2", "factual", "counterfactual",
                                                 "difference"], drows,
                           {"p1": STATE_UNITS, "p2": STATE_UNITS, "factual": "density",
                            "counterfactual": "density", "difference": "density"}))
    write_manifest(out, "attractor", cfg.model_dump(by_alias=True), seed, files,
                   {"attractor": time.perf_counter() - t0})
    return 0


def cmd_demo_ar1(args) -> int:
    cfg = load_config(args.config, Ar1DemoConfig)
    seed = _seed(args, cfg)

    def seed_for(tag, n):
        return task_rng(seed, SEED_AR1, zlib.crc32(tag.encode()), n)

    t0 = time.perf_counter()
    res = run_ar1_demo(cfg.a, cfg.noise_std, cfg.window, cfg.true_p, tuple(cfg.n_grid), cfg.n_boot,
                       tuple(cfg.return_periods), seed_for, cfg.timing_repeats)
    out = _out(args)
    files = [
        write_csv(out / "return_levels.csv", ["return_period", "empirical", "gpd", "gpd_lo95", "gpd_hi95"],
                  res.return_levels, {"return_period": "windows"}),
        write_csv(out / "tail_vs_n.csv", ["n", "empirical_p", "gpd_p", "gpd_lo95", "gpd_hi95"],
                  res.tail_vs_n, {"n": "windows"}),
        write_csv(out / "timing.csv", ["n", "T", "closed_form_s", "monte_carlo_s"], res.timings,
                  {"closed_form_s": "s", "monte_carlo_s": "s"}),
    ]
    last = res.tail_vs_n[-1]
    files.append(write_json(out / "summary.json", {
        "u": res.u, "true_p": res.true_p, "n_max": last[0], "gpd_p": last[2],
        "band": [last[3], last[4]], "band_covers_truth": bool(last[3] <= res.true_p <= last[4])}))
    write_manifest(out, "demo-ar1", cfg.model_dump(), seed, files,
                   {"demo": time.perf_counter() - t0}, nondeterministic=("timing.csv",))
    return 0


def _global_flags(p: argparse.ArgumentParser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="JSON configuration file")
    p.add_argument("--seed", type=int, default=d(None), help="64-bit master seed (overrides config)")
    p.add_argument("--out", default=d("."), help="output directory")
    p.add_argument("--workers", type=int, default=d(default_workers()),
                   help="worker processes (default: $DADA_KIT_WORKERS or 1)")
    p.add_argument("--filter", choices=("kf", "enkf"), default=d(None))
    p.add_argument("--ensemble-size", type=int, default=d(None))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dada-kit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        _global_flags(p, suppress=True)
        p.set_defaults(func=fn)
        return p

    add("simulate", cmd_simulate, "simulate a trajectory and its observations")
    p = add("observe", cmd_observe, "generate observations of an existing trajectory")
    p.add_argument("trajectory", help="trajectory CSV written by 'simulate'")
    p = add("attribute", cmd_attribute, "evidence and PN of an observation file in two worlds")
    p.add_argument("observations", help="observation CSV (columns y1..yd)")
    p.add_argument("--factual", required=True, help="factual-world configuration")
    p.add_argument("--counterfactual", required=True, help="counterfactual-world configuration")
    add("sweep", cmd_sweep, "DADA vs conventional attribution sweep with ROC/Gini tables")
    p = add("roc", cmd_roc, "ROC curve and Gini index of a scores CSV")
    p.add_argument("scores", help="CSV with a 'label' column and score columns")
    add("attractor", cmd_attractor, "attractor moments, leading plane and projected densities")
    add("demo-ar1", cmd_demo_ar1, "AR(1) demonstration: GPD tail estimate and timing")
    return parser


NEEDS_CONFIG = {"simulate", "observe", "sweep", "attractor", "demo-ar1"}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command in NEEDS_CONFIG and args.config is None:
            raise ConfigError(f"'{args.command}' needs --config")
        if args.ensemble_size is not None and args.ensemble_size < 2:
            raise ConfigError("--ensemble-size must be >= 2")
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DadaError, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
