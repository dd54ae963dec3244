"""Command-line front end: ``generate``, ``fit``, ``eval``, ``experiment``, ``bounds``.

Option values are resolved as command-line flag, then ``--config`` file,
then (for ``fit``) the manifest written by ``generate``, then the built-in
default. Config and manifest files are flat ``key=value`` text; keys use
the option names with underscores (``n_samples=2000``).
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import harness
from .bounds import ProblemProfile, rate_bounds
from .designs import NoiseSpec, completion_data, read_observations, write_observations
from .errors import BayesTensorError, ConfigurationError, StructuralError, ValidationError
from .sampler import (
    ChainConfig,
    Hyperparams,
    InfinityNorm,
    MaxNorm,
    NoRejection,
    load_checkpoint,
    merge_summaries,
    run_chain,
    save_checkpoint,
    SamplerState,
)
from .tensor import cp_compose, max2_upper_bound, read_dense, read_factors, write_dense, write_factors

log = logging.getLogger("bayestensor")

EXIT_OK, EXIT_VALIDATION, EXIT_ESTIMATION, EXIT_IO = 0, 2, 3, 4

MANIFEST = "manifest.txt"
TRUTH = "truth.factors"
OBSERVATIONS = "observations.csv"
MEAN = "mean.txt"
RANKS = "rank_histogram.csv"
DIAGNOSTICS = "diagnostics.txt"
CHECKPOINT = "checkpoint.txt"
EVAL = "eval.csv"
RESULTS = "results.csv"
BOUNDS = "bounds.csv"

DEFAULTS = {
    "sigma": 1.0,
    "sigma_p": 5.0,
    "xi": 0.5,
    "d_max": None,
    "R": 10.0,
    "rejection": "infinity",
    "n_samples": 1000,
    "burn_in": None,
    "thin": 1,
    "rank_move_prob": 0.2,
    "rank_proposal": "conditional",
    "chains": 1,
    "ns": 0.5,
    "scale": 1.0,
    "settings": "1,2",
    "ns_grid": ",".join(str(v) for v in harness.DEFAULT_NS),
    "reps": 3,
    "workers": 1,
}


# key=value files ------------------------------------------------------------


def read_kv(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def write_kv(path, items: dict) -> None:
    lines = [f"{k}={'' if v is None else v}" for k, v in items.items()]
    Path(path).write_text("\n".join(lines) + "\n")


class Options:
    """Layered lookup over flags, config, manifest and defaults."""

    def __init__(self, args, *layers):
        self.args = args
        self.layers = [layer for layer in layers if layer]

    def raw(self, key):
        val = getattr(self.args, key, None)
        if val is not None:
            return val
        for layer in self.layers:
            if key in layer and layer[key] != "":
                return layer[key]
        return DEFAULTS.get(key)

    def get(self, key, conv=str):
        val = self.raw(key)
        if val is None:
            return None
        try:
            return conv(val)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad value for {key}: {val!r}") from exc


def _ints(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).replace("x", ",").split(",") if v.strip())


def _floats(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _setting(opts: Options) -> harness.ExperimentSetting:
    """Named setting, or a custom one from ``dims`` and ``d_star``."""
    sid = opts.get("setting", int)
    dims = opts.get("dims", _ints)
    if dims:
        d_star = opts.get("d_star", int)
        if d_star is None:
            raise ConfigurationError("custom dims need --d-star")
        base = harness.ExperimentSetting(sid or 0, dims, d_star)
    else:
        if sid is None:
            raise ConfigurationError("give --setting or --dims with --d-star")
        if sid not in harness.SETTINGS:
            raise ValidationError(f"unknown setting {sid}; choose from {sorted(harness.SETTINGS)}")
        base = harness.SETTINGS[sid]
    setting = base.scaled(opts.get("scale", float))
    return harness.ExperimentSetting(
        setting.id, setting.dims, setting.d_star,
        sigma_p=opts.get("sigma_p", float), R=opts.get("R", float),
        noise=opts.get("sigma", float), xi=opts.get("xi", float),
    )


def _hyperparams(opts: Options, d_star=None) -> Hyperparams:
    d_max = opts.get("d_max", int)
    if d_max is None:
        d_max = 2 * d_star if d_star else 10
    R = opts.get("R", float)
    return Hyperparams(
        sigma=opts.get("sigma", float), sigma_p=opts.get("sigma_p", float),
        xi=opts.get("xi", float), d_max=d_max, R=R,
    )


def _rejection(opts: Options, hp: Hyperparams):
    kind = opts.get("rejection").lower()
    if kind == "none":
        return NoRejection()
    if hp.R is None:
        raise ConfigurationError(f"rejection={kind} needs R")
    if kind in ("infinity", "inf"):
        return InfinityNorm(hp.R)
    if kind in ("max", "maxnorm"):
        return MaxNorm(hp.R)
    raise ConfigurationError(f"unknown rejection {kind!r}; use none, infinity or max")


def _chain_config(opts: Options, hp: Hyperparams) -> ChainConfig:
    return ChainConfig(
        n_samples=opts.get("n_samples", int), burn_in=opts.get("burn_in", int),
        thin=opts.get("thin", int), rank_move_prob=opts.get("rank_move_prob", float),
        rejection=_rejection(opts, hp), rank_proposal=opts.get("rank_proposal"),
    )


# Subcommands ----------------------------------------------------------------


def cmd_generate(args, config) -> int:
    opts = Options(args, config)
    setting = _setting(opts)
    out = _out_dir(args)
    n = opts.get("n", int)
    ns = opts.get("ns", float)
    if n is None:
        n = setting.n_for(ns)
    elif n < 1:
        raise ValidationError("n must be >= 1")
    data_rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0]))
    truth = harness.random_truth(setting.dims, setting.d_star, data_rng)
    design = completion_data(truth, n, NoiseSpec(setting.noise), data_rng)
    write_factors(out / TRUTH, truth)
    write_observations(out / OBSERVATIONS, design)
    hp = _hyperparams(opts, setting.d_star)
    write_kv(out / MANIFEST, {
        "setting": setting.id,
        "dims": ",".join(str(m) for m in setting.dims),
        "d_star": setting.d_star,
        "n": n,
        "ns": ns if opts.get("n", int) is None else "",
        "seed": args.seed,
        "sigma": hp.sigma,
        "sigma_p": hp.sigma_p,
        "xi": hp.xi,
        "d_max": hp.d_max,
        "R": "" if hp.R is None else hp.R,
        "rejection": opts.get("rejection"),
        "truth": TRUTH,
        "observations": OBSERVATIONS,
    })
    log.info("wrote %d observations on dims %s to %s", n, setting.dims, out)
    return EXIT_OK


def _manifest_for(obs_path: Path, explicit):
    path = Path(explicit) if explicit else obs_path.parent / MANIFEST
    return read_kv(path) if path.exists() else {}


def cmd_fit(args, config) -> int:
    obs_path = Path(args.obs) if args.obs else Path(args.out) / OBSERVATIONS
    manifest = _manifest_for(obs_path, args.manifest)
    opts = Options(args, config, manifest)
    dims = opts.get("dims", _ints)
    design = read_observations(obs_path, shape=dims or None)
    d_star = opts.get("d_star", int)
    hp = _hyperparams(opts, d_star)
    cfg = _chain_config(opts, hp)
    out = _out_dir(args)
    chains = opts.get("chains", int)
    if chains < 1:
        raise ConfigurationError("chains must be >= 1")
    start = None
    if args.resume:
        start, ck_hp = load_checkpoint(args.resume)
        if start.factors.shape != design.shape:
            raise StructuralError(f"checkpoint shape {start.factors.shape.dims} != data shape {design.shape.dims}")
        hp = ck_hp
    base_sweeps = start.sweep_count if start is not None else 0
    summaries, states = [], []
    for c, ss in enumerate(np.random.SeedSequence([args.seed, 1]).spawn(chains)):
        rng = np.random.default_rng(ss)
        if start is not None and c == 0:
            # the resumed chain keeps its own stream
            state, rng = start, start.rng
        else:
            state = None
        summaries.append(run_chain(design, hp, cfg, rng, state=state))
        states.append((summaries[-1].final_factors, rng))
    summary = merge_summaries(summaries)
    write_dense(out / MEAN, summary.mean)
    with open(out / RANKS, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["rank", "count"])
        for rank, count in summary.rank_histogram.items():
            wr.writerow([rank, count])
    mean = summary.mean
    resid = design.y - design.project(mean)
    write_kv(out / DIAGNOSTICS, {
        "n": design.n,
        "dims": ",".join(str(m) for m in design.shape.dims),
        "chains": chains,
        "n_kept": summary.n_kept,
        "n_accepted": summary.n_accepted,
        "rejection_rate": repr(summary.rejection_rate),
        "rank_mode": summary.rank_mode,
        "rank_moves_proposed": summary.n_proposed_rank_moves,
        "rank_moves_accepted": summary.n_accepted_rank_moves,
        "fit_rmse": repr(float(math.sqrt(np.mean(resid**2)))),
        "mean_max_abs": repr(float(np.max(np.abs(mean.values)))),
        "sigma": hp.sigma,
        "sigma_p": hp.sigma_p,
        "xi": hp.xi,
        "d_max": hp.d_max,
        "R": "" if hp.R is None else hp.R,
        "rejection": opts.get("rejection"),
        "n_samples": cfg.n_samples,
        "burn_in": cfg.burn_in,
        "thin": cfg.thin,
        "rank_move_prob": cfg.rank_move_prob,
        "rank_proposal": cfg.rank_proposal,
    })
    final, rng = states[0]
    sweeps = base_sweeps + cfg.burn_in + cfg.n_samples * cfg.thin
    save_checkpoint(out / CHECKPOINT, SamplerState(final, rng, sweeps), hp)
    log.info("kept %d draws, rank mode %s", summary.n_accepted, summary.rank_mode)
    return EXIT_OK


def cmd_eval(args, config) -> int:
    out = Path(args.out)
    obs_path = Path(args.obs) if args.obs else out / OBSERVATIONS
    truth = read_factors(args.truth or out / TRUTH)
    mean = read_dense(args.mean or out / MEAN)
    if mean.shape != truth.shape:
        raise StructuralError(f"mean shape {mean.shape.dims} != truth shape {truth.shape.dims}")
    design = read_observations(obs_path, shape=truth.shape.dims)
    d_star = args.d_star or truth.rank
    metrics = harness.accuracy(mean, cp_compose(truth), design, d_star)
    _out_dir(args)
    with open(out / EVAL, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(list(metrics))
        wr.writerow([repr(float(v)) for v in metrics.values()])
    for key, val in metrics.items():
        print(f"{key}={val!r}")
    return EXIT_OK


def cmd_experiment(args, config) -> int:
    opts = Options(args, config)
    budget = harness.Budget(
        n_samples=opts.get("n_samples", int), burn_in=opts.get("burn_in", int),
        thin=opts.get("thin", int), rank_move_prob=opts.get("rank_move_prob", float),
        d_max=opts.get("d_max", int), xi=opts.get("xi", float),
    )
    settings = opts.get("settings", _ints)
    unknown = [s for s in settings if s not in harness.SETTINGS]
    if unknown:
        raise ValidationError(f"unknown settings {unknown}")
    ns_grid = opts.get("ns_grid", _floats)
    reps = opts.get("reps", int)
    if reps < 1:
        raise ValidationError("reps must be >= 1")
    detail, avg = harness.run_experiment(
        settings, ns_grid, reps, args.seed, budget,
        scale=opts.get("scale", float), workers=opts.get("workers", int),
    )
    out = _out_dir(args)
    path = Path(args.results) if args.results else out / RESULTS
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(harness.RESULT_COLUMNS)
        for rec in detail + avg:
            wr.writerow(rec.as_row(timing=args.timing))
    failed = sum(1 for r in detail if r.error)
    log.info("%d cells, %d failed; results in %s", len(detail), failed, path)
    return EXIT_OK


def cmd_bounds(args, config) -> int:
    opts = Options(args, config)
    if args.truth:
        truth = read_factors(args.truth)
        dims, d_star = truth.shape.dims, truth.rank
        frob, max2 = truth.frobenius_sq_sum(), max2_upper_bound(truth)
    else:
        setting = _setting(opts)
        dims, d_star = setting.dims, setting.d_star
        frob = opts.get("frob_sq_sum", float)
        max2 = opts.get("max2", float)
        if frob is None or max2 is None:
            # summaries of a truth drawn exactly as `generate` does
            rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0]))
            truth = harness.random_truth(dims, d_star, rng)
            frob = truth.frobenius_sq_sum() if frob is None else frob
            max2 = max2_upper_bound(truth) if max2 is None else max2
    hp = _hyperparams(opts, d_star)
    if args.no_R:
        hp = Hyperparams(hp.sigma, hp.sigma_p, hp.xi, hp.d_max, None)
    ns = opts.get("n", _ints)
    if not ns:
        ns = (int(round(opts.get("ns", float) * math.prod(dims))),)
    rows = []
    for n in ns:
        profile = ProblemProfile(dims, n, d_star, frob, max2, hp)
        rows.append(rate_bounds(profile).as_row())
    out = _out_dir(args)
    path = out / BOUNDS
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
        wr.writeheader()
        for row in rows:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return EXIT_OK


# Parser ---------------------------------------------------------------------


def _add_hyper(p):
    p.add_argument("--sigma", type=float, help="noise standard deviation")
    p.add_argument("--sigma-p", dest="sigma_p", type=float, help="prior scale")
    p.add_argument("--xi", type=float, help="rank-prior decay in (0, 1)")
    p.add_argument("--d-max", dest="d_max", type=int, help="largest admissible rank")
    p.add_argument("--R", "--radius", dest="R", type=float, help="rejection radius")


def _add_setting(p):
    p.add_argument("--setting", type=int, help="experiment setting 1-5")
    p.add_argument("--dims", help="custom shape, e.g. 5,5,5")
    p.add_argument("--d-star", dest="d_star", type=int, help="true rank for custom dims")
    p.add_argument("--scale", type=float, help="shrink dims and rank by this factor (ceil)")
    p.add_argument("--ns", type=float, help="sample ratio n / prod(M)")


def _add_budget(p):
    p.add_argument("--n-samples", dest="n_samples", type=int, help="kept draws per chain")
    p.add_argument("--burn-in", dest="burn_in", type=int, help="burn-in sweeps (default n_samples)")
    p.add_argument("--thin", type=int)
    p.add_argument("--rank-move-prob", dest="rank_move_prob", type=float)


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # sub-parsers suppress defaults so flags given before the subcommand survive
    def dflt(v):
        return argparse.SUPPRESS if suppress else v

    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=dflt(0), help="master seed (u64)")
    p.add_argument("--out", default=dflt("."), help="output directory")
    p.add_argument("--config", default=dflt(None), help="flat key=value file of option defaults")
    p.add_argument("-v", "--verbose", action="store_true", default=dflt(False))
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bayestensor", parents=[_global_flags(False)],
                                     description="Bayesian CP tensor regression")
    common = _global_flags(True)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="synthetic truth and completion data")
    _add_setting(g)
    _add_hyper(g)
    g.add_argument("--n", type=int, help="number of observations (overrides --ns)")
    g.add_argument("--rejection", help="none, infinity or max (recorded for fit)")
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", parents=[common], help="posterior mean by rejection-filtered MCMC")
    f.add_argument("--obs", help="observations CSV (default OUT/observations.csv)")
    f.add_argument("--manifest", help="manifest to read hyperparameters from")
    f.add_argument("--dims", help="tensor shape when not inferable")
    f.add_argument("--d-star", dest="d_star", type=int, help="sets d_max = 2 d* when d_max is absent")
    _add_hyper(f)
    _add_budget(f)
    f.add_argument("--rejection", help="none, infinity or max")
    f.add_argument("--rank-proposal", dest="rank_proposal", choices=["conditional", "prior"])
    f.add_argument("--chains", type=int, help="independent chains merged by accepted-draw weight")
    f.add_argument("--resume", help="checkpoint to continue from")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", parents=[common], help="accuracy of a fitted mean")
    e.add_argument("--mean", help="dense mean tensor (default OUT/mean.txt)")
    e.add_argument("--truth", help="truth factors (default OUT/truth.factors)")
    e.add_argument("--obs", help="observations CSV (default OUT/observations.csv)")
    e.add_argument("--d-star", dest="d_star", type=int, help="rank in the scaling (default truth rank)")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("experiment", parents=[common], help="scaled-accuracy grid")
    x.add_argument("--settings", help="comma-separated setting ids (default 1,2)")
    x.add_argument("--ns-grid", dest="ns_grid", help="comma-separated sample ratios")
    x.add_argument("--reps", type=int)
    x.add_argument("--scale", type=float, help="0.5 for desk scale, 1 for full scale")
    x.add_argument("--xi", type=float)
    x.add_argument("--d-max", dest="d_max", type=int)
    _add_budget(x)
    x.add_argument("--workers", type=int)
    x.add_argument("--results", help="results CSV path (default OUT/results.csv)")
    x.add_argument("--timing", action="store_true", help="fill wall_s (breaks byte-identical reruns)")
    x.set_defaults(func=cmd_experiment)

    b = sub.add_parser("bounds", parents=[common], help="rate-bound report")
    _add_setting(b)
    _add_hyper(b)
    b.add_argument("--n", help="comma-separated sample sizes, one row each")
    b.add_argument("--truth", help="take dims, rank and norms from a factors file")
    b.add_argument("--frob-sq-sum", dest="frob_sq_sum", type=float)
    b.add_argument("--max2", type=float)
    b.add_argument("--no-R", dest="no_R", action="store_true", help="omit the out-of-sample bounds")
    b.set_defaults(func=cmd_bounds)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.seed < 0 or args.seed >= 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        config = read_kv(args.config) if args.config else {}
        return args.func(args, config)
    except BayesTensorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
