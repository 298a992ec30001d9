"""Command-line interface.

Subcommands: ``fit`` (shared-parameter model, optionally batched),
``fit-hier`` (hierarchical model with tie-points, variational inference),
``fit-cts`` (continuous-index model for irregular spacing), ``simulate``
(synthetic datasets), and ``export`` (re-emit a finished run from its config
echo).  Exit codes: 0 success, 1 validation error, 2 inference failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fit as fitmod
from . import io as iomod
from . import simulate as simmod
from .ctsmodel import RateVector, fit_mle_cts, gap_posterior
from .errors import InferenceError, ValidationError
from .hmm import (
    DepthSeries,
    ObservationParams,
    StayProbabilities,
    auto_year_count,
    build_state_space,
)
from .io import RunConfig

_CONFIG_KEYS = [
    "data", "out", "ties", "n_s", "m", "batch_len", "n_paths", "seed",
    "threads", "tol", "max_iter", "vi_step", "vi_max_iter", "grad_samples",
    "tie_mode", "draws", "paths_per_draw", "gap_factor", "write_gamma",
    "strict", "quiet", "kind", "n", "spacing", "a", "b", "sigma", "stay",
    "rate", "lam", "alpha", "eps", "laplace_scale", "seasonal",
]


def _log(cfg: RunConfig, message: str):
    if not cfg.quiet:
        print(message, file=sys.stderr)


def _add_common(parser):
    parser.add_argument("--config", help="JSON file of option overrides")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--quiet", action="store_const", const=True)


def _add_fit_common(parser):
    parser.add_argument("data", nargs="?", help="depth,proxy CSV")
    parser.add_argument("--n-s", dest="n_s", type=int,
                        help="states per yearly cycle")
    parser.add_argument("--m", type=int, help="year budget (default: auto)")
    parser.add_argument("--n-paths", dest="n_paths", type=int)
    parser.add_argument("--tol", type=float)
    parser.add_argument("--max-iter", dest="max_iter", type=int)
    parser.add_argument("--gamma", dest="write_gamma", action="store_const",
                        const=True, help="also write gamma.csv")
    parser.add_argument("--strict", action="store_const", const=True,
                        help="exit 2 when the optimizer does not converge")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="icechron",
        description="Annual-layer chronologies from seasonal proxy series")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="shared-parameter seasonal model")
    _add_fit_common(p)
    p.add_argument("--batch-len", dest="batch_len", type=int,
                   help="fit in contiguous batches of this many samples")
    _add_common(p)

    p = sub.add_parser("fit-hier", help="hierarchical model with tie-points")
    _add_fit_common(p)
    p.add_argument("--ties", help="depth,year CSV of tie-points")
    p.add_argument("--tie-mode", dest="tie_mode", choices=["replace", "combine"])
    p.add_argument("--vi-step", dest="vi_step", type=float)
    p.add_argument("--vi-max-iter", dest="vi_max_iter", type=int)
    p.add_argument("--grad-samples", dest="grad_samples", type=int)
    p.add_argument("--draws", type=int, help="posterior parameter draws")
    p.add_argument("--paths-per-draw", dest="paths_per_draw", type=int)
    _add_common(p)

    p = sub.add_parser("fit-cts", help="continuous-index model")
    _add_fit_common(p)
    p.add_argument("--gap-factor", dest="gap_factor", type=float,
                   help="gap detection threshold, multiple of median spacing")
    _add_common(p)

    p = sub.add_parser("simulate", help="generate synthetic datasets")
    p.add_argument("--kind", choices=["hmm", "sde"])
    p.add_argument("--n", type=int)
    p.add_argument("--spacing", type=float)
    p.add_argument("--n-s", dest="n_s", type=int)
    p.add_argument("--stay", type=float, help="stay probability")
    p.add_argument("--rate", type=float,
                   help="advance rate per meter (simulates the rate process)")
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--laplace-scale", dest="laplace_scale", type=float)
    p.add_argument("--seasonal", choices=["sin_pi", "sin_2pi"])
    _add_common(p)

    p = sub.add_parser("export",
                       help="re-run a finished run from its fit.json echo")
    p.add_argument("rundir", help="directory holding fit.json")
    p.add_argument("--out", required=True, help="new output directory")
    p.add_argument("--quiet", action="store_const", const=True)
    return parser


def _resolve_config(args) -> RunConfig:
    overrides = {}
    if getattr(args, "config", None):
        with open(args.config) as handle:
            payload = json.load(handle)
        unknown = set(payload) - set(_CONFIG_KEYS)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        overrides.update(payload)
    for key in _CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    cfg = RunConfig(command=args.command, **overrides)
    if cfg.data is not None:
        cfg.data = str(Path(cfg.data).resolve())
    if cfg.ties is not None:
        cfg.ties = str(Path(cfg.ties).resolve())
    return cfg.validate()


def _fit_options(cfg: RunConfig) -> fitmod.FitOptions:
    return fitmod.FitOptions(
        tol=cfg.tol, max_iter=cfg.max_iter, n_paths=cfg.n_paths,
        vi_step=cfg.vi_step, vi_max_iter=cfg.vi_max_iter,
        n_grad_samples=cfg.grad_samples, tie_mode=cfg.tie_mode,
        strict=cfg.strict)


def _space_for(cfg: RunConfig, data: DepthSeries):
    m = cfg.m if cfg.m is not None else auto_year_count(data.n, cfg.n_s)
    return build_state_space(cfg.n_s, m)


def _check_converged(cfg: RunConfig, reports):
    bad = [i for i, r in enumerate(reports) if not r.converged]
    if bad and cfg.strict:
        raise InferenceError(
            f"fit did not converge (batch index {bad[0]}); rerun with more "
            f"iterations or drop --strict")


def _seeds(cfg: RunConfig, n: int):
    return [int(s.generate_state(1)[0])
            for s in np.random.SeedSequence(cfg.seed).spawn(n)]


def run_fit(cfg: RunConfig) -> int:
    outdir = iomod.check_writable(cfg.out or "runs/fit")
    data = iomod.read_dataset(cfg.data)
    space = _space_for(cfg, data)
    _log(cfg, f"fit: n={data.n}, states={space.total_states}")
    seed_fit, seed_paths = _seeds(cfg, 2)
    reports, chron = fitmod.fit_batched(
        data, space, cfg.batch_len, _fit_options(cfg), rng=seed_paths)
    _check_converged(cfg, reports)
    written = iomod.write_results(
        chron, reports, outdir, config=cfg.to_dict(), data=data,
        write_gamma=cfg.write_gamma)
    _log(cfg, f"fit: wrote {len(written)} files to {outdir}")
    return 0


def run_fit_hier(cfg: RunConfig) -> int:
    outdir = iomod.check_writable(cfg.out or "runs/fit-hier")
    data = iomod.read_dataset(cfg.data)
    space = _space_for(cfg, data)
    ties = iomod.read_tiepoints(cfg.ties, data) if cfg.ties else []
    _log(cfg, f"fit-hier: n={data.n}, states={space.total_states}, "
              f"ties={len(ties)}")
    seed_fit, seed_chron = _seeds(cfg, 2)
    q, report = fitmod.fit_vi(data, space, ties, _fit_options(cfg),
                              rng=seed_fit)
    _check_converged(cfg, [report])
    pspace, _ = fitmod.build_hier_objective(data, space, ties,
                                            tie_mode=cfg.tie_mode)
    chron = fitmod.vi_chronology(
        data, space, q, pspace, ties, n_draws=cfg.draws,
        paths_per_draw=cfg.paths_per_draw, rng=seed_chron,
        tie_mode=cfg.tie_mode, threads=cfg.threads)
    written = iomod.write_results(
        chron, [report], outdir, config=cfg.to_dict(), data=data,
        write_gamma=cfg.write_gamma)
    _log(cfg, f"fit-hier: wrote {len(written)} files to {outdir}")
    return 0


def run_fit_cts(cfg: RunConfig) -> int:
    outdir = iomod.check_writable(cfg.out or "runs/fit-cts")
    data = iomod.read_dataset(cfg.data)
    if cfg.m is None:
        from .ctsmodel import initial_rate_guess

        guess = initial_rate_guess(data, build_state_space(cfg.n_s, 1))
        span = float(data.depths[-1] - data.depths[0])
        years = span * float(guess.q[0]) / cfg.n_s
        m = int(np.ceil(years)) + 10
    else:
        m = cfg.m
    space = build_state_space(cfg.n_s, m)
    _log(cfg, f"fit-cts: n={data.n}, states={space.total_states}")
    seed_paths, = _seeds(cfg, 1)
    report = fit_mle_cts(data, space, opts=_fit_options(cfg))
    _check_converged(cfg, [report])
    rates = RateVector(report.params["q"])
    obs = ObservationParams(report.params["a"], report.params["b"],
                            report.params["sigma"])
    chron, gaps = gap_posterior(data, space, rates, obs,
                                n_paths=cfg.n_paths, rng=seed_paths,
                                gap_factor=cfg.gap_factor)
    written = iomod.write_results(
        chron, [report], outdir, config=cfg.to_dict(), data=data,
        write_gamma=cfg.write_gamma, gaps=gaps)
    _log(cfg, f"fit-cts: wrote {len(written)} files to {outdir} "
              f"({len(gaps)} gap(s) detected)")
    return 0


def run_simulate(cfg: RunConfig) -> int:
    outdir = iomod.check_writable(cfg.out or "runs/simulate")
    seed_sim, = _seeds(cfg, 1)
    if cfg.kind == "hmm":
        space = build_state_space(cfg.n_s, auto_year_count(cfg.n, cfg.n_s))
        obs = ObservationParams(cfg.a, cfg.b, cfg.sigma)
        if cfg.rate is not None:
            dynamics = RateVector(np.full(cfg.n_s, cfg.rate))
        else:
            dynamics = StayProbabilities(np.full(cfg.n_s, cfg.stay))
        data, truth = simmod.simulate_hmm(space, dynamics, obs,
                                          (cfg.n, cfg.spacing), rng=seed_sim)
        truth_rows = zip(data.depths, truth["times"], truth["years"])
        header = ["depth", "time", "year"]
    else:
        params = simmod.SdePriorParams(lam=cfg.lam, alpha=cfg.alpha,
                                       eps=cfg.eps,
                                       laplace_scale=cfg.laplace_scale)
        data, truth = simmod.simulate_sde_dataset(
            params, (cfg.n, cfg.spacing), rng=seed_sim, seasonal=cfg.seasonal)
        path = truth["path"]
        truth_rows = zip(data.depths, path.t, np.floor(path.t).astype(int))
        header = ["depth", "time", "year"]

    iomod.write_dataset(outdir / "data.csv", data)
    iomod._write_csv(outdir / "truth.csv", header,
                     [(iomod._fmt(d), iomod._fmt(t), str(int(y)))
                      for d, t, y in truth_rows])
    with open(outdir / "fit.json", "w") as handle:
        json.dump({"config": cfg.to_dict(), "fits": []}, handle,
                  indent=2, sort_keys=True)
        handle.write("\n")
    _log(cfg, f"simulate: wrote data.csv and truth.csv to {outdir}")
    return 0


def run_export(args) -> int:
    rundir = Path(args.rundir)
    payload_path = rundir / "fit.json"
    if not payload_path.is_file():
        raise ValidationError(f"{payload_path} not found")
    with open(payload_path) as handle:
        payload = json.load(handle)
    echo = payload.get("config", {})
    if not echo:
        raise ValidationError(f"{payload_path} holds no config echo")
    command = echo.pop("command")
    cfg = RunConfig(command=command, **echo)
    cfg.out = args.out
    if getattr(args, "quiet", None):
        cfg.quiet = True
    cfg.validate()
    return _DISPATCH[command](cfg)


_DISPATCH = {
    "fit": run_fit,
    "fit-hier": run_fit_hier,
    "fit-cts": run_fit_cts,
    "simulate": run_simulate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        if args.command == "export":
            return run_export(args)
        cfg = _resolve_config(args)
        if cfg.data is None and args.command in ("fit", "fit-hier", "fit-cts"):
            raise ValidationError("a dataset CSV is required")
        return _DISPATCH[args.command](cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InferenceError as exc:
        print(f"inference error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
