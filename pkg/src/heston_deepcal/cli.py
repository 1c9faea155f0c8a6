"""Command-line entry point: ``heston-deepcal <subcommand> ...``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure (including a
failed oracle check), 4 file I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import warnings
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ExtrapolationWarning, HestonDeepCalError, NumericalError, ValidationError
from .heston import DEFAULT_QUAD, PARAM_NAMES, ChainPricer, HestonParams, QuadratureConfig, SlicePricer, bs_call
from .hybrid import (
    DEFAULT_NET_TRAIN,
    PipelineConfig,
    StageError,
    compute_metrics,
    run_pipeline,
    train_pan,
)
from .market_data import DAYS_PER_YEAR, MarketState, OptionChain, atomic_write_text, load_chain
from .mc import THREADS_ENV, McConfig, default_threads, mc_itm_probabilities
from .micronet import TrainConfig
from .optimizers import (
    DEFAULT_LOWER,
    DEFAULT_UPPER,
    CalibrationWeights,
    DeConfig,
    NmConfig,
    ParamBounds,
    calibrate,
)

log = logging.getLogger("heston_deepcal")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

BOUND_UNITS = "(kappa 1/years; theta, v0 annualized variance; sigma annualized; rho dimensionless)"
DEFAULT_PARAMS = dict(kappa=2.0, theta=0.04, sigma=0.3, rho=-0.7, v0=0.04)


class CheckFailed(NumericalError):
    pass


def bundled_chain_path() -> Path:
    return Path(str(resources.files("heston_deepcal") / "data" / "synthetic_chain.csv"))


# -- argument helpers ---------------------------------------------------------

def _positive(kind=float):
    def parse(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value

    return parse


def _existing_file(text):
    if not Path(text).is_file():
        raise argparse.ArgumentTypeError(f"no such file: {text}")
    return text


def _add_params(p):
    g = p.add_argument_group("Heston parameters")
    g.add_argument("--kappa", type=float, default=DEFAULT_PARAMS["kappa"], help="mean-reversion speed, 1/years (default %(default)s)")
    g.add_argument("--theta", type=float, default=DEFAULT_PARAMS["theta"], help="long-run variance, annualized (default %(default)s)")
    g.add_argument("--sigma", type=float, default=DEFAULT_PARAMS["sigma"], help="vol of variance, annualized (default %(default)s)")
    g.add_argument("--rho", type=float, default=DEFAULT_PARAMS["rho"], help="spot/variance correlation, dimensionless (default %(default)s)")
    g.add_argument("--v0", type=float, default=DEFAULT_PARAMS["v0"], help="initial variance, annualized (default %(default)s)")


def _add_market(p):
    g = p.add_argument_group("market and contract")
    g.add_argument("--spot", type=float, default=100.0, help="spot price, currency units (default %(default)s)")
    g.add_argument("--rate", type=float, default=0.03, help="continuously compounded risk-free rate, per year (default %(default)s)")
    g.add_argument("--strike", type=float, nargs="+", default=[80.0, 90.0, 100.0, 110.0, 120.0],
                   help="one or more strikes, currency units (default %(default)s)")
    g.add_argument("--maturity", type=float, default=0.5, help="time to expiry, years (default %(default)s)")


def _add_quad(p):
    g = p.add_argument_group("quadrature")
    g.add_argument("--nodes", type=int, default=DEFAULT_QUAD.nodes, help="Gauss-Legendre nodes, count (default %(default)s)")
    g.add_argument("--upper-limit", type=float, default=DEFAULT_QUAD.upper_limit,
                   help="integration cut-off in the Fourier variable, dimensionless (default %(default)s)")


def _add_chain(p):
    p.add_argument("--chain", type=_existing_file, default=None,
                   help="chain CSV (strike, maturity_days, last_price); default: the bundled synthetic chain")
    p.add_argument("--meta", type=_existing_file, default=None,
                   help="market-state JSON side-car (spot, rate, as_of); default: chain path with .json suffix")


def _add_de(p, pop=40, gens=300):
    g = p.add_argument_group("differential evolution")
    g.add_argument("--pop", type=int, default=pop, help="population size, count (default %(default)s)")
    g.add_argument("--gens", type=int, default=gens, help="maximum generations, count (default %(default)s)")
    g.add_argument("--de-tol", type=float, default=1e-8, help="relative population spread that stops the search, dimensionless (default %(default)s)")
    g.add_argument("--strategy", choices=("best1bin", "rand1bin"), default="best1bin", help="mutation strategy (default %(default)s)")


def _add_bounds(p):
    p.add_argument("--lower", type=float, nargs=5, metavar=("KAPPA", "THETA", "SIGMA", "RHO", "V0"),
                   default=list(DEFAULT_LOWER), help=f"lower parameter bounds {BOUND_UNITS} (default %(default)s)")
    p.add_argument("--upper", type=float, nargs=5, metavar=("KAPPA", "THETA", "SIGMA", "RHO", "V0"),
                   default=list(DEFAULT_UPPER), help=f"upper parameter bounds {BOUND_UNITS} (default %(default)s)")
    p.add_argument("--weights", choices=("uniform", "inverse_price"), default="uniform",
                   help="per-quote objective weights (default %(default)s)")


def _add_net_train(p, default_epochs, default_lr, default_batch):
    g = p.add_argument_group("network training")
    g.add_argument("--epochs", type=int, default=default_epochs, help="training epochs, count (default %(default)s)")
    g.add_argument("--lr", type=float, default=default_lr, help="optimizer learning rate, dimensionless (default %(default)s)")
    g.add_argument("--batch-size", type=int, default=default_batch, help="mini-batch size, rows; 0 = full batch (default %(default)s)")
    g.add_argument("--optimizer", choices=("adam", "sgd"), default="adam", help="training optimizer (default %(default)s)")


def _train_cfg(args, seed, base: TrainConfig):
    batch = args.batch_size if args.batch_size > 0 else DEFAULT_NET_TRAIN.batch_size
    return replace(base, optimizer=args.optimizer, lr=args.lr, epochs=args.epochs, batch_size=batch, seed=seed)


def _params(args) -> HestonParams:
    return HestonParams(args.kappa, args.theta, args.sigma, args.rho, args.v0)


def _quad(args) -> QuadratureConfig:
    return QuadratureConfig(upper_limit=args.upper_limit, nodes=args.nodes)


def _chain(args) -> OptionChain:
    path = args.chain or bundled_chain_path()
    return load_chain(path, args.meta)


def _bounds(args) -> ParamBounds:
    bounds = ParamBounds.heston(args.lower, args.upper)
    bounds.check_heston()
    return bounds


def _de_cfg(args, seed):
    return DeConfig(pop_size=args.pop, max_gens=args.gens, tol=args.de_tol, strategy=args.strategy,
                    seed=seed, workers=args.threads)


def _emit(text, out=None):
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _json(doc) -> str:
    return json.dumps(doc, indent=2) + "\n"


# -- subcommands --------------------------------------------------------------

def cmd_price(args):
    params = _params(args)
    state = MarketState(args.spot, args.rate)
    strikes = np.asarray(args.strike, dtype=float)
    if np.any(~(strikes > 0)):
        raise ValidationError(f"--strike must be positive, got {args.strike}")
    pricer = SlicePricer(strikes, state, args.maturity, _quad(args))
    p1, p2 = pricer.probabilities(params)
    prices = pricer.prices(params)
    rows = []
    for k, c, a, b in zip(strikes, prices, p1, p2):
        row = {"strike": float(k), "price": float(c), "p1": float(a), "p2": float(b)}
        if args.bs_vol is not None:
            row["bs_price"] = bs_call(float(k), state, args.bs_vol, args.maturity)
        rows.append(row)
    doc = {"params": params.to_dict(), "market": state.to_dict(), "maturity": args.maturity, "quotes": rows}
    if not args.quiet:
        for row in rows:
            line = f"K={row['strike']:g}  price={row['price']:.8f}  P1={row['p1']:.8f}  P2={row['p2']:.8f}"
            if "bs_price" in row:
                line += f"  BS({args.bs_vol:g})={row['bs_price']:.8f}"
            print(line, file=sys.stderr)
    _emit(_json(doc), args.out)


def cmd_mc_check(args):
    params = _params(args)
    state = MarketState(args.spot, args.rate)
    strikes = np.asarray(args.strike, dtype=float)
    if np.any(~(strikes > 0)):
        raise ValidationError(f"--strike must be positive, got {args.strike}")
    cfg = McConfig(n_paths=args.paths, n_steps=args.steps, seed=args.seed)
    from .mc import mc_call_prices

    analytic = SlicePricer(strikes, state, args.maturity, _quad(args)).prices(params)
    mc = mc_call_prices(strikes, state, params, args.maturity, cfg, threads=args.threads)
    rows = []
    for k, a, est in zip(strikes, analytic, mc):
        ok = est.contains(a, args.n_se)
        rows.append({"strike": float(k), "analytic": float(a), "mc": est.value, "std_error": est.std_error,
                     "z": (float(a) - est.value) / est.std_error if est.std_error > 0 else 0.0, "pass": bool(ok)})
    lines = [f"{'strike':>10} {'analytic':>14} {'mc':>14} {'se':>10} {'z':>7}  result"]
    for r in rows:
        lines.append(f"{r['strike']:>10g} {r['analytic']:>14.8f} {r['mc']:>14.8f} {r['std_error']:>10.2e} "
                     f"{r['z']:>7.2f}  {'PASS' if r['pass'] else 'FAIL'}")
    print("\n".join(lines))
    if args.out:
        atomic_write_text(args.out, _json({"config": {"n_paths": cfg.n_paths, "n_steps": cfg.n_steps, "seed": cfg.seed,
                                                      "n_se": args.n_se}, "rows": rows}))
    if not all(r["pass"] for r in rows):
        raise CheckFailed(f"analytic price outside {args.n_se} standard errors for some strikes")


def _curve_csv(chain: OptionChain, model_prices) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strike", "maturity_days", "series", "value"])
    for series, values in (("market", chain.prices), ("heston", model_prices)):
        for q, v in zip(chain.quotes, values):
            w.writerow([repr(q.strike), repr(q.maturity_days), series, repr(float(v))])
    return buf.getvalue()


def cmd_calibrate(args):
    chain = _chain(args)
    bounds = _bounds(args)
    weights = CalibrationWeights(args.weights)
    quad = _quad(args)
    if args.method == "de":
        cfg = _de_cfg(args, args.seed)
    else:
        cfg = NmConfig(max_iters=args.max_iters)
    result = calibrate(chain, args.method, bounds, weights, cfg, quad)
    doc = result.to_dict()
    doc["n_quotes"] = len(chain)
    _emit(_json(doc), args.out)
    if args.curve:
        atomic_write_text(args.curve, _curve_csv(chain, ChainPricer(chain, quad)(result.params)))
    log.info("objective %.6g after %d evaluations", result.objective, result.evaluations)


def cmd_surrogate_gen(args):
    from .surrogate import SamplingSpec, default_surrogate_bounds, gen_synthetic, save_dataset

    bounds = ParamBounds.heston(args.lower, args.upper) if args.lower else default_surrogate_bounds()
    spec = SamplingSpec(
        bounds=bounds,
        maturity_range=tuple(args.maturity_range),
        moneyness_range=tuple(args.moneyness_range),
        n_samples=args.samples,
        scheme=args.scheme,
        seed=args.seed,
        rate=args.rate,
        grid_points=args.grid_points,
    )
    data = gen_synthetic(spec, _quad(args), workers=args.threads)
    save_dataset(data, args.out)
    print(f"wrote {len(data)} rows to {args.out} ({data.failures} dropped)")


def cmd_surrogate_train(args):
    from .surrogate import SURROGATE_TRAIN, load_dataset, save_surrogate, train_surrogate

    data = load_dataset(args.data, rate=args.rate)
    cfg = _train_cfg(args, args.seed, SURROGATE_TRAIN)
    model, _ = train_surrogate(data, cfg=cfg, validation_fraction=args.validation_fraction, seed=args.seed)
    save_surrogate(model, args.out)
    print(f"validation RMSE {model.validation_rmse:.6e} (normalized price)")


def cmd_surrogate_calibrate(args):
    from .surrogate import load_surrogate, surrogate_calibrate

    model = load_surrogate(args.net)
    chain = _chain(args)
    bounds = ParamBounds.heston(args.lower, args.upper) if args.lower else None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ExtrapolationWarning)
        result = surrogate_calibrate(chain, model, bounds, CalibrationWeights(args.weights), _de_cfg(args, args.seed))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    doc = result.to_dict()
    doc["n_quotes"] = len(chain)
    doc["extrapolation_warnings"] = len(caught)
    _emit(_json(doc), args.out)


def cmd_pan_train(args):
    chain = _chain(args)
    slices = chain.maturity_slices()
    if args.maturity_days is not None:
        slices = [s for s in slices if s.quotes[0].maturity_days == args.maturity_days]
        if not slices:
            raise ValidationError(f"--maturity-days {args.maturity_days:g} not present in the chain")
    elif len(slices) > 1:
        raise ValidationError("chain has several maturities; choose one with --maturity-days")
    data = slices[0]
    model = train_pan(data, _train_cfg(args, args.seed, DEFAULT_NET_TRAIN), seed=args.seed)
    atomic_write_text(args.out, json.dumps(model.to_dict(), indent=1, sort_keys=True) + "\n")
    fitted = model(data.strikes)
    rmse = compute_metrics(fitted, data.prices).rmse
    if args.curve:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strike", "series", "value"])
        for series, values in (("market", data.prices), ("pan", fitted)):
            for k, v in zip(data.strikes, values):
                w.writerow([repr(float(k)), series, repr(float(v))])
        atomic_write_text(args.curve, buf.getvalue())
    print(f"PAN training RMSE {rmse:.6e} over {len(data)} quotes")


def cmd_pipeline(args):
    chain = _chain(args)
    if args.maturity_days is not None:
        chain = chain.filter(max_days=args.maturity_days)
        chain = chain.subset([i for i, q in enumerate(chain.quotes) if q.maturity_days == args.maturity_days])
    cfg = PipelineConfig(
        test_fraction=args.test_fraction,
        split_strategy=args.split,
        split_seed=args.seed,
        method=args.method,
        de=_de_cfg(args, args.seed),
        bounds=_bounds(args),
        weights=CalibrationWeights(args.weights),
        quad=_quad(args),
        pan=_train_cfg(args, args.seed, DEFAULT_NET_TRAIN),
        ccn=_train_cfg(args, args.seed + 1, DEFAULT_NET_TRAIN),
        pan_seed=args.seed,
        ccn_seed=args.seed + 1,
        ccn_target=args.ccn_target,
        ccn_residual=not args.plain_ccn,
    )
    report = run_pipeline(chain, cfg)
    report.save(args.out, args.curves)
    print(f"{'metric':<12} {'traditional':>14} {'deep_learning':>14}")
    for name, row in report.table().items():
        print(f"{name:<12} {row['traditional']:>14.6g} {row['deep_learning']:>14.6g}")
    print(f"CCN applied: {'yes' if report.ccn_applied else 'no'}; report written to {args.out}")


def cmd_metrics(args):
    if args.report:
        try:
            doc = json.loads(Path(args.report).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.report}: not valid JSON ({exc})") from None
        try:
            trad, deep = doc["traditional"], doc["deep_learning"]
        except KeyError:
            raise ValidationError(f"{args.report} is not a pipeline report") from None
        out = {}
        for split in ("train", "test"):
            for metric in ("rmse", "mre", "mae"):
                out[f"{split.capitalize()} {metric.upper()}"] = {
                    "traditional": trad[split][metric], "deep_learning": deep[split][metric]}
        _emit(_json(out), args.out)
        return
    if not args.csv:
        raise ValidationError("give --report or --csv")
    with open(args.csv, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for col in (args.model_column, args.market_column):
            if col not in (reader.fieldnames or ()):
                raise ValidationError(f"{args.csv} lacks column {col!r}")
        rows = list(reader)
    try:
        model = [float(r[args.model_column]) for r in rows]
        market = [float(r[args.market_column]) for r in rows]
    except ValueError as exc:
        raise ValidationError(f"{args.csv}: {exc}") from None
    _emit(_json(compute_metrics(model, market).to_dict()), args.out)


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heston-deepcal",
        description="Heston pricing, calibration, and neural-network price correction.",
        epilog=f"Worker threads default to ${THREADS_ENV} or the number of CPU cores.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=_positive(int), default=None,
                        help=f"worker threads for MC, DE, and dataset generation, count (default ${THREADS_ENV} or all cores)")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("price", help="price European calls with the characteristic-function formula")
    _add_params(p)
    _add_market(p)
    _add_quad(p)
    p.add_argument("--bs-vol", type=_positive(), default=None, help="also print the Black-Scholes price at this volatility, annualized")
    p.add_argument("--out", default=None, help="write the JSON result here instead of stdout")
    p.add_argument("-q", "--quiet", action="store_true", help="suppress the human-readable lines on stderr")
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("mc-check", help="compare analytic prices with a Monte Carlo estimate")
    _add_params(p)
    _add_market(p)
    _add_quad(p)
    p.add_argument("--paths", type=int, default=McConfig.n_paths, help="simulated paths, count (default %(default)s)")
    p.add_argument("--steps", type=int, default=McConfig.n_steps, help="time steps per path, count (default %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="random seed, integer (default %(default)s)")
    p.add_argument("--n-se", type=float, default=3.0, help="pass band, in MC standard errors (default %(default)s)")
    p.add_argument("--out", default=None, help="also write the comparison as JSON")
    p.set_defaults(func=cmd_mc_check)

    p = sub.add_parser("calibrate", help="fit Heston parameters to an option chain")
    _add_chain(p)
    _add_quad(p)
    _add_bounds(p)
    _add_de(p)
    p.add_argument("--method", choices=("de", "nm"), default="de", help="optimizer (default %(default)s)")
    p.add_argument("--max-iters", type=int, default=NmConfig.max_iters, help="Nelder-Mead iterations, count (default %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="random seed, integer (default %(default)s)")
    p.add_argument("--out", default=None, help="calibration result JSON (default stdout)")
    p.add_argument("--curve", default=None, help="market vs fitted Heston prices as CSV")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("surrogate", help="surrogate pricing network workflow")
    ssub = p.add_subparsers(dest="action", metavar="ACTION")
    ssub.required = True

    g = ssub.add_parser("gen", help="generate a synthetic pricing dataset")
    _add_quad(g)
    g.add_argument("--out", required=True, help="dataset CSV path")
    g.add_argument("--samples", type=int, default=10_000, help="rows for uniform_random sampling, count (default %(default)s)")
    g.add_argument("--scheme", choices=("uniform_random", "grid"), default="uniform_random", help="sampling scheme (default %(default)s)")
    g.add_argument("--grid-points", type=int, default=3, help="grid points per axis; grid rows = points^7 (default %(default)s)")
    g.add_argument("--maturity-range", type=float, nargs=2, default=[0.1, 1.0], metavar=("MIN", "MAX"),
                   help="maturity range, years (default %(default)s)")
    g.add_argument("--moneyness-range", type=float, nargs=2, default=[-0.3, 0.3], metavar=("MIN", "MAX"),
                   help="log-moneyness ln(S/K) range, dimensionless (default %(default)s)")
    g.add_argument("--lower", type=float, nargs=5, default=None, metavar=("KAPPA", "THETA", "SIGMA", "RHO", "V0"),
                   help=f"lower parameter bounds {BOUND_UNITS} (default: surrogate box)")
    g.add_argument("--upper", type=float, nargs=5, default=None, metavar=("KAPPA", "THETA", "SIGMA", "RHO", "V0"),
                   help=f"upper parameter bounds {BOUND_UNITS} (default: surrogate box)")
    g.add_argument("--rate", type=float, default=0.0, help="risk-free rate used for every row, per year (default %(default)s)")
    g.add_argument("--seed", type=int, default=0, help="random seed, integer (default %(default)s)")
    g.set_defaults(func=cmd_surrogate_gen)

    from .surrogate import SURROGATE_TRAIN

    t = ssub.add_parser("train", help="train the surrogate network on a dataset CSV")
    t.add_argument("--data", type=_existing_file, required=True, help="dataset CSV from 'surrogate gen'")
    t.add_argument("--out", required=True, help="network JSON path")
    t.add_argument("--rate", type=float, default=0.0, help="rate the dataset was generated at, per year (default %(default)s)")
    t.add_argument("--validation-fraction", type=float, default=0.2, help="held-out share of rows (default %(default)s)")
    t.add_argument("--seed", type=int, default=0, help="random seed, integer (default %(default)s)")
    _add_net_train(t, SURROGATE_TRAIN.epochs, SURROGATE_TRAIN.lr, SURROGATE_TRAIN.batch_size)
    t.set_defaults(func=cmd_surrogate_train)

    c = ssub.add_parser("calibrate", help="calibrate through a trained surrogate")
    c.add_argument("--net", type=_existing_file, required=True, help="network JSON from 'surrogate train'")
    _add_chain(c)
    _add_de(c)
    c.add_argument("--lower", type=float, nargs=5, default=None, metavar=("KAPPA", "THETA", "SIGMA", "RHO", "V0"),
                   help=f"lower parameter bounds {BOUND_UNITS} (default: the surrogate's training box)")
    c.add_argument("--upper", type=float, nargs=5, default=None, metavar=("KAPPA", "THETA", "SIGMA", "RHO", "V0"),
                   help=f"upper parameter bounds {BOUND_UNITS} (default: the surrogate's training box)")
    c.add_argument("--weights", choices=("uniform", "inverse_price"), default="uniform",
                   help="per-quote objective weights (default %(default)s)")
    c.add_argument("--seed", type=int, default=0, help="random seed, integer (default %(default)s)")
    c.add_argument("--out", default=None, help="calibration result JSON (default stdout)")
    c.set_defaults(func=cmd_surrogate_calibrate)

    p = sub.add_parser("pan-train", help="fit the price approximation network to one maturity slice")
    _add_chain(p)
    p.add_argument("--maturity-days", type=float, default=None, help="slice to fit, calendar days")
    p.add_argument("--seed", type=int, default=0, help="random seed, integer (default %(default)s)")
    p.add_argument("--out", required=True, help="network JSON path")
    p.add_argument("--curve", default=None, help="market vs PAN prices as CSV")
    _add_net_train(p, DEFAULT_NET_TRAIN.epochs, DEFAULT_NET_TRAIN.lr, 0)
    p.set_defaults(func=cmd_pan_train)

    p = sub.add_parser("pipeline", help="calibrate, train PAN and CCN, and report error metrics")
    _add_chain(p)
    _add_quad(p)
    _add_bounds(p)
    _add_de(p)
    _add_net_train(p, DEFAULT_NET_TRAIN.epochs, DEFAULT_NET_TRAIN.lr, 0)
    p.add_argument("--maturity-days", type=float, default=None, help="run on this slice only, calendar days")
    p.add_argument("--method", choices=("de", "nm"), default="de", help="calibration optimizer (default %(default)s)")
    p.add_argument("--test-fraction", type=float, default=0.2, help="share of quotes held out (default %(default)s)")
    p.add_argument("--split", choices=("interleaved", "random"), default="interleaved", help="split strategy (default %(default)s)")
    p.add_argument("--ccn-target", choices=("pan", "market"), default="pan", help="what the CCN is trained towards (default %(default)s)")
    p.add_argument("--plain-ccn", action="store_true", help="CCN predicts prices directly instead of a correction added to the Heston price")
    p.add_argument("--seed", type=int, default=0, help="seed for the split, DE, and PAN, integer; the CCN uses seed+1 (default %(default)s)")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--curves", default=None, help="strike/series/value CSV of market, heston, pan, corrected prices")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("metrics", help="RMSE/MAE/MRE from a CSV, or the table from a pipeline report")
    p.add_argument("--report", type=_existing_file, default=None, help="pipeline report JSON")
    p.add_argument("--csv", type=_existing_file, default=None, help="CSV with model and market price columns")
    p.add_argument("--model-column", default="model", help="model price column, currency units (default %(default)s)")
    p.add_argument("--market-column", default="market", help="market price column, currency units (default %(default)s)")
    p.add_argument("--out", default=None, help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_metrics)
    return parser


def _resolve_threads(value):
    if value is not None:
        return value
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ValidationError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        return n
    return default_threads()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        args.threads = _resolve_threads(args.threads)
        args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL if isinstance(exc.cause, NumericalError) else EXIT_VALIDATION
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, FloatingPointError, OverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except HestonDeepCalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
