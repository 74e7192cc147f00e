"""Command-line surface binding the pipeline end to end.

Subcommands: ``dgp`` (emit a synthetic dataset as CSV), ``fit`` (one
posterior fit, JSON summary), ``bench`` (Monte Carlo coverage/length study
from a JSON config, CSV + markdown reports), ``experiment`` (orthogonality
slopes and TV-stability runs, CSV).

Exit codes: 0 success, 2 configuration error, 3 numeric failure. The
environment variable GBC_SEED, when set, overrides --seed everywhere.
"""

import argparse
import json
import os
import sys

from . import bench as bench_mod
from . import dgp as dgp_mod
from .calibrate import gpc_omega_cate_from_pseudo, gpc_omega_from_pseudo, plugin_omega
from .dataset import read_csv, write_csv
from .errors import ConfigError, GbcError, NumericError, SchemaError
from .gibbs_ate import (
    NormalPrior,
    closed_form_posterior,
    credible_interval,
    vi_posterior,
)
from .gibbs_cate import KernelParams, exact_gp_posterior, predict, svgp_fit
from .nuisance import NuisanceConfig, cross_fit
from .numerics import OptimizerConfig, Rng, normal_quantile
from .pseudo import Strategy, cross_fitted_pseudo


def _resolve_seed(args):
    env = os.environ.get("GBC_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"GBC_SEED must be an integer, got {env!r}") from None
    return args.seed


def _nuisance_config(args):
    return NuisanceConfig(
        clip_eps=args.clip_eps, lambda_prop=args.lambda_prop, lambda_out=args.lambda_out
    )


def _kernel(args):
    return KernelParams(
        family=args.kernel,
        lengthscale=args.lengthscale,
        variance=args.variance,
        jitter=args.jitter,
    )


def _add_nuisance_flags(p):
    p.add_argument("--folds", type=int, default=5, help="cross-fitting folds (default: %(default)s)")
    p.add_argument("--clip-eps", type=float, default=0.01,
                   help="propensity clip bound (default: %(default)s)")
    p.add_argument("--lambda-prop", type=float, default=1.0,
                   help="propensity ridge penalty (default: %(default)s)")
    p.add_argument("--lambda-out", type=float, default=0.001,
                   help="outcome ridge penalty (default: %(default)s)")


def _add_kernel_flags(p):
    p.add_argument("--kernel", choices=["Matern52", "RBF"], default="Matern52",
                   help="GP kernel family (default: %(default)s)")
    p.add_argument("--lengthscale", type=float, default=2.0,
                   help="kernel lengthscale (default: %(default)s)")
    p.add_argument("--variance", type=float, default=2.0,
                   help="kernel variance (default: %(default)s)")
    p.add_argument("--jitter", type=float, default=1e-4,
                   help="diagonal jitter (default: %(default)s)")


def cmd_dgp(args):
    seed = _resolve_seed(args)
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    spec = dgp_mod.default_spec(args.id)
    ds = dgp_mod.generate(spec, args.n, Rng(seed))
    write_csv(ds, args.out)
    print(f"wrote {ds.n} rows to {args.out}")
    return 0


def _fit_dataset(args, seed):
    if (args.data is None) == (args.dgp is None):
        raise ConfigError("provide exactly one of --data or --dgp")
    if args.dgp is not None:
        if args.n is None:
            raise ConfigError("--dgp requires --n")
        if args.n < 1:
            raise ConfigError("--n must be >= 1")
        return dgp_mod.generate(dgp_mod.default_spec(args.dgp), args.n, Rng(seed).derive(0))
    return read_csv(args.data)


def cmd_fit(args):
    seed = _resolve_seed(args)
    if args.estimand == "cate" and args.engine == "closed":
        raise ConfigError("engine=closed is only valid for estimand=ate; use vi or exact-gp")
    if args.estimand == "ate" and args.engine == "exact-gp":
        raise ConfigError("engine=exact-gp is only valid for estimand=cate")

    rng = Rng(seed)
    ds = _fit_dataset(args, seed)
    strategy = Strategy.parse(args.strategy)
    label = args.strategy.strip().upper()
    config = _nuisance_config(args)
    cf = cross_fit(ds, args.folds, config, rng.derive(1))
    pv = cross_fitted_pseudo(ds, cf, strategy)
    prior = NormalPrior(m0=args.prior_mean, s0_sq=args.prior_var)

    if args.estimand == "ate":
        if args.calibration == "plugin":
            omega = plugin_omega(pv)
        else:
            omega = gpc_omega_from_pseudo(
                pv, prior, args.alpha, args.b_boot, args.max_iter, rng.derive(2)
            ).omega
        if args.engine == "closed":
            post = closed_form_posterior(pv, prior, omega)
        else:
            post = vi_posterior(pv, prior, omega, OptimizerConfig(), rng.derive(3))
        lo, hi = credible_interval(post, args.alpha)
        summary = {
            "estimand": "ate",
            "strategy": label,
            "omega": omega,
            "posterior": {"mean": post.m_p, "sd": post.sd},
            "cri": {"lo": lo, "hi": hi},
            "n": ds.n,
            "seed": seed,
        }
    else:
        kernel = _kernel(args)
        grid_size = min(args.grid_size, ds.n)
        x_query = ds.x[rng.derive(4).permutation(ds.n)[:grid_size]]
        if args.calibration == "plugin":
            omega = plugin_omega(pv)
        else:
            omega = gpc_omega_cate_from_pseudo(
                ds.x, pv, args.alpha, args.b_boot, args.max_iter, rng.derive(2),
                kernel, x_query,
            ).omega
        if args.engine == "vi":
            gp = svgp_fit(ds.x, pv, kernel, omega, min(args.m_inducing, ds.n),
                          OptimizerConfig(), rng.derive(3))
            means, variances = predict(gp, x_query)
        else:
            means, variances = exact_gp_posterior(ds.x, pv, kernel, omega).predict(x_query)
        half = normal_quantile(1.0 - args.alpha / 2.0) * variances**0.5
        summary = {
            "estimand": "cate",
            "strategy": label,
            "omega": omega,
            "posterior": {
                "pointwise": [
                    {"x": [float(v) for v in x_query[i]], "mean": float(means[i]),
                     "sd": float(variances[i] ** 0.5)}
                    for i in range(x_query.shape[0])
                ]
            },
            "cri": [
                {"lo": float(means[i] - half[i]), "hi": float(means[i] + half[i])}
                for i in range(x_query.shape[0])
            ],
            "n": ds.n,
            "seed": seed,
        }

    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote fit summary to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


_BENCH_REQUIRED = ("datasets", "strategies", "reps", "alpha", "estimand", "calibration", "seed")
_BENCH_OPTIONAL = {
    "n": None,
    "n_grid": None,
    "parallelism": None,
    "folds": 5,
    "clip_eps": 0.01,
    "lambda_prop": 1.0,
    "lambda_out": 0.001,
    "b_boot": 200,
    "max_iter": 50,
    "prior_mean": 0.0,
    "prior_var": 1.0,
    "m_inducing": 20,
    "k_points": 100,
}


def _load_bench_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"could not read bench config {path!r}: {exc}") from None
    if not isinstance(raw, dict):
        raise SchemaError("bench config must be a JSON object")
    for key in _BENCH_REQUIRED:
        if key not in raw:
            raise SchemaError(f"bench config is missing required key {key!r}")
    for key in raw:
        if key not in _BENCH_REQUIRED and key not in _BENCH_OPTIONAL:
            raise SchemaError(f"bench config has unknown key {key!r}")
    cfg = dict(_BENCH_OPTIONAL)
    cfg.update(raw)

    if cfg["n"] is None and cfg["n_grid"] is None:
        raise SchemaError("bench config needs key 'n' or 'n_grid'")
    if cfg["n"] is not None and cfg["n_grid"] is not None:
        raise SchemaError("bench config keys 'n' and 'n_grid' are mutually exclusive")
    if not isinstance(cfg["datasets"], list) or not cfg["datasets"]:
        raise SchemaError("key 'datasets' must be a non-empty list of DGP ids")
    if not isinstance(cfg["strategies"], list) or not cfg["strategies"]:
        raise SchemaError("key 'strategies' must be a non-empty list")
    if not isinstance(cfg["reps"], int) or cfg["reps"] < 2:
        raise SchemaError("key 'reps' must be an integer >= 2")
    if not (isinstance(cfg["alpha"], (int, float)) and 0 < cfg["alpha"] < 1):
        raise SchemaError("key 'alpha' must lie in (0, 1)")
    if cfg["estimand"] not in ("ate", "cate"):
        raise SchemaError("key 'estimand' must be 'ate' or 'cate'")
    if cfg["calibration"] not in ("plugin", "gpc"):
        raise SchemaError("key 'calibration' must be 'plugin' or 'gpc'")
    if cfg["estimand"] == "cate" and cfg["calibration"] != "plugin":
        raise SchemaError("key 'calibration' must be 'plugin' for the cate bench")
    if not isinstance(cfg["seed"], int):
        raise SchemaError("key 'seed' must be an integer")
    n_grid = cfg["n_grid"] if cfg["n_grid"] is not None else [cfg["n"]]
    if not all(isinstance(v, int) and v >= 1 for v in n_grid):
        raise SchemaError("sample sizes in 'n'/'n_grid' must be integers >= 1")
    cfg["n_grid"] = n_grid
    return cfg


def cmd_bench(args):
    cfg = _load_bench_config(args.config)
    seed = cfg["seed"]
    env = os.environ.get("GBC_SEED")
    if env is not None:
        try:
            seed = int(env)
        except ValueError:
            raise ConfigError(f"GBC_SEED must be an integer, got {env!r}") from None
    if args.parallelism is not None:
        parallelism = args.parallelism
    elif cfg["parallelism"] is not None:
        parallelism = cfg["parallelism"]
    else:
        parallelism = os.cpu_count() or 1
    if not isinstance(parallelism, int) or parallelism < 1:
        raise ConfigError("parallelism must be an integer >= 1")

    nconf = NuisanceConfig(
        clip_eps=cfg["clip_eps"], lambda_prop=cfg["lambda_prop"], lambda_out=cfg["lambda_out"]
    )
    prior = NormalPrior(m0=cfg["prior_mean"], s0_sq=cfg["prior_var"])
    reports = []
    for dataset_id in cfg["datasets"]:
        spec = dgp_mod.default_spec(dataset_id)
        for raw_label in cfg["strategies"]:
            strategy = Strategy.parse(raw_label)
            label = str(raw_label).strip().upper()
            for n in cfg["n_grid"]:
                if cfg["estimand"] == "ate":
                    reports.append(
                        bench_mod.run_ate_bench(
                            spec, strategy, n, cfg["reps"], prior, cfg["calibration"],
                            seed, alpha=cfg["alpha"], folds=cfg["folds"],
                            nuisance_config=nconf, parallelism=parallelism,
                            b_boot=cfg["b_boot"], max_iter=cfg["max_iter"],
                            strategy_label=label,
                        )
                    )
                else:
                    reports.append(
                        bench_mod.run_cate_bench(
                            spec, strategy, n, cfg["reps"], KernelParams(),
                            cfg["m_inducing"], cfg["k_points"], seed,
                            alpha=cfg["alpha"], folds=cfg["folds"],
                            nuisance_config=nconf, parallelism=parallelism,
                            strategy_label=label,
                        )
                    )

    os.makedirs(args.out_dir, exist_ok=True)
    csv_path = os.path.join(args.out_dir, "bench_report.csv")
    md_path = os.path.join(args.out_dir, "bench_report.md")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(bench_mod.reports_to_csv(reports))
    with open(md_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(bench_mod.reports_to_markdown(reports, alpha=cfg["alpha"]))
    print(f"wrote {csv_path} and {md_path} ({len(reports)} rows)")
    return 0


def _parse_float_list(text, flag):
    try:
        values = [float(tok) for tok in str(text).split(",") if tok.strip() != ""]
    except ValueError:
        raise ConfigError(f"{flag} must be a comma-separated list of numbers") from None
    if not values:
        raise ConfigError(f"{flag} must contain at least one value")
    return values


def cmd_experiment(args):
    seed = _resolve_seed(args)
    spec = dgp_mod.default_spec(args.dgp)
    if args.kind == "slopes":
        deltas = _parse_float_list(args.deltas, "--deltas")
        results = bench_mod.orthogonality_slopes(spec, deltas, args.n, seed)
        lines = ["strategy,delta,shift,slope"]
        for strategy in Strategy:
            res = results[strategy]
            for delta, shift in zip(res.deltas, res.shifts):
                lines.append(f"{strategy.value},{delta:.6g},{shift:.17g},")
            lines.append(f"{strategy.value},,,{res.slope:.6g}")
        text = "\n".join(lines) + "\n"
    else:
        n_grid = [int(v) for v in _parse_float_list(args.n_grid, "--n-grid")]
        strategy = Strategy.parse(args.strategy)
        points = bench_mod.tv_stability(
            spec, args.beta, n_grid, seed, strategy=strategy, reps=args.reps
        )
        lines = ["n,r_n,tv_mean,tv_se"]
        for pt in points:
            lines.append(f"{pt.n},{pt.r_n:.6g},{pt.tv_mean:.17g},{pt.tv_se:.17g}")
        text = "\n".join(lines) + "\n"
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    print(f"wrote {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gbcausal",
        description="Generalized (Gibbs) posteriors for causal estimands: "
        "datasets, fits, coverage benchmarks, and stability experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_dgp = sub.add_parser("dgp", help="generate a synthetic dataset and write it as CSV")
    p_dgp.add_argument("--id", required=True, choices=list(dgp_mod.DGP_IDS),
                       help="data-generating process id")
    p_dgp.add_argument("--n", type=int, required=True, help="number of observations")
    p_dgp.add_argument("--seed", type=int, default=0,
                       help="random seed (default: %(default)s); GBC_SEED overrides")
    p_dgp.add_argument("--out", required=True, help="output CSV path")
    p_dgp.set_defaults(func=cmd_dgp)

    p_fit = sub.add_parser("fit", help="fit one generalized posterior and emit a JSON summary")
    p_fit.add_argument("--data", default=None, help="input dataset CSV (exclusive with --dgp)")
    p_fit.add_argument("--dgp", default=None, choices=list(dgp_mod.DGP_IDS),
                       help="generate the input from this DGP (needs --n)")
    p_fit.add_argument("--n", type=int, default=None, help="observations when using --dgp")
    p_fit.add_argument("--estimand", choices=["ate", "cate"], default="ate",
                       help="target estimand (default: %(default)s)")
    p_fit.add_argument("--strategy", default="AIPW",
                       help="RA, IPW, DR, or AIPW (default: %(default)s)")
    p_fit.add_argument("--engine", choices=["closed", "vi", "exact-gp"], default="closed",
                       help="posterior engine (default: %(default)s); "
                       "ate: closed|vi, cate: vi|exact-gp")
    p_fit.add_argument("--calibration", choices=["plugin", "gpc"], default="plugin",
                       help="omega selection rule (default: %(default)s)")
    p_fit.add_argument("--prior-mean", type=float, default=0.0,
                       help="normal prior mean (default: %(default)s)")
    p_fit.add_argument("--prior-var", type=float, default=1.0,
                       help="normal prior variance; inf for diffuse (default: %(default)s)")
    p_fit.add_argument("--alpha", type=float, default=0.05,
                       help="credible level is 1 - alpha (default: %(default)s)")
    p_fit.add_argument("--seed", type=int, default=0,
                       help="random seed (default: %(default)s); GBC_SEED overrides")
    p_fit.add_argument("--b-boot", type=int, default=200,
                       help="bootstrap resamples for gpc (default: %(default)s)")
    p_fit.add_argument("--max-iter", type=int, default=50,
                       help="max gpc iterations (default: %(default)s)")
    p_fit.add_argument("--m-inducing", type=int, default=20,
                       help="inducing points for the cate engine (default: %(default)s)")
    p_fit.add_argument("--grid-size", type=int, default=100,
                       help="query points reported for cate (default: %(default)s)")
    _add_nuisance_flags(p_fit)
    _add_kernel_flags(p_fit)
    p_fit.add_argument("--out", default=None, help="summary JSON path (default: stdout)")
    p_fit.set_defaults(func=cmd_fit)

    p_bench = sub.add_parser("bench", help="run a Monte Carlo coverage/length study from a JSON config")
    p_bench.add_argument("--config", required=True, help="JSON config path")
    p_bench.add_argument("--out-dir", default=".",
                         help="directory for bench_report.csv/.md (default: %(default)s)")
    p_bench.add_argument("--parallelism", type=int, default=None,
                         help="worker count (default: config value or all cores); "
                         "results are independent of this setting")
    p_bench.set_defaults(func=cmd_bench)

    p_exp = sub.add_parser("experiment", help="run a nuisance-stability experiment and write CSV")
    p_exp.add_argument("--kind", required=True, choices=["slopes", "tv"],
                       help="slopes: point-estimate shift vs delta; tv: feasible-vs-oracle TV")
    p_exp.add_argument("--dgp", default="D1", choices=list(dgp_mod.DGP_IDS),
                       help="data-generating process (default: %(default)s)")
    p_exp.add_argument("--n", type=int, default=100000,
                       help="sample size for slopes (default: %(default)s)")
    p_exp.add_argument("--deltas", default="0.2,0.1,0.05,0.025",
                       help="perturbation magnitudes for slopes (default: %(default)s)")
    p_exp.add_argument("--beta", type=float, default=0.3,
                       help="nuisance-error exponent r_n = n^-beta for tv (default: %(default)s)")
    p_exp.add_argument("--n-grid", default="500,2000,8000",
                       help="sample sizes for tv (default: %(default)s)")
    p_exp.add_argument("--reps", type=int, default=20,
                       help="repetitions per tv point (default: %(default)s)")
    p_exp.add_argument("--strategy", default="AIPW",
                       help="strategy for tv (default: %(default)s)")
    p_exp.add_argument("--seed", type=int, default=0,
                       help="random seed (default: %(default)s); GBC_SEED overrides")
    p_exp.add_argument("--out", required=True, help="output CSV path")
    p_exp.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except GbcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entrypoint():
    sys.exit(main(sys.argv[1:]))
