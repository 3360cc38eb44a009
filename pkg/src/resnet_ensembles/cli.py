"""Command-line entry point: ``resnet-ensembles <subcommand> [flags]``.

Every subcommand writes fixed-name files under ``--out``.  Exit codes:
0 success, 1 bad parameters, 2 a verification check failed, 3 numerical
abort (e.g. diverged training).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import complexity, dynamics, ensemble, spinglass, toynet
from .errors import DomainError, ParameterError, SizeError
from .svg import Chart

log = logging.getLogger("resnet_ensembles")

DEFAULT_SEED = 20170101
EXIT_OK, EXIT_PARAM, EXIT_VERIFY, EXIT_NUMERIC = 0, 1, 2, 3


class NumericalAbort(RuntimeError):
    pass


def write_csv(path: Path, header, rows, comments=()):
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, obj):
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def cmd_mixture(args) -> int:
    mix = ensemble.mixture_from_beta(args.p, args.beta, args.convention)
    out = args.out
    write_csv(out / "mixture.csv", ["r", "eps", "eps_squared", "log_eps"], mix.csv_rows())
    write_json(out / "mixture.json", mix.to_dict())
    peak = ensemble.argmax_depth(mix)
    Chart(
        title=f"eps_r, p={args.p}, beta={args.beta:g} (peak r={peak})", xlabel="r", ylabel="eps_r"
    ).bars(mix.orders, mix.eps).save(out / "mixture.svg")
    print(f"argmax_depth={peak}")
    return EXIT_OK


def cmd_complexity_sweep(args) -> int:
    if args.steps < 1:
        raise ParameterError("steps must be at least 1")
    if not 0 < args.beta_min <= args.beta_max:
        raise ParameterError("need 0 < beta_min <= beta_max")
    grid = np.geomspace(args.beta_min, args.beta_max, args.steps) if args.steps > 1 else [args.beta_min]
    rows = complexity.theta_beta_sweep(args.p, grid, args.convention)
    write_csv(
        args.out / "complexity_sweep.csv",
        ["beta", "v1", "v2", "alpha_sq", "theta"],
        ([r.beta, r.v1, r.v2, r.alpha_sq, r.theta] for r in rows),
    )
    chart = Chart(title=f"theta vs beta, p={args.p}", xlabel="beta", ylabel="theta", logx=True)
    chart.line([r.beta for r in rows], [r.theta for r in rows], label="mixture")
    chart.line([rows[0].beta, rows[-1].beta], [complexity.pure_theta(args.p)] * 2,
               label=f"pure p={args.p}", color="#7f7f7f")
    chart.save(args.out / "complexity_sweep.svg")
    thetas = np.array([r.theta for r in rows])
    monotone = bool(np.all(np.diff(thetas) >= -1e-12))
    print(f"monotone={monotone} theta_last={float(thetas[-1])!r}")
    return EXIT_OK if monotone else EXIT_VERIFY


def _parse_list(text, cast):
    return [cast(t) for t in str(text).replace(",", " ").split()]


def cmd_spinglass_census(args) -> int:
    orders = _parse_list(args.orders, int)
    eps = np.asarray(_parse_list(args.eps, float)) if args.eps is not None else np.ones(len(orders))
    if eps.size != len(orders):
        raise ParameterError("need one --eps weight per order")
    if not np.all(eps >= 0) or not np.any(eps > 0):
        raise ParameterError("eps weights must be non-negative and not all zero")
    eps = eps / np.linalg.norm(eps)
    model = spinglass.sample_model(args.Lambda, eps, args.seed, orders=orders)
    model.save(args.out / "model.json")
    if args.restarts == 0:
        log.warning("restarts=0: the census is empty")
    census = spinglass.find_critical_points(model, args.restarts, args.seed + 1, jobs=args.jobs)
    if census.degenerate:
        log.warning("all couplings vanish; every point on the sphere is critical")
    ceiling = math.inf if args.energy_ceiling is None else args.energy_ceiling
    kept = [r for r in census.records if r.energy <= ceiling]
    write_csv(
        args.out / "census_points.csv",
        ["energy", "index", "grad_norm", "multiplicity", "lagrange_multiplier"],
        ([r.energy, r.index, r.grad_norm, r.multiplicity, r.lagrange_multiplier] for r in kept),
        comments=[f"starts={census.starts} converged={census.converged} failed={census.failed} "
                  f"degenerate={census.degenerate}"],
    )
    hist = census.histogram(ceiling)
    write_csv(args.out / "census_histogram.csv", ["index", "count"], sorted(hist.items()))
    Chart(title=f"critical points by index, Lambda={args.Lambda}", xlabel="index", ylabel="count").bars(
        list(hist), list(hist.values())
    ).save(args.out / "census_histogram.svg")
    print(json.dumps({str(k): v for k, v in hist.items()}))
    return EXIT_OK


def cmd_dynamics(args) -> int:
    verify = dynamics.verify_thm3 if args.check == "thm3" else dynamics.verify_thm4
    report = verify(trials=args.trials, mu=args.mu, seed=args.seed, Lambda=args.Lambda, m=args.m, p=args.p)
    write_json(args.out / f"dynamics_{args.check}.json", report.to_dict())
    print(f"{args.check}: pass_fraction={report.pass_fraction:.4f} median_residual={report.median_residual:.3e} "
          f"residual_slope={report.residual_slope:.3f} sign_variant={report.sign_variant}")
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_train(args) -> int:
    config = toynet.ToyNetConfig(
        p=args.p, n=args.n, d=args.d, num_classes=args.num_classes,
        samples_per_class=args.samples_per_class, use_bn=not args.no_bn,
        learning_rate=args.lr, batch_size=args.batch_size, iterations=args.iterations,
        log_every=args.log_every, seed=args.seed, loss=args.loss, noise_var=args.noise_var,
    )
    trace = toynet.train(config)
    write_csv(args.out / "trace.csv", trace.header(), trace.csv_rows(), comments=[config.to_json()])
    its = [r.iteration for r in trace.rows]
    lam = Chart(title="batch-norm scales", xlabel="iteration", ylabel="lambda_l")
    for l in range(config.p):
        lam.line(its, [r.lambdas[l] for r in trace.rows], label=f"l={l + 1}")
    lam.save(args.out / "lambda.svg")
    Chart(title="weight norm", xlabel="iteration", ylabel="||w||_2").line(
        its, trace.weight_norms
    ).save(args.out / "weight_norm.svg")
    last = trace.rows[-1]
    print(f"iterations={last.iteration} loss={last.loss:.4f} accuracy={last.accuracy:.3f} "
          f"weight_norm={last.weight_norm:.4f}")
    if trace.diverged:
        raise NumericalAbort("training diverged (non-finite loss); partial trace written")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--config", type=Path, help="JSON file of flag defaults (same keys as the flags)")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for multistart searches")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="resnet-ensembles", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mixture", parents=[common], help="depth mixture eps_r")
    p.add_argument("--p", type=int, default=100)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--convention", choices=[c.value for c in ensemble.Convention], default="shifted")
    p.set_defaults(func=cmd_mixture)

    p = sub.add_parser("complexity-sweep", parents=[common], help="theta as a function of beta")
    p.add_argument("--p", type=int, default=100)
    p.add_argument("--beta-min", type=float, default=0.05)
    p.add_argument("--beta-max", type=float, default=5.0)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--convention", choices=[c.value for c in ensemble.Convention], default="shifted")
    p.set_defaults(func=cmd_complexity_sweep)

    p = sub.add_parser("spinglass-census", parents=[common], help="multistart critical point census")
    p.add_argument("--Lambda", type=int, default=4)
    p.add_argument("--orders", default="2", help="interaction orders, e.g. '2,3'")
    p.add_argument("--eps", default=None, help="weights per order (normalized); default uniform")
    p.add_argument("--restarts", type=int, default=500)
    p.add_argument("--energy-ceiling", type=float, default=None)
    p.set_defaults(func=cmd_spinglass_census)

    p = sub.add_parser("dynamics", parents=[common], help="one-step scale dynamics checks")
    p.add_argument("--check", choices=["thm3", "thm4"], default="thm3")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--mu", type=float, default=1e-3)
    p.add_argument("--Lambda", type=int, default=4)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--p", type=int, default=4)
    p.set_defaults(func=cmd_dynamics)

    p = sub.add_parser("train", parents=[common], help="train the toy ResNet and trace its scales")
    defaults = toynet.ToyNetConfig()
    p.add_argument("--p", type=int, default=defaults.p)
    p.add_argument("--n", type=int, default=defaults.n)
    p.add_argument("--d", type=int, default=defaults.d)
    p.add_argument("--num-classes", type=int, default=defaults.num_classes)
    p.add_argument("--samples-per-class", type=int, default=defaults.samples_per_class)
    p.add_argument("--no-bn", action="store_true")
    p.add_argument("--lr", type=float, default=defaults.learning_rate)
    p.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p.add_argument("--iterations", type=int, default=defaults.iterations)
    p.add_argument("--log-every", type=int, default=defaults.log_every)
    p.add_argument("--loss", choices=["xent", "hinge"], default=defaults.loss)
    p.add_argument("--noise-var", type=float, default=defaults.noise_var)
    p.set_defaults(func=cmd_train)
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ParameterError(f"cannot read config {args.config}: {exc}") from exc
        # config values act as defaults: flags given explicitly still win
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in subparser._actions}
        unknown = set(k.replace("-", "_") for k in overrides) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        subparser.set_defaults(**{k.replace("-", "_"): v for k, v in overrides.items()})
        args = parser.parse_args(argv)
        if isinstance(args.out, str):
            args.out = Path(args.out)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except SystemExit as exc:  # argparse usage errors
        return EXIT_PARAM if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    if getattr(args, "mu", 1.0) is not None and getattr(args, "mu", 1.0) <= 0:
        print("error: mu must be positive", file=sys.stderr)
        return EXIT_PARAM
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except (ParameterError, DomainError, SizeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except NumericalAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAM


if __name__ == "__main__":
    sys.exit(main())
