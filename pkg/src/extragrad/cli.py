"""Command-line interface.

Subcommands:
  generate   write a .qgame file from generation parameters
  run        execute an experiment preset (or a TOML config) and write CSVs
  verify     check the sampling side conditions and the unified-assumption
             certificate for a game + scheme, emitting a JSON report
  constants  print the rate constants for a game (+ optional scheme) as JSON

Exit codes: 0 success, 1 validation error (bad flags/config), 2 runtime
failure (including a failed verification).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import harness, rates, sampling
from .quadgame import GameGenConfig, game_to_operator, generate_game, load_game, save_game


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _build_parser():
    parser = _Parser(prog="extragrad", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a quadratic game file")
    gen.add_argument("--n", type=int, default=100)
    gen.add_argument("--d", type=int, default=100)
    gen.add_argument("--p", type=int, default=100)
    gen.add_argument("--mu", type=float, default=0.1, help="mu_A = mu_C")
    gen.add_argument("--L", type=float, default=1.0, help="L_A = L_C")
    gen.add_argument("--mu-b", type=float, default=0.0)
    gen.add_argument("--L-b", type=float, default=1.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--bias-scale", type=float, default=1.0)
    gen.add_argument("--lmax-override", type=str, default=None,
                     metavar="IDX:VALUE", help="force one component's Lipschitz scale")
    gen.add_argument("--negative-mu", type=int, default=None, metavar="IDX",
                     help="make one component non-monotone")
    gen.add_argument("-o", "--out", required=True)

    run = sub.add_parser("run", help="run an experiment preset or a single method")
    run.add_argument("--preset", choices=harness.PRESETS, default=None)
    run.add_argument("--config", default=None, help="TOML config (flags override it)")
    run.add_argument("--out", default=None, help="output directory for CSVs")
    run.add_argument("--desk", action="store_true", default=None,
                     help="desk-scale dimensions (n=20, d=p=10, 20 seeds)")
    run.add_argument("--k", type=int, default=None, help="iteration budget")
    run.add_argument("--seeds", type=int, default=None)
    run.add_argument("--seed", type=int, default=None, help="base seed")
    run.add_argument("--game", default=None, help="use a .qgame file instead of generating")
    run.add_argument("--jobs", type=int, default=None)
    run.add_argument("--x0-distance", type=float, default=None)
    run.add_argument("--method", choices=("sseg", "iseg", "eg"), default=None,
                     help="custom single-method run instead of a preset")
    run.add_argument("--scheme", default="us:b=1", help="sampling scheme (sseg)")
    run.add_argument("--batch", type=int, default=16, help="batch size (iseg)")
    run.add_argument("--schedule", choices=("constant", "decreasing"),
                     default="constant")
    run.add_argument("--alpha", type=float, default=0.25)
    run.add_argument("--gamma", type=float, default=None,
                     help="base stepsize (default: the scheme's cap)")

    ver = sub.add_parser("verify", help="verify sampling conditions + certificate")
    ver.add_argument("--game", required=True)
    ver.add_argument("--scheme", required=True)
    ver.add_argument("--gamma", type=float, default=None)
    ver.add_argument("--alpha", type=float, default=0.25)
    ver.add_argument("--points", type=int, default=5)
    ver.add_argument("--samples", type=int, default=10_000)
    ver.add_argument("--mc-seed", type=int, default=0)
    ver.add_argument("--out", default=None, help="write the JSON report here too")

    con = sub.add_parser("constants", help="print rate constants as JSON")
    con.add_argument("--game", required=True)
    con.add_argument("--scheme", default=None)
    con.add_argument("--gamma", type=float, default=None)
    con.add_argument("--alpha", type=float, default=0.25)
    con.add_argument("--batch", type=int, default=None, help="also report the"
                     " independent-samples constants for this batch size")
    return parser


def _cmd_generate(args):
    override = None
    if args.lmax_override:
        idx, _, val = args.lmax_override.partition(":")
        if not val:
            raise CliError("--lmax-override expects IDX:VALUE")
        override = (int(idx), float(val))
    cfg = GameGenConfig(
        n=args.n, d=args.d, p=args.p,
        mu_A=args.mu, L_A=args.L, mu_C=args.mu, L_C=args.L,
        mu_B=args.mu_b, L_B=args.L_b,
        seed=args.seed, bias_scale=args.bias_scale,
        lmax_override=override, negative_mu_component=args.negative_mu,
    )
    cfg.validate()
    save_game(generate_game(cfg), args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_run_custom(args):
    from .harness import ExperimentConfig, MethodSpec, run_experiment

    if args.game is None:
        raise CliError("a custom --method run needs --game")
    spec = MethodSpec(
        name=f"custom_{args.method}",
        kind=args.method,
        scheme=args.scheme if args.method == "sseg" else None,
        batch=args.batch if args.method == "iseg" else None,
        schedule=args.schedule,
        gamma=args.gamma,
        alpha=args.alpha,
    )
    cfg = ExperimentConfig(
        name="custom",
        game=args.game,
        methods=[spec],
        total_k=args.k if args.k is not None else 10_000,
        n_seeds=args.seeds if args.seeds is not None else 5,
        base_seed=args.seed if args.seed is not None else 7,
        x0_distance=args.x0_distance if args.x0_distance is not None else 1000.0,
        out_dir=args.out,
        jobs=args.jobs if args.jobs is not None else 1,
    )
    series = run_experiment(cfg)
    for name, s in sorted(series.items()):
        print(f"{name}: {s.ks.size} checkpoints, final mean {s.mean_sq_dist[-1]:.6g}")
    return 0


def _cmd_run(args):
    if args.method is not None:
        return _cmd_run_custom(args)
    file_cfg = {}
    if args.config:
        with open(args.config, "rb") as fh:
            file_cfg = tomllib.load(fh).get("run", {})
    preset = args.preset or file_cfg.get("preset")
    if preset is None:
        raise CliError("run needs --preset, --method, or a config file with run.preset")
    kwargs = dict(
        desk=bool(file_cfg.get("desk", False)),
        out_dir=file_cfg.get("out"),
        total_k=file_cfg.get("k"),
        n_seeds=file_cfg.get("seeds"),
        base_seed=file_cfg.get("seed", 7),
        jobs=file_cfg.get("jobs", 1),
        game_path=file_cfg.get("game"),
    )
    if "x0_distance" in file_cfg:
        kwargs["x0_distance"] = file_cfg["x0_distance"]
    if args.desk is not None:
        kwargs["desk"] = args.desk
    if args.out is not None:
        kwargs["out_dir"] = args.out
    if args.k is not None:
        kwargs["total_k"] = args.k
    if args.seeds is not None:
        kwargs["n_seeds"] = args.seeds
    if args.seed is not None:
        kwargs["base_seed"] = args.seed
    if args.jobs is not None:
        kwargs["jobs"] = args.jobs
    if args.game is not None:
        kwargs["game_path"] = args.game
    if args.x0_distance is not None:
        kwargs["x0_distance"] = args.x0_distance

    series = harness.run_preset(preset, **kwargs)
    for name in sorted(series):
        s = series[name]
        print(f"{name}: {s.ks.size} checkpoints, final mean {s.mean_sq_dist[-1]:.6g}")
    if kwargs.get("out_dir"):
        print(f"CSV series written to {kwargs['out_dir']}")
    return 0


def _cmd_verify(args):
    game = load_game(args.game)
    op = game_to_operator(game)
    x_star = op.solve_root()
    scheme = sampling.parse_scheme(args.scheme, op)
    gamma = args.gamma if args.gamma is not None else sampling.stepsize_cap(scheme, op)

    conditions = sampling.verify_conditions(scheme, op, x_star)
    rng = np.random.default_rng(args.mc_seed)
    points = [x_star + rng.standard_normal(op.dim) for _ in range(args.points)]
    cert = rates.certify_unified_assumption(
        op,
        rates.SsegTarget(scheme=scheme, gamma=gamma, alpha=args.alpha),
        points,
        samples_per_point=args.samples,
        rng=rng,
        x_star=x_star,
    )
    report = {
        "game": args.game,
        "scheme": scheme.spec_string(),
        "gamma": gamma,
        "alpha": args.alpha,
        "conditions": conditions.to_dict(),
        "certificate": json.loads(cert.to_json()),
    }
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return 0 if (conditions.passed and cert.passed()) else 2


def _cmd_constants(args):
    game = load_game(args.game)
    op = game_to_operator(game)
    scheme = sampling.parse_scheme(args.scheme, op) if args.scheme else None
    report = rates.rate_report(
        op, scheme=scheme, gamma=args.gamma, alpha=args.alpha, iseg_batch=args.batch
    )
    print(json.dumps(report, indent=2))
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        if args.command == "generate":
            return _cmd_generate(args)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "verify":
            return _cmd_verify(args)
        return _cmd_constants(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # I/O, divergence, ...
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
