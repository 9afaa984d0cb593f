"""Command-line driver.

    actsearch search exhaustive --task two_spirals --out runs/ex
    actsearch search rl --budget 500 --out runs/rl
    actsearch bench --activations swish1 relu --seeds 5
    actsearch curves --activation swish --params 1.0
    actsearch hist pre|beta --task two_spirals
    actsearch signtest --wins 9 --losses 0

Every output is CSV or JSON lines and depends only on the arguments.
Validation errors exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from .bench import BENCH_CHILD_CONFIG, DESK_SUITE, export_curves, run_benchmark, sign_test
from .child import (
    ChildConfig,
    DatasetKind,
    build_classifier,
    export_beta_hist,
    export_preactivation_hist,
    make_dataset,
)
from .controller import Controller, ControllerConfig, PpoConfig, run_rl_search
from .dsl import BinaryOp, UnaryOp
from .exceptions import (
    EmptyComparison,
    LayerOutOfRange,
    NoTrainableBeta,
    ParamArityMismatch,
    ParseError,
    SpaceTooLarge,
)
from .exhaustive import DEFAULT_BUDGET, SEARCH_CHILD_CONFIG, SpaceConfig, run_exhaustive
from .scheduler import RewardCache

VALIDATION_ERRORS = (
    ValueError, ParseError, ParamArityMismatch, EmptyComparison, SpaceTooLarge,
    LayerOutOfRange, NoTrainableBeta,
)


def _common():
    p = argparse.ArgumentParser(add_help=False)
    # SUPPRESS lets the flag appear before or after the subcommand
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--workers", type=int, default=argparse.SUPPRESS)
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    p.add_argument("--cache", default=argparse.SUPPRESS, help="JSON-lines reward cache")
    p.add_argument("--resume", action="store_true", default=argparse.SUPPRESS,
                   help="continue from the cache / controller checkpoint in --out")
    return p


def _child_args(p, base):
    p.add_argument("--task", default=DatasetKind.TWO_SPIRALS.value,
                   choices=[k.value for k in DatasetKind])
    p.add_argument("--n", type=int, default=2000, help="dataset size")
    p.add_argument("--hidden", type=int, nargs="+", default=list(base.hidden_widths))
    p.add_argument("--steps", type=int, default=base.steps)
    p.add_argument("--batch-size", type=int, default=base.batch_size)
    p.add_argument("--lr", type=float, default=base.lr)
    p.add_argument("--optimizer", default=base.optimizer, choices=["sgd_momentum", "rmsprop"])


def _space_args(p):
    p.add_argument("--units", type=int, default=1)
    p.add_argument("--unary", nargs="+", default=None, choices=[u.value for u in UnaryOp])
    p.add_argument("--binary", nargs="+", default=None, choices=[b.value for b in BinaryOp])
    p.add_argument("--dedup", action="store_true")
    p.add_argument("--top-k", type=int, default=None)


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="actsearch", parents=[common],
                                     description="Search and benchmark scalar activations.")
    sub = parser.add_subparsers(dest="command", required=True)

    search = sub.add_parser("search", help="search an activation space")
    ssub = search.add_subparsers(dest="method", required=True)
    ex = ssub.add_parser("exhaustive", parents=[common])
    _space_args(ex)
    _child_args(ex, SEARCH_CHILD_CONFIG)
    ex.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    rl = ssub.add_parser("rl", parents=[common])
    _space_args(rl)
    _child_args(rl, SEARCH_CHILD_CONFIG)
    rl.add_argument("--budget", type=int, default=1000, help="distinct candidates to evaluate")
    rl.add_argument("--batch", type=int, default=PpoConfig().batch_size)
    rl.add_argument("--controller-lr", type=float, default=PpoConfig().lr)
    rl.add_argument("--entropy-coef", type=float, default=PpoConfig().entropy_coef)

    bench = sub.add_parser("bench", parents=[common], help="benchmark activations")
    bench.add_argument("--tasks", nargs="+", default=[t.value for t in DESK_SUITE],
                       choices=[k.value for k in DatasetKind])
    bench.add_argument("--activations", nargs="+", default=["swish1", "relu"])
    bench.add_argument("--seeds", type=int, default=5, help="number of seeds")
    bench.add_argument("--n", type=int, default=2000)
    bench.add_argument("--steps", type=int, default=BENCH_CHILD_CONFIG.steps)
    bench.add_argument("--lr", type=float, default=BENCH_CHILD_CONFIG.lr)

    curves = sub.add_parser("curves", parents=[common], help="export f and f' on a grid")
    curves.add_argument("--activation", default="swish1")
    curves.add_argument("--params", type=float, nargs="*", default=None)
    curves.add_argument("--x-lo", type=float, default=-5.0)
    curves.add_argument("--x-hi", type=float, default=5.0)
    curves.add_argument("--points", type=int, default=1001)

    hist = sub.add_parser("hist", help="train a child and export a histogram")
    hsub = hist.add_subparsers(dest="which", required=True)
    pre = hsub.add_parser("pre", parents=[common])
    _child_args(pre, ChildConfig())
    pre.add_argument("--activation", default="swish1")
    pre.add_argument("--layer", type=int, default=0)
    pre.add_argument("--bins", type=int, default=50)
    beta = hsub.add_parser("beta", parents=[common])
    _child_args(beta, ChildConfig())
    beta.add_argument("--bins", type=int, default=20)
    beta.add_argument("--untrained", action="store_true", help="skip training")

    st = sub.add_parser("signtest", parents=[common], help="one-sided sign test")
    st.add_argument("--wins", type=int, required=True)
    st.add_argument("--ties", type=int, default=0)
    st.add_argument("--losses", type=int, required=True)
    return parser


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _opt(args, name, default):
    return getattr(args, name, default)


def _outdir(args):
    out = _opt(args, "out", ".")
    os.makedirs(out, exist_ok=True)
    return out


def _write(args, name, text):
    path = os.path.join(_outdir(args), name)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(path)
    return path


def _space(args):
    return SpaceConfig(
        num_units=args.units,
        allowed_unary=tuple(args.unary) if args.unary else tuple(UnaryOp),
        allowed_binary=tuple(args.binary) if args.binary else tuple(BinaryOp),
        dedup=args.dedup,
    )


def _child_cfg(args, base, **extra):
    return replace(base, hidden_widths=tuple(args.hidden), steps=args.steps,
                   batch_size=args.batch_size, lr=args.lr, optimizer=args.optimizer,
                   seed=_opt(args, "seed", 0), **extra)


def _cache(args):
    path = _opt(args, "cache", None)
    if path is None and _opt(args, "resume", False):
        path = os.path.join(_outdir(args), "cache.jsonl")
    return RewardCache(path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_exhaustive(args):
    ds = make_dataset(args.task, n=args.n, seed=_opt(args, "seed", 0))
    board = run_exhaustive(_space(args), ds, _child_cfg(args, SEARCH_CHILD_CONFIG),
                           top_k=args.top_k, workers=_opt(args, "workers", 1),
                           budget=args.budget, cache=_cache(args))
    _write(args, "leaderboard.jsonl", board.to_jsonl())


def cmd_rl(args):
    seed = _opt(args, "seed", 0)
    ds = make_dataset(args.task, n=args.n, seed=seed)
    space = _space(args)
    ctrl_cfg = ControllerConfig(ppo=PpoConfig(batch_size=args.batch, lr=args.controller_lr,
                                              entropy_coef=args.entropy_coef))
    ckpt = os.path.join(_outdir(args), "controller.json")
    controller = None
    if _opt(args, "resume", False) and os.path.exists(ckpt):
        with open(ckpt, encoding="utf-8") as fh:
            controller = Controller.from_json(fh.read())
    result = run_rl_search(space, ds, _child_cfg(args, SEARCH_CHILD_CONFIG), args.budget,
                           ctrl_cfg=ctrl_cfg, seed=seed, workers=_opt(args, "workers", 1),
                           top_k=args.top_k, controller=controller, cache=_cache(args))
    _write(args, "leaderboard.jsonl", result.leaderboard.to_jsonl())
    _write(args, "controller.json", result.controller.to_json() + "\n")
    _write(args, "rl_log.jsonl",
           "".join(json.dumps(r, sort_keys=True) + "\n" for r in result.log))


def cmd_bench(args):
    if args.seeds < 1:
        raise ValueError("--seeds must be >= 1")
    seed = _opt(args, "seed", 0)
    cfg = replace(BENCH_CHILD_CONFIG, steps=args.steps, lr=args.lr)
    result = run_benchmark(args.tasks, args.activations, range(seed, seed + args.seeds), cfg,
                           n=args.n, data_seed=seed, workers=_opt(args, "workers", 1),
                           cache=_cache(args))
    _write(args, "bench_runs.csv", result.table.to_csv())
    _write(args, "bench_medians.csv", result.table.medians_csv())
    _write(args, "bench_signtest.csv", result.summary_csv())


def cmd_curves(args):
    curve = export_curves(args.activation, args.x_lo, args.x_hi, args.points, args.params)
    _write(args, "curves.csv", curve.to_csv())


def _fit_child(args, activation, per_unit, **overrides):
    seed = _opt(args, "seed", 0)
    ds = make_dataset(args.task, n=args.n, seed=seed)
    cfg = _child_cfg(args, ChildConfig(), per_unit_params=per_unit)
    return build_classifier(activation, cfg, **overrides).fit(ds.train_x, ds.train_y), ds


def cmd_hist(args):
    if args.which == "pre":
        clf, ds = _fit_child(args, args.activation, False)
        hist = export_preactivation_hist(clf, ds.val_x, args.layer, args.bins)
        _write(args, f"hist_pre_layer{args.layer}.csv", hist.to_csv())
    else:
        overrides = {"steps": 0} if args.untrained else {}
        clf, _ = _fit_child(args, "swish", True, **overrides)
        _write(args, "hist_beta.csv", export_beta_hist(clf, args.bins).to_csv())


def cmd_signtest(args):
    p = sign_test(args.wins, args.ties, args.losses)
    text = f"wins,ties,losses,p_value\n{args.wins},{args.ties},{args.losses},{p!r}\n"
    if hasattr(args, "out"):
        _write(args, "signtest.csv", text)
    else:
        sys.stdout.write(text)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    if _opt(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    handlers = {
        "bench": cmd_bench, "curves": cmd_curves, "hist": cmd_hist, "signtest": cmd_signtest,
    }
    try:
        if args.command == "search":
            (cmd_exhaustive if args.method == "exhaustive" else cmd_rl)(args)
        else:
            handlers[args.command](args)
    except VALIDATION_ERRORS as err:
        print(f"actsearch: error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
