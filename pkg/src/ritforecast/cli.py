"""Command-line entry point (``ritforecast``)."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from . import harness
from .config import DEFAULT_ALPHA, read_config
from .forecasting import FULL_TRAJECTORY, KINDS, MOVING_WINDOW, TIME_ONLY
from .policies import read_trajectories, write_trajectories

TRAIN_KINDS = {"time-only": TIME_ONLY, "survival": MOVING_WINDOW, "classifier": FULL_TRAJECTORY}


def _config(args, friction=None):
    cfg = read_config(args.config, profile=getattr(args, "profile", None))
    if friction is not None:
        cfg = cfg.with_friction(friction)
    return cfg


def _monitor_args(args, cfg):
    """Resolve method, model, alpha and horizon from flags and model metadata."""
    if args.model is None:
        method = args.method or harness.NONE
        if method in KINDS:
            raise ValueError(f"--method {method} needs --model")
        return cfg, method, None, args.alpha, args.tf
    kind, model, meta = harness.load_model(args.model)
    if args.method and args.method != kind:
        raise ValueError(f"--method {args.method} does not match the {kind} model in {args.model}")
    if meta.get("max_steps", cfg.max_steps) != cfg.max_steps:
        raise ValueError(f"model trained for T={meta['max_steps']}, config has T={cfg.max_steps}")
    if "history" in meta:
        cfg = replace(cfg, executor=replace(cfg.executor, history=int(meta["history"])))
    if "include_time" in meta:
        cfg = replace(cfg, include_time=bool(meta["include_time"]))
    alpha = args.alpha if args.alpha is not None else meta.get("alpha", DEFAULT_ALPHA[kind])
    tf = args.tf if args.tf is not None else meta.get("horizon", cfg.horizon)
    return cfg, kind, model, alpha, tf


def cmd_collect(args):
    cfg = _config(args, args.friction)
    trajs = harness.collect(cfg, cfg.episodes if args.episodes is None else args.episodes, args.seed)
    write_trajectories(args.out, trajs)
    summary = harness.success_time_summary(trajs)
    summary.pop("histogram", None)
    print(json.dumps(summary, sort_keys=True))


def cmd_train(args):
    cfg = _config(args)
    trajs = read_trajectories(args.data)
    if not trajs:
        raise ValueError(f"{args.data} holds no episodes")
    kind = TRAIN_KINDS[args.kind]
    if kind == TIME_ONLY:
        harness.train_time_only(trajs, cfg).table_.to_csv(args.out)
    else:
        train = harness.train_survival if kind == MOVING_WINDOW else harness.train_classifier
        est = train(trajs, cfg, random_state=args.seed)
        meta = harness.model_metadata(cfg, kind)
        if args.alpha is not None:
            meta["alpha"] = args.alpha
        if args.tf is not None:
            meta["horizon"] = args.tf
        est.save(args.out, **meta)
    print(f"wrote {args.out}")


def _eval_configs(args):
    frictions = args.friction if args.friction else [None]
    return [_config(args, mu) for mu in frictions]


def cmd_eval_single(args):
    reports = []
    for base in _eval_configs(args):
        cfg, method, model, alpha, tf = _monitor_args(args, base)
        if args.recovery == "off":
            method, model = harness.NONE, None
        rep, _ = harness.evaluate(cfg, method, model, alpha=alpha, horizon=tf,
                                  seeds=args.seeds, episodes=args.episodes, root_seed=args.seed)
        reports.append(rep)
        print(f"{rep.method} mu={rep.friction:g} success={rep.success_rate:.3f}+-{rep.success_std:.3f} "
              f"steps={rep.steps:.1f} reset={rep.reset_rate:.3f}")
    harness.write_reports(args.out, reports)


def cmd_eval_rhythmic(args):
    rcfg = harness.RhythmicConfig(rounds=args.rounds, round_steps=args.round_steps,
                                  independent=args.independent)
    schema, rows = harness.RHYTHMIC_FIELDS, []
    for base in _eval_configs(args):
        cfg, method, model, alpha, tf = _monitor_args(args, base)
        if args.recovery == "off":
            method, model = harness.NONE, None
        monitor = harness.make_monitor(method, model, cfg, alpha, tf)
        counts = harness.rhythmic_counts(cfg, rcfg, monitor, args.trials, args.seed)
        rows += [{"size": args.size, "method": method, "friction": repr(float(cfg.sim.friction_mu)),
                  "trial": str(i), "consecutive": str(c)} for i, c in enumerate(counts)]
        print(f"{method} mu={cfg.sim.friction_mu:g} mean consecutive={sum(counts) / len(counts):.2f}")
    harness.write_rows(args.out, schema, harness.bar_rows(rows))


def cmd_sweep(args):
    reports = []
    for base in _eval_configs(args):
        cfg, kind, model, _, _ = _monitor_args(args, base)
        if model is None:
            raise ValueError("sweep needs --model")
        best, reps = harness.sweep_threshold(cfg, kind, model, args.alphas, args.tfs,
                                             seeds=args.seeds, episodes=args.episodes,
                                             root_seed=args.seed)
        reports += reps
        print(f"best {kind} mu={best.friction:g}: alpha={best.alpha:g} horizon={best.horizon} "
              f"success={best.success_rate:.3f} reset={best.reset_rate:.3f}")
    harness.write_reports(args.out, reports)


def cmd_report(args):
    schema, rows = harness.merge_reports(args.inputs)
    if schema == harness.RHYTHMIC_FIELDS:
        rows = harness.bar_rows(rows)
    harness.write_rows(args.out, schema, rows)
    print(f"merged {len(rows)} rows into {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ritforecast", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=False):
        p.add_argument("--config", help="key = value experiment config file")
        p.add_argument("--profile", choices=["sim", "real"])
        p.add_argument("--seed", type=int, default=0, help="root seed")
        p.add_argument("--out", required=True)
        if model:
            p.add_argument("--model", help="time-only .csv table or saved network .json")
            p.add_argument("--method", choices=[harness.NONE, *KINDS, "always", "never"])
            p.add_argument("--alpha", type=float)
            p.add_argument("--tf", type=int, help="forecast horizon T_F (moving window)")
            p.add_argument("--friction", type=float, nargs="+")
            p.add_argument("--recovery", choices=["on", "off"], default="on")
            p.add_argument("--seeds", type=int)
            p.add_argument("--episodes", type=int)

    p = sub.add_parser("collect", help="monitor-free rollouts to a JSONL file")
    common(p)
    p.add_argument("--episodes", type=int)
    p.add_argument("--friction", type=float)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="fit a forecaster on collected rollouts")
    common(p)
    p.add_argument("kind", choices=sorted(TRAIN_KINDS))
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", type=float, help="threshold stored with the model")
    p.add_argument("--tf", type=int, help="horizon stored with the model")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-single", help="closed-loop single insertions")
    common(p, model=True)
    p.set_defaults(func=cmd_eval_single)

    p = sub.add_parser("eval-rhythmic", help="repeated insert-and-turn rounds")
    common(p, model=True)
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--round-steps", type=int, help="per-round step budget (default T)")
    p.add_argument("--independent", action="store_true", help="fresh episode every round")
    p.add_argument("--size", default="default", help="label for the bar chart group")
    p.set_defaults(func=cmd_eval_rhythmic)

    p = sub.add_parser("sweep", help="grid search of the monitor threshold")
    common(p, model=True)
    p.add_argument("--alphas", type=float, nargs="+", default=[0.01, 0.02, 0.05, 0.1, 0.13, 0.2, 0.3])
    p.add_argument("--tfs", type=int, nargs="+", default=[30, 60, 100])
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="merge result CSVs")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (ValueError, KeyError, OSError, FloatingPointError, json.JSONDecodeError) as exc:
        print(f"ritforecast {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
