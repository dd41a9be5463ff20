"""Command-line entry point: train, evaluate, report, serve."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig
from .envs import BUILTIN, EnvServer, make_env
from .trainer import TrainingAborted, evaluate, report, train


def _train(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.env is not None:
        changes["env"] = args.env
    if args.envs is not None:
        changes["n_envs"] = args.envs
    if args.steps is not None:
        changes["total_steps"] = args.steps
    if changes:
        cfg = cfg.replace(**changes)
    out = Path(args.out) if args.out else Path("runs") / f"{cfg.env.replace(':', '_')}_seed{cfg.seed}"
    try:
        run = train(cfg, out)
    except TrainingAborted as e:
        print(f"training aborted: {e}", file=sys.stderr)
        return 2
    print(run)
    return 0


def _evaluate(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else None
    result = evaluate(args.checkpoint, args.env, args.episodes, cfg=cfg, greedy=not args.sample)
    print(result)
    for i, (s, n) in enumerate(zip(result.scores, result.lengths)):
        print(f"  episode {i}: score {s:.4f}, length {n}")
    return 0


def _report(args) -> int:
    res = report(args.run)
    print(f"{res.path} ({res.rows} rows, {res.warnings} warnings)")
    return 0


def _serve(args) -> int:
    server = EnvServer(lambda: make_env(args.env), args.host, args.port)
    print(f"serving {args.env} on {server.endpoint}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brimcuriosity", description="Curiosity-driven agents with sparse modular world models")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every update")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an intrinsic-reward agent")
    p.add_argument("--config", help="key=value config file (defaults are used for missing keys)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="run directory")
    p.add_argument("--env", help=f"{'|'.join(BUILTIN)}|external:<endpoint>")
    p.add_argument("--envs", type=int, help="number of parallel streams")
    p.add_argument("--steps", type=int, help="total agent steps")
    p.set_defaults(func=_train)

    p = sub.add_parser("evaluate", help="play seeded evaluation episodes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", help="defaults to the env the run trained on")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--config", help="run config, if not next to the checkpoint")
    p.add_argument("--sample", action="store_true", help="sample actions instead of acting greedily")
    p.set_defaults(func=_evaluate)

    p = sub.add_parser("report", help="write curves.csv from a run's metrics")
    p.add_argument("--run", required=True)
    p.set_defaults(func=_report)

    p = sub.add_parser("serve", help="expose a built-in env over the external-env protocol")
    p.add_argument("--env", default="gridquest", choices=sorted(BUILTIN))
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.set_defaults(func=_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
