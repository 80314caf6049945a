"""Command-line entry point: ``train``, ``preset`` and ``eval``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .config import VARIANTS, load_config
from .envs import ENV_IDS
from .harness import build_env, evaluate, load_agent, train
from .presets import PRESETS, preset_run


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cp3er", description="Consistency-policy actor-critic at desk scale.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one agent")
    t.add_argument("--env", choices=ENV_IDS)
    t.add_argument("--variant", choices=VARIANTS)
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int, help="environment frames")
    t.add_argument("--config", help="key = value config file; flags override it")
    t.add_argument("--out", default="runs/train")

    r = sub.add_parser("preset", help="run a named multi-seed batch")
    r.add_argument("--name", required=True, choices=sorted(PRESETS))
    r.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "train":
            cfg = load_config(args.config, env=args.env, actor_variant=args.variant, seed=args.seed, steps=args.steps)
            rec = train(cfg, args.out)
            summary = {"out": str(args.out), "frames": rec.frames, "updates": rec.updates,
                       "final_eval_return": rec.final_eval[0] if rec.final_eval else None,
                       "final_dormant": rec.final_dormant, "wall_clock": round(rec.wall_clock, 2)}
            print(json.dumps(summary))
        elif args.command == "preset":
            recs = preset_run(args.name, args.out)
            for name, rec in recs.items():
                ev = rec.final_eval[0] if rec.final_eval else None
                print(f"{name}\teval_return={ev}\tdormant={rec.final_dormant}")
        else:
            agent = load_agent(args.ckpt)
            ret, succ = evaluate(agent, build_env(agent.cfg, seed_offset=777), args.episodes,
                                 np.random.default_rng(args.seed))
            print(json.dumps({"mean_return": ret, "success_rate": succ, "episodes": args.episodes}))
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
