"""Command-line interface.

Heavy imports happen inside the handlers so the TERRAINCL_THREADS cap can be
applied to the numerics libraries before they initialize their thread pools.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

_THREAD_ENV_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS")


def _apply_thread_cap() -> None:
    cap = os.environ.get("TERRAINCL_THREADS")
    if cap:
        for name in _THREAD_ENV_VARS:
            os.environ[name] = cap


def _add_train_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--scenario",
        choices=("easy2hard", "hard2easy"),
        default=None,
        help="terrain presentation order (default: from config, else easy2hard)",
    )
    parser.add_argument("--config", default=None, help="flat key = value config file")
    parser.add_argument("--seed", type=int, default=None, help="run seed")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument(
        "--preset",
        choices=("desk", "paper"),
        default="desk",
        help="base scale before config overrides (default: desk)",
    )
    parser.add_argument(
        "--backend",
        choices=("walker", "surrogate"),
        default=None,
        help="dynamics backend (default: from config, else walker)",
    )
    parser.add_argument(
        "--no-validation",
        action="store_true",
        help="disable the frozen-policy validation pool",
    )


def _resolve_config(args):
    import dataclasses

    from .config import RunConfig, desk_config, load_config

    base = desk_config() if args.preset == "desk" else RunConfig()
    cfg = load_config(args.config, base=base) if args.config else base
    if args.scenario is not None:
        cfg.scenario = args.scenario
    if args.seed is not None:
        cfg.seed = args.seed
    if args.backend is not None:
        cfg = dataclasses.replace(
            cfg, env=dataclasses.replace(cfg.env, backend=args.backend)
        )
    if args.no_validation:
        cfg.validation_enabled = False
    return cfg


def _cmd_train(args) -> int:
    from .experiment import run

    cfg = _resolve_config(args)
    artifacts = run(cfg, args.out)
    if not artifacts.completed:
        print(
            f"error: run failed at iteration {artifacts.failure_iteration}; "
            f"partial artifacts in {artifacts.out_dir}",
            file=sys.stderr,
        )
        return 1
    print(f"run completed; artifacts in {artifacts.out_dir}")
    return 0


def _cmd_sweep(args) -> int:
    from .experiment import read_manifest, sweep

    cfg = _resolve_config(args)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    aggregate = sweep(cfg, seeds, args.out)
    manifest = read_manifest(os.path.join(args.out, "sweep_manifest.txt"))
    failed = [k for k, v in manifest.items() if v == "failed"]
    if failed:
        print(f"error: {len(failed)} run(s) failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    print(f"sweep completed; aggregate trace at {aggregate}")
    return 0


def _cmd_report(args) -> int:
    from .experiment import report

    print(report(args.runs), end="")
    return 0


def _cmd_gen_terrain(args) -> int:
    from .terrain import TerrainKind, TerrainParams, generate, to_csv

    kind = TerrainKind.from_name(args.kind)
    field = generate(kind, TerrainParams(), seed=args.seed, rough=args.rough)
    to_csv(field, args.out)
    print(f"wrote {field.rows}x{field.cols} heightfield to {args.out}")
    return 0


def _cmd_validate(args) -> int:
    import numpy as np

    from .config import desk_config
    from .env import TerrainPatch
    from .evaluation import ValidationPool
    from .policy import load_checkpoint
    from .rng import derive_seed
    from .terrain import TerrainKind

    policy, meta = load_checkpoint(args.checkpoint)
    cfg = desk_config()
    cfg = _override_backend(cfg, args.backend)
    kind = TerrainKind.from_name(args.terrain)
    patch_seed = derive_seed(args.seed, "terrain", kind.value, 0)
    patch = TerrainPatch.build(kind, cfg.terrain, patch_seed, rough=args.rough)
    pool = ValidationPool(cfg.env, [patch], args.agents, run_seed=args.seed)
    steps = (
        cfg.env.surrogate_episode_len
        if cfg.env.backend == "surrogate"
        else cfg.env.cap_steps
    )
    pool.run(policy, steps)
    means, counts = pool.snapshot_row()
    if means[0] is None:
        print("error: no validation episode terminated", file=sys.stderr)
        return 1
    print(
        f"checkpoint {args.checkpoint} (iteration {meta.iteration}) on "
        f"{args.terrain}: mean episode reward {means[0]:.4f} over "
        f"{counts[0]} episode(s)"
    )
    return 0


def _override_backend(cfg, backend):
    import dataclasses

    if backend is None:
        return cfg
    return dataclasses.replace(cfg, env=dataclasses.replace(cfg.env, backend=backend))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="terraincl",
        description="Terrain-incremental continual PPO harness",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one seeded training run")
    _add_train_options(p_train)
    p_train.set_defaults(handler=_cmd_train)

    p_sweep = sub.add_parser("sweep", help="run several seeds and aggregate")
    _add_train_options(p_sweep)
    p_sweep.add_argument(
        "--seeds", default="1,2,3,4,5", help="comma-separated run seeds"
    )
    p_sweep.set_defaults(handler=_cmd_sweep)

    p_report = sub.add_parser("report", help="summarize finished runs")
    p_report.add_argument("--runs", required=True, help="directory holding runs")
    p_report.set_defaults(handler=_cmd_report)

    p_gen = sub.add_parser("gen-terrain", help="emit a heightfield as CSV")
    p_gen.add_argument("--kind", required=True, help="terrain kind name")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--rough", action="store_true", help="add roughness noise")
    p_gen.add_argument("--out", required=True, help="CSV output path")
    p_gen.set_defaults(handler=_cmd_gen_terrain)

    p_val = sub.add_parser("validate", help="probe a checkpoint on one terrain")
    p_val.add_argument("--checkpoint", required=True)
    p_val.add_argument("--terrain", required=True, help="terrain kind name")
    p_val.add_argument("--rough", action="store_true")
    p_val.add_argument("--backend", choices=("walker", "surrogate"), default=None)
    p_val.add_argument("--agents", type=int, default=8)
    p_val.add_argument("--seed", type=int, default=0)
    p_val.set_defaults(handler=_cmd_validate)
    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.handler(args)
    except (ValueError, FileNotFoundError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
