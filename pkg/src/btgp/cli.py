"""Command-line front end: single runs, the three experiments, replay."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import bt
from .experiments import (
    DEFAULT_SEEDS,
    DESK_GENERATIONS,
    FULL_GENERATIONS,
    ExperimentConfig,
    exp3_profile,
    read_genotype,
    replay,
    run_experiment,
    write_genotype,
    write_history_csv,
)
from .fitness import TABLE2
from .gp import GpParams, run
from .world import PROBABILITY_COLUMNS, SCENARIOS, UnknownScenario, make_profile

OUT_ENV_VAR = "BTGP_OUT"


def _default_out() -> str:
    return os.environ.get(OUT_ENV_VAR, "btgp_out")


def _parse_seeds(text: str) -> tuple[int, ...]:
    """Seed lists: '0..9', '0,3,7' or a single number."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(part) for part in text.split(","))


def _generations(args) -> int:
    if args.generations is not None:
        return args.generations
    return FULL_GENERATIONS if args.full else DESK_GENERATIONS


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--generations", type=int, default=None, help="generation budget")
    parser.add_argument(
        "--full", action="store_true", help=f"run the full {FULL_GENERATIONS} generations"
    )
    parser.add_argument("--population", type=int, default=30)
    parser.add_argument("--episodes-per-eval", type=int, default=1)
    parser.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV_VAR})")
    parser.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="btgp",
        description="Learn behavior-tree policies for a mobile pick-and-place "
        "task with genetic programming on a state-machine world model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="single GP run")
    run_p.add_argument("--profile", default="det", choices=sorted(PROBABILITY_COLUMNS))
    run_p.add_argument("--pool", default="core9", choices=SCENARIOS)
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--delta", type=float, default=None, help="risk weight override")
    run_p.add_argument(
        "--reevaluate-elites", action=argparse.BooleanOptionalAction, default=False
    )
    run_p.add_argument("--early-stop-window", type=int, default=0)
    run_p.add_argument("--checkpoint-every", type=int, default=0)
    run_p.add_argument("--checkpoint", default=None, help="checkpoint file path")
    run_p.add_argument("--resume", default=None, help="resume from a checkpoint file")
    _add_common(run_p)

    for name, help_text in (
        ("exp1", "failure-probability robustness across the five profiles"),
        ("exp2", "distractor-pool noise on the stoch3 profile"),
        ("exp3", "risk-averse path selection, delta 0 vs 150"),
    ):
        exp_p = sub.add_parser(name, help=help_text)
        exp_p.add_argument("--seeds", type=_parse_seeds, default=DEFAULT_SEEDS)
        exp_p.add_argument(
            "--reevaluate-elites", action=argparse.BooleanOptionalAction, default=True
        )
        _add_common(exp_p)

    replay_p = sub.add_parser("replay", help="Monte Carlo replay of a genotype file")
    replay_p.add_argument("--tree", required=True, help="genotype text file")
    replay_p.add_argument("--profile", default="det", choices=sorted(PROBABILITY_COLUMNS))
    replay_p.add_argument("--pool", default="core9", choices=SCENARIOS)
    replay_p.add_argument("--exp3-paths", action="store_true", help="use the exp3 risky/safe path profile")
    replay_p.add_argument("--episodes", type=int, default=1000)
    replay_p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_run(args) -> int:
    out_dir = Path(args.out or _default_out())
    weights = TABLE2 if args.delta is None else TABLE2.with_delta(args.delta)
    profile = make_profile(args.profile, args.pool)
    params = GpParams(
        population=args.population,
        generations=_generations(args),
        episodes_per_eval=args.episodes_per_eval,
        seed=args.seed,
        reevaluate_elites=args.reevaluate_elites,
        early_stop_window=args.early_stop_window,
        workers=args.workers,
    )
    checkpoint = args.checkpoint
    if checkpoint is None and args.checkpoint_every > 0:
        checkpoint = out_dir / f"run_{profile.name}_seed{args.seed}.checkpoint.json"
        Path(checkpoint).parent.mkdir(parents=True, exist_ok=True)
    history, best = run(
        params,
        profile,
        weights,
        checkpoint_path=checkpoint,
        checkpoint_every=args.checkpoint_every,
        resume_from=args.resume,
    )
    stem = f"run_{profile.name}_seed{args.seed}"
    csv_path = out_dir / f"{stem}.csv"
    best_path = out_dir / f"{stem}_best.txt"
    write_history_csv(csv_path, history)
    write_genotype(best_path, best.genotype)
    print(f"generations: {history[-1].generation}")
    print(f"episodes: {sum(h.episodes for h in history)}")
    print(f"best_j: {best.fitness.j!r}")
    print(f"best: {bt.to_text(best.genotype)}")
    print(f"wrote {csv_path} and {best_path}")
    return 0


def _cmd_experiment(args) -> int:
    config = ExperimentConfig(
        experiment=args.command,
        out_dir=str(args.out or _default_out()),
        seeds=tuple(args.seeds),
        generations=_generations(args),
        population=args.population,
        episodes_per_eval=args.episodes_per_eval,
        reevaluate_elites=args.reevaluate_elites,
        workers=args.workers,
    )
    written = run_experiment(config)
    for path in written:
        print(path)
    return 0


def _cmd_replay(args) -> int:
    genotype = read_genotype(args.tree)
    if args.exp3_paths:
        profile = exp3_profile()
    else:
        profile = make_profile(args.profile, args.pool)
    report = replay(genotype, profile, args.episodes, args.seed)
    print(json.dumps(report.as_dict(), indent=1))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command in ("exp1", "exp2", "exp3"):
            return _cmd_experiment(args)
        if args.command == "replay":
            return _cmd_replay(args)
        parser.error(f"unknown command {args.command}")
    except (bt.MalformedGenotype, UnknownScenario, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
