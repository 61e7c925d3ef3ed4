"""Command-line interface: train, evaluate, duel, peace-test, and chart.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import charts, config as config_mod, harness
from .config import SCHEMA, ConfigError
from .metrics import write_metrics

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

IDENTIFICATION_TOLERANCE = 0.05


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; this tool reserves 2 for
    # runtime failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_schema_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides (mirror the dotted config keys)")
    for key, entry in SCHEMA.items():
        group.add_argument(f"--{key}", dest=key, metavar="VALUE", help=entry.help)


def _collect_overrides(args: argparse.Namespace) -> dict[str, str]:
    raw = vars(args)
    return {key: raw[key] for key in SCHEMA if raw.get(key) is not None}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cdqn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", parents=[], help="train one agent and write metrics + charts")
    p_train.add_argument("--config", help="config file (key = value lines)")
    p_train.add_argument("--seed", type=int, help="shorthand for --run.seed")
    p_train.add_argument("--agent", choices=("dqn", "causal"), help="shorthand for --run.agent")
    p_train.add_argument("--out", help="shorthand for --run.out")
    _add_schema_flags(p_train)

    p_eval = sub.add_parser("evaluate", help="greedy evaluation of a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--episodes", type=int, default=10)
    p_eval.add_argument("--seed", type=int, default=0)

    p_duel = sub.add_parser("duel", help="paired-seed head-to-head of two checkpoints")
    p_duel.add_argument("--checkpoint-a", required=True)
    p_duel.add_argument("--checkpoint-b", required=True)
    p_duel.add_argument("--rounds", type=int, default=100)
    p_duel.add_argument("--episodes-per-round", type=int, default=5)
    p_duel.add_argument("--seed", type=int, default=0)
    p_duel.add_argument("--out", help="directory for duel.csv and duel.svg")

    p_pt = sub.add_parser("peace-test", help="run the estimator identification suite")
    p_pt.add_argument("--seed", type=int, default=0)
    p_pt.add_argument("--samples", type=int, default=100_000)
    p_pt.add_argument("--specs", type=int, default=5)

    p_chart = sub.add_parser("chart", help="render a metrics CSV as an SVG line chart")
    p_chart.add_argument("--csv", required=True)
    p_chart.add_argument("--columns", required=True, help="comma-separated column names")
    p_chart.add_argument("--out", required=True)

    return parser


def cmd_train(args) -> int:
    overrides = _collect_overrides(args)
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    if args.agent is not None:
        overrides["run.agent"] = args.agent
    if args.out is not None:
        overrides["run.out"] = args.out
    cfg = config_mod.load_config(args.config, overrides)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    result = harness.run_training(cfg)
    csv_path = out / "metrics.csv"
    write_metrics(result.log, csv_path)
    charts.render_chart(csv_path, ["train_reward", "test_reward"], out / "rewards.svg")
    charts.render_chart(csv_path, ["mean_peace"], out / "causal_effect.svg")
    ckpt = out / "checkpoint.params"
    harness.save_checkpoint(
        ckpt, result.agent.params, result.final_epsilon, len(result.log.rows), cfg
    )
    (out / "config.txt").write_text(config_mod.dump_config(cfg))

    last = result.log.rows[-1]
    print(f"agent={cfg.agent_kind} seed={cfg.seed} episodes={len(result.log.rows)}")
    if result.episodes_to_solve is not None:
        print(
            f"solved at episode {result.episodes_to_solve} "
            f"(rolling mean over {cfg.stop_window} episodes >= {cfg.stop_threshold:g})"
        )
    else:
        print(f"not solved within {cfg.max_episodes} episodes")
    print(f"final train reward {last.train_reward:g}, test reward {last.test_reward:g}")
    print(f"wrote {csv_path}, rewards.svg, causal_effect.svg, {ckpt}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    mean, scores = harness.evaluate(args.checkpoint, args.episodes, args.seed)
    for i, score in enumerate(scores, start=1):
        print(f"episode {i}: {score:g}")
    print(f"mean greedy score over {len(scores)} episodes: {mean:g}")
    return EXIT_OK


def cmd_duel(args) -> int:
    result = harness.duel(
        args.checkpoint_a, args.checkpoint_b, args.rounds, args.episodes_per_round, args.seed
    )
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "duel.csv"
        write_metrics(result, csv_path)
        charts.render_chart(csv_path, ["score_a", "score_b"], out / "duel.svg")
        print(f"wrote {csv_path} and duel.svg")
    print(
        f"duel means over {len(result.rows)} rounds: "
        f"a={result.mean_a:.3f} b={result.mean_b:.3f}"
    )
    return EXIT_OK


def cmd_peace_test(args) -> int:
    records = harness.identification_suite(args.seed, args.samples, args.specs)
    print(f"{'spec':>6} {'exact':>12} {'estimated':>12} {'rel_error':>10} {'pooled':>12}")
    worst = 0.0
    for i, rec in enumerate(records, start=1):
        worst = max(worst, rec.rel_error)
        print(
            f"{i:>6} {rec.exact:>12.6f} {rec.estimated:>12.6f} "
            f"{rec.rel_error:>10.4%} {rec.pooled:>12.6f}"
        )
    ok = worst <= IDENTIFICATION_TOLERANCE
    print(
        f"worst relative error {worst:.4%} "
        f"({'PASS' if ok else 'FAIL'} at {IDENTIFICATION_TOLERANCE:.0%}, n={args.samples})"
    )
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_chart(args) -> int:
    columns = [c.strip() for c in args.columns.split(",") if c.strip()]
    charts.render_chart(args.csv, columns, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "duel": cmd_duel,
    "peace-test": cmd_peace_test,
    "chart": cmd_chart,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"cdqn: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"cdqn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (harness.TrainingDiverged, harness.CheckpointError, ArithmeticError, OSError) as exc:
        print(f"cdqn: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
