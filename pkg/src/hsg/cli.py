"""Command-line entry point: ``hsg {train,eval,gradcheck,ingest-check,replay}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from hsg import __version__
from hsg.config import RunConfig
from hsg.errors import BackendError, ConfigError, DataError, FixtureError, HSGError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_BACKEND = 5
EXIT_ASSERTION = 6

log = logging.getLogger("hsg")


class UsageError(HSGError):
    pass


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "output", None):
        changes["output_dir"] = args.output
    if getattr(args, "steps", None) is not None:
        changes["steps"] = args.steps
    return cfg.replace(**changes) if changes else cfg


def cmd_train(args) -> int:
    from hsg.run import train

    cfg = _config(args)
    selected = train(cfg, resume=not args.fresh)
    print(f"selected checkpoint: step {selected.step}, held-out ACC_corr {selected.acc_corr:.4f} "
          f"({selected.snapshot})")
    print(f"run directory: {cfg.output_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from hsg.evaluation import evaluate_items, load_items
    from hsg.run import assemble

    cfg = _config(args)
    items = load_items(args.fixtures)
    if not items:
        raise UsageError(f"{args.fixtures}: fixture file holds no items")
    asm = assemble(cfg)
    report = evaluate_items(items, asm.actors.corrector, judge=asm.judge, judge_dataset=args.judge_dataset,
                            seed=cfg.seed, max_workers=cfg.max_workers)
    out = Path(cfg.output_dir) / "eval"
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "correction_table.txt").write_text(report["correction_text"])
    print(report["correction_text"])
    if "judge_text" in report:
        (out / "judge_table.txt").write_text(report["judge_text"])
        print(report["judge_text"])
    print("error types: " + ", ".join(f"{k} {v:.4f}" for k, v in report["error_types"].items()))
    print(f"report written to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from hsg.gradcheck import gradcheck, sign_flipped_clip
    from hsg.grpo import clipped_term

    cfg = _config(args)
    report = gradcheck(
        cases=args.cases,
        seed=cfg.seed,
        epsilon=cfg.grpo.clip_epsilon,
        beta_kl=max(cfg.grpo.beta_kl_s, cfg.grpo.beta_kl_d),
        temperature=cfg.toy.temperature,
        tolerance=args.tolerance,
        clip_fn=sign_flipped_clip if args.inject_sign_flip else clipped_term,
        zero_advantage=args.zero_advantage,
    )
    print(report.summary())
    return EXIT_OK if report.ok else EXIT_ASSERTION


def cmd_ingest_check(args) -> int:
    from hsg.data import ingest_report

    report = ingest_report(args.path, args.source)
    for lineno, reason in report.skipped:
        print(f"{args.path}:{lineno}: skipped: {reason}")
    print(f"{len(report.records)} valid record(s), {len(report.skipped)} skipped")
    if not report.records:
        raise DataError(f"{args.path}: no valid records")
    return EXIT_OK


def cmd_replay(args) -> int:
    from hsg.transcript import replay

    report = replay(args.run_dir)
    for line in report.mismatches:
        print(line)
    print(report.summary())
    return EXIT_OK if report.ok else EXIT_ASSERTION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hsg", description="Hide-and-seek self-play: train, evaluate, audit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML or JSON run config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--output", help="override the output directory")

    p = sub.add_parser("train", help="run (or resume) self-play training")
    common(p)
    p.add_argument("--steps", type=int, help="override the number of steps")
    p.add_argument("--fresh", action="store_true", help="ignore any saved state and start over")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score D vs D* fixtures and write report tables")
    common(p)
    p.add_argument("fixtures", help="JSON Lines evaluation items")
    p.add_argument("--judge-dataset", help="dataset whose items go to the judge (default: the last one)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the toy policy gradient")
    common(p)
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--zero-advantage", action="store_true", help="use batches with all-zero advantages")
    p.add_argument("--inject-sign-flip", action="store_true", help="mutate the clip term (the check must fail)")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("ingest-check", help="validate a JSON Lines dataset file")
    p.add_argument("path")
    p.add_argument("--source", default="gsm8k-style")
    p.set_defaults(fn=cmd_ingest_check)

    p = sub.add_parser("replay", help="recompute rewards from a run transcript and diff")
    p.add_argument("run_dir")
    p.set_defaults(fn=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FixtureError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
