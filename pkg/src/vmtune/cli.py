"""Command-line entry point: ``vmtune {warmup,run,compare,explain}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .bandit import CheckpointError
from .config import ConfigError, ExperimentConfig, load_config
from .experiment import (
    compare,
    explain,
    load_checkpoint,
    resolve_method,
    run,
    warmup,
    write_metrics,
    write_summary,
)
from .policies import PolicyKind

log = logging.getLogger("vmtune")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vmtune",
                                     description="Simulated VM right-sizing with contextual bandits.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("warmup", help="pre-train a bandit checkpoint in the simulator")
    _add_common(p)
    p.add_argument("--checkpoint-in", help="continue training from this checkpoint")
    p.add_argument("--checkpoint-out", help="where to write the trained checkpoint")

    p = sub.add_parser("run", help="run one method and write per-round metrics")
    _add_common(p)
    p.add_argument("--checkpoint-in", help="warm-start the bandit from this checkpoint")
    p.add_argument("--checkpoint-out", help="save the bandit state after the run")
    p.add_argument("--metrics-out", help="metrics CSV path")

    p = sub.add_parser("compare", help="run every configured method on identical clusters")
    _add_common(p)
    p.add_argument("--metrics-out",
                   help="base path; writes <stem>.<method>.csv and <stem>.summary.json")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    p = sub.add_parser("explain", help="dump per-arm scores for one VM context")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="bandit checkpoint to inspect")
    sel = p.add_mutually_exclusive_group()
    sel.add_argument("--vm", help="VM id, e.g. vm-003")
    sel.add_argument("--group", help="use the first VM of this group")
    p.add_argument("--after-rounds", type=int, default=0,
                   help="passive rounds to simulate before taking the context")
    return parser


def _require(value: str | None, what: str) -> str:
    if not value:
        raise ConfigError(f"{what}: no path given on the command line or in the config")
    return value


def cmd_warmup(cfg: ExperimentConfig, args) -> None:
    model = load_checkpoint(args.checkpoint_in) if args.checkpoint_in else None
    out = _require(args.checkpoint_out or cfg.checkpoint_out, "checkpoint_out")
    model, total = warmup(cfg, args.seed, model)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    print(f"cumulative reward: {total:.0f}")
    print(f"checkpoint written to {out}")


def cmd_run(cfg: ExperimentConfig, args) -> None:
    method = resolve_method(cfg)
    out = _require(args.metrics_out or cfg.metrics_out, "metrics_out")
    result = run(cfg, method, args.seed, args.checkpoint_in or cfg.checkpoint_in)
    write_metrics(out, result.rows)
    ckpt_out = args.checkpoint_out or cfg.checkpoint_out
    if ckpt_out:
        if method.kind is not PolicyKind.BANDITS:
            raise ConfigError("checkpoint_out: only the bandits method has a checkpoint")
        Path(ckpt_out).parent.mkdir(parents=True, exist_ok=True)
        result.controller.policy.model.save(ckpt_out)
    final = result.rows[-1]
    print(f"{result.label}: {len(result.rows)} rounds, final vCPUs {final.total_vcpus}, "
          f"cumulative reward {final.cumulative_reward:.0f}")
    print(f"metrics written to {out}")


def cmd_compare(cfg: ExperimentConfig, args) -> None:
    base = Path(args.metrics_out or cfg.metrics_out or "compare.csv")
    per_method, summary = compare(cfg, args.seed, args.jobs)
    for label, rows in per_method.items():
        write_metrics(base.with_name(f"{base.stem}.{label}.csv"), rows)
    summary_path = base.with_name(f"{base.stem}.summary.json")
    write_summary(summary_path, summary)
    print(f"{'method':<12} {'vcpus':>6} {'d_vcpus%':>9} {'mem_mib':>9} {'d_mem%':>8} {'swapping':>9}")
    for label, s in summary["methods"].items():
        print(f"{label:<12} {s['final_total_vcpus']:>6} {s['delta_vcpus_pct']:>9.1f} "
              f"{s['final_total_mem_mib']:>9} {s['delta_mem_pct']:>8.1f} "
              f"{s['final_frac_vms_swapping']:>9.2f}")
    print(f"summary written to {summary_path}")


def cmd_explain(cfg: ExperimentConfig, args) -> None:
    model = load_checkpoint(args.checkpoint)
    vm_id, rows = explain(cfg, model, args.vm, args.group, args.after_rounds, args.seed)
    print(f"context: {vm_id} after {args.after_rounds} rounds")
    print(f"{'action':<20} {'estimate':>10} {'width':>10} {'score':>10}")
    for name, estimate, width, score in rows:
        print(f"{name:<20} {estimate:>10.4f} {width:>10.4f} {score:>10.4f}")


COMMANDS = {"warmup": cmd_warmup, "run": cmd_run, "compare": cmd_compare, "explain": cmd_explain}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        COMMANDS[args.command](cfg, args)
    except (ConfigError, CheckpointError, ValueError, OSError) as exc:
        print(f"vmtune {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
