"""Command-line entry point: train, evaluate, replay and inspect-config.

Exit codes: 0 success, 2 usage error, 3 configuration error, 4 checkpoint or
trace schema error, 5 replay mismatch, 6 file system error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from .config import ConfigError, RunConfig, dump_config, load_config
from .env import SCENARIO_LANES
from .maddpg import VARIANTS
from .metrics import TraceFormatError, export_traces, read_metrics_csv, read_trace
from .nn.checkpoint import CheckpointError
from .runner import evaluate, load_checkpoint, replay_trace, train, write_manifest, zones_for

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_SCHEMA, EXIT_MISMATCH, EXIT_IO = 0, 2, 3, 4, 5, 6


def _common(sub: argparse.ArgumentParser):
    # SUPPRESS keeps flags given before the subcommand from being reset by the subparser
    S = argparse.SUPPRESS
    sub.add_argument("--config", default=S, help="YAML file of flat config keys")
    sub.add_argument("--variant", choices=VARIANTS, default=S)
    sub.add_argument("--scenario", choices=tuple(SCENARIO_LANES), default=S)
    sub.add_argument("--traffic", choices=("cav_only", "homogeneous", "heterogeneous"), default=S)
    sub.add_argument("--seed", type=int, default=S)
    sub.add_argument("--episodes", type=int, default=S)
    sub.add_argument("--out", default=S, help="output directory")
    sub.add_argument("--workers", type=int, default=S)
    sub.add_argument("--checkpoint", default=S)
    sub.add_argument("--trace", default=S)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cavmarl", description="Multi-agent intersection driving with MARL.")
    _common(p)
    cmds = p.add_subparsers(dest="command", required=True)
    t = cmds.add_parser("train", help="train a variant and write checkpoints and logs")
    _common(t)
    t.add_argument("--resume", default=argparse.SUPPRESS, help="checkpoint to resume from")
    e = cmds.add_parser("evaluate", help="greedy seeded evaluation of a checkpoint")
    _common(e)
    e.add_argument("--inspector", choices=("auto", "on", "off"), default=argparse.SUPPRESS,
                   help="safety inspector at evaluation time (auto: only for ma_ga_ddpg)")
    r = cmds.add_parser("replay", help="re-simulate a trace and check bit identity")
    _common(r)
    r.add_argument("--narration", default=argparse.SUPPRESS, help="write a JSONL narration here")
    r.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    c = cmds.add_parser("inspect-config", help="print the resolved configuration")
    _common(c)
    return p


def _resolve(args, base: RunConfig | None = None) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in ("variant", "scenario", "traffic", "seed", "episodes", "workers")}
    return load_config(getattr(args, "config", None), base, **overrides)


def _cmd_train(args, out) -> int:
    cfg = _resolve(args)
    out_dir = Path(getattr(args, "out", None) or Path(cfg.out) / cfg.run_id)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out_dir / "config.yaml")

    def progress(row):
        if (row["episode"] + 1) % 50 == 0:
            print(f"episode {row['episode'] + 1}: mean reward {row['mean_reward']:.2f}, {row['outcome']}", file=out)

    res = train(cfg, out_dir, resume=getattr(args, "resume", None), progress=progress)
    print(f"trained {cfg.variant} for {cfg.episodes} episodes ({res.updates} update rounds)", file=out)
    print(f"checkpoint: {res.checkpoints[-1] if res.checkpoints else 'none'}", file=out)
    print(f"log: {out_dir / 'train_log.csv'}", file=out)
    return EXIT_OK


def _cmd_evaluate(args, out) -> int:
    ckpt = getattr(args, "checkpoint", None)
    if not ckpt:
        raise _Usage("evaluate needs --checkpoint")
    agents, stored, _ = load_checkpoint(ckpt)
    cfg = _resolve(args, stored)
    if getattr(args, "variant", None) is not None:
        agents, cfg, _ = load_checkpoint(ckpt, cfg)
    episodes = getattr(args, "episodes", None) or cfg.eval_episodes
    seed = getattr(args, "seed", None)
    seed = cfg.seed if seed is None else seed
    mode = getattr(args, "inspector", "auto")
    use_inspector = None if mode == "auto" else mode == "on"
    out_dir = Path(getattr(args, "out", None) or Path(ckpt).parent / f"eval_seed{seed}")
    traces = evaluate(agents, cfg, episodes, seed, use_inspector, cfg.workers)
    files = export_traces(traces, out_dir, zones_for(cfg))
    write_manifest(out_dir / "manifest.json", cfg, command="evaluate", checkpoint=str(ckpt),
                   eval_seed=seed, eval_episodes=episodes, inspector=mode)
    summary = read_metrics_csv(files["summary"])[0]
    print(f"{episodes} episodes, success rate {float(summary['success_rate']):.3f}, "
          f"collisions {summary['collisions']}, mean PET {summary['mean_pet'] or 'n/a'}", file=out)
    print(f"metrics: {files['metrics']}", file=out)
    return EXIT_OK


def _cmd_replay(args, out) -> int:
    path = getattr(args, "trace", None)
    if not path:
        raise _Usage("replay needs --trace")
    report = replay_trace(read_trace(path))
    if not getattr(args, "quiet", False):
        for line in report.narration:
            print(line, file=out)
    narration = getattr(args, "narration", None)
    if narration:
        with open(narration, "w") as f:
            for ev in report.events:
                f.write(json.dumps(ev, sort_keys=True) + "\n")
            f.write(json.dumps({"identical": report.identical, "steps_checked": report.steps_checked,
                                "first_mismatch": report.first_mismatch}, sort_keys=True) + "\n")
    if report.identical:
        print(f"identical ({report.steps_checked} sim steps)", file=out)
        return EXIT_OK
    print(f"MISMATCH at {json.dumps(report.first_mismatch)}", file=out)
    return EXIT_MISMATCH


def _cmd_inspect(args, out) -> int:
    ckpt = getattr(args, "checkpoint", None)
    cfg = _resolve(args, load_checkpoint(ckpt)[1] if ckpt else None)
    out.write(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    return EXIT_OK


class _Usage(Exception):
    pass


COMMANDS = {"train": _cmd_train, "evaluate": _cmd_evaluate, "replay": _cmd_replay,
            "inspect-config": _cmd_inspect}


def run_cli(argv: list[str] | None = None, out=None) -> int:
    """Run one command and return its exit code instead of exiting."""
    out = out or sys.stdout
    err = sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return COMMANDS[args.command](args, out)
    except _Usage as exc:
        print(f"usage error: {exc}", file=err)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=err)
        return EXIT_CONFIG
    except (CheckpointError, TraceFormatError) as exc:
        print(f"schema error: {exc}", file=err)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"file error: {exc}", file=err)
        return EXIT_IO


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
