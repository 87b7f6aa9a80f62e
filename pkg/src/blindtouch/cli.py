"""Command line front end: train, eval, ablate, plot-data, replay.

Experiment settings come from a flat key=value config file (--config) with
individual flags layered on top; `describe_config_keys` lists every key.
Training and evaluation are single-worker and seed-deterministic, so
--deterministic is accepted everywhere but changes nothing.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .config import load_config
from .errors import ConfigError, UsageError


def _split(csv: str) -> list[str]:
    return [x.strip() for x in csv.split(",") if x.strip()]


def _add_run_flags(sp) -> None:
    sp.add_argument("--config", metavar="FILE",
                    help="flat key=value experiment config")
    sp.add_argument("--task", help="grasp | door | valve")
    sp.add_argument("--preset", help="ablation arm, e.g. Ours or WO-Sensor "
                                     "(comma list where a grid is accepted)")
    sp.add_argument("--seeds", help="comma-separated seeds, e.g. 0,1,2")
    sp.add_argument("--out", metavar="DIR", help="artifact directory")
    sp.add_argument("--deterministic", action="store_true",
                    help="single-worker deterministic mode (always on; "
                         "accepted for script compatibility)")


def _mapping_from_args(args) -> dict:
    m = load_config(args.config) if args.config else {}
    if getattr(args, "task", None):
        m["task"] = args.task
    if getattr(args, "preset", None):
        m["preset"] = args.preset
    if getattr(args, "seeds", None):
        m["seeds"] = args.seeds
    if getattr(args, "out", None):
        m["out_dir"] = args.out
    return m


def cmd_train(args) -> int:
    cfg = harness.from_mapping(_mapping_from_args(args))
    for art in harness.run_training(cfg):
        last = harness.read_metrics(art.metrics)[-1]
        print(f"seed {art.seed}: {art.checkpoint}  steps={art.env_steps} "
              f"updates={art.updates} success={last['success_rate']} "
              f"return={last['mean_return']}")
    return 0


def _eval_policy(args, batch: int):
    """A checkpoint path, or scripted:<task> / frozen for detector checks."""
    name = args.checkpoint
    if name == "frozen":
        from .scripted import FrozenPolicy
        return FrozenPolicy(batch), {}
    if name.startswith("scripted:"):
        from .scripted import oracle_scene_config, scripted_policy_for
        task = name.split(":", 1)[1]
        return scripted_policy_for(task, batch), {"scene": oracle_scene_config(task)}
    if not Path(name).exists():
        raise ConfigError(f"checkpoint not found: {name}")
    return name, {}


def cmd_eval(args) -> int:
    m = _mapping_from_args(args)
    batch = int(m.get("eval_batch", 32))
    policy, extra = _eval_policy(args, batch)
    meta = {}
    if isinstance(policy, str):
        from .ppo import load_policy
        _, meta = load_policy(policy)
    task = args.task or m.get("task") or meta.get("task")
    if not task:
        raise ConfigError("no task given and the checkpoint does not name one")
    preset = args.preset or meta.get("preset") or "Ours"
    episodes = args.episodes if args.episodes is not None else int(
        m.get("eval_episodes", 200))
    seeds = [int(s) for s in _split(args.seeds)] if args.seeds else [0]

    report = harness.EvalReport()
    for seed in seeds:
        report.add(harness.evaluate(policy, task, preset, episodes, seed,
                                    batch=batch, **extra))
    print(report.table(tasks=[task], presets=[preset]))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        print(report.write_rows_csv(out / "eval_rows.csv"))
    bad = [r for r in report.rows if r.error is not None]
    for r in bad:
        print(f"error: {r.task}/{r.preset}/seed{r.seed}: {r.error}",
              file=sys.stderr)
    return 1 if bad else 0


def cmd_ablate(args) -> int:
    m = _mapping_from_args(args)
    tasks = _split(args.task) if args.task else [m.get("task", "grasp")]
    presets = _split(args.preset) if args.preset else list(harness.PRESETS)
    if args.seeds:
        seeds = [int(s) for s in _split(args.seeds)]
    else:
        seeds = [int(s) for s in _split(m.get("seeds", "0,1,2"))]
    # grid axes are passed separately; the mapping only seeds the base config
    m.pop("task", None), m.pop("preset", None), m.pop("seeds", None)
    base = harness.from_mapping(m)
    res = harness.run_ablation_suite(tasks, presets, seeds, base=base)
    print(res.table_txt.read_text())
    print(f"artifacts: {res.out_dir}")
    if res.failures:
        print("failed cells:", file=sys.stderr)
        for c in res.failures:
            print(f"  {c.task}/{c.preset}/seed{c.seed} [{c.stage}]: {c.error}",
                  file=sys.stderr)
        return 1
    return 0


def cmd_plot_data(args) -> int:
    out = Path(args.out)
    if out.suffix != ".csv":
        out = out / "bands.csv"
    print(harness.emit_plot_data(args.metrics, out))
    return 0


def cmd_replay(args) -> int:
    from .kinematics import default_robot_model
    from .tactile import (SensorLayout, apply_sensor_mask, binarize_stream,
                          format_mask, read_replay_csv, write_mask_csv)
    preset = harness.require_preset(args.preset)
    values, meta = read_replay_csv(args.stream)
    layout = apply_sensor_mask(
        SensorLayout.from_model(default_robot_model(),
                                threshold=preset.threshold),
        preset.sensor_preset)
    masks = binarize_stream(values, layout,
                            sample_rate=float(meta["rate_hz"]))
    if args.out:
        write_mask_csv(args.out, masks)
        print(args.out)
    else:
        for k, mask in enumerate(masks):
            print(k, format_mask(mask))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="blindtouch",
        description="Blind manipulation with binary touch: training, "
                    "ablations, and tactile stream tools.",
        epilog="config file keys:\n" + harness.describe_config_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("train", help="train one arm, one policy per seed")
    _add_run_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint deterministically")
    sp.add_argument("checkpoint",
                    help="checkpoint path, scripted:<task>, or frozen")
    sp.add_argument("--episodes", type=int, help="episodes per seed")
    _add_run_flags(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate",
                        help="train and evaluate a preset-by-task grid")
    _add_run_flags(sp)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("plot-data",
                        help="aggregate per-seed metrics into a mean/std CSV")
    sp.add_argument("metrics", nargs="+", help="metrics.jsonl files")
    sp.add_argument("--out", required=True, help="output CSV file or directory")
    sp.set_defaults(func=cmd_plot_data)

    sp = sub.add_parser("replay",
                        help="binarize a recorded tactile stream into "
                             "per-control-step contact masks")
    sp.add_argument("stream", help="recorded force CSV")
    sp.add_argument("--out", help="mask CSV path (default: print to stdout)")
    sp.add_argument("--preset", default="Ours",
                    help="sensing arm whose mask and threshold to apply")
    sp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
