"""Experiment orchestration: ablation presets, seeded runs, tables, curves.

A preset bundles every sensing knob that distinguishes one ablation arm from
the full system: which sensors exist, their force threshold, whether the
critic keeps its privileged block, whether touch is zeroed at evaluation time
only, and whether the 16 binary bits are swapped for the 6-axis wrist
force/torque reading.  Everything else (trainer, reward, scene) is shared, so
any two arms differ in exactly the fields their definitions name.

Artifacts are plain text: checkpoints in the tensor format from `nets`,
metrics as JSON lines, tables and curves as CSV, and a flat key=value config
snapshot whose hash stamps every report row.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .config import dump_config, save_config
from .env import CAUSE_SUCCESS, EnvConfig, TouchEnv
from .errors import ConfigError, UsageError
from .ppo import Policy, PPOConfig, load_policy, save_policy, train
from .scene import TASKS, SceneConfig
from .tactile import DEFAULT_THRESHOLD, LQ_THRESHOLD

Array = np.ndarray


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Preset:
    """One arm of the sensing-ablation grid."""

    name: str
    sensor_preset: str = "All"
    threshold: float = DEFAULT_THRESHOLD
    wo_pinfo: bool = False
    ft_sensor: bool = False
    da_eval: bool = False   # train with touch intact, zero it at evaluation

    def env_kwargs(self, for_eval: bool) -> dict:
        return {
            "sensor_preset": self.sensor_preset,
            "threshold": self.threshold,
            "wo_pinfo": self.wo_pinfo,
            "ft_sensor": self.ft_sensor,
            "da_sensor": bool(self.da_eval and for_eval),
        }


PRESETS: dict[str, Preset] = {p.name: p for p in (
    Preset("Ours"),
    Preset("WO-Sensor", sensor_preset="None"),
    Preset("LQ-Sensor", threshold=LQ_THRESHOLD),
    Preset("WO-PInfo", wo_pinfo=True),
    Preset("DA-Sensor", da_eval=True),
    Preset("Fingertips", sensor_preset="Fingertips"),
    Preset("Palm", sensor_preset="Palm"),
    Preset("FTsensor", ft_sensor=True),
)}


def require_preset(name) -> Preset:
    if isinstance(name, Preset):
        return name
    if name not in PRESETS:
        raise ConfigError(
            f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")
    return PRESETS[name]


def require_task(task: str) -> str:
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {', '.join(TASKS)}")
    return task


def preset_config_diff(name, task: str = "grasp", for_eval: bool = False) -> dict:
    """Env-config fields where a preset differs from Ours: {field: (ours, theirs)}.

    The isolation invariant: this is exactly the one knob the arm is named
    after (empty for DA-Sensor at training time, since it trains as Ours).
    """
    ours = _env_config(PRESETS["Ours"], task, 1, 0, 10, None, for_eval)
    theirs = _env_config(require_preset(name), task, 1, 0, 10, None, for_eval)
    out = {}
    for f in fields(EnvConfig):
        a, b = getattr(ours, f.name), getattr(theirs, f.name)
        if a != b:
            out[f.name] = (a, b)
    return out


def _env_config(preset: Preset, task, batch, seed, t_max, scene, for_eval) -> EnvConfig:
    return EnvConfig(task=task, batch=batch, seed=seed, t_max=t_max,
                     scene=scene, **preset.env_kwargs(for_eval))


# ---------------------------------------------------------------------------
# experiment config
# ---------------------------------------------------------------------------


def _coerce_field(value: str, default, key: str):
    """Parse a flat-config string into the type of the field's default."""
    try:
        if isinstance(default, bool):
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            elem = type(default[0]) if default else str
            return tuple(elem(s.strip()) for s in value.split(",") if s.strip())
        return value
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)   # shortest string that round-trips
    return str(v)


_SCENE_DEFAULTS = SceneConfig()
_SCENE_FIELDS = {f.name for f in fields(SceneConfig)} - {"task"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one training-plus-evaluation run needs, flat-file friendly.

    `scene_overrides` holds (field, value-string) pairs applied on top of the
    task's default SceneConfig, so reduced placement ranges or a restricted
    object set serialize through the same key=value files as the rest.
    """

    task: str = "grasp"
    preset: str = "Ours"
    seeds: tuple[int, ...] = (0, 1, 2)
    n_envs: int = 256
    t_max: int = 300
    eval_episodes: int = 200
    eval_batch: int = 32
    out_dir: str = "runs"
    ppo: PPOConfig = field(default_factory=PPOConfig)
    scene_overrides: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        require_task(self.task)
        require_preset(self.preset)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.n_envs < 1 or self.t_max < 1 or self.eval_batch < 1:
            raise ConfigError("n_envs, t_max, eval_batch must be >= 1")
        if self.eval_episodes < 0:
            raise ConfigError("eval_episodes must be >= 0")
        if not isinstance(self.ppo, PPOConfig):
            raise ConfigError("ppo must be a PPOConfig")
        pairs = tuple(sorted((str(k), str(v)) for k, v in self.scene_overrides))
        object.__setattr__(self, "scene_overrides", pairs)
        for k, v in pairs:
            if k not in _SCENE_FIELDS:
                raise ConfigError(f"unknown scene override {k!r}")
            _coerce_field(v, getattr(_SCENE_DEFAULTS, k), f"scene.{k}")


def to_mapping(cfg: ExperimentConfig) -> dict[str, str]:
    """Flatten to the key=value form used by config files and hashing."""
    m = {
        "task": cfg.task,
        "preset": cfg.preset,
        "seeds": ",".join(str(s) for s in cfg.seeds),
        "n_envs": str(cfg.n_envs),
        "t_max": str(cfg.t_max),
        "eval_episodes": str(cfg.eval_episodes),
        "eval_batch": str(cfg.eval_batch),
        "out_dir": cfg.out_dir,
    }
    for f in fields(PPOConfig):
        m[f"ppo.{f.name}"] = _format_value(getattr(cfg.ppo, f.name))
    for k, v in cfg.scene_overrides:
        m[f"scene.{k}"] = v
    return m


def from_mapping(mapping) -> ExperimentConfig:
    m = dict(mapping)
    kwargs: dict = {}
    for name in ("task", "preset", "out_dir"):
        if name in m:
            kwargs[name] = m.pop(name)
    for name in ("n_envs", "t_max", "eval_episodes", "eval_batch"):
        if name in m:
            kwargs[name] = int(m.pop(name))
    if "seeds" in m:
        raw = m.pop("seeds")
        kwargs["seeds"] = tuple(int(s) for s in raw.split(",") if s.strip())
    ppo_defaults = PPOConfig()
    ppo_kwargs = {}
    for f in fields(PPOConfig):
        key = f"ppo.{f.name}"
        if key in m:
            ppo_kwargs[f.name] = _coerce_field(
                m.pop(key), getattr(ppo_defaults, f.name), key)
    if ppo_kwargs:
        kwargs["ppo"] = replace(ppo_defaults, **ppo_kwargs)
    scene_pairs = tuple(
        (k[len("scene."):], m.pop(k)) for k in sorted(m) if k.startswith("scene."))
    if scene_pairs:
        kwargs["scene_overrides"] = scene_pairs
    if m:
        raise ConfigError(f"unknown config keys: {sorted(m)}")
    return ExperimentConfig(**kwargs)


def config_hash(cfg: ExperimentConfig) -> str:
    """12-hex digest of the canonical config text; out_dir does not affect it."""
    m = to_mapping(cfg)
    m.pop("out_dir", None)
    return hashlib.sha256(dump_config(m).encode()).hexdigest()[:12]


def describe_config_keys() -> str:
    """Documentation for every key the flat config files accept."""
    top = [
        ("task", "grasp | door | valve"),
        ("preset", "ablation arm: " + ", ".join(PRESETS)),
        ("seeds", "comma-separated training seeds, e.g. 0,1,2"),
        ("n_envs", "parallel training environments"),
        ("t_max", "episode step limit"),
        ("eval_episodes", "evaluation episodes per seed"),
        ("eval_batch", "parallel environments during evaluation"),
        ("out_dir", "artifact directory (excluded from the config hash)"),
    ]
    lines = [f"  {k:<22} {h}" for k, h in top]
    ppo_defaults = PPOConfig()
    for f in fields(PPOConfig):
        d = _format_value(getattr(ppo_defaults, f.name))
        lines.append(f"  ppo.{f.name:<18} trainer knob (default {d})")
    lines.append("  scene.<field>          placement/geometry override, e.g. "
                 "scene.range_x = 0.1 or scene.objects = tennis_ball,apple")
    return "\n".join(lines)


def build_scene(cfg: ExperimentConfig) -> SceneConfig | None:
    if not cfg.scene_overrides:
        return None
    kwargs = {k: _coerce_field(v, getattr(_SCENE_DEFAULTS, k), f"scene.{k}")
              for k, v in cfg.scene_overrides}
    return SceneConfig.for_task(cfg.task, **kwargs)


def build_env(cfg: ExperimentConfig, seed: int, *, for_eval: bool,
              batch: int | None = None) -> TouchEnv:
    preset = require_preset(cfg.preset)
    if batch is None:
        batch = cfg.eval_batch if for_eval else cfg.n_envs
    env_cfg = _env_config(preset, cfg.task, batch, seed, cfg.t_max,
                          build_scene(cfg), for_eval)
    return TouchEnv(env_cfg)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainedSeed:
    seed: int
    checkpoint: Path
    metrics: Path
    env_steps: int
    updates: int


def run_training(cfg: ExperimentConfig) -> list[TrainedSeed]:
    """Train one policy per seed.

    Layout per seed: <out_dir>/<task>/<preset>/seed<k>/ holding checkpoint.ckpt,
    metrics.jsonl, run.json (resolved env knobs), and config.txt whose hash is
    the row provenance.  Single-worker, so reruns are bit-identical.
    """
    preset = require_preset(cfg.preset)
    h = config_hash(cfg)
    exp_json = json.dumps(to_mapping(cfg), sort_keys=True, separators=(",", ":"))
    out = []
    for seed in cfg.seeds:
        run_dir = Path(cfg.out_dir) / cfg.task / preset.name / f"seed{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        save_config(run_dir / "config.txt", to_mapping(cfg))
        env = build_env(cfg, seed, for_eval=False)
        metrics_path = run_dir / "metrics.jsonl"
        result = train(cfg.ppo, env, seed, out_dir=run_dir,
                       metrics_path=metrics_path)
        ckpt = run_dir / "checkpoint.ckpt"
        save_policy(ckpt, result, meta={
            "task": cfg.task,
            "preset": preset.name,
            "seed": str(seed),
            "config_hash": h,
            "policy_dim": str(env.policy_dim),
            "experiment": exp_json,
        })
        ec = env.config
        (run_dir / "run.json").write_text(json.dumps({
            "task": cfg.task, "preset": preset.name, "seed": seed,
            "config_hash": h, "env_steps": result.env_steps,
            "updates": result.updates,
            "env": {"batch": ec.batch, "t_max": ec.t_max,
                    "sensor_preset": ec.sensor_preset,
                    "threshold": ec.threshold, "da_sensor": ec.da_sensor,
                    "wo_pinfo": ec.wo_pinfo, "ft_sensor": ec.ft_sensor},
            "checkpoint": ckpt.name, "metrics": metrics_path.name,
        }, indent=1) + "\n")
        out.append(TrainedSeed(seed, ckpt, metrics_path,
                               result.env_steps, result.updates))
    return out


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalRow:
    task: str
    preset: str
    seed: int
    episodes: int
    success_rate: float
    mean_return: float
    config_hash: str = ""
    provenance: str = ""
    error: str | None = None


def _provenance(task, preset, seed, episodes, h) -> str:
    return f"blindtouch {task}/{preset} seed={seed} episodes={episodes} cfg={h}"


def _resolve_policy(checkpoint):
    """Accept a checkpoint path, a Policy, or a controller exposing act_env."""
    if isinstance(checkpoint, (str, Path)):
        result, meta = load_policy(checkpoint)
        return result.policy, meta
    if hasattr(checkpoint, "act_env") or isinstance(checkpoint, Policy):
        return checkpoint, {}
    raise UsageError("checkpoint must be a path, a Policy, or expose act_env(env)")


def evaluate(checkpoint, task, preset, n_episodes: int = 200, seed: int = 0, *,
             batch: int = 32, t_max: int | None = None,
             scene: SceneConfig | None = None) -> EvalRow:
    """Deterministic evaluation: mean actions, placements drawn from `seed`.

    Success is the episode's terminal cause.  Episodes are counted in
    completion order across the batch until n_episodes are collected, so the
    result does not depend on the batch partitioning.  When the checkpoint
    recorded its training config, its episode length and placement overrides
    are reused unless the caller passes explicit t_max/scene.
    """
    p = require_preset(preset)
    require_task(task)
    if n_episodes < 0:
        raise ConfigError("n_episodes must be >= 0")
    policy, meta = _resolve_policy(checkpoint)

    stored: dict[str, str] = {}
    if meta.get("experiment") and meta.get("task") == task:
        stored = json.loads(meta["experiment"])
    if t_max is None:
        t_max = int(stored.get("t_max", 300))
    if scene is None and any(k.startswith("scene.") for k in stored):
        scene = build_scene(from_mapping(stored))

    if meta.get("config_hash"):
        h = meta["config_hash"]
    else:
        blob = f"{task}|{p.name}|{n_episodes}|{seed}|{t_max}"
        h = hashlib.sha256(blob.encode()).hexdigest()[:12]

    if n_episodes == 0:
        return EvalRow(task, p.name, seed, 0, float("nan"), float("nan"), h,
                       _provenance(task, p.name, seed, 0, h),
                       error="n_episodes is 0: nothing evaluated")

    scripted = hasattr(policy, "act_env")
    pb = getattr(policy, "batch", None)
    if scripted and pb is not None and pb != batch:
        raise ConfigError(f"scripted policy was built for batch {pb}, "
                          f"evaluation uses batch {batch}")

    env = TouchEnv(_env_config(p, task, batch, seed, t_max, scene, for_eval=True))
    if isinstance(policy, Policy):
        want = policy.actor.layer_sizes[0]
        if want != env.policy_dim:
            raise ConfigError(
                f"checkpoint expects {want}-dim observations but the "
                f"{task}/{p.name} env produces {env.policy_dim}")

    pobs, _ = env.reset(seed)
    ep_ret = np.zeros(env.batch)
    successes: list[float] = []
    returns: list[float] = []
    # every env terminates at least once per t_max steps, so this bound holds
    limit = (n_episodes // env.batch + 2) * t_max
    for _ in range(limit):
        action = policy.act_env(env) if scripted else policy.act(pobs)
        res = env.step(action)
        ep_ret += res.reward
        for i in np.flatnonzero(res.done):
            successes.append(float(res.status.cause[i] == CAUSE_SUCCESS))
            returns.append(float(ep_ret[i]))
            ep_ret[i] = 0.0
        pobs = res.policy_obs
        if len(successes) >= n_episodes:
            break
    successes = successes[:n_episodes]
    returns = returns[:n_episodes]
    return EvalRow(task, p.name, seed, n_episodes,
                   float(np.mean(successes)), float(np.mean(returns)), h,
                   _provenance(task, p.name, seed, n_episodes, h))


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellStats:
    task: str
    preset: str
    n_seeds: int
    episodes: int
    success_mean: float
    success_std: float | None   # None below two seeds
    return_mean: float
    return_std: float | None


def _pm(mean: float, std: float | None, fmt: str) -> str:
    if std is None:
        return fmt % mean
    return f"{fmt % mean} ± {fmt % std}"


class EvalReport:
    """Long-form evaluation rows plus the preset-by-task aggregation."""

    def __init__(self, rows=None):
        self.rows: list[EvalRow] = list(rows or [])

    def add(self, row: EvalRow) -> None:
        self.rows.append(row)

    def _valid(self) -> list[EvalRow]:
        return [r for r in self.rows if r.error is None and r.episodes > 0]

    def tasks(self) -> list[str]:
        return list(dict.fromkeys(r.task for r in self.rows))

    def presets(self) -> list[str]:
        seen = dict.fromkeys(r.preset for r in self.rows)
        order = list(PRESETS)
        return sorted(seen, key=lambda p: (order.index(p) if p in order else 99, p))

    def cell(self, task: str, preset: str) -> CellStats | None:
        rows = [r for r in self._valid() if r.task == task and r.preset == preset]
        if not rows:
            return None
        suc = np.array([r.success_rate for r in rows])
        ret = np.array([r.mean_return for r in rows])
        n = len(rows)
        return CellStats(task, preset, n, sum(r.episodes for r in rows),
                         float(suc.mean()),
                         float(suc.std()) if n >= 2 else None,
                         float(ret.mean()),
                         float(ret.std()) if n >= 2 else None)

    def table(self, tasks=None, presets=None) -> str:
        """Text table: rows are presets, columns success/return per task."""
        tasks = list(tasks) if tasks is not None else self.tasks()
        presets = list(presets) if presets is not None else self.presets()
        grid = [["preset"] + [f"{t} {m}" for t in tasks
                              for m in ("success", "return")]]
        for p in presets:
            line = [p]
            for t in tasks:
                c = self.cell(t, p)
                if c is None:
                    line += ["-", "-"]
                else:
                    line.append(_pm(c.success_mean, c.success_std, "%.3f"))
                    line.append(_pm(c.return_mean, c.return_std, "%.1f"))
            grid.append(line)
        widths = [max(len(row[j]) for row in grid) for j in range(len(grid[0]))]
        return "\n".join(
            "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
            for row in grid)

    def write_rows_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["task", "preset", "seed", "episodes", "success_rate",
                        "mean_return", "config_hash", "provenance", "error"])
            for r in self.rows:
                w.writerow([r.task, r.preset, r.seed, r.episodes,
                            "%.17g" % r.success_rate, "%.17g" % r.mean_return,
                            r.config_hash, r.provenance, r.error or ""])
        return path

    def write_table_csv(self, path, tasks=None, presets=None) -> Path:
        tasks = list(tasks) if tasks is not None else self.tasks()
        presets = list(presets) if presets is not None else self.presets()
        path = Path(path)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            header = ["preset"]
            for t in tasks:
                header += [f"{t}_success_mean", f"{t}_success_std",
                           f"{t}_return_mean", f"{t}_return_std"]
            w.writerow(header)
            for p in presets:
                line: list = [p]
                for t in tasks:
                    c = self.cell(t, p)
                    if c is None:
                        line += ["", "", "", ""]
                    else:
                        line += ["%.17g" % c.success_mean,
                                 "" if c.success_std is None else "%.17g" % c.success_std,
                                 "%.17g" % c.return_mean,
                                 "" if c.return_std is None else "%.17g" % c.return_std]
                w.writerow(line)
        return path


# ---------------------------------------------------------------------------
# metrics streams and curve export
# ---------------------------------------------------------------------------


def read_metrics(path) -> list[dict]:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"metrics file not found: {p}")
    records = []
    for ln, line in enumerate(p.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{p}:{ln}: not a JSON metrics record") from exc
    if not records:
        raise UsageError(f"no update records in {p}")
    return records


def _run_meta(path) -> dict | None:
    sidecar = Path(path).with_name("run.json")
    if not sidecar.exists():
        return None
    return json.loads(sidecar.read_text())


def _tofloat(v) -> float:
    return float("nan") if v is None else float(v)


def aggregate_metric_streams(streams, names=("success_rate", "mean_return")) -> dict:
    """Per-field mean and population std across seeds on a shared step grid.

    Grid = the first stream's env_steps clipped to the range every stream
    covers; the others are linearly interpolated onto it.  Identical streams
    therefore aggregate to themselves with zero std, and a single stream is
    its own mean.
    """
    streams = [list(s) for s in streams]
    if not streams:
        raise UsageError("need at least one metrics stream")
    grids = []
    for s in streams:
        if not s:
            raise UsageError("empty metrics stream")
        g = np.array([r["env_steps"] for r in s], dtype=np.float64)
        if np.any(np.diff(g) <= 0):
            raise UsageError("env_steps must be strictly increasing")
        grids.append(g)
    lo = max(g[0] for g in grids)
    hi = min(g[-1] for g in grids)
    if hi < lo:
        raise UsageError("metric streams do not overlap in env steps")
    grid = grids[0][(grids[0] >= lo) & (grids[0] <= hi)]
    out = {"env_steps": grid}
    for name in names:
        rows = []
        for g, s in zip(grids, streams):
            y = np.array([_tofloat(r.get(name)) for r in s])
            rows.append(np.interp(grid, g, y))
        stack = np.stack(rows)
        # shift by the first stream so identical streams give exactly
        # mean == stream and std == 0 (a constant shift leaves std alone)
        shifted = stack - stack[0]
        out[f"{name}_mean"] = stack[0] + shifted.mean(axis=0)
        out[f"{name}_std"] = shifted.std(axis=0)
    return out


def emit_plot_data(metrics_paths, out_path,
                   names=("success_rate", "mean_return")) -> Path:
    """Aggregate per-seed metric streams into one mean/std band CSV.

    One call is one aggregation: all streams must come from the same task.
    Run sidecars (run.json next to each metrics file), when present, are
    checked and a task mismatch raises UsageError.
    """
    paths = [Path(p) for p in metrics_paths]
    if not paths:
        raise UsageError("need at least one metrics file")
    metas = [_run_meta(p) for p in paths]
    seen_tasks = sorted({m["task"] for m in metas if m and "task" in m})
    if len(seen_tasks) > 1:
        raise UsageError("cannot aggregate metric streams from different tasks: "
                         + ", ".join(seen_tasks))
    agg = aggregate_metric_streams([read_metrics(p) for p in paths], names)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    cols = ["env_steps"] + [f"{n}_{k}" for n in names for k in ("mean", "std")]
    with open(out_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for i in range(len(agg["env_steps"])):
            w.writerow(["%.17g" % agg[c][i] for c in cols])
    return out_path


def write_curve_csv(path, metrics_by_seed: dict[int, list[dict]]) -> Path:
    """Raw per-update curves: env_steps, then (success_rate, return) per seed.

    Seeds sharing one config share one update schedule, so env_steps is taken
    from the first seed; rows stop at the shortest stream.
    """
    if not metrics_by_seed:
        raise UsageError("need at least one metrics stream")
    seeds = sorted(metrics_by_seed)
    streams = [metrics_by_seed[s] for s in seeds]
    n = min(len(s) for s in streams)
    if n == 0:
        raise UsageError("empty metrics stream")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ["env_steps"]
    for s in seeds:
        header += [f"success_rate_seed{s}", f"return_seed{s}"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for i in range(n):
            row = [str(int(streams[0][i]["env_steps"]))]
            for st in streams:
                row += ["%.10g" % _tofloat(st[i].get("success_rate")),
                        "%.10g" % _tofloat(st[i].get("mean_return"))]
            w.writerow(row)
    return path


# ---------------------------------------------------------------------------
# ablation suite
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellFailure:
    task: str
    preset: str
    seed: int
    stage: str    # "train" or "eval"
    error: str


@dataclass
class SuiteResult:
    report: EvalReport
    failures: list[CellFailure]
    out_dir: Path
    table_txt: Path
    table_csv: Path
    rows_csv: Path
    curve_csvs: list[Path]
    band_csvs: list[Path]
    failures_csv: Path | None

    @property
    def ok(self) -> bool:
        return not self.failures


def run_ablation_suite(tasks, presets, seeds,
                       base: ExperimentConfig | None = None,
                       out_dir=None) -> SuiteResult:
    """Train and evaluate the full (task, preset, seed) cross-product.

    Each cell is trained and evaluated independently; a failing cell is
    recorded and the suite keeps going, so every requested cell appears
    exactly once, in the report or in the failure list.
    """
    tasks = [require_task(t) for t in tasks]
    preset_names = [require_preset(p).name for p in presets]
    seeds = [int(s) for s in seeds]
    if not tasks or not preset_names or not seeds:
        raise ConfigError("need at least one task, one preset, and one seed")
    base = base if base is not None else ExperimentConfig()
    out = Path(out_dir) if out_dir is not None else Path(base.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    report = EvalReport()
    failures: list[CellFailure] = []
    curve_csvs: list[Path] = []
    band_csvs: list[Path] = []
    for task in tasks:
        for preset in preset_names:
            cfg = replace(base, task=task, preset=preset, out_dir=str(out))
            metrics_paths = []
            for seed in seeds:
                cell = replace(cfg, seeds=(seed,))
                try:
                    art = run_training(cell)[0]
                except Exception as exc:  # noqa: BLE001 - cell isolation
                    failures.append(CellFailure(
                        task, preset, seed, "train",
                        f"{type(exc).__name__}: {exc}"))
                    continue
                metrics_paths.append((seed, art.metrics))
                try:
                    report.add(evaluate(art.checkpoint, task, preset,
                                        cfg.eval_episodes, seed,
                                        batch=cfg.eval_batch))
                except Exception as exc:  # noqa: BLE001
                    failures.append(CellFailure(
                        task, preset, seed, "eval",
                        f"{type(exc).__name__}: {exc}"))
            if metrics_paths:
                arm = out / task / preset
                curve_csvs.append(write_curve_csv(
                    arm / "curve.csv",
                    {s: read_metrics(p) for s, p in metrics_paths}))
                band_csvs.append(emit_plot_data(
                    [p for _, p in metrics_paths], arm / "bands.csv"))

    table_txt = out / "table.txt"
    table_txt.write_text(
        report.table(tasks=tasks, presets=preset_names) + "\n")
    table_csv = report.write_table_csv(out / "table.csv",
                                       tasks=tasks, presets=preset_names)
    rows_csv = report.write_rows_csv(out / "rows.csv")
    failures_csv = None
    if failures:
        failures_csv = out / "failures.csv"
        with open(failures_csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["task", "preset", "seed", "stage", "error"])
            for c in failures:
                w.writerow([c.task, c.preset, c.seed, c.stage, c.error])
    return SuiteResult(report, failures, out, table_txt, table_csv, rows_csv,
                       curve_csvs, band_csvs, failures_csv)
