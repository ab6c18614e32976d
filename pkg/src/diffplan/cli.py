"""Command line entry points.

Every subcommand accepts ``--config FILE`` with ``key=value`` lines (the
keys are the long option names). Precedence is: explicit command line
flag, then config file, then built-in default. The fully resolved
configuration is echoed before any work starts, so runs are
self-describing. All outputs are deterministic functions of their inputs;
re-running a command overwrites its outputs with identical bytes.

Exit codes: 0 success, 2 configuration problem, 3 missing or unreadable
artifact, 4 numeric failure during computation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from .autodiff import NumericError
from .diffusion import build_schedule
from .evaluation import (
    render_maze_svg,
    success_rate,
    time_callable,
)
from .maze import (
    CalibrationError,
    MazeError,
    PathError,
    RolloutError,
    builtin_maze,
    generate_dataset,
    load_maze_file,
    make_corner_task,
    routed_pair_sampler,
    uniform_pair_sampler,
)
from .nets import CheckpointError, NetConfig, load_checkpoint, save_checkpoint
from .planners import (
    DensePlanner,
    EpisodeConfig,
    FlatPlanner,
    HierarchicalPlanner,
    LevelModel,
    PlanError,
    run_episode,
)
from .rng import EPISODE, derive_seed
from .trajectory import (
    DatasetFormatError,
    Layout,
    NormStats,
    load_dataset,
    save_dataset,
)
from .training import (
    TrainConfig,
    WindowError,
    WindowSpec,
    train_denoiser,
    train_guidance,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4


class ConfigError(ValueError):
    """Bad key, value, or combination of options."""


_MODEL_KINDS = ("flat", "sd", "sd-states", "sd-da", "hd-high", "hd-low")

_LAYOUT_BY_KIND = {
    "flat": Layout.FLAT,
    "sd": Layout.SD_WITH_ACTIONS,
    "sd-states": Layout.SD_STATES_ONLY,
    "sd-da": Layout.SD_DENSE_ACTIONS,
    "hd-high": Layout.SD_WITH_ACTIONS,
    "hd-low": Layout.SEGMENT,
}


def _window_for(kind: str, k: int, h: int) -> WindowSpec:
    layout = _LAYOUT_BY_KIND[kind]
    if kind == "flat":
        return WindowSpec(layout, 1, h * k + 1)
    if kind == "hd-low":
        return WindowSpec(layout, 1, k + 1)
    return WindowSpec(layout, k, h + 1)


# ------------------------------------------------------------ configuration


def _read_config_file(path: str) -> dict:
    out = {}
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def _coerce(key, raw, kind):
    try:
        if kind is bool:
            if isinstance(raw, bool):
                return raw
            low = str(raw).lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def _resolve(args: argparse.Namespace, schema: dict) -> dict:
    """Overlay CLI values on config-file values on defaults."""
    file_cfg = {}
    if getattr(args, "config", None):
        file_cfg = _read_config_file(args.config)
        unknown = set(file_cfg) - set(schema)
        if unknown:
            raise ConfigError(
                f"unknown config keys: {', '.join(sorted(unknown))}")
    resolved = {}
    for key, (kind, default, _help) in schema.items():
        cli_val = getattr(args, key.replace("-", "_"))
        if cli_val is not None:
            resolved[key] = cli_val
        elif key in file_cfg:
            resolved[key] = _coerce(key, file_cfg[key], kind)
        else:
            resolved[key] = default
    return resolved


def _echo(command: str, cfg: dict):
    for key in sorted(cfg):
        print(f"{command}.{key} = {cfg[key]}")


def _add_schema(parser: argparse.ArgumentParser, schema: dict):
    parser.add_argument("--config", help="key=value file with option values")
    for key, (kind, default, help_text) in schema.items():
        if kind is bool:
            parser.add_argument(f"--{key}", action="store_const", const=True,
                                default=None, help=help_text)
        else:
            parser.add_argument(f"--{key}", type=kind, default=None,
                                help=f"{help_text} (default {default})")


def _load_maze(name: str):
    if name.endswith(".txt"):
        return load_maze_file(name)
    return builtin_maze(name)


def _parse_cell(text: str):
    try:
        r, c = (int(p) for p in text.split(","))
    except ValueError:
        raise ConfigError(f"expected 'row,col', got {text!r}") from None
    return (r, c)


def _dataset_sha(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ----------------------------------------------------------------- gen-data


_GEN_SCHEMA = {
    "maze": (str, "umaze5", "builtin maze name or map file path"),
    "out": (str, "dataset.bin", "output dataset path"),
    "transitions": (int, 20000, "minimum recorded transitions"),
    "seed": (int, 0, "generation seed"),
    "min-length": (int, 0, "pad episodes to this many steps"),
    "noise": (float, 0.1, "uniform action noise scale"),
    "pairs": (str, "uniform",
              "start/goal sampling: uniform | marked | marked-routes | "
              "corners-train"),
}


def _pair_sampler(spec, mode: str):
    if mode == "uniform":
        return uniform_pair_sampler(spec)
    if mode in ("marked", "marked-routes"):
        if spec.start_cell is None or spec.goal_cell is None:
            raise ConfigError(f"maze {spec.name!r} has no S/G markers")
        pair = (spec.start_cell, spec.goal_cell)
        if mode == "marked":
            return routed_pair_sampler([pair], None)
        mid = spec.cols // 2
        vias = tuple((r, mid) for r in range(spec.rows)
                     if spec.is_free((r, mid)))
        if not vias:
            raise ConfigError(f"maze {spec.name!r} has no free middle column")
        return routed_pair_sampler([pair], lambda _: tuple((v,) for v in vias))
    if mode == "corners-train":
        task = make_corner_task(spec)
        return routed_pair_sampler(task.train_pairs, task.via_choices)
    raise ConfigError(f"unknown pair mode {mode!r}")


def _cmd_gen_data(args) -> int:
    cfg = _resolve(args, _GEN_SCHEMA)
    _echo("gen-data", cfg)
    spec = _load_maze(cfg["maze"])
    sampler = _pair_sampler(spec, cfg["pairs"])
    dataset = generate_dataset(
        spec, cfg["transitions"], cfg["seed"], pair_sampler=sampler,
        noise_scale=cfg["noise"], min_length=cfg["min-length"])
    save_dataset(cfg["out"], dataset)
    print(f"wrote {cfg['out']} ({len(dataset.trajectories)} episodes, "
          f"{dataset.transition_count()} transitions)")
    print(f"wrote {cfg['out']}.norm")
    return EXIT_OK


# -------------------------------------------------------------------- train


_TRAIN_SCHEMA = {
    "dataset": (str, "dataset.bin", "training data path"),
    "out": (str, "model", "output prefix for .ckpt/.json"),
    "model": (str, "flat", "one of " + "|".join(_MODEL_KINDS)),
    "k": (int, 16, "subsampling stride / segment length"),
    "h": (int, 10, "planned columns minus one at the sparse level"),
    "steps": (int, 2000, "optimisation steps"),
    "batch": (int, 32, "batch size"),
    "lr": (float, 2e-3, "Adam learning rate"),
    "m-steps": (int, 100, "diffusion steps"),
    "schedule": (str, "cosine", "noise schedule: cosine | linear"),
    "hidden": (int, 64, "hidden channels"),
    "depth": (int, 4, "residual blocks"),
    "kernel": (int, 5, "conv kernel size"),
    "embed": (int, 32, "step embedding width"),
    "seed": (int, 0, "training seed"),
    "val-fraction": (float, 0.1, "validation split fraction"),
    "log-interval": (int, 100, "steps between loss records"),
    "guidance": (bool, False, "also fit a return predictor"),
}


def _stats_to_json(stats: NormStats) -> dict:
    return {
        "state_min": stats.state_min.tolist(),
        "state_max": stats.state_max.tolist(),
        "action_min": stats.action_min.tolist(),
        "action_max": stats.action_max.tolist(),
    }


def _stats_from_json(d: dict) -> NormStats:
    return NormStats(
        state_min=np.asarray(d["state_min"]),
        state_max=np.asarray(d["state_max"]),
        action_min=np.asarray(d["action_min"]),
        action_max=np.asarray(d["action_max"]),
    )


def _cmd_train(args) -> int:
    cfg = _resolve(args, _TRAIN_SCHEMA)
    _echo("train", cfg)
    if cfg["model"] not in _MODEL_KINDS:
        raise ConfigError(f"unknown model kind {cfg['model']!r}")
    dataset = load_dataset(cfg["dataset"])
    window = _window_for(cfg["model"], cfg["k"], cfg["h"])
    net = NetConfig(
        channels_in=window.channels(dataset.d_s, dataset.d_a),
        hidden_channels=cfg["hidden"], depth=cfg["depth"],
        kernel_size=cfg["kernel"], embed_dim=cfg["embed"])
    sched = build_schedule(cfg["m-steps"], cfg["schedule"])
    tc = TrainConfig(steps=cfg["steps"], batch_size=cfg["batch"],
                     lr=cfg["lr"], seed=cfg["seed"],
                     val_fraction=cfg["val-fraction"],
                     log_interval=cfg["log-interval"])
    params, history = train_denoiser(dataset, window, net, sched, tc)
    prefix = cfg["out"]
    save_checkpoint(f"{prefix}.ckpt", params)
    meta = {
        "kind": cfg["model"],
        "layout": window.layout.name,
        "stride": window.stride,
        "columns": window.columns,
        "k": cfg["k"],
        "h": cfg["h"],
        "schedule": cfg["schedule"],
        "m_steps": cfg["m-steps"],
        "net": {"channels_in": net.channels_in,
                "hidden_channels": net.hidden_channels, "depth": net.depth,
                "kernel_size": net.kernel_size, "embed_dim": net.embed_dim},
        "seed": cfg["seed"],
        "steps": cfg["steps"],
        "batch": cfg["batch"],
        "lr": cfg["lr"],
        "val_fraction": cfg["val-fraction"],
        "final_train_loss": history[-1].train_loss if history else None,
        "final_val_loss": (None if not history
                           or math.isnan(history[-1].val_loss)
                           else history[-1].val_loss),
        "dataset": {"path": cfg["dataset"],
                    "sha256": _dataset_sha(cfg["dataset"]),
                    "d_s": dataset.d_s, "d_a": dataset.d_a},
        "stats": _stats_to_json(dataset.norm_stats()),
        "guidance": bool(cfg["guidance"]),
        "history": [[row.step, row.train_loss,
                     None if math.isnan(row.val_loss) else row.val_loss]
                    for row in history],
    }
    if cfg["guidance"]:
        gparams, _ = train_guidance(dataset, window, net, sched, tc)
        save_checkpoint(f"{prefix}.guidance.ckpt", gparams)
        print(f"wrote {prefix}.guidance.ckpt")
    Path(f"{prefix}.json").write_text(json.dumps(meta, indent=2,
                                                 sort_keys=True) + "\n")
    print(f"wrote {prefix}.ckpt")
    print(f"wrote {prefix}.json")
    if history:
        print(f"final train loss {history[-1].train_loss:.4f}")
    return EXIT_OK


# ----------------------------------------------------------- model loading


def _load_level(prefix: str, with_guidance: bool = True):
    meta_path = Path(f"{prefix}.json")
    if not meta_path.exists():
        raise FileNotFoundError(f"{meta_path} not found")
    meta = json.loads(meta_path.read_text())
    params = load_checkpoint(f"{prefix}.ckpt")
    window = WindowSpec(Layout[meta["layout"]], meta["stride"],
                        meta["columns"])
    sched = build_schedule(meta["m_steps"], meta["schedule"])
    guidance = None
    gpath = Path(f"{prefix}.guidance.ckpt")
    if with_guidance and meta.get("guidance") and gpath.exists():
        guidance = load_checkpoint(str(gpath))
    model = LevelModel(params=params, window=window, sched=sched,
                       guidance=guidance)
    return model, meta


def _make_planner(cfg):
    model, meta = _load_level(cfg["model"])
    stats = _stats_from_json(meta["stats"])
    omega = cfg.get("omega", 0.0)
    if meta["kind"] in ("flat",):
        return FlatPlanner(model=model, stats=stats, omega=omega), meta
    if meta["kind"] == "sd-da":
        return DensePlanner(model=model, stats=stats, omega=omega), meta
    if meta["kind"] in ("sd", "hd-high"):
        if not cfg.get("low"):
            raise ConfigError(
                f"model kind {meta['kind']!r} plans subgoals only; pass "
                f"--low with a trained hd-low model")
        low_model, low_meta = _load_level(cfg["low"])
        if low_meta["kind"] != "hd-low":
            raise ConfigError(f"--low must be an hd-low model, got "
                              f"{low_meta['kind']!r}")
        return (HierarchicalPlanner(high=model, low=low_model, stats=stats,
                                    omega_high=omega, omega_low=omega),
                meta)
    raise ConfigError(f"model kind {meta['kind']!r} is not executable")


# --------------------------------------------------------------------- plan


_PLAN_SCHEMA = {
    "model": (str, "model", "model prefix (from train)"),
    "low": (str, "", "hd-low model prefix for hierarchical planning"),
    "maze": (str, "umaze5", "builtin maze name or map file path"),
    "start": (str, "", "start cell 'row,col' (default: S marker)"),
    "goal": (str, "", "goal cell 'row,col' (default: G marker)"),
    "seed": (int, 0, "sampling seed"),
    "omega": (float, 0.0, "guidance strength"),
    "out": (str, "plan.json", "output plan path"),
    "svg": (str, "", "optional rendered SVG path"),
}


def _episode_cells(spec, cfg):
    start = _parse_cell(cfg["start"]) if cfg["start"] else spec.start_cell
    goal = _parse_cell(cfg["goal"]) if cfg["goal"] else spec.goal_cell
    if start is None or goal is None:
        raise ConfigError("maze has no S/G markers; pass --start and --goal")
    if not spec.is_free(start) or not spec.is_free(goal):
        raise ConfigError(f"start {start} or goal {goal} is a wall")
    return start, goal


def _cmd_plan(args) -> int:
    cfg = _resolve(args, _PLAN_SCHEMA)
    _echo("plan", cfg)
    spec = _load_maze(cfg["maze"])
    planner, meta = _make_planner(cfg)
    start, goal = _episode_cells(spec, cfg)
    from .maze import cell_center

    start_state = np.concatenate([cell_center(start), np.zeros(2)])
    goal_state = np.concatenate([cell_center(goal), np.zeros(2)])
    plan = planner.plan(start_state, goal_state, cfg["seed"])
    payload = {
        "model_kind": meta["kind"],
        "maze": spec.name,
        "start": list(start),
        "goal": list(goal),
        "seed": cfg["seed"],
        "states": plan.states.tolist(),
        "actions": plan.actions.tolist(),
        "subgoals": None if plan.subgoals is None else plan.subgoals.tolist(),
    }
    Path(cfg["out"]).write_text(json.dumps(payload, sort_keys=True) + "\n")
    print(f"wrote {cfg['out']}")
    if cfg["svg"]:
        paths = [(plan.states, meta["kind"])]
        svg = render_maze_svg(spec, paths=paths, subgoals=plan.subgoals,
                              title=f"{meta['kind']} plan")
        Path(cfg["svg"]).write_text(svg)
        print(f"wrote {cfg['svg']}")
    return EXIT_OK


# --------------------------------------------------------------------- eval


_EVAL_SCHEMA = {
    "model": (str, "model", "model prefix"),
    "low": (str, "", "hd-low model prefix for hierarchical planning"),
    "maze": (str, "umaze5", "builtin maze name or map file path"),
    "episodes": (int, 10, "episodes to run"),
    "seed": (int, 0, "evaluation seed"),
    "omega": (float, 0.0, "guidance strength"),
    "max-steps": (int, 300, "environment step budget per episode"),
    "mode": (str, "track", "execution: track (follow planned states with "
            "the PD controller) | open (planned actions verbatim) | closed"),
    "pairs": (str, "marked", "episode tasks: marked | corners-test"),
    "start": (str, "", "start cell override 'row,col'"),
    "goal": (str, "", "goal cell override 'row,col'"),
}


def _eval_tasks(spec, cfg):
    if cfg["pairs"] == "corners-test":
        return list(make_corner_task(spec).test_pairs)
    start, goal = _episode_cells(spec, cfg)
    return [(start, goal)]


def _cmd_eval(args) -> int:
    cfg = _resolve(args, _EVAL_SCHEMA)
    _echo("eval", cfg)
    spec = _load_maze(cfg["maze"])
    planner, _meta = _make_planner(cfg)
    tasks = _eval_tasks(spec, cfg)
    records = []
    for i in range(cfg["episodes"]):
        start, goal = tasks[i % len(tasks)]
        ec = EpisodeConfig(seed=derive_seed(cfg["seed"], EPISODE, i),
                           max_steps=cfg["max-steps"], mode=cfg["mode"])
        rec = run_episode(spec, planner, start, goal, ec)
        records.append(rec)
        print(f"episode {i}: {start}->{goal} "
              f"{'success' if rec.success else 'timeout'} "
              f"steps={rec.steps} plan_s={rec.plan_time:.3f}")
    rate = success_rate(records)
    mean_steps = sum(r.steps for r in records) / len(records)
    mean_plan = sum(r.plan_time for r in records) / len(records)
    print(f"success_rate = {rate:.3f}")
    print(f"mean_steps = {mean_steps:.1f}")
    print(f"mean_plan_seconds = {mean_plan:.3f}")
    return EXIT_OK


# -------------------------------------------------------------------- bench


_BENCH_SCHEMA = {
    "model": (str, "model", "model prefix"),
    "low": (str, "", "hd-low model prefix for hierarchical planning"),
    "maze": (str, "umaze5", "builtin maze name or map file path"),
    "repeats": (int, 20, "timed planning calls"),
    "warmup": (int, 2, "untimed planning calls first"),
    "seed": (int, 0, "sampling seed"),
    "omega": (float, 0.0, "guidance strength"),
    "start": (str, "", "start cell override 'row,col'"),
    "goal": (str, "", "goal cell override 'row,col'"),
}


def _cmd_bench(args) -> int:
    cfg = _resolve(args, _BENCH_SCHEMA)
    _echo("bench", cfg)
    spec = _load_maze(cfg["maze"])
    planner, meta = _make_planner(cfg)
    start, goal = _episode_cells(spec, cfg)
    from .maze import cell_center

    start_state = np.concatenate([cell_center(start), np.zeros(2)])
    goal_state = np.concatenate([cell_center(goal), np.zeros(2)])
    counter = [0]

    def plan_once():
        counter[0] += 1
        return planner.plan(start_state, goal_state,
                            derive_seed(cfg["seed"], EPISODE, counter[0]))

    result = time_callable(plan_once, repeats=cfg["repeats"],
                           warmup=cfg["warmup"])
    print(f"model_kind = {meta['kind']}")
    print(f"median_plan_seconds = {result.median_seconds:.4f}")
    return EXIT_OK


# ------------------------------------------------------------------- ablate


_ABLATE_SCHEMA = {
    "dataset": (str, "dataset.bin", "training data path"),
    "maze": (str, "umaze5", "builtin maze name or map file path"),
    "ks": (str, "1,4,8", "comma-separated segment lengths"),
    "horizon": (int, 64, "total planned steps (h*k fixed across ks)"),
    "steps": (int, 2000, "training steps per model"),
    "batch": (int, 32, "batch size"),
    "lr": (float, 2e-3, "Adam learning rate"),
    "m-steps": (int, 100, "diffusion steps"),
    "hidden": (int, 64, "hidden channels"),
    "depth": (int, 4, "residual blocks"),
    "kernel": (int, 5, "conv kernel size"),
    "embed": (int, 32, "step embedding width"),
    "episodes": (int, 10, "episodes per k"),
    "max-steps": (int, 300, "environment step budget per episode"),
    "mode": (str, "track", "episode execution mode"),
    "seed": (int, 0, "seed"),
    "out": (str, "ablation.tsv", "results table path"),
}


def _cmd_ablate(args) -> int:
    cfg = _resolve(args, _ABLATE_SCHEMA)
    _echo("ablate", cfg)
    try:
        ks = [int(p) for p in cfg["ks"].split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"bad ks list {cfg['ks']!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise ConfigError("ks must be positive integers")
    if any(cfg["horizon"] % k for k in ks):
        raise ConfigError("every k must divide the horizon")
    dataset = load_dataset(cfg["dataset"])
    spec = _load_maze(cfg["maze"])
    start, goal = _episode_cells(spec, {"start": "", "goal": ""})
    sched = build_schedule(cfg["m-steps"], "cosine")
    rows = []
    for k in ks:
        h = cfg["horizon"] // k
        tc = TrainConfig(steps=cfg["steps"], batch_size=cfg["batch"],
                         lr=cfg["lr"], seed=cfg["seed"], val_fraction=0.1,
                         log_interval=max(1, cfg["steps"] // 4))
        if k == 1:
            window = _window_for("flat", 1, cfg["horizon"])
            net = NetConfig(
                channels_in=window.channels(dataset.d_s, dataset.d_a),
                hidden_channels=cfg["hidden"], depth=cfg["depth"],
                kernel_size=cfg["kernel"], embed_dim=cfg["embed"])
            params, _ = train_denoiser(dataset, window, net, sched, tc)
            planner = FlatPlanner(
                model=LevelModel(params=params, window=window, sched=sched),
                stats=dataset.norm_stats())
        else:
            wh = _window_for("sd", k, h)
            wl = _window_for("hd-low", k, h)
            nh = NetConfig(channels_in=wh.channels(dataset.d_s, dataset.d_a),
                           hidden_channels=cfg["hidden"], depth=cfg["depth"],
                           kernel_size=cfg["kernel"], embed_dim=cfg["embed"])
            nl = NetConfig(channels_in=wl.channels(dataset.d_s, dataset.d_a),
                           hidden_channels=max(8, cfg["hidden"] // 2),
                           depth=cfg["depth"], kernel_size=cfg["kernel"],
                           embed_dim=cfg["embed"])
            ph, _ = train_denoiser(dataset, wh, nh, sched, tc)
            pl, _ = train_denoiser(dataset, wl, nl, sched, tc)
            planner = HierarchicalPlanner(
                high=LevelModel(params=ph, window=wh, sched=sched),
                low=LevelModel(params=pl, window=wl, sched=sched),
                stats=dataset.norm_stats())
        records = []
        for i in range(cfg["episodes"]):
            ec = EpisodeConfig(seed=derive_seed(cfg["seed"], EPISODE, i),
                               max_steps=cfg["max-steps"], mode=cfg["mode"])
            records.append(run_episode(spec, planner, start, goal, ec))
        rate = success_rate(records)
        mean_steps = sum(r.steps for r in records) / len(records)
        rows.append((k, rate, mean_steps))
        print(f"k={k} success={rate:.3f} mean_steps={mean_steps:.1f}")
    lines = ["k\tsuccess\tmean_steps"]
    lines += [f"{k}\t{rate:.4f}\t{steps:.1f}" for k, rate, steps in rows]
    Path(cfg["out"]).write_text("\n".join(lines) + "\n")
    print(f"wrote {cfg['out']}")
    return EXIT_OK


# ------------------------------------------------------------------- render


_RENDER_SCHEMA = {
    "maze": (str, "umaze5", "builtin maze name or map file path"),
    "dataset": (str, "", "optional dataset whose episodes are drawn"),
    "count": (int, 4, "episodes to draw from the dataset"),
    "out": (str, "maze.svg", "output SVG path"),
    "title": (str, "", "figure title"),
}


def _cmd_render(args) -> int:
    cfg = _resolve(args, _RENDER_SCHEMA)
    _echo("render", cfg)
    spec = _load_maze(cfg["maze"])
    paths = []
    if cfg["dataset"]:
        dataset = load_dataset(cfg["dataset"])
        for i, traj in enumerate(dataset.trajectories[: cfg["count"]]):
            paths.append((traj.states, f"episode {i}"))
    svg = render_maze_svg(spec, paths=paths,
                          title=cfg["title"] or spec.name)
    Path(cfg["out"]).write_text(svg)
    print(f"wrote {cfg['out']}")
    return EXIT_OK


# --------------------------------------------------------------------- main


_COMMANDS = {
    "gen-data": (_GEN_SCHEMA, _cmd_gen_data, "generate an expert dataset"),
    "train": (_TRAIN_SCHEMA, _cmd_train, "fit a denoiser (and guidance)"),
    "plan": (_PLAN_SCHEMA, _cmd_plan, "synthesise one plan"),
    "eval": (_EVAL_SCHEMA, _cmd_eval, "run planning episodes"),
    "bench": (_BENCH_SCHEMA, _cmd_bench, "time the planner"),
    "ablate": (_ABLATE_SCHEMA, _cmd_ablate, "sweep segment lengths"),
    "render": (_RENDER_SCHEMA, _cmd_render, "draw a maze figure"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffplan",
        description="diffusion trajectory planning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (schema, _fn, help_text) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        _add_schema(p, schema)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    _schema, fn, _help = _COMMANDS[args.command]
    try:
        return fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (CheckpointError, DatasetFormatError) as exc:
        print(f"unreadable artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (NumericError, CalibrationError, RolloutError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MazeError, PathError, PlanError, WindowError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
