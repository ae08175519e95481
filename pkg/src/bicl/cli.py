"""Command-line harness: train, eval, sweep, compare, gen-graph.

Configs are JSON, metrics are CSV, and every run copies its resolved config
into the output directory so (config file, seed) reproduces it exactly.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .baseline import train_full_action
from .envs import (GraphEnv, RouteEnv, graph_config_from_json,
                   graph_config_to_json, random_graph_config,
                   route_config_from_json, route_config_to_json)
from .errors import ConfigError, ContractViolation, TopologyError
from .learners import load_bundle, save_bundle
from .training import (TrainConfig, ck_at, convergence_episode, evaluate,
                       train_bicl, train_config_from_json, train_config_to_json)

CSV_HEADER = ("episode,c_k,train_return,rl_reward,t_reward,r_gap,"
              "il_loss,value_loss,wall_ms")

ALGORITHMS = ("bicl", "baseline")


def _fmt(value: float) -> str:
    return format(float(value), ".6g")


def write_metrics_csv(records, path) -> None:
    """UTF-8 CSV, one row per record, floats at 6 significant digits."""
    lines = [CSV_HEADER]
    for r in records:
        lines.append(",".join([
            str(int(r.episode)), _fmt(r.c_k), _fmt(r.train_return),
            _fmt(r.rl_reward), _fmt(r.t_reward), _fmt(r.r_gap),
            _fmt(r.il_loss), _fmt(r.value_loss), _fmt(r.wall_ms)]))
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc


# experiment configs ----------------------------------------------------------


@dataclasses.dataclass
class ExperimentConfig:
    label: str
    output_dir: str
    algorithm: str
    env_kind: str
    env_config: object
    train: TrainConfig


_TOP_KEYS = {"label", "output_dir", "algorithm", "env", "train"}


def _load_env_section(section, base_dir: str):
    if not isinstance(section, dict) or "type" not in section:
        raise ConfigError("env section must be an object with a 'type' key")
    kind = section["type"]
    body = {k: v for k, v in section.items() if k != "type"}
    if "file" in body:
        if set(body) != {"file"}:
            raise ConfigError("env 'file' cannot be mixed with inline fields")
        path = os.path.join(base_dir, body["file"])
        try:
            with open(path, encoding="utf-8") as fh:
                body = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"env file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"env file {path} is not valid JSON: {exc}") from exc
    if kind == "route":
        return kind, route_config_from_json(body)
    if kind == "graph":
        return kind, graph_config_from_json(body)
    raise ConfigError(f"env type must be 'route' or 'graph', got {kind!r}")


def load_experiment(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("experiment config must be a JSON object")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
    if "env" not in data or "train" not in data:
        raise ConfigError("experiment config needs 'env' and 'train' sections")
    algorithm = data.get("algorithm", "bicl")
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
    env_kind, env_config = _load_env_section(data["env"],
                                             os.path.dirname(os.path.abspath(path)))
    train = train_config_from_json(data["train"])
    wanted = "route-actor-critic" if env_kind == "route" else "graph-vdn"
    if train.backend != wanted:
        raise ConfigError(f"{env_kind} env needs train backend {wanted!r}")
    return ExperimentConfig(
        label=data.get("label", "run"),
        output_dir=data.get("output_dir", "runs"),
        algorithm=algorithm,
        env_kind=env_kind,
        env_config=env_config,
        train=train,
    )


def _make_env(kind: str, env_config):
    return RouteEnv(env_config) if kind == "route" else GraphEnv(env_config)


def _env_to_json(kind: str, env_config) -> dict:
    body = (route_config_to_json(env_config) if kind == "route"
            else graph_config_to_json(env_config))
    return {"type": kind, **body}


def _resolved_json(cfg: ExperimentConfig) -> dict:
    return {
        "label": cfg.label,
        "output_dir": cfg.output_dir,
        "algorithm": cfg.algorithm,
        "env": _env_to_json(cfg.env_kind, cfg.env_config),
        "train": train_config_to_json(cfg.train),
    }


def _run_experiment(cfg: ExperimentConfig, out_dir: str):
    env = _make_env(cfg.env_kind, cfg.env_config)
    trainer = train_bicl if cfg.algorithm == "bicl" else train_full_action
    result = trainer(env, cfg.train)
    os.makedirs(out_dir, exist_ok=True)
    write_metrics_csv(result.records, os.path.join(out_dir, "metrics.csv"))
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(_resolved_json(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
    snap_dir = os.path.join(out_dir, "snapshot")
    save_bundle(result.bundle, snap_dir)
    final_c = ck_at(cfg.train.schedule, cfg.train.episodes - 1)
    with open(os.path.join(snap_dir, "env.json"), "w", encoding="utf-8") as fh:
        json.dump({"env": _env_to_json(cfg.env_kind, cfg.env_config),
                   "penalty_weight": final_c, "eval_seed": cfg.train.seed},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    return result


def _with_overrides(cfg: ExperimentConfig, seed=None, c=None,
                    timing=None, algorithm=None) -> ExperimentConfig:
    train = cfg.train
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if timing is not None:
        updates["measure_time"] = timing
    if c is not None:
        updates["schedule"] = dataclasses.replace(train.schedule, c=float(c))
    if updates:
        train = dataclasses.replace(train, **updates)
    return dataclasses.replace(cfg, train=train,
                               algorithm=algorithm or cfg.algorithm)


# subcommands -----------------------------------------------------------------


def _cmd_train(args) -> int:
    cfg = load_experiment(args.config)
    cfg = _with_overrides(cfg, seed=args.seed, timing=args.timing or None)
    out_dir = os.path.join(cfg.output_dir, cfg.label)
    result = _run_experiment(cfg, out_dir)
    last = result.records[-1] if result.records else None
    if last is not None:
        print(f"{cfg.label}: episodes={cfg.train.episodes} "
              f"t_reward={_fmt(last.t_reward)} r_gap={_fmt(last.r_gap)}")
    print(f"wrote {os.path.join(out_dir, 'metrics.csv')}")
    return 0


def _cmd_eval(args) -> int:
    meta_path = os.path.join(args.snapshot, "env.json")
    try:
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"snapshot metadata not found: {meta_path}") from None
    env_section = dict(meta["env"])
    kind = env_section.pop("type")
    env_config = (route_config_from_json(env_section) if kind == "route"
                  else graph_config_from_json(env_section))
    env = _make_env(kind, env_config)
    bundle = load_bundle(args.snapshot, env_config)
    seed = meta.get("eval_seed", 0)
    weight = meta.get("penalty_weight", 0.0)
    t_rew = evaluate(bundle, env, args.rollouts, "t-reward", seed=seed,
                     penalty_weight=weight)
    rl_rew = evaluate(bundle, env, args.rollouts, "rl-reward", seed=seed,
                      penalty_weight=weight)
    print("t_reward,rl_reward,r_gap")
    print(f"{_fmt(t_rew)},{_fmt(rl_rew)},{_fmt(rl_rew - t_rew)}")
    return 0


def _sweep_entry(task):
    config_path, c, seed = task
    cfg = load_experiment(config_path)
    cfg = _with_overrides(cfg, seed=seed, c=c)
    out_dir = os.path.join(cfg.output_dir, cfg.label,
                           f"c{c:g}_s{seed}")
    result = _run_experiment(cfg, out_dir)
    last = result.records[-1] if result.records else None
    t_rew = last.t_reward if last else float("nan")
    gap = last.r_gap if last else float("nan")
    return c, seed, t_rew, gap


def _parallelism() -> int:
    raw = os.environ.get("BICL_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"BICL_THREADS must be an integer, got {raw!r}") from None
    return max(value, 1)


def _cmd_sweep(args) -> int:
    cfg = load_experiment(args.config)
    c_values = _parse_floats(args.c_values, "c-values")
    seeds = _parse_ints(args.seeds, "seeds")
    tasks = [(args.config, c, s) for c in c_values for s in seeds]
    workers = min(_parallelism(), len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_entry, tasks))
    else:
        rows = [_sweep_entry(t) for t in tasks]
    out_dir = os.path.join(cfg.output_dir, cfg.label)
    os.makedirs(out_dir, exist_ok=True)
    summary = os.path.join(out_dir, "sweep_summary.csv")
    with open(summary, "w", encoding="utf-8", newline="") as fh:
        fh.write("c,seed,t_reward,r_gap\n")
        for c, seed, t_rew, gap in rows:
            fh.write(f"{_fmt(c)},{seed},{_fmt(t_rew)},{_fmt(gap)}\n")
    print(f"wrote {summary}")
    return 0


def _cmd_compare(args) -> int:
    cfg = load_experiment(args.config)
    seeds = _parse_ints(args.seeds, "seeds")
    out_dir = os.path.join(cfg.output_dir, cfg.label)
    os.makedirs(out_dir, exist_ok=True)
    lines = ["algorithm,seed,convergence_episode,final_t_reward"]
    for algorithm in ALGORITHMS:
        for seed in seeds:
            run_cfg = _with_overrides(cfg, seed=seed, algorithm=algorithm)
            run_dir = os.path.join(out_dir, f"{algorithm}_s{seed}")
            result = _run_experiment(run_cfg, run_dir)
            series = [r.t_reward for r in result.records]
            conv = convergence_episode(series) if series else None
            final = series[-1] if series else float("nan")
            conv_text = "" if conv is None else str(conv)
            lines.append(f"{algorithm},{seed},{conv_text},{_fmt(final)}")
    summary = os.path.join(out_dir, "compare_summary.csv")
    with open(summary, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    print(f"wrote {summary}")
    return 0


def _cmd_gen_graph(args) -> int:
    config = random_graph_config(args.nodes, args.robots, args.density,
                                 args.seed)
    data = graph_config_to_json(config)
    text = json.dumps(data, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _parse_floats(text: str, name: str) -> list:
    try:
        values = [float(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise ConfigError(f"--{name} must be a comma-separated number list") from None
    if not values:
        raise ConfigError(f"--{name} must name at least one value")
    return values


def _parse_ints(text: str, name: str) -> list:
    try:
        values = [int(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise ConfigError(f"--{name} must be a comma-separated integer list") from None
    if not values:
        raise ConfigError(f"--{name} must name at least one value")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bicl",
        description="Bi-level coordination experiments: train move policies "
                    "by reinforcement and guard policies by imitation of an "
                    "exhaustive one-step solver.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training job")
    p_train.add_argument("--config", required=True, help="experiment JSON")
    p_train.add_argument("--seed", type=int, default=None,
                         help="override the config seed")
    p_train.add_argument("--timing", action="store_true",
                         help="record wall-clock per metrics row")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a saved policy snapshot")
    p_eval.add_argument("--snapshot", required=True,
                        help="snapshot directory written by train")
    p_eval.add_argument("--rollouts", type=int, default=30)
    p_eval.set_defaults(func=_cmd_eval)

    p_sweep = sub.add_parser("sweep", help="train across penalty amplitudes")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--c-values", required=True, dest="c_values",
                         help="comma-separated amplitudes, e.g. 0,1,5,10,50")
    p_sweep.add_argument("--seeds", required=True,
                         help="comma-separated seeds, e.g. 0,1,2")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_cmp = sub.add_parser("compare",
                           help="train both learners and report convergence")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--seeds", required=True)
    p_cmp.set_defaults(func=_cmd_compare)

    p_gen = sub.add_parser("gen-graph", help="write a random graph instance")
    p_gen.add_argument("--nodes", type=int, required=True)
    p_gen.add_argument("--robots", type=int, required=True)
    p_gen.add_argument("--density", choices=("sparse", "dense"),
                       default="sparse")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", default=None, help="output path (default stdout)")
    p_gen.set_defaults(func=_cmd_gen_graph)
    return parser


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, TopologyError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> int:
    return run_command(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
