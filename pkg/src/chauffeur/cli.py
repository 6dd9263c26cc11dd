"""Command-line experiment runner.

Each subcommand resolves its settings from built-in defaults, an optional
JSON ``--config`` file, the ``CHAUFFEUR_SEED`` environment variable and
explicit flags (in increasing priority), writes the resolved settings next
to its outputs and exits 0 on success, 2 on configuration errors and 1 on
runtime failures.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ChauffeurError, MissingInput, ParseError, ValidationError, VersionMismatch

AGENT_MODES = ("non_reactive", "reactive")
POLICY_MODES = ("il_bicycle", "il_waypoint", "rl")


class ConfigError(Exception):
    pass


class _BadRate(ConfigError, argparse.ArgumentTypeError):
    pass


# -- settings ---------------------------------------------------------------

ENCODER_KEYS = {"layers": 2, "heads": 4, "model_dim": 64, "ff_dim": 128}

DEFAULTS = {
    "gen": {"family": "mixed", "count": 10, "seed": 0, "density": None, "curvature": 0.0,
            "horizon": 80, "out": None},
    "dump-obs": {"scenarios": None, "mode": "il_bicycle", "out": None},
    "train-il": {"data": None, "out": None, "lr": 1e-4, "epochs": 5, "scenarios_per_batch": 500,
                 "batch_size": 6, "w_acc": 1.0, "w_steer": 5.0, "w_x": 1.0, "w_y": 50.0, "w_yaw": 50.0,
                 "seed": 0, **ENCODER_KEYS},
    "train-ppo": {"scenarios": None, "out": None, "init_from": None, "lr": 3e-4, "gamma": 0.99, "lam": 0.9,
                  "clip": 0.2, "w_ent": 1.0, "w_value": 0.01, "batch_size": 2500, "epochs_per_wave": 1,
                  "max_grad_norm": 0.5, "total_timesteps": 20000, "rollout_scenarios": 8,
                  "steps_per_wave": 320, "reward_scale": 1.0, "agent_mode": "non_reactive", "seed": 0,
                  **ENCODER_KEYS},
    "sne-sample": {"scenarios": None, "ckpt": None, "out": None, "K": 4, "pre_subset_size": None,
                   "perplexity": 30.0, "iterations": 1000, "learning_rate": 200.0, "kmeans_restarts": 8,
                   "feature_agg": "t0", "seed": 0},
    "eval": {"ckpt": None, "scenarios": None, "out": None, "mode": "non_reactive", "episodes": None,
             "trajectories": False, "jobs": 1},
    "shift-eval": {"ckpt": None, "scenarios": None, "out": None, "mode": "non_reactive",
                   "grid_xy": [0.0, 1.0, 2.0, 3.0, 4.0, 5.0], "grid_yaw": [0.0, 4.0, 8.0, 15.0, 20.0],
                   "shift_mode": "both", "episodes_per_cell": None, "max_retries": 10, "seed": 0, "jobs": 1},
    "plot": {"input": None, "kind": None, "out": None, "metric": "AR", "scenario": None},
    "feature-viz": {"ckpt": None, "scenarios": None, "out": None, "shift_xy": 5.0, "shift_yaw": 20.0,
                    "perplexity": 10.0, "iterations": 1000, "learning_rate": "auto", "seed": 0},
}
REQUIRED = {
    "gen": ["out"], "dump-obs": ["scenarios", "out"], "train-il": ["data", "out"],
    "train-ppo": ["scenarios", "out"], "sne-sample": ["scenarios", "ckpt", "out"],
    "eval": ["ckpt", "scenarios", "out"], "shift-eval": ["ckpt", "scenarios", "out"],
    "plot": ["input", "out"], "feature-viz": ["ckpt", "scenarios", "out"],
}
SEEDED = {"gen", "train-il", "train-ppo", "sne-sample", "shift-eval", "feature-viz"}


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _rate(value):
    """A t-SNE learning rate: a positive number or ``auto``."""
    if value == "auto":
        return value
    try:
        return float(value)
    except (TypeError, ValueError):
        raise _BadRate(f"learning rate must be a number or 'auto', got {value!r}") from None


def _encoder_flags(p):
    for k in ENCODER_KEYS:
        p.add_argument(f"--{k.replace('_', '-')}", dest=k, type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chauffeur", description="Closed-loop driving policy experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file with settings for this command")
        return p

    p = cmd("gen", "generate procedural scenarios")
    p.add_argument("--family", help="straight, curve, intersection, parking or mixed")
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--density", type=int)
    p.add_argument("--curvature", type=float)
    p.add_argument("--horizon", type=int)
    p.add_argument("--out")

    p = cmd("dump-obs", "dump expert observations and actions for imitation learning")
    p.add_argument("--scenarios")
    p.add_argument("--mode", choices=["il_bicycle", "il_waypoint"])
    p.add_argument("--out")

    p = cmd("train-il", "train an imitation policy from an observation dump")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--scenarios-per-batch", dest="scenarios_per_batch", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    for k in ("w_acc", "w_steer", "w_x", "w_y", "w_yaw"):
        p.add_argument(f"--{k.replace('_', '-')}", dest=k, type=float)
    p.add_argument("--seed", type=int)
    _encoder_flags(p)

    p = cmd("train-ppo", "train a Beta policy with PPO")
    p.add_argument("--scenarios")
    p.add_argument("--out")
    p.add_argument("--init-from", dest="init_from")
    for k in ("lr", "gamma", "lam", "clip", "w_ent", "w_value", "max_grad_norm", "reward_scale"):
        p.add_argument(f"--{k.replace('_', '-')}", dest=k, type=float)
    for k in ("batch_size", "epochs_per_wave", "total_timesteps", "rollout_scenarios", "steps_per_wave", "seed"):
        p.add_argument(f"--{k.replace('_', '-')}", dest=k, type=int)
    p.add_argument("--agent-mode", dest="agent_mode", choices=AGENT_MODES)
    _encoder_flags(p)

    p = cmd("sne-sample", "select a representative scenario subset")
    p.add_argument("--scenarios")
    p.add_argument("--ckpt")
    p.add_argument("--out")
    p.add_argument("--K", "--k", dest="K", type=int)
    p.add_argument("--pre-subset-size", dest="pre_subset_size", type=int)
    p.add_argument("--perplexity", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=_rate)
    p.add_argument("--kmeans-restarts", dest="kmeans_restarts", type=int)
    p.add_argument("--feature-agg", dest="feature_agg", choices=["t0", "mean"])
    p.add_argument("--seed", type=int)

    p = cmd("eval", "closed-loop benchmark of a checkpoint")
    p.add_argument("--ckpt")
    p.add_argument("--scenarios")
    p.add_argument("--out")
    p.add_argument("--mode", choices=AGENT_MODES)
    p.add_argument("--episodes", type=int)
    p.add_argument("--trajectories", action="store_const", const=True)
    p.add_argument("--jobs", type=int)

    p = cmd("shift-eval", "sweep ego start-pose shifts")
    p.add_argument("--ckpt")
    p.add_argument("--scenarios")
    p.add_argument("--out")
    p.add_argument("--mode", choices=AGENT_MODES)
    p.add_argument("--grid-xy", dest="grid_xy", type=_float_list, help="metres, comma separated")
    p.add_argument("--grid-yaw", dest="grid_yaw", type=_float_list, help="degrees, comma separated")
    p.add_argument("--shift-mode", dest="shift_mode", choices=["axis", "yaw", "both"])
    p.add_argument("--episodes-per-cell", dest="episodes_per_cell", type=int)
    p.add_argument("--max-retries", dest="max_retries", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)

    p = cmd("plot", "render a sweep CSV, embedding CSV or trajectory CSV to SVG")
    p.add_argument("--input")
    p.add_argument("--kind", choices=["sweep", "embedding", "trajectory"])
    p.add_argument("--out")
    p.add_argument("--metric", choices=["AR", "OR", "CR", "PR"])
    p.add_argument("--scenario", help="scenario file (trajectory plots)")

    p = cmd("feature-viz", "embed encoder features of original and shifted starts")
    p.add_argument("--ckpt")
    p.add_argument("--scenarios")
    p.add_argument("--out")
    p.add_argument("--shift-xy", dest="shift_xy", type=float)
    p.add_argument("--shift-yaw", dest="shift_yaw", type=float, help="degrees")
    p.add_argument("--perplexity", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=_rate)
    p.add_argument("--seed", type=int)
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, config file, CHAUFFEUR_SEED and flags; reject unknown keys."""
    cfg = dict(DEFAULTS[command])
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {args.config} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
        cfg.update(loaded)
    env_seed = os.environ.get("CHAUFFEUR_SEED")
    if env_seed is not None and "seed" in cfg:
        try:
            cfg["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"CHAUFFEUR_SEED must be an integer, got {env_seed!r}") from None
    for k, v in vars(args).items():
        if k in ("command", "config") or v is None:
            continue
        cfg[k] = v
    missing = [k for k in REQUIRED[command] if cfg.get(k) in (None, "")]
    if missing:
        raise ConfigError(f"{command}: missing required setting(s): {', '.join(missing)}")
    if "jobs" in cfg and int(cfg["jobs"]) < 1:
        raise ConfigError("--jobs must be >= 1")
    return cfg


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n")


def _resolved_path(out: str, is_dir: bool) -> Path:
    p = Path(out)
    if is_dir:
        p.mkdir(parents=True, exist_ok=True)
        return p / "config.resolved.json"
    p.parent.mkdir(parents=True, exist_ok=True)
    return p.with_name(p.name + ".config.json")


# -- helpers ---------------------------------------------------------------

def _scenarios(path):
    from .scenario import load_scenario, load_scenario_dir
    p = Path(path)
    if not p.exists():
        raise MissingInput(f"{path} does not exist")
    items = load_scenario_dir(p) if p.is_dir() else [load_scenario(p)]
    if not items:
        raise MissingInput(f"no scenario files in {path}")
    return items


def _checkpoint(path):
    from .neuro.model import encoder_config_from, load_checkpoint
    if not Path(path).exists():
        raise MissingInput(f"checkpoint {path} does not exist")
    params, config = load_checkpoint(path)
    head = config.get("head")
    if head not in POLICY_MODES:
        raise ValidationError(f"checkpoint has unknown head {head!r}")
    return params, config, encoder_config_from(config)


def _encoder_cfg(cfg):
    from .neuro.model import EncoderConfig
    return EncoderConfig(**{k: int(cfg[k]) for k in ENCODER_KEYS})


def _sim_cfg(agent_mode, head):
    from .simulator import SimConfig
    from .training.evaluate import transition_for
    return SimConfig(mode=agent_mode, transition=transition_for(head))


def _num(v):
    return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v


# -- commands ---------------------------------------------------------------

def cmd_gen(cfg):
    from .generate import FAMILIES, ScenarioFamilySpec, generate_scenario
    from .scenario import save_scenario
    fam = cfg["family"]
    fams = list(FAMILIES) if fam in ("mixed", "all") else [fam]
    for f in fams:
        if f not in FAMILIES:
            raise ValidationError(f"unknown family {f!r}")
    if int(cfg["count"]) < 0:
        raise ValidationError("count must be >= 0")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(int(cfg["seed"]))
    files, ids = [], []
    for i in range(int(cfg["count"])):
        f = fams[i % len(fams)]
        density = int(rng.integers(0, 5)) if cfg["density"] is None else int(cfg["density"])
        spec = ScenarioFamilySpec(f, density, float(cfg["curvature"]), int(cfg["seed"]) * 100003 + i)
        s = generate_scenario(spec, horizon_steps=int(cfg["horizon"]))
        name = f"{i:05d}-{s.id}.scn.json"
        save_scenario(s, out / name)
        files.append(name)
        ids.append(s.id)
    _write_json(out / "manifest.json", {"count": len(files), "family": fam, "seed": int(cfg["seed"]),
                                        "files": files, "ids": ids})
    print(f"wrote {len(files)} scenarios to {out}")


def cmd_dump_obs(cfg):
    from .training.il import dump_observations
    scen = _scenarios(cfg["scenarios"])
    out = Path(cfg["out"])
    if out.exists():
        out.unlink()
    n = dump_observations(scen, out, cfg["mode"])
    print(f"wrote {n} records from {len(scen)} scenarios to {out}")


def cmd_train_il(cfg):
    import csv
    from .neuro.model import encoder_config_dict, save_checkpoint
    from .training.il import ILConfig, load_dataset, train_il
    if not Path(cfg["data"]).exists():
        raise MissingInput(f"{cfg['data']} does not exist")
    ds = load_dataset(cfg["data"])
    il_cfg = ILConfig(lr=float(cfg["lr"]), epochs=int(cfg["epochs"]),
                      scenarios_per_batch=int(cfg["scenarios_per_batch"]), batch_size=int(cfg["batch_size"]),
                      w_acc=float(cfg["w_acc"]), w_steer=float(cfg["w_steer"]), w_x=float(cfg["w_x"]),
                      w_y=float(cfg["w_y"]), w_yaw=float(cfg["w_yaw"]), seed=int(cfg["seed"]))
    enc = _encoder_cfg(cfg)
    res = train_il(ds, il_cfg, ds.mode, enc)
    out = Path(cfg["out"])
    save_checkpoint(res.params, out, {"head": ds.mode, "encoder": encoder_config_dict(enc),
                                      "training": asdict(il_cfg)})
    with open(out.with_name(out.name + ".loss.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["update", "loss"])
        for i, v in enumerate(res.loss_curve):
            w.writerow([i, format(v, ".9g")])
    print(f"trained {ds.mode} on {len(ds)} records; final loss {res.loss_curve[-1] if res.loss_curve else float('nan'):.6g}")


def cmd_train_ppo(cfg):
    from .neuro.model import encoder_config_dict, save_checkpoint
    from .simulator import SimConfig
    from .training.ppo import PPOConfig, train_ppo
    scen = _scenarios(cfg["scenarios"])
    keys = ("lr", "gamma", "lam", "clip", "w_ent", "w_value", "batch_size", "epochs_per_wave", "max_grad_norm",
            "total_timesteps", "rollout_scenarios", "steps_per_wave", "reward_scale", "seed")
    ints = {"batch_size", "epochs_per_wave", "total_timesteps", "rollout_scenarios", "steps_per_wave", "seed"}
    ppo_cfg = PPOConfig(**{k: (int(cfg[k]) if k in ints else float(cfg[k])) for k in keys})
    enc = _encoder_cfg(cfg)
    init = None
    if cfg["init_from"]:
        init, _, enc = _checkpoint(cfg["init_from"])
    out = Path(cfg["out"])
    res = train_ppo(scen, ppo_cfg, init, enc, SimConfig(mode=cfg["agent_mode"]),
                    log_path=out.with_name(out.name + ".log.csv"))
    save_checkpoint(res.params, out, {"head": "rl", "encoder": encoder_config_dict(enc),
                                      "training": asdict(ppo_cfg)})
    last = res.reward_curve[-1] if res.reward_curve else float("nan")
    print(f"trained PPO for {len(res.reward_curve)} waves; last mean episode reward {last:.6g}")


def cmd_sne_sample(cfg):
    from .sampling import SneConfig, extract_features, sne_sample, write_embedding_csv, write_subset
    scen = _scenarios(cfg["scenarios"])
    params, _, enc = _checkpoint(cfg["ckpt"])
    sne = SneConfig(perplexity=float(cfg["perplexity"]), iterations=int(cfg["iterations"]),
                    learning_rate=_rate(cfg["learning_rate"]),
                    pre_subset_size=None if cfg["pre_subset_size"] is None else int(cfg["pre_subset_size"]),
                    K=int(cfg["K"]), kmeans_restarts=int(cfg["kmeans_restarts"]), seed=int(cfg["seed"]))
    feats = extract_features(scen, params, enc, agg=cfg["feature_agg"])
    res = sne_sample(feats, sne)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    pre_ids = [feats.scenario_ids[i] for i in res.pre_subset]
    write_embedding_csv(out / "embedding.csv", pre_ids, res.embedding.points, res.labels, res.ids)
    write_subset(out / "subset.json", res, int(cfg["seed"]), int(cfg["K"]), "embedding.csv")
    print(f"selected {len(res.ids)} of {len(scen)} scenarios")


def _episode_list(scen, episodes):
    n = len(scen) if episodes is None else int(episodes)
    if n < 1:
        raise ValidationError("episodes must be >= 1")
    return [scen[i % len(scen)] for i in range(n)]


def cmd_eval(cfg):
    from .simulator import write_episode_csv
    from .training.evaluate import PolicyFn, benchmark, run_episodes
    scen = _scenarios(cfg["scenarios"])
    params, config, enc = _checkpoint(cfg["ckpt"])
    head = config["head"]
    eps = _episode_list(scen, cfg["episodes"])
    results = run_episodes(eps, PolicyFn(params, head, enc), _sim_cfg(cfg["mode"], head), jobs=int(cfg["jobs"]))
    rep = benchmark(results)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    per = []
    for i, r in enumerate(results):
        d = r.metrics.as_dict()
        d.update({"episode": i, "scenario_id": r.scenario_id, "total_reward": r.total_reward})
        per.append(d)
        if cfg["trajectories"]:
            write_episode_csv(r.record, out / f"episode-{i:05d}.csv")
    report = {"config_echo": cfg, "n_episodes": rep.n_episodes, "AR": rep.AR, "OR": rep.OR, "CR": rep.CR,
              "PR": rep.PR, "per_episode": per}
    _write_json(out / "report.json", report)
    print(f"AR {rep.AR:.2f}  OR {rep.OR:.2f}  CR {rep.CR:.2f}  PR {rep.PR:.2f}  ({rep.n_episodes} episodes)")


def cmd_shift_eval(cfg):
    from .plotting import sweep_svg
    from .robustness import degrees, read_sweep_csv, shift_sweep, write_sweep_csv
    from .training.evaluate import PolicyFn
    scen = _scenarios(cfg["scenarios"])
    params, config, enc = _checkpoint(cfg["ckpt"])
    head = config["head"]
    if not cfg["grid_xy"] or not cfg["grid_yaw"]:
        raise ValidationError("shift grids must be non-empty")
    n_eps = len(scen) if cfg["episodes_per_cell"] is None else int(cfg["episodes_per_cell"])
    cells = shift_sweep(scen, PolicyFn(params, head, enc), [float(v) for v in cfg["grid_xy"]],
                        degrees(cfg["grid_yaw"]), n_eps, seed=int(cfg["seed"]), mode=cfg["shift_mode"],
                        sim_cfg=_sim_cfg(cfg["mode"], head), max_retries=int(cfg["max_retries"]),
                        jobs=int(cfg["jobs"]))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(cells, out / "sweep.csv")
    rows = read_sweep_csv(out / "sweep.csv")
    for metric in ("AR", "OR", "CR", "PR"):
        sweep_svg(rows, out / f"sweep_{metric}.svg", metric)
    print(f"wrote {len(cells)} sweep cells to {out / 'sweep.csv'}")


def cmd_plot(cfg):
    from .plotting import embedding_svg, sweep_svg, trajectory_svg
    from .robustness import read_sweep_csv
    from .sampling import read_embedding_csv
    src = Path(cfg["input"])
    if not src.exists():
        raise MissingInput(f"{src} does not exist")
    kind = cfg["kind"]
    if kind is None:
        with open(src, encoding="utf-8") as fh:
            head = fh.readline()
        kind = "sweep" if head.startswith("max_xy") else "embedding" if head.startswith("id,") else "trajectory"
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    if kind == "sweep":
        sweep_svg(read_sweep_csv(src), out, cfg["metric"])
    elif kind == "embedding":
        ids, pts, labels, selected = read_embedding_csv(src)
        embedding_svg(ids, pts, labels, selected, out)
    else:
        import csv
        if not cfg["scenario"]:
            raise ValidationError("trajectory plots need --scenario")
        scen = _scenarios(cfg["scenario"])[0]
        with open(src, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        traj = np.array([[float(r["x"]), float(r["y"])] for r in rows]).reshape(-1, 2)
        trajectory_svg(scen, [traj], out)
    print(f"wrote {out}")


def cmd_feature_viz(cfg):
    from .geometry import Pose
    from .observation import TokenizerConfig, preprocess_static, stack, tokenize
    from .neuro.model import encode
    from .plotting import embedding_svg
    from .robustness import ShiftConfig, choose_shift, episode_rng
    from .sampling import SneConfig, tsne, write_embedding_csv
    from .simulator import SceneContext
    scen = _scenarios(cfg["scenarios"])
    params, _, enc = _checkpoint(cfg["ckpt"])
    tok = TokenizerConfig()
    shift = ShiftConfig(max_xy=float(cfg["shift_xy"]), max_yaw=math.radians(float(cfg["shift_yaw"])),
                        seed=int(cfg["seed"]))
    feats, ids, labels = [], [], []
    for i, s in enumerate(scen):
        ctx = SceneContext(s)
        cache = preprocess_static(s, tok)
        states = np.array([a.states[0] for a in s.agents])
        pose, _ = choose_shift(s, shift, episode_rng(int(cfg["seed"]), i), ctx)
        variants = [("orig", states)]
        if pose is not None:
            moved = states.copy()
            speed = float(np.hypot(states[s.ego_index, 3], states[s.ego_index, 4]))
            p = pose if isinstance(pose, Pose) else Pose(*pose)
            moved[s.ego_index] = [p.x, p.y, p.yaw, speed * math.cos(p.yaw), speed * math.sin(p.yaw)]
            variants.append(("shifted", moved))
        for tag, st in variants:
            tokens, mask = stack([tokenize((st, ctx.dims, s.ego_index), cache, tok)])
            feats.append(encode(tokens, mask, params, enc).data[0])
            ids.append(f"{s.id}:{tag}")
            labels.append(0 if tag == "orig" else 1)
    emb = tsne(np.array(feats), SneConfig(perplexity=float(cfg["perplexity"]), iterations=int(cfg["iterations"]),
                                         learning_rate=_rate(cfg["learning_rate"]), seed=int(cfg["seed"])))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_embedding_csv(out / "features.csv", ids, emb.points, np.array(labels))
    embedding_svg(ids, emb.points, np.array(labels), [], out / "features.svg",
                  title="encoder features: original (blue) vs shifted (red)")
    print(f"embedded {len(ids)} feature vectors")


COMMANDS = {
    "gen": (cmd_gen, True), "dump-obs": (cmd_dump_obs, False), "train-il": (cmd_train_il, False),
    "train-ppo": (cmd_train_ppo, False), "sne-sample": (cmd_sne_sample, True), "eval": (cmd_eval, True),
    "shift-eval": (cmd_shift_eval, True), "plot": (cmd_plot, False), "feature-viz": (cmd_feature_viz, True),
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    fn, out_is_dir = COMMANDS[args.command]
    try:
        cfg = resolve(args.command, args)
        _write_json(_resolved_path(cfg["out"], out_is_dir), {"command": args.command, **cfg})
        fn(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, ParseError, VersionMismatch, MissingInput) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    except ChauffeurError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, AssertionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
