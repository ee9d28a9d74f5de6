"""Command-line interface: train, eval, ablate, plot, inspect-checkpoint.

Config files are INI with the sections listed in ``SECTIONS``; an ``[env]``
section passes keyword arguments to the environment constructor.  Settings are
layered, later layers winning:

    built-in defaults < --preset < --config file < MAPPO_* environment
    variables < --override key=value < explicit --env / --seed flags

Environment variables use the prefix ``MAPPO_`` followed by the upper-cased
field name (``MAPPO_PPO_EPOCHS=15``); env parameters use ``MAPPO_ENV__NAME``.

Exit codes: 0 success, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .algo import METRIC_COLUMNS, PRESETS, ConfigError, TrainConfig, Trainer, evaluate, preset
from .checkpoint import CheckpointError, load_checkpoint, load_policy, read_header, save_checkpoint
from .envs.base import env_names, make_env
from .seeding import derive_seeds
from .statebuild import DEATH_MODES, MODES, StateConfigError
from .tensor import NonFiniteError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
ENV_PREFIX = "MAPPO_"

SECTIONS = {
    "experiment": ("env", "seed", "total_env_steps", "num_envs", "buffer_length",
                   "checkpoint_interval", "log_wallclock"),
    "ppo": ("gamma", "gae_lambda", "clip_epsilon", "ppo_epochs", "num_minibatches",
            "entropy_coef", "actor_lr", "critic_lr", "max_grad_norm", "chunk_length",
            "value_loss", "huber_delta", "use_value_clip", "use_value_norm", "use_reward_norm",
            "normalize_advantages", "adam_eps", "weight_decay"),
    "critic_input": ("state_mode", "include_agent_id", "death_mode"),
    "network": ("share_policy", "hidden_dim", "n_fc", "activation", "recurrent",
                "stacked_frames", "feature_norm", "actor_gain"),
    "eval": ("eval_interval", "eval_episodes", "eval_deterministic", "score_metric", "stop_score"),
}
_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}
assert sorted(k for ks in SECTIONS.values() for k in ks) == sorted(
    k for k in _FIELD_TYPES if k != "env_params")


# ---------------------------------------------------------------- config parsing


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_value(key: str, text: str):
    """Convert the string form of one TrainConfig field to its typed value."""
    if key not in _FIELD_TYPES or key == "env_params":
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    text = str(text).strip()
    try:
        if kind == "bool":
            return _parse_bool(text)
        if kind == "int":
            return int(float(text)) if "e" in text.lower() else int(text)
        if kind == "float":
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc
    return text


def parse_env_value(text: str):
    """Env parameters are untyped: try int, float, bool, else keep the string."""
    text = str(text).strip()
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    try:
        return _parse_bool(text)
    except ConfigError:
        return text


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_to_ini(cfg: TrainConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for section, keys in SECTIONS.items():
        cp[section] = {k: format_value(getattr(cfg, k)) for k in keys}
    cp["env"] = {k: format_value(v) for k, v in sorted(cfg.env_params.items())}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def ini_updates(text: str) -> tuple[dict, dict]:
    """Parse INI text into (field updates, env params); unknown keys are errors."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    updates, env_params = {}, {}
    for section in cp.sections():
        if section == "env":
            env_params.update({k: parse_env_value(v) for k, v in cp[section].items()})
            continue
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for k, v in cp[section].items():
            if k not in SECTIONS[section]:
                raise ConfigError(f"unknown config key {k!r} in section [{section}]")
            updates[k] = parse_value(k, v)
    return updates, env_params


def config_from_ini(text: str, base: TrainConfig | None = None) -> TrainConfig:
    updates, env_params = ini_updates(text)
    base = base or TrainConfig()
    return base.replace(**updates, env_params={**base.env_params, **env_params})


def parse_override(item: str) -> tuple[str, object, bool]:
    """``key=value`` -> (key, typed value, is_env_param)."""
    if "=" not in item:
        raise ConfigError(f"override must look like key=value, got {item!r}")
    key, value = item.split("=", 1)
    key = key.strip()
    if key.startswith("env."):
        return key[4:], parse_env_value(value), True
    return key, parse_value(key, value), False


def env_var_overrides(environ) -> list[str]:
    items = []
    for name, value in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):]
        if key.startswith("ENV__"):
            items.append(f"env.{key[5:].lower()}={value}")
        else:
            items.append(f"{key.lower()}={value}")
    return items


def build_config(preset_name=None, config_path=None, overrides=(), env=None, seed=None,
                 environ=None) -> TrainConfig:
    environ = os.environ if environ is None else environ
    if preset_name:
        cfg = preset(preset_name)
    elif env and env in PRESETS:
        cfg = preset(env)
    else:
        cfg = TrainConfig()
    if config_path:
        cfg = config_from_ini(Path(config_path).read_text(), cfg)
    items = env_var_overrides(environ) + list(overrides)
    updates, env_params = {}, dict(cfg.env_params)
    for item in items:
        key, value, is_env = parse_override(item)
        (env_params if is_env else updates)[key] = value
    if env is not None:
        updates["env"] = env
    if seed is not None:
        updates["seed"] = int(seed)
    cfg = cfg.replace(**updates, env_params=env_params).validate()
    if cfg.env not in env_names():
        raise ConfigError(f"unknown environment {cfg.env!r}; known: {env_names()}")
    return cfg


# ---------------------------------------------------------------- manifest / metrics


def artifact_hash() -> str:
    """sha256 over this package's source files (stable, order-independent)."""
    root = Path(__file__).resolve().parent
    h = hashlib.sha256()
    for p in sorted(root.rglob("*.py")):
        h.update(str(p.relative_to(root)).encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


@dataclass
class RunManifest:
    config: dict
    artifact_hash: str
    seed: int
    seeds: dict
    start_time: str
    env_descriptor: dict
    layout: dict = field(default_factory=lambda: {
        "metrics": "metrics.csv", "eval": "eval.csv", "config": "config.ini",
        "checkpoints": "checkpoints/", "final_checkpoint": "final.ckpt"})

    def write(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True))


def manifest_config(path) -> TrainConfig:
    data = json.loads(Path(path).read_text())
    d = dict(data["config"])
    d["stop_score"] = float(d["stop_score"])
    return TrainConfig(**d).validate()


def format_metric(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


class MetricsWriter:
    def __init__(self, path, columns, append=False):
        self.fh = open(path, "a" if append else "w", newline="")
        self.columns = columns
        self.w = csv.writer(self.fh, lineterminator="\n")
        if not append:
            self.w.writerow(columns)

    def write(self, row: dict):
        self.w.writerow([format_metric(row.get(c)) for c in self.columns])
        self.fh.flush()

    def close(self):
        self.fh.close()


EVAL_COLUMNS = ("step", "iter", "eval_reward", "eval_win_rate", "score", "median_last10")


def run_training(cfg: TrainConfig, out_dir=None, resume=None, max_iterations=None) -> dict:
    """Train until ``total_env_steps`` (or ``stop_score``); returns a summary dict."""
    trainer = load_checkpoint(resume) if resume else Trainer(cfg)
    cfg = trainer.cfg
    out = Path(out_dir) if out_dir else None
    writers = {}
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(config_to_ini(cfg))
        RunManifest(asdict(cfg) | {"stop_score": repr(cfg.stop_score)}, artifact_hash(), cfg.seed,
                    trainer.seeds, time.strftime("%Y-%m-%dT%H:%M:%S"),
                    trainer.descriptor.as_dict()).write(out / "manifest.json")
        writers["m"] = MetricsWriter(out / "metrics.csv", METRIC_COLUMNS, append=bool(resume))
        writers["e"] = MetricsWriter(out / "eval.csv", EVAL_COLUMNS, append=bool(resume))
    rows, evals = [], []
    t0 = time.perf_counter()
    iterations = 0
    try:
        while not trainer.done and (max_iterations is None or iterations < max_iterations):
            row = trainer.train_iteration()
            iterations += 1
            if cfg.log_wallclock:
                row["seconds"] = time.perf_counter() - t0
            rows.append(row)
            if out:
                writers["m"].write(row)
            stop = False
            if cfg.eval_interval and trainer.iteration % cfg.eval_interval == 0:
                ev = _eval_row(trainer)
                evals.append(ev)
                if out:
                    writers["e"].write(ev)
                stop = ev["median_last10"] >= cfg.stop_score
            if out and cfg.checkpoint_interval and trainer.iteration % cfg.checkpoint_interval == 0:
                (out / "checkpoints").mkdir(exist_ok=True)
                save_checkpoint(out / "checkpoints" / f"iter_{trainer.iteration:06d}.ckpt", trainer)
            if stop:
                break
        if not evals:
            ev = _eval_row(trainer)
            evals.append(ev)
            if out:
                writers["e"].write(ev)
        if out:
            save_checkpoint(out / "final.ckpt", trainer)
    finally:
        for w in writers.values():
            w.close()
    return {"trainer": trainer, "metrics": rows, "evals": evals,
            "final_score": trainer.eval_scores.median(), "env_steps": trainer.env_steps}


def _eval_row(trainer: Trainer) -> dict:
    ev = trainer.evaluate()
    score = ev["mean_reward"] if trainer.cfg.score_metric == "reward" else ev["win_rate"]
    trainer.eval_scores.add(score)
    return {"step": trainer.env_steps, "iter": trainer.iteration, "eval_reward": ev["mean_reward"],
            "eval_win_rate": ev["win_rate"], "score": score,
            "median_last10": trainer.eval_scores.median()}


# ---------------------------------------------------------------- ablation

ABLATION_AXES = {
    "value_norm": "use_value_norm",
    "state_mode": "state_mode",
    "ppo_epochs": "ppo_epochs",
    "num_minibatches": "num_minibatches",
    "clip_epsilon": "clip_epsilon",
    "death_mode": "death_mode",
}
AXIS_DEFAULTS = {"death_mode": DEATH_MODES, "state_mode": MODES, "value_norm": (True, False),
                 "num_minibatches": (1, 2, 4)}


@dataclass
class AblationSpec:
    base: TrainConfig
    axis: str
    values: list
    seeds: list
    workers: int = 1

    def __post_init__(self):
        if self.axis not in ABLATION_AXES:
            raise ConfigError(f"unknown ablation axis {self.axis!r}; known: {sorted(ABLATION_AXES)}")
        if not self.seeds:
            raise ConfigError("ablation needs at least one seed")
        if not self.values:
            raise ConfigError("ablation needs at least one value on its axis")
        key = ABLATION_AXES[self.axis]
        self.values = [v if not isinstance(v, str) else parse_value(key, v) for v in self.values]
        for v in self.values:
            self.config_for(v, self.seeds[0]).validate()

    def config_for(self, value, seed) -> TrainConfig:
        return self.base.replace(**{ABLATION_AXES[self.axis]: value, "seed": int(seed)})

    def runs(self):
        return [(v, s) for v in self.values for s in self.seeds]


def load_ablation_spec(path, environ=None) -> AblationSpec:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    text = Path(path).read_text()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed ablation spec: {exc}") from exc
    if "ablation" not in cp:
        raise ConfigError("ablation spec needs an [ablation] section")
    a = cp["ablation"]
    allowed = {"preset", "config", "axis", "values", "seeds", "workers"}
    bad = set(a) - allowed
    if bad:
        raise ConfigError(f"unknown ablation key(s): {sorted(bad)}")
    rest = "\n".join(f"[{s}]\n" + "\n".join(f"{k} = {v}" for k, v in cp[s].items())
                     for s in cp.sections() if s != "ablation")
    base = build_config(a.get("preset"), None, environ=environ or {})
    if a.get("config"):
        base = config_from_ini(Path(path).parent.joinpath(a["config"]).read_text(), base)
    if rest:
        base = config_from_ini(rest, base)
    axis = a.get("axis", "").strip()
    values = [v.strip() for v in a.get("values", "").split(",") if v.strip()]
    if not values and axis in AXIS_DEFAULTS:
        values = list(AXIS_DEFAULTS[axis])
    seeds = [int(s) for s in a.get("seeds", "").split(",") if s.strip()]
    return AblationSpec(base, axis, values, seeds, int(a.get("workers", "1")))


def _ablation_run(args):
    cfg, out_dir = args
    try:
        res = run_training(cfg, out_dir)
        vl = [r["value_loss"] for r in res["metrics"]][-10:]
        return {"status": "ok", "score": res["final_score"], "final_value_loss": float(np.mean(vl)),
                "env_steps": res["env_steps"]}
    except NonFiniteError as exc:
        return {"status": f"numerical abort: {exc}", "score": math.nan, "final_value_loss": math.nan}
    except Exception as exc:  # reported per run, the sweep goes on
        return {"status": f"error: {type(exc).__name__}: {exc}", "score": math.nan,
                "final_value_loss": math.nan}


def run_ablation(spec: AblationSpec, out_dir) -> list[dict]:
    """Run every (value, seed) pair; returns one summary row per value."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(spec.config_for(v, s), out / f"{spec.axis}={format_value(v)}" / f"seed{s}")
            for v, s in spec.runs()]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_ablation_run, jobs))
    else:
        results = [_ablation_run(j) for j in jobs]
    per_run = []
    for (v, s), res in zip(spec.runs(), results):
        per_run.append({"value": format_value(v), "seed": s, **res})
    summary = []
    for v in spec.values:
        rs = [r for r in per_run if r["value"] == format_value(v)]
        ok = [r for r in rs if r["status"] == "ok"]
        summary.append({
            "axis": spec.axis, "value": format_value(v),
            "median_score": float(np.median([r["score"] for r in ok])) if ok else math.nan,
            "median_value_loss": float(np.median([r["final_value_loss"] for r in ok])) if ok else math.nan,
            "scores": " ".join(format_metric(r["score"]) for r in rs),
            "failed": len(rs) - len(ok)})
    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["value", "seed", "status", "score", "final_value_loss", "env_steps"],
                           lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        w.writerows(per_run)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, list(summary[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(summary)
    return summary


# ---------------------------------------------------------------- plotting


def read_metrics(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != METRIC_COLUMNS:
            raise ConfigError(f"{path}: metrics schema mismatch")
        rows = list(reader)
    cols = {}
    for i, name in enumerate(header):
        cols[name] = np.array([float(r[i]) if r[i] != "" else math.nan for r in rows])
    return cols


def plot_curves(series: dict[str, list], out_path, metric="mean_ep_reward"):
    """One median line per series plus a min/max band when it has several runs.

    The x axis is cumulative env steps (iterations x num_envs x buffer_length).
    """
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, paths in series.items():
        runs = [read_metrics(p) for p in paths]
        n = min(len(r["step"]) for r in runs)
        x = runs[0]["step"][:n]
        y = np.stack([r[metric][:n] for r in runs])
        med = np.nanmedian(y, axis=0)
        line, = ax.plot(x, med, label=label)
        if len(runs) > 1:
            ax.fill_between(x, np.nanmin(y, axis=0), np.nanmax(y, axis=0), alpha=0.25,
                            color=line.get_color(), linewidth=0)
    ax.set_xlabel("env steps")
    ax.set_ylabel(metric)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)


# ---------------------------------------------------------------- commands


def cmd_train(args) -> int:
    if args.manifest:
        cfg = manifest_config(args.manifest)
    else:
        cfg = build_config(args.preset, args.config, args.override, args.env, args.seed)
    res = run_training(cfg, args.out, resume=args.resume)
    last = res["evals"][-1]
    print(json.dumps({"out": str(args.out), "env_steps": res["env_steps"],
                      "iterations": res["trainer"].iteration,
                      "final_score_median10": res["final_score"],
                      "last_eval_reward": last["eval_reward"],
                      "last_eval_win_rate": last["eval_win_rate"]}))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg, ac, header = load_policy(args.checkpoint)
    target = args.env or cfg.env
    probe = make_env(target, seed=0, **(cfg.env_params if target == cfg.env else {}))
    if probe.descriptor.as_dict() != header["descriptor"]:
        raise ConfigError(f"checkpoint was trained on {cfg.env!r}; the descriptor of "
                          f"{target!r} does not match it")
    cfg = cfg.replace(env=target)
    seed = derive_seeds(args.seed)["eval"]
    rep = evaluate(ac, cfg, args.episodes, np.random.default_rng(seed), not args.sampled,
                   env_seed=seed)
    print(json.dumps({"checkpoint": str(args.checkpoint), "env": cfg.env,
                      "episodes": rep["episodes"], "mean_reward": rep["mean_reward"],
                      "win_rate": rep["win_rate"],
                      "mode": "sampled" if args.sampled else "greedy"}))
    return EXIT_OK


def cmd_ablate(args) -> int:
    spec = load_ablation_spec(args.spec)
    if args.workers:
        spec.workers = args.workers
    summary = run_ablation(spec, args.out)
    print(f"{'value':>12} {'median':>10} {'value_loss':>11} failed  scores")
    for row in summary:
        print(f"{row['value']:>12} {row['median_score']:>10.4g} {row['median_value_loss']:>11.4g} "
              f"{row['failed']:>6}  {row['scores']}")
    return EXIT_OK


def cmd_plot(args) -> int:
    series = {}
    if args.files:
        series["run"] = args.files
    for item in args.series or []:
        label, _, files = item.partition(":")
        series[label] = [f for f in files.split(",") if f]
    if not series:
        raise ConfigError("plot needs at least one metrics file")
    plot_curves(series, args.output, args.metric)
    print(args.output)
    return EXIT_OK


def cmd_inspect(args) -> int:
    h = read_header(args.checkpoint)
    n = sum(int(np.prod(p["shape"])) for p in h["params"])
    print(json.dumps({"env": h["config"]["env"], "iteration": h["iteration"],
                      "env_steps": h["env_steps"], "n_parameters": n,
                      "tensors": [f"{p['name']} {p['shape']}" for p in h["params"]],
                      "adam_steps": h["adam"], "value_moments": h["value_moments"],
                      "descriptor": h["descriptor"]}, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mappo", description="Recurrent MAPPO / IPPO trainer")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a policy")
    t.add_argument("--config", help="INI config file")
    t.add_argument("--preset", choices=sorted(PRESETS))
    t.add_argument("--manifest", help="re-run the config recorded in a manifest.json")
    t.add_argument("--env")
    t.add_argument("--seed", type=int)
    t.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--out", default="runs/latest")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--env")
    e.add_argument("--episodes", type=int, default=32)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--sampled", action="store_true", help="sample actions instead of greedy")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run an ablation grid")
    a.add_argument("spec")
    a.add_argument("--out", default="runs/ablation")
    a.add_argument("--workers", type=int)
    a.set_defaults(func=cmd_ablate)

    pl = sub.add_parser("plot", help="plot metrics curves to SVG")
    pl.add_argument("files", nargs="*")
    pl.add_argument("--series", action="append", metavar="LABEL:FILE[,FILE...]")
    pl.add_argument("--metric", default="mean_ep_reward", choices=METRIC_COLUMNS[2:])
    pl.add_argument("-o", "--output", default="curves.svg")
    pl.set_defaults(func=cmd_plot)

    i = sub.add_parser("inspect-checkpoint", help="print a checkpoint header")
    i.add_argument("checkpoint")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, StateConfigError, CheckpointError, KeyError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
