import csv
import json
import math

import numpy as np
import pytest

from mappo import cli
from mappo.algo import METRIC_COLUMNS, ConfigError, TrainConfig, preset
from mappo.checkpoint import CheckpointError, load_checkpoint, read_header, save_checkpoint
from mappo.seeding import derive_seeds, splitmix64

TINY = ["num_envs=2", "buffer_length=5", "total_env_steps=30", "ppo_epochs=2", "hidden_dim=8"]


def train(tmp_path, name, *extra, env="spread", seed=7):
    out = tmp_path / name
    args = ["train", "--env", env, "--seed", str(seed), "--out", str(out)]
    for o in TINY + list(extra):
        args += ["--override", o]
    assert cli.main(args) == 0
    return out


# ---------------------------------------------------------------- config layering

def test_ini_round_trip_identity():
    cfg = preset("skirmish", env_params={"n_allies": 2, "width": 6}, stop_score=0.9,
                 actor_lr=3.3e-4, log_wallclock=True)
    text = cli.config_to_ini(cfg)
    back = cli.config_from_ini(text)
    assert back == cfg
    assert cli.config_to_ini(back) == text


def test_inf_stop_score_round_trips():
    cfg = TrainConfig()
    assert cli.config_from_ini(cli.config_to_ini(cfg)).stop_score == math.inf


def test_unknown_keys_and_sections(tmp_path):
    with pytest.raises(ConfigError):
        cli.config_from_ini("[ppo]\nlearning_rate = 1\n")
    with pytest.raises(ConfigError):
        cli.config_from_ini("[optimizer]\nactor_lr = 1\n")
    with pytest.raises(ConfigError):
        cli.config_from_ini("[ppo]\nppo_epochs = many\n")
    with pytest.raises(ConfigError):
        cli.parse_override("learning_rate=0.1")
    with pytest.raises(ConfigError):
        cli.parse_override("ppo_epochs")


def test_every_field_has_one_section():
    keys = [k for ks in cli.SECTIONS.values() for k in ks]
    assert len(keys) == len(set(keys))
    assert set(keys) | {"env_params"} == {f for f in TrainConfig.__dataclass_fields__}


def test_layer_precedence(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[ppo]\nppo_epochs = 5\nclip_epsilon = 0.1\nentropy_coef = 0.02\n"
                   "[env]\nn_agents = 4\n")
    environ = {"MAPPO_CLIP_EPSILON": "0.3", "MAPPO_ENTROPY_COEF": "0.05",
               "MAPPO_ENV__N_AGENTS": "2", "HOME": "/x"}
    cfg = cli.build_config("spread", ini, ["entropy_coef=0.07", "seed=3"], env=None, seed=9,
                           environ=environ)
    assert cfg.ppo_epochs == 5           # file over preset
    assert cfg.clip_epsilon == 0.3       # env var over file
    assert cfg.entropy_coef == 0.07      # override over env var
    assert cfg.seed == 9                 # flag over override
    assert cfg.env_params == {"n_agents": 2}
    assert cfg.actor_lr == 7e-4          # preset value kept


def test_env_flag_picks_matching_preset():
    cfg = cli.build_config(env="skirmish", environ={})
    assert cfg.state_mode == preset("skirmish").state_mode
    with pytest.raises(ConfigError):
        cli.build_config(env="starcraft", environ={})


def test_unknown_override_exits_2(tmp_path, capsys):
    code = cli.main(["train", "--env", "spread", "--out", str(tmp_path / "x"),
                     "--override", "learning_rate=0.1"])
    assert code == 2
    assert "learning_rate" in capsys.readouterr().err


def test_bad_env_var_exits_2(tmp_path, monkeypatch):
    monkeypatch.setenv("MAPPO_NOT_A_FIELD", "1")
    assert cli.main(["train", "--env", "bandit", "--out", str(tmp_path / "x")]) == 2


# ---------------------------------------------------------------- seeds

def test_splitmix_reference_values():
    # first outputs for state 0 of the published SplitMix64 generator
    s, a = splitmix64(0)
    _, b = splitmix64(s)
    assert (a, b) == (0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4)


def test_seeds_distinct_and_stable():
    d = derive_seeds(7)
    assert list(d) == ["env", "init", "sample", "eval"]
    assert len(set(d.values())) == 4
    assert d == derive_seeds(7) and d != derive_seeds(8)


# ---------------------------------------------------------------- train / artifacts

def test_train_twice_byte_identical(tmp_path):
    a = train(tmp_path, "a")
    b = train(tmp_path, "b")
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    rows = list(csv.reader(open(a / "metrics.csv")))
    assert tuple(rows[0]) == METRIC_COLUMNS
    assert len(rows) == 1 + 3
    assert all(r[-1] == "" for r in rows[1:])


def test_override_recorded_in_manifest(tmp_path):
    out = train(tmp_path, "m", "ppo_epochs=15")
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["ppo_epochs"] == 15
    assert man["seed"] == 7 and man["seeds"]["env"] == derive_seeds(7)["env"]
    assert man["env_descriptor"]["name"] == "spread"
    assert (out / "config.ini").exists() and (out / "final.ckpt").exists()


def test_manifest_rerun_reproduces(tmp_path):
    a = train(tmp_path, "a")
    b = tmp_path / "b"
    assert cli.main(["train", "--manifest", str(a / "manifest.json"), "--out", str(b)]) == 0
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()


def test_x_axis_is_cumulative_env_steps(tmp_path):
    out = train(tmp_path, "s")
    cols = cli.read_metrics(out / "metrics.csv")
    man = json.loads((out / "manifest.json").read_text())["config"]
    expect = cols["iter"] * man["num_envs"] * man["buffer_length"]
    assert np.array_equal(cols["step"], expect)


def test_wallclock_column_optional(tmp_path):
    out = train(tmp_path, "w", "log_wallclock=true")
    rows = list(csv.DictReader(open(out / "metrics.csv")))
    assert all(float(r["seconds"]) >= 0 for r in rows)


def test_checkpoints_and_resume_bit_identical(tmp_path):
    full = train(tmp_path, "full", "total_env_steps=40")
    part = tmp_path / "part"
    cfg = cli.build_config(env="spread", overrides=TINY + ["total_env_steps=40",
                                                           "checkpoint_interval=2"],
                           seed=7, environ={})
    cli.run_training(cfg, part, max_iterations=2)
    ckpt = part / "checkpoints" / "iter_000002.ckpt"
    assert ckpt.exists()
    assert cli.main(["train", "--resume", str(ckpt), "--out", str(part)]) == 0
    assert (full / "metrics.csv").read_bytes() == (part / "metrics.csv").read_bytes()


def test_checkpoint_round_trip_exact(tmp_path):
    tr = load_checkpoint(train(tmp_path, "c") / "final.ckpt")
    p = tmp_path / "again.ckpt"
    save_checkpoint(p, tr)
    tr2 = load_checkpoint(p)
    for (n1, a), (n2, b) in zip(tr.ac.named_parameters(), tr2.ac.named_parameters()):
        assert n1 == n2 and np.array_equal(a.data, b.data)
    for o1, o2 in ((tr.actor_opt, tr2.actor_opt), (tr.critic_opt, tr2.critic_opt)):
        assert o1.state.step_count == o2.state.step_count > 0
        assert all(np.array_equal(x, y) for x, y in zip(o1.state.first_moment, o2.state.first_moment))
        assert all(np.array_equal(x, y) for x, y in zip(o1.state.second_moment, o2.state.second_moment))
    assert tr.moments == tr2.moments
    assert tr.rng.bit_generator.state == tr2.rng.bit_generator.state
    assert p.read_bytes()[:8] == b"MAPPOCKP"


def test_corrupt_checkpoint(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"garbage!" + b"\0" * 20)
    with pytest.raises(CheckpointError):
        read_header(p)
    assert cli.main(["inspect-checkpoint", str(p)]) == 2


# ---------------------------------------------------------------- eval / inspect

def test_eval_defaults_to_32_episodes(tmp_path, capsys):
    out = train(tmp_path, "e", env="bandit")
    capsys.readouterr()
    assert cli.main(["eval", str(out / "final.ckpt")]) == 0
    first = json.loads(capsys.readouterr().out)
    assert first["episodes"] == 32 and first["mode"] == "greedy"
    assert cli.main(["eval", str(out / "final.ckpt")]) == 0
    assert json.loads(capsys.readouterr().out) == first


def test_untrained_bandit_checkpoint_is_chance(tmp_path, capsys):
    cfg = cli.build_config(env="bandit", overrides=["total_env_steps=0"], environ={})
    cli.run_training(cfg, tmp_path / "u")
    capsys.readouterr()
    cli.main(["eval", str(tmp_path / "u" / "final.ckpt"), "--sampled", "--episodes", "400"])
    rep = json.loads(capsys.readouterr().out)
    assert abs(rep["win_rate"] - 0.5) < 0.1


def test_eval_descriptor_mismatch(tmp_path):
    out = train(tmp_path, "e", env="bandit")
    assert cli.main(["eval", str(out / "final.ckpt"), "--env", "spread"]) == 2


def test_inspect(tmp_path, capsys):
    out = train(tmp_path, "i")
    capsys.readouterr()
    assert cli.main(["inspect-checkpoint", str(out / "final.ckpt")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["env"] == "spread" and info["iteration"] == 3 and info["n_parameters"] > 0


# ---------------------------------------------------------------- ablation

def test_ablation_grid(tmp_path, capsys):
    spec = tmp_path / "abl.ini"
    spec.write_text("[ablation]\npreset = bandit\naxis = num_minibatches\nvalues = 1, 2, 4\n"
                    "seeds = 1, 2, 3\n[experiment]\ntotal_env_steps = 64\n")
    assert cli.main(["ablate", str(spec), "--out", str(tmp_path / "abl")]) == 0
    runs = list(csv.DictReader(open(tmp_path / "abl" / "runs.csv")))
    summary = list(csv.DictReader(open(tmp_path / "abl" / "summary.csv")))
    assert len(runs) == 9 and all(r["status"] == "ok" for r in runs)
    assert [r["value"] for r in summary] == ["1", "2", "4"]
    for row in summary:
        scores = [float(r["score"]) for r in runs if r["value"] == row["value"]]
        assert float(row["median_score"]) == float(np.median(scores))


def test_death_axis_defaults_to_four_variants(tmp_path):
    spec = tmp_path / "d.ini"
    spec.write_text("[ablation]\npreset = skirmish\naxis = death_mode\nseeds = 1\n")
    s = cli.load_ablation_spec(spec, environ={})
    assert s.values == ["mask", "keep", "drop", "mask_no_id"]
    assert set(cli.ABLATION_AXES) == {"value_norm", "state_mode", "ppo_epochs",
                                      "num_minibatches", "clip_epsilon", "death_mode"}


def test_empty_seeds_rejected(tmp_path):
    spec = tmp_path / "e.ini"
    spec.write_text("[ablation]\npreset = bandit\naxis = ppo_epochs\nvalues = 5, 10\nseeds =\n")
    with pytest.raises(ConfigError):
        cli.load_ablation_spec(spec, environ={})
    assert cli.main(["ablate", str(spec), "--out", str(tmp_path / "o")]) == 2


def test_ablation_reports_failed_runs(tmp_path):
    base = preset("bandit", total_env_steps=32)
    spec = cli.AblationSpec(base, "state_mode", ["IND", "EP"], [1], 1)
    summary = cli.run_ablation(spec, tmp_path / "f")
    assert [r["failed"] for r in summary] == [0, 1]
    runs = list(csv.DictReader(open(tmp_path / "f" / "runs.csv")))
    assert runs[1]["status"].startswith("error")


# ---------------------------------------------------------------- plot

def test_plot_single_and_banded(tmp_path):
    # bandit episodes last one step, so every row carries an episode reward
    outs = [train(tmp_path, f"p{s}", env="bandit", seed=s) for s in (1, 2, 3)]
    one = tmp_path / "one.svg"
    assert cli.main(["plot", str(outs[0] / "metrics.csv"), "-o", str(one)]) == 0
    svg = one.read_text()
    assert svg.startswith("<?xml") and "<svg" in svg
    band = tmp_path / "band.svg"
    files = ",".join(str(o / "metrics.csv") for o in outs)
    assert cli.main(["plot", "--series", f"mappo:{files}", "-o", str(band)]) == 0
    # the band adds one filled polygon path over the single-run plot
    assert band.read_text().count("<path") > svg.count("<path")


def test_plot_schema_mismatch(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("step,reward\n1,2\n")
    assert cli.main(["plot", str(bad), "-o", str(tmp_path / "x.svg")]) == 2
