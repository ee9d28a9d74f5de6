"""Versioned binary checkpoints.

Layout (all integers little-endian):

    8 bytes   magic  b"MAPPOCKP"
    uint32    format version
    uint32    header length H
    H bytes   UTF-8 JSON header: config, seeds, counters, parameter names and
              shapes, Adam step counts, moment statistics, RNG states
    ...       parameter payload, fp64 little-endian, in header order
    ...       Adam first then second moments, actor optimizer then critic
    uint64    length of the live-environment blob, then the blob (pickle)

The environment blob lets a resumed run continue bit-identically; a
checkpoint without it (length 0) still serves evaluation.
"""

from __future__ import annotations

import io
import json
import pickle
import struct

import numpy as np

from .algo import ActorCritic, ScoreWindow, TrainConfig, Trainer
from .valuenorm import RunningMoments

MAGIC = b"MAPPOCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _config_dict(cfg: TrainConfig) -> dict:
    from dataclasses import asdict
    d = asdict(cfg)
    d["stop_score"] = repr(cfg.stop_score)
    return d


def _config_from(d: dict) -> TrainConfig:
    d = dict(d)
    d["stop_score"] = float(d["stop_score"])
    return TrainConfig(**d)


def _moments(m: RunningMoments | None):
    return None if m is None else [float(v) for v in m.state_array()]


def save_checkpoint(path, trainer: Trainer, include_env_state: bool = True):
    params = list(trainer.ac.named_parameters())
    header = {
        "config": _config_dict(trainer.cfg),
        "seeds": {k: int(v) for k, v in trainer.seeds.items()},
        "iteration": trainer.iteration,
        "env_steps": trainer.env_steps,
        "descriptor": trainer.descriptor.as_dict(),
        "params": [{"name": n, "shape": list(p.data.shape)} for n, p in params],
        "adam": {"actor": trainer.actor_opt.state.step_count,
                 "critic": trainer.critic_opt.state.step_count},
        "value_moments": _moments(trainer.moments),
        "reward_moments": _moments(trainer.reward_moments),
        "rng": {"sample": trainer.rng.bit_generator.state,
                "eval": trainer.eval_rng.bit_generator.state},
        "eval_scores": trainer.eval_scores.scores,
    }
    hbytes = json.dumps(header).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(hbytes)))
    buf.write(hbytes)
    for _, p in params:
        buf.write(p.data.astype("<f8").tobytes())
    for opt in (trainer.actor_opt, trainer.critic_opt):
        for arr in opt.state.first_moment + opt.state.second_moment:
            buf.write(arr.astype("<f8").tobytes())
    blob = pickle.dumps(_env_state(trainer)) if include_env_state else b""
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _env_state(trainer: Trainer) -> dict:
    c = trainer.collector
    return {"vec": c.vec, "last": c.last, "actor_h": c.actor_h, "critic_h": c.critic_h,
            "resets": c.resets, "frames": c.frames, "acc": c.acc}


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def _read_header(fh, path):
    if fh.read(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", fh.read(8))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    return json.loads(fh.read(hlen).decode("utf-8"))


def _read_array(fh, shape):
    n = int(np.prod(shape)) if len(shape) else 1
    raw = fh.read(8 * n)
    if len(raw) != 8 * n:
        raise CheckpointError("truncated checkpoint payload")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def load_checkpoint(path) -> Trainer:
    """Rebuild a Trainer exactly as it was saved (ready to keep training)."""
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        cfg = _config_from(header["config"])
        trainer = Trainer(cfg, seeds=header["seeds"])
        _restore_params(fh, header, trainer.ac)
        for opt, key in ((trainer.actor_opt, "actor"), (trainer.critic_opt, "critic")):
            st = opt.state
            st.first_moment = [_read_array(fh, p.data.shape) for p in opt.params]
            st.second_moment = [_read_array(fh, p.data.shape) for p in opt.params]
            st.step_count = int(header["adam"][key])
        (blen,) = struct.unpack("<Q", fh.read(8))
        blob = fh.read(blen)
    if header["value_moments"] is not None:
        trainer.moments = RunningMoments.from_state_array(header["value_moments"])
    if header["reward_moments"] is not None:
        trainer.reward_moments = RunningMoments.from_state_array(header["reward_moments"])
        trainer.collector.reward_moments = trainer.reward_moments
    trainer.rng.bit_generator.state = header["rng"]["sample"]
    trainer.eval_rng.bit_generator.state = header["rng"]["eval"]
    trainer.iteration = header["iteration"]
    trainer.env_steps = header["env_steps"]
    trainer.eval_scores = ScoreWindow(10)
    trainer.eval_scores.scores = list(header["eval_scores"])
    if blen:
        state = pickle.loads(blob)
        c = trainer.collector
        trainer.vec = c.vec = state["vec"]
        for k in ("last", "actor_h", "critic_h", "resets", "frames", "acc"):
            setattr(c, k, state[k])
    return trainer


def _restore_params(fh, header, ac: ActorCritic):
    params = dict(ac.named_parameters())
    names = [p["name"] for p in header["params"]]
    if sorted(names) != sorted(params):
        raise CheckpointError("checkpoint parameters do not match the network layout")
    for meta in header["params"]:
        p = params[meta["name"]]
        if list(p.data.shape) != meta["shape"]:
            raise CheckpointError(f"shape mismatch for {meta['name']}: "
                                  f"{meta['shape']} vs {list(p.data.shape)}")
        p.data[...] = _read_array(fh, meta["shape"])


def load_policy(path) -> tuple[TrainConfig, ActorCritic, dict]:
    """Networks and config only, for evaluation."""
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        cfg = _config_from(header["config"])
        d = header["descriptor"]
        from .statebuild import StateSpec
        spec = StateSpec(cfg.state_mode, d["n_agents"], d["obs_dim"], d["env_state_dim"],
                         cfg.include_agent_id, tuple(d["fp_overlap_index"]))
        ac = ActorCritic(d["n_agents"], d["obs_dim"], spec.width, d["n_actions"], cfg,
                         np.random.default_rng(0))
        _restore_params(fh, header, ac)
    return cfg, ac, header
