"""
Training runs from Python
=========================

The command-line tool is a thin layer over ``run_training``; this script
drives it directly.  First a two-armed bandit that learns in seconds, then a
short cooperative-navigation run whose learning curve is written to SVG.

Pass a directory as the first argument to keep the outputs.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from mappo.algo import evaluate, preset
from mappo.cli import plot_curves, run_training

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="mappo-demo-"))

# ---------------------------------------------------------------- bandit
# arm 0 pays 1, arm 1 pays 0; each agent's critic sees only its own
# observation (IPPO-style "IND" input)
cfg = preset("bandit", seed=1)
res = run_training(cfg, out / "bandit")
ac = res["trainer"].ac
report = evaluate(ac, cfg, 200, np.random.default_rng(0), deterministic=False)
print(f"bandit: {res['env_steps']} steps, sampled-policy win rate {report['win_rate']:.2f}")

# ---------------------------------------------------------------- spread
# thirty iterations is far too short to learn the task; the point here is
# the output layout, not the score
cfg = preset("spread", num_envs=8, total_env_steps=8 * 25 * 30, seed=1, eval_interval=10)
runs = []
for seed in (1, 2):
    res = run_training(cfg.replace(seed=seed), out / f"spread-seed{seed}")
    runs.append(out / f"spread-seed{seed}" / "metrics.csv")
    rewards = [r["mean_ep_reward"] for r in res["metrics"]]
    print(f"spread seed {seed}: first {rewards[1]:.1f}, last {rewards[-1]:.1f}")

# x axis is cumulative env steps; two seeds give a min/max band around the median
plot_curves({"MAPPO spread": runs}, out / "spread.svg")
print("wrote", out / "spread.svg")
