"""Q-value transfer on the four-room grid: how much does starting from the
source task's optimal values help on two shifted layouts?

    python3 demos/four_room.py
"""
import numpy as np

from xferlab.mdp import render_layout
from xferlab.toy import ToyConfig, run_toy

res = run_toy(ToyConfig(seeds=tuple(range(5))))
print("source layout:\n" + render_layout(res.source_grid))
for name, tgt in res.targets.items():
    tau = tgt.tau.tau[:res.config.window]
    print(f"{name}: mean tau over the first {len(tau)} evaluations {tau.mean():+.3f}, "
          f"nonnegative on {np.mean(tau >= 0):.0%}")
    print(render_layout(tgt.grid))
print(res.window_stats())
