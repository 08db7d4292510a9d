"""Model-based task similarity along a damping ladder and for a flipped reward.

    python3 demos/similarity_ladder.py
"""
from xferlab.envs import EnvSpec
from xferlab.tasksim import ModelConfig, similarity_ladder

targets = {f"damping {d}x": EnvSpec(damping=float(d)) for d in (1, 2, 3, 4)}
targets["reward flipped"] = EnvSpec(reward_scale=-1.0)
reports = similarity_ladder(EnvSpec(), targets, m=2000, seed=0, cfg=ModelConfig(epochs=60), fit_targets=False)
for name, rep in reports.items():
    print(f"{name:15s} Xi_P {rep.dyn_similarity:.4f}   Xi_R {rep.rew_similarity:.4f}")
