"""Short point-mass transfer run: a source policy trained on the nominal
task is carried to a target with doubled damping, with and without the
advantage-weighted regulariser.

Takes about two minutes on one core.

    python3 demos/point_mass_transfer.py
"""
import numpy as np

from xferlab.apt import train_apt
from xferlab.envs import EnvSpec
from xferlab.evaluation import auc, relative_transfer
from xferlab.experiments import train_source
from xferlab.sac import AlgoConfig, evaluate, train_sac

cfg = AlgoConfig(total_steps=4000, hidden_size=64, eval_interval=500)
source_env, target_env = EnvSpec(), EnvSpec(damping=2.0)

source = train_source(source_env, cfg, 10_000, seed=100)
print(f"source policy: {evaluate(source, source_env, 10, 0)[0]:.1f} on the source, "
      f"{evaluate(source, target_env, 10, 0)[0]:.1f} zero-shot on the target")

apt = train_apt(source, target_env, cfg, seed=0)
scratch = train_sac(target_env, cfg, seed=0, algo_id="scratch")
for tr in (apt.trace, scratch.trace):
    print(f"{tr.algo_id:8s} returns {np.round(tr.rho, 1).tolist()}  AUC {auc(tr):.0f}")
print("beta per evaluation window:", np.round(apt.trace.beta, 3).tolist())
print("tau:", np.round(relative_transfer(apt.trace, scratch.trace).tau, 1).tolist())
