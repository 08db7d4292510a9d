"""Transfer reinforcement learning at desk scale.

Modules: ``mdp`` (exact tabular tools), ``nn`` (autodiff, MLPs, Adam,
Gaussian policies), ``envs`` (point-mass tasks), ``sac``, ``apt`` (advantage
weighted transfer), ``tasksim`` (model-based task similarity),
``evaluation`` and ``toy`` (relative transfer performance), ``cli``.
"""

__version__ = "0.1.0"
