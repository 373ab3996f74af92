"""Context-aware trajectory generation by adversarial imitation learning.

Modules: ``diffcore`` (reverse-mode autodiff), ``nets`` (GRU / mixture
networks), ``env`` (driving environment), ``data`` (scenes, CSV, IDM
synthesis), ``gail`` (critic, PPO, GAE, trainer), ``metrics`` (MMD, WD,
KL, JS) and ``cli``.
"""

from .data import Scene, SynthConfig, load_trajectories, synth_experts
from .estimator import TrajectoryGAIL
from .gail import TrainConfig, Trainer
from .metrics import MetricReport, evaluate

__version__ = "0.1.0"

__all__ = ["Scene", "SynthConfig", "TrainConfig", "Trainer", "TrajectoryGAIL", "MetricReport",
           "evaluate", "load_trajectories", "synth_experts"]
