"""scikit-learn style front end: fit a trajectory generator on expert scenes."""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import env as envmod
from . import metrics
from .data import Scene, Track
from .gail import IterationReport, TrainConfig, Trainer

# estimator keyword -> TrainConfig field; None means "keep the base config value"
_KNOBS = ("hidden_size", "n_components", "num_layers", "iterations", "horizon",
          "rollouts_per_iter", "optimizer", "lr_policy", "lr_value", "lr_disc",
          "use_ppo", "use_wgan_gp")


def check_scenes(X) -> list[Scene]:
    """Accept one scene or an iterable of scenes; reject anything else."""
    if isinstance(X, Scene):
        return [X]
    try:
        scenes = list(X)
    except TypeError:
        raise TypeError(f"expected a Scene or a list of scenes, got {type(X).__name__}") from None
    if not scenes:
        raise ValueError("no scenes given")
    for s in scenes:
        if not isinstance(s, Scene):
            raise TypeError(f"expected Scene objects, got {type(s).__name__}")
    return scenes


def sample_starts(scene: Scene, count: int, horizon: int, rng: np.random.Generator):
    """Uniformly drawn (vehicle, frame) pairs whose horizon fits in the scene."""
    pool = [(vid, int(f)) for vid in scene.vehicle_ids for f in scene.tracks[vid].frames
            if f + horizon <= scene.last_frame]
    if not pool:
        raise envmod.EnvError(f"scene too short for horizon {horizon}")
    idx = rng.integers(0, len(pool), size=count)
    return [pool[i][0] for i in idx], [pool[i][1] for i in idx]


def tiled_starts(scene: Scene, horizon: int):
    """Back-to-back windows along every track (deterministic evaluation set)."""
    ids, frames = [], []
    for vid in scene.vehicle_ids:
        track = scene.tracks[vid]
        f = int(track.frames[0])
        while f + horizon <= min(int(track.frames[-1]), scene.last_frame):
            ids.append(vid)
            frames.append(f)
            f += horizon
    if not ids:
        raise envmod.EnvError(f"scene too short for horizon {horizon}")
    return ids, frames


def rollout_scene(ro: envmod.Rollout, scene: Scene, first_id: int | None = None) -> Scene:
    """Generated trajectories as a scene; every rollout gets a fresh vehicle id."""
    next_id = (max(scene.vehicle_ids) + 1) if first_id is None else first_id
    tracks = {}
    for b in range(len(ro)):
        pos = ro.positions[b]
        frames = ro.start_frames[b] + np.arange(len(pos), dtype=np.int64)
        lanes = np.array([scene.lane_of(float(y)) for y in pos[:, 1]], dtype=np.int64)
        vid = next_id + b
        tracks[vid] = Track(vid, frames, pos[:, 0].copy(), pos[:, 1].copy(), lanes)
    return Scene(scene.scene_id, tracks, scene.dt, scene.n_lanes, scene.lane_width, {})


class TrajectoryGAIL(BaseEstimator):
    """Adversarially trained generator of ego trajectories.

    ``config`` supplies every training setting; the explicit keywords, when
    not ``None``, override the matching field.  ``fit`` takes a scene or a
    list of scenes.
    """

    def __init__(self, config: TrainConfig | None = None, hidden_size=None, n_components=None,
                 num_layers=None, iterations=None, horizon=None, rollouts_per_iter=None,
                 optimizer=None, lr_policy=None, lr_value=None, lr_disc=None, use_ppo=None,
                 use_wgan_gp=None, random_state=None, callback=None):
        self.config = config
        self.hidden_size = hidden_size
        self.n_components = n_components
        self.num_layers = num_layers
        self.iterations = iterations
        self.horizon = horizon
        self.rollouts_per_iter = rollouts_per_iter
        self.optimizer = optimizer
        self.lr_policy = lr_policy
        self.lr_value = lr_value
        self.lr_disc = lr_disc
        self.use_ppo = use_ppo
        self.use_wgan_gp = use_wgan_gp
        self.random_state = random_state
        self.callback = callback

    def resolved_config(self) -> TrainConfig:
        base = self.config if self.config is not None else TrainConfig()
        changes = {k: getattr(self, k) for k in _KNOBS if getattr(self, k) is not None}
        if self.random_state is not None:
            changes["seed"] = int(self.random_state)
        return dataclasses.replace(base, **changes).validate()

    def _start(self, scenes):
        cfg = self.resolved_config()
        self.trainer_ = Trainer(cfg, scenes, np.random.default_rng(cfg.seed))
        self.history_: list[IterationReport] = []
        self.n_iter_ = 0

    def fit(self, X, y=None):
        scenes = check_scenes(X)
        self._start(scenes)
        for _ in range(self.trainer_.cfg.iterations):
            self._one()
        return self

    def partial_fit(self, X, y=None):
        """Run a single iteration, creating the trainer on first call."""
        if not hasattr(self, "trainer_"):
            self._start(check_scenes(X))
        self._one()
        return self

    def _one(self):
        rep = self.trainer_.train_iteration()
        self.history_.append(rep)
        self.n_iter_ += 1
        if self.callback is not None:
            self.callback(self, rep)

    def generate(self, scene: Scene, count: int = 16, horizon: int | None = None,
                 random_state=None, starts=None) -> envmod.Rollout:
        """Roll the fitted policy out from logged states of ``scene``."""
        check_is_fitted(self, "trainer_")
        tr = self.trainer_
        horizon = horizon or tr.cfg.horizon
        rng = np.random.default_rng(random_state)
        ids, frames = starts if starts is not None else sample_starts(scene, count, horizon, rng)
        return envmod.rollout(tr.nets.policy, scene, ids, frames, horizon, rng,
                              tr.obs_scaler, tr.cfg.action_cap)

    def predict(self, X, random_state=None) -> list[Scene]:
        """One generated scene per input scene, covering it with back-to-back windows."""
        check_is_fitted(self, "trainer_")
        out = []
        for s in check_scenes(X):
            ro = self.generate(s, horizon=self.trainer_.cfg.horizon, random_state=random_state,
                               starts=tiled_starts(s, self.trainer_.cfg.horizon))
            out.append(rollout_scene(ro, s))
        return out

    def score(self, X, y=None, feature: str = "speed", random_state=0) -> float:
        """Negative MMD between generated and logged ``feature`` marginals (higher is better)."""
        scenes = check_scenes(X)
        gen, ref = [], []
        for s, g in zip(scenes, self.predict(scenes, random_state)):
            gen += [g.tracks[v].positions() for v in g.vehicle_ids]
            ref += [s.tracks[v].positions() for v in s.vehicle_ids]
        dt = scenes[0].dt
        return -metrics.mmd(metrics.feature_marginals(gen, dt)[feature],
                            metrics.feature_marginals(ref, dt)[feature])
