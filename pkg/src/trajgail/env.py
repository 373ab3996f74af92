"""Deterministic driving environment for one policy-controlled ego vehicle.

The ego state is ``[x, y, vx, vy, ax, ay]``.  An action is a displacement
``[dx, dy]`` for one frame; velocity and acceleration follow as finite
differences.  Surrounding vehicles are replayed from the scene log and
encoded into six template slots around the ego.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Protocol

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

if TYPE_CHECKING:
    from .data import Scene

EGO_DIM = 6
N_SLOTS = 6
NEIGHBOR_DIM = 5
ROI_RANGE = 50.0
ACTION_CAP = 5.0
DT = 0.1

# (lane offset, direction) per row; +1 lane is to the left of +x travel
SLOTS = (
    (+1, "lead"),
    (+1, "follow"),
    (0, "lead"),
    (0, "follow"),
    (-1, "lead"),
    (-1, "follow"),
)


class EnvError(ValueError):
    pass


def step(state, action, dt: float = DT, cap: float = ACTION_CAP) -> np.ndarray:
    """Apply a displacement action to an ego state."""
    s = np.asarray(state, dtype=np.float64)
    a = np.asarray(action, dtype=np.float64)
    if not dt > 0:
        raise EnvError("dt must be positive")
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a))):
        raise EnvError("non-finite state or action")
    if np.any(np.abs(a) > cap):
        raise EnvError(f"action {a.tolist()} exceeds displacement cap {cap}")
    vx, vy = a[0] / dt, a[1] / dt
    return np.array([s[0] + a[0], s[1] + a[1], vx, vy, (vx - s[2]) / dt, (vy - s[3]) / dt])


def kinematics_from_positions(pos: np.ndarray, dt: float) -> np.ndarray:
    """Ego-state rows for a position sequence, consistent with :func:`step`."""
    pos = np.asarray(pos, dtype=np.float64)
    n = len(pos)
    out = np.zeros((n, EGO_DIM))
    out[:, :2] = pos
    if n < 2:
        return out
    d = np.diff(pos, axis=0) / dt
    out[1:, 2:4] = d
    out[0, 2:4] = d[0]
    out[1:, 4:6] = np.diff(out[:, 2:4], axis=0) / dt
    return out


def sentinel_rows() -> np.ndarray:
    rows = np.zeros((N_SLOTS, NEIGHBOR_DIM))
    for i, (_, direction) in enumerate(SLOTS):
        rows[i, 0] = ROI_RANGE if direction == "lead" else -ROI_RANGE
    return rows


def neighbor_matrix(ego, ego_lane: int, others: np.ndarray, other_lanes: np.ndarray,
                    roi: float = ROI_RANGE) -> np.ndarray:
    """Fill the six template slots from candidate kinematic rows ``others``."""
    V = sentinel_rows()
    if len(others) == 0:
        return V
    ego = np.asarray(ego, dtype=np.float64)
    dx = others[:, 0] - ego[0]
    offset = other_lanes - ego_lane
    in_range = np.abs(dx) <= roi
    for i, (lane_off, direction) in enumerate(SLOTS):
        ahead = dx >= 0 if direction == "lead" else dx < 0
        mask = in_range & (offset == lane_off) & ahead
        if not mask.any():
            continue
        cand = np.flatnonzero(mask)
        j = cand[np.argmin(np.abs(dx[cand]))]
        V[i] = (
            dx[j],
            others[j, 1] - ego[1],
            others[j, 2] - ego[2],
            others[j, 3] - ego[3],
            1.0,
        )
    return V


def extract_neighbors(scene: "Scene", ego_id: int, frame: int, ego_state=None,
                      ego_lane: int | None = None) -> np.ndarray:
    """Neighbor matrix for vehicle ``ego_id`` at ``frame``.

    ``ego_state``/``ego_lane`` override the logged ego (used while the ego is
    policy-driven); the logged ego track is always excluded from candidates.
    """
    if ego_state is None:
        ego_state = scene.ego_state(ego_id, frame)
        track = scene.tracks[ego_id]
        ego_lane = int(track.lane[track.index_of(frame)])
    elif ego_lane is None:
        ego_lane = scene.lane_of(float(ego_state[1]))
    ids, kin, lanes = scene.vehicles_at(frame)
    keep = ids != ego_id
    return neighbor_matrix(ego_state, ego_lane, kin[keep], lanes[keep])


def lane_one_hot(lane: int, n_lanes: int) -> np.ndarray:
    if not 0 <= lane < n_lanes:
        raise EnvError(f"lane {lane} outside [0, {n_lanes})")
    v = np.zeros(n_lanes)
    v[lane] = 1.0
    return v


def obs_size(n_lanes: int) -> int:
    return EGO_DIM + N_SLOTS * NEIGHBOR_DIM + n_lanes


def assemble_observation(z, V, lane, scaler: "ObservationScaler | None" = None) -> np.ndarray:
    """Concatenate ego state, row-major neighbor matrix and lane one-hot."""
    obs = np.concatenate([np.asarray(z, float).ravel(), np.asarray(V, float).ravel(),
                          np.asarray(lane, float).ravel()])
    if scaler is not None:
        obs = scaler.transform(obs[None, :])[0]
    return obs


def split_observation(obs, n_lanes: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    obs = np.asarray(obs)
    z = obs[:EGO_DIM]
    V = obs[EGO_DIM : EGO_DIM + N_SLOTS * NEIGHBOR_DIM].reshape(N_SLOTS, NEIGHBOR_DIM)
    lane = obs[EGO_DIM + N_SLOTS * NEIGHBOR_DIM :]
    if len(lane) != n_lanes:
        raise EnvError(f"observation has {len(lane)} lane entries, expected {n_lanes}")
    return z, V, lane


def expert_observations(scene: "Scene", ego_id: int, scaler=None) -> np.ndarray:
    """Raw (or scaled) observations along a logged track, one row per frame."""
    track = scene.tracks[ego_id]
    rows = []
    for i, f in enumerate(track.frames):
        z = scene.ego_state(ego_id, int(f))
        lane = int(track.lane[i])
        V = extract_neighbors(scene, ego_id, int(f))
        rows.append(assemble_observation(z, V, lane_one_hot(lane, scene.n_lanes)))
    obs = np.array(rows)
    return scaler.transform(obs) if scaler is not None else obs


class ObservationScaler(TransformerMixin, BaseEstimator):
    """Per-feature affine standardization fitted on expert rows.

    Features whose spread is below ``min_std`` are only centered.
    """

    def __init__(self, min_std: float = 1e-6):
        self.min_std = min_std

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale_ = np.where(std < self.min_std, 1.0, std)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, ["mean_", "scale_"])
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, ["mean_", "scale_"])
        return np.asarray(X, dtype=np.float64) * self.scale_ + self.mean_


class Policy(Protocol):
    def begin(self, batch: int): ...

    def act(self, obs: np.ndarray, state, rng: np.random.Generator, cap: float):
        """Return ``(actions (B, 2) within cap, log-probs (B,), new state)``."""


@dataclass
class Rollout:
    """Batched generated trajectories plus the per-step buffer records.

    ``positions`` is ``(B, T + 1, 2)`` including the start position.
    Observations are in the scaled space when a scaler was given.
    """

    ego_ids: list[int]
    start_frames: list[int]
    positions: np.ndarray
    states: np.ndarray
    obs: np.ndarray
    actions: np.ndarray
    next_obs: np.ndarray
    log_probs: np.ndarray
    extras: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]

    def __len__(self):
        return self.actions.shape[0]


def rollout(policy, scene: "Scene", ego_ids, start_frames, horizon: int,
            rng: np.random.Generator, scaler: ObservationScaler | None = None,
            cap: float = ACTION_CAP) -> Rollout:
    """Drive each ego from its logged state at ``start_frame`` for ``horizon`` steps.

    The policy must keep actions within the displacement cap; the executed
    action is what gets recorded and scored.
    """
    if np.isscalar(ego_ids):
        ego_ids, start_frames = [int(ego_ids)], [int(start_frames)]
    ego_ids = [int(v) for v in ego_ids]
    start_frames = [int(f) for f in start_frames]
    if horizon < 1:
        raise EnvError("horizon must be at least 1")
    if len(ego_ids) != len(start_frames) or not ego_ids:
        raise EnvError("need one start frame per ego")
    last = scene.last_frame
    for f in start_frames:
        if f + horizon > last:
            raise EnvError(f"scene too short: frame {f} + horizon {horizon} > last frame {last}")
    B, T = len(ego_ids), horizon
    D = obs_size(scene.n_lanes)
    dt = scene.dt

    states = np.zeros((B, T + 1, EGO_DIM))
    raw_obs = np.zeros((B, T + 1, D))
    actions = np.zeros((B, T, 2))
    logp = np.zeros((B, T))

    def observe(b: int, k: int) -> np.ndarray:
        s = states[b, k]
        lane = scene.lane_of(float(s[1]))
        V = extract_neighbors(scene, ego_ids[b], start_frames[b] + k, ego_state=s, ego_lane=lane)
        return assemble_observation(s, V, lane_one_hot(lane, scene.n_lanes))

    def scaled(x: np.ndarray) -> np.ndarray:
        return scaler.transform(x) if scaler is not None else x

    for b in range(B):
        states[b, 0] = scene.ego_state(ego_ids[b], start_frames[b])
        raw_obs[b, 0] = observe(b, 0)

    pstate = policy.begin(B)
    for k in range(T):
        obs_k = scaled(raw_obs[:, k])
        a, lp, pstate = policy.act(obs_k, pstate, rng, cap)
        a = np.asarray(a, dtype=np.float64).reshape(B, 2)
        logp[:, k] = lp
        actions[:, k] = a
        for b in range(B):
            states[b, k + 1] = step(states[b, k], a[b], dt, cap)
            raw_obs[b, k + 1] = observe(b, k + 1)

    obs_all = scaled(raw_obs.reshape(B * (T + 1), D)).reshape(B, T + 1, D)
    return Rollout(
        ego_ids=ego_ids,
        start_frames=start_frames,
        positions=states[:, :, :2].copy(),
        states=states,
        obs=obs_all[:, :T],
        actions=actions,
        next_obs=obs_all[:, 1:],
        log_probs=logp,
    )
