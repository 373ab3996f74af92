"""Versioned JSON checkpoints.

Floats are written with ``repr`` precision, so a load followed by a save
reproduces every parameter value exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import ObservationScaler
from .gail import Nets, TrainConfig, Trainer

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _array_doc(a) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "values": [float(x) for x in a.ravel()]}


def _array_load(doc) -> np.ndarray:
    try:
        return np.asarray(doc["values"], dtype=np.float64).reshape(doc["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed array entry: {exc}") from None


def _scaler_doc(s: ObservationScaler) -> dict:
    return {"min_std": s.min_std, "mean": _array_doc(s.mean_), "scale": _array_doc(s.scale_)}


def _scaler_load(doc) -> ObservationScaler:
    s = ObservationScaler(min_std=float(doc["min_std"]))
    s.mean_ = _array_load(doc["mean"])
    s.scale_ = _array_load(doc["scale"])
    s.n_features_in_ = len(s.mean_)
    return s


def _optim_doc(state: dict) -> dict:
    if not state:
        return {}
    return {"t": state["t"], "m": [_array_doc(x) for x in state["m"]],
            "v": [_array_doc(x) for x in state["v"]]}


def _optim_load(doc) -> dict:
    if not doc:
        return {}
    return {"t": doc["t"], "m": [_array_load(x) for x in doc["m"]],
            "v": [_array_load(x) for x in doc["v"]]}


def _frame_load(doc) -> tuple:
    gain = doc.get("obs_gain")
    return (_array_load(doc["loc"]), _array_load(doc["unit"]),
            None if gain is None else _array_load(gain))


@dataclass
class Checkpoint:
    config: TrainConfig
    obs_dim: int
    n_lanes: int
    obs_scaler: ObservationScaler
    action_scaler: ObservationScaler
    params: dict[str, np.ndarray]
    action_frame: tuple  # (loc, unit, obs_gain or None)
    iteration: int = 0
    rng_state: dict | None = None
    optimizers: dict = field(default_factory=dict)

    @classmethod
    def from_trainer(cls, tr: Trainer) -> "Checkpoint":
        head = tr.nets.policy.head
        return cls(
            config=tr.cfg,
            obs_dim=tr.obs_dim,
            n_lanes=tr.n_lanes,
            obs_scaler=tr.obs_scaler,
            action_scaler=tr.action_scaler,
            params=tr.nets.state_dict(),
            action_frame=(head.action_loc.copy(), head.action_unit.copy(),
                          None if head.obs_gain is None else head.obs_gain.copy()),
            iteration=tr.iteration,
            rng_state=tr.rng.bit_generator.state,
            optimizers={"policy": tr.opt_policy.state_dict(), "value": tr.opt_value.state_dict(),
                        "disc": tr.opt_disc.state_dict()},
        )

    def build_nets(self) -> Nets:
        nets = Nets.build(self.config, self.obs_dim, np.random.default_rng(0))
        try:
            nets.load_state_dict(self.params)
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"parameters do not match the stored config: {exc}") from None
        nets.policy.head.set_action_frame(*self.action_frame)
        return nets

    def restore(self, tr: Trainer) -> Trainer:
        """Load parameters, optimizer state, RNG and iteration counter into ``tr``."""
        nets = self.build_nets()
        tr.nets.load_state_dict(nets.state_dict())
        tr.nets.policy.head.set_action_frame(*self.action_frame)
        tr.obs_scaler, tr.action_scaler = self.obs_scaler, self.action_scaler
        for name, opt in (("policy", tr.opt_policy), ("value", tr.opt_value), ("disc", tr.opt_disc)):
            state = self.optimizers.get(name)
            if state:
                opt.load_state_dict(state)
        if self.rng_state is not None:
            tr.rng.bit_generator.state = self.rng_state
        tr.iteration = self.iteration
        return tr

    def to_document(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "config": self.config.to_dict(),
            "obs_dim": self.obs_dim,
            "n_lanes": self.n_lanes,
            "standardization": {"observation": _scaler_doc(self.obs_scaler),
                                "action": _scaler_doc(self.action_scaler)},
            "action_frame": {"loc": _array_doc(self.action_frame[0]),
                             "unit": _array_doc(self.action_frame[1]),
                             "obs_gain": (None if self.action_frame[2] is None
                                          else _array_doc(self.action_frame[2]))},
            "params": {k: _array_doc(v) for k, v in self.params.items()},
            "optimizers": {k: _optim_doc(v) for k, v in self.optimizers.items()},
            "iteration": self.iteration,
            "rng_state": self.rng_state,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_document(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Checkpoint":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"not a checkpoint document: {exc}") from None
        version = doc.get("format_version") if isinstance(doc, dict) else None
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format version {version!r} "
                                  f"(expected {FORMAT_VERSION})")
        try:
            std = doc["standardization"]
            return cls(
                config=TrainConfig.from_dict(doc["config"]).validate(),
                obs_dim=int(doc["obs_dim"]),
                n_lanes=int(doc["n_lanes"]),
                obs_scaler=_scaler_load(std["observation"]),
                action_scaler=_scaler_load(std["action"]),
                params={k: _array_load(v) for k, v in doc["params"].items()},
                action_frame=_frame_load(doc["action_frame"]),
                iteration=int(doc["iteration"]),
                rng_state=doc.get("rng_state"),
                optimizers={k: _optim_load(v) for k, v in doc.get("optimizers", {}).items()},
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, CheckpointError):
                raise
            raise CheckpointError(f"malformed checkpoint: {exc!r}") from None


def save_checkpoint(path, ck: Checkpoint) -> None:
    Path(path).write_text(ck.dumps())


def load_checkpoint(path) -> Checkpoint:
    p = Path(path)
    if not p.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return Checkpoint.loads(p.read_text())
