"""Adversarial imitation training: critic objectives, rewards, GAE, PPO.

The loss functions operate on diffcore tensors so they can be composed and
differentiated; the :class:`Trainer` wires them into one iteration of
rollout collection, critic updates and policy/value updates.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from . import diffcore as dc
from . import env as envmod
from .diffcore import Tensor
from .nets import DiscriminatorNet, PolicyNet, ValueNet, entropy_estimate


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    # learning rates and objective weights
    lr_policy: float = 5e-5
    lr_value: float = 1e-4
    lr_disc: float = 1e-8
    ppo_epsilon: float = 0.2
    clip_mode: str = "halfwidth"  # "halfwidth": [1-eps, 1+eps]; "bounds": [clip_low, clip_high]
    clip_low: float = 0.95
    clip_high: float = 1.01
    gp_coefficient: float = 1.0
    gae_gamma: float = 0.99
    gae_lambda: float = 0.95
    c1: float = 0.5
    c2: float = 0.01
    # networks
    n_components: int = 3
    hidden_size: int = 32
    num_layers: int = 1
    mlp_size: int = 64
    sigma_min: float = 1e-3
    # schedule
    iterations: int = 300
    horizon: int = 64
    rollouts_per_iter: int = 8
    disc_updates: int = 5
    ppo_epochs: int = 4
    expert_stride: int = 16
    checkpoint_every: int = 50
    # switches
    use_ppo: bool = True
    use_wgan_gp: bool = True
    optimizer: str = "sgd"
    adam_betas: tuple = (0.9, 0.999)
    max_grad_norm: float = 0.0
    normalize_advantages: bool = True
    normalize_rewards: bool = False
    action_frame: str = "none"  # "velocity": mixture means offset by the current-velocity displacement
    action_unit: float = 0.05
    critic_orientation: str = "cost"
    action_cap: float = envmod.ACTION_CAP
    seed: int = 0

    def validate(self) -> "TrainConfig":
        for name in ("lr_policy", "lr_value", "lr_disc"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0 <= self.gae_gamma <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_gamma and gae_lambda must lie in [0, 1]")
        if not self.ppo_epsilon > 0:
            raise ValueError("ppo_epsilon must be positive")
        if self.clip_mode not in ("halfwidth", "bounds"):
            raise ValueError(f"unknown clip_mode {self.clip_mode!r}")
        if self.clip_mode == "bounds" and not 0 < self.clip_low <= self.clip_high:
            raise ValueError("clip bounds must satisfy 0 < clip_low <= clip_high")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.critic_orientation not in ("cost", "literal"):
            raise ValueError(f"unknown critic_orientation {self.critic_orientation!r}")
        if self.action_frame not in ("none", "velocity"):
            raise ValueError(f"unknown action_frame {self.action_frame!r}")
        if not self.action_unit > 0:
            raise ValueError("action_unit must be positive")
        if self.gp_coefficient < 0:
            raise ValueError("gp_coefficient must be nonnegative")
        for name in ("n_components", "hidden_size", "num_layers", "horizon",
                     "rollouts_per_iter", "ppo_epochs", "expert_stride", "mlp_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.iterations < 0 or self.disc_updates < 0:
            raise ValueError("iterations and disc_updates must be nonnegative")
        return self

    def clip_bounds(self) -> tuple[float, float]:
        if self.clip_mode == "bounds":
            return self.clip_low, self.clip_high
        return 1.0 - self.ppo_epsilon, 1.0 + self.ppo_epsilon

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown training keys: {sorted(unknown)}")
        d = dict(d)
        if "adam_betas" in d:
            d["adam_betas"] = tuple(d["adam_betas"])
        return cls(**d)


# ------------------------------------------------------------ pure objectives


def gae(rewards, values, gamma: float, lam: float) -> np.ndarray:
    """Advantages by the backward recursion ``A_t = delta_t + gamma*lam*A_{t+1}``.

    ``values`` carries one more entry than ``rewards``: the value of the state
    after the last step (0 at an episode end).
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if v.shape[-1] != r.shape[-1] + 1:
        raise ValueError(f"values length {v.shape[-1]} must be rewards length {r.shape[-1]} + 1")
    delta = r + gamma * v[..., 1:] - v[..., :-1]
    adv = np.zeros_like(delta)
    acc = np.zeros(delta.shape[:-1])
    for t in range(delta.shape[-1] - 1, -1, -1):
        acc = delta[..., t] + gamma * lam * acc
        adv[..., t] = acc
    return adv


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    """Per-step ``sum_l gamma^l r_{t+l}`` to the end of each row."""
    r = np.asarray(rewards, dtype=np.float64)
    out = np.zeros_like(r)
    acc = np.zeros(r.shape[:-1])
    for t in range(r.shape[-1] - 1, -1, -1):
        acc = r[..., t] + gamma * acc
        out[..., t] = acc
    return out


def ppo_policy_loss(logp_new, logp_old, advantages, epsilon: float = 0.2,
                    bounds: tuple[float, float] | None = None) -> Tensor:
    """Clipped surrogate, negated so it is minimized."""
    logp_new = dc.as_tensor(logp_new)
    logp_old = np.asarray(dc.as_tensor(logp_old).data)
    adv = np.asarray(dc.as_tensor(advantages).data)
    if logp_new.shape != logp_old.shape or logp_new.shape != adv.shape:
        raise ValueError("logp_new, logp_old and advantages must have equal shapes")
    lo, hi = bounds if bounds is not None else (1.0 - epsilon, 1.0 + epsilon)
    ratio = dc.exp(logp_new - logp_old)
    A = Tensor(adv)
    surrogate = dc.minimum(ratio * A, dc.clamp(ratio, lo, hi) * A)
    return dc.neg(dc.mean(surrogate))


def unclipped_policy_loss(logp_new, logp_old, advantages) -> Tensor:
    ratio = dc.exp(dc.as_tensor(logp_new) - np.asarray(dc.as_tensor(logp_old).data))
    return dc.neg(dc.mean(ratio * Tensor(np.asarray(dc.as_tensor(advantages).data))))


def value_targets(rewards, gamma: float, boundaries=None) -> np.ndarray:
    """Discounted reward-to-go, restarted at each trajectory boundary.

    ``boundaries`` are start indices into a flat reward array; without them
    each row of a 2-D array (or the whole 1-D array) is one trajectory.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if boundaries is None:
        return discounted_returns(r, gamma)
    edges = list(boundaries) + [len(r)]
    out = np.zeros_like(r)
    for a, b in zip(edges[:-1], edges[1:]):
        out[a:b] = discounted_returns(r[a:b], gamma)
    return out


def value_loss(values, rewards, gamma: float, boundaries=None) -> Tensor:
    targets = value_targets(rewards, gamma, boundaries)
    v = dc.as_tensor(values)
    return dc.mean(dc.square(v - targets))


def total_loss(policy_loss, value_loss_, entropy, c1: float, c2: float):
    """``policy + c1 * value - c2 * entropy``; works on floats or tensors."""
    if isinstance(policy_loss, Tensor) or isinstance(value_loss_, Tensor) or isinstance(entropy, Tensor):
        return dc.as_tensor(policy_loss) + dc.scale(value_loss_, c1) - dc.scale(entropy, c2)
    return policy_loss + c1 * value_loss_ - c2 * entropy


def _pair_indices(n_exp: int, n_gen: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n = min(n_exp, n_gen)
    return rng.permutation(n_exp)[:n], rng.permutation(n_gen)[:n]


def gradient_penalty(D: Callable[[Tensor], Tensor], expert: np.ndarray, generated: np.ndarray,
                     rng: np.random.Generator) -> Tensor:
    """mean over interpolated steps of (||grad_x D(x)||_2 - 1)^2, differentiable in D's parameters.

    Samples are paired by a random matching truncated to the smaller set;
    each pair is mixed with one ``u ~ U(0, 1)``.  The norm is taken per step
    over the concatenated (state, action) features.
    """
    ie, ig = _pair_indices(len(expert), len(generated), rng)
    u = rng.random(len(ie)).reshape((-1,) + (1,) * (expert.ndim - 1))
    x_hat = Tensor(u * expert[ie] + (1.0 - u) * generated[ig], requires_grad=True)
    scores = D(x_hat)
    (g,) = dc.grad(dc.sum(scores), [x_hat], create_graph=True)
    norms = dc.norm(g, axis=-1)
    return dc.mean(dc.square(norms - 1.0))


def wgan_gp_disc_loss(D: Callable[[Tensor], Tensor], expert, generated, lam: float,
                      rng: np.random.Generator, parts: bool = False):
    """E_gen[D] - E_exp[D] + lam * gradient penalty.

    ``expert``/``generated`` are ``(N, T, F)`` concatenated state-action
    sequences.  With ``parts`` the (score term, penalty) tensors are returned
    alongside the total.
    """
    expert = np.asarray(expert, dtype=np.float64)
    generated = np.asarray(generated, dtype=np.float64)
    if len(expert) == 0 or len(generated) == 0:
        raise ValueError("wgan_gp_disc_loss: empty expert or generated set")
    if lam < 0:
        raise ValueError("gradient penalty coefficient must be nonnegative")
    score_term = dc.mean(D(Tensor(generated))) - dc.mean(D(Tensor(expert)))
    if lam > 0:
        penalty = gradient_penalty(D, expert, generated, rng)
        total = score_term + dc.scale(penalty, lam)
    else:
        penalty = Tensor(0.0)
        total = score_term + 0.0
    if parts:
        return total, score_term, penalty
    return total


def bce_disc_loss(D: Callable[[Tensor], Tensor], expert, generated) -> Tensor:
    """-mean log sigmoid(D(expert)) - mean log(1 - sigmoid(D(generated)))."""
    expert = np.asarray(expert, dtype=np.float64)
    generated = np.asarray(generated, dtype=np.float64)
    if len(expert) == 0 or len(generated) == 0:
        raise ValueError("bce_disc_loss: empty expert or generated set")
    # -log sigmoid(x) = softplus(-x);  -log(1 - sigmoid(x)) = softplus(x)
    return dc.mean(dc.softplus(dc.neg(D(Tensor(expert))))) + dc.mean(dc.softplus(D(Tensor(generated))))


def reward_from_score(score, mode: str = "wgan"):
    s = np.asarray(score, dtype=np.float64)
    if mode == "wgan":
        return -s
    if mode == "bce":
        sig = 0.5 * (1.0 + np.tanh(0.5 * s))
        return -np.log(1.0 - sig + 1e-8)
    raise ValueError(f"unknown reward mode {mode!r}")


# --------------------------------------------------------------- optimizers


class SGD:
    def __init__(self, params: list[Tensor], lr: float):
        self.params = params
        self.lr = lr

    def step(self, grads: list[Tensor]) -> None:
        for p, g in zip(self.params, grads):
            p.data = p.data - self.lr * g.data

    def state_dict(self) -> dict:
        return {}

    def load_state_dict(self, state: dict) -> None:
        pass


class Adam:
    def __init__(self, params: list[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(p.shape) for p in params]
        self.v = [np.zeros(p.shape) for p in params]

    def step(self, grads: list[Tensor]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g.data
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g.data**2
            update = (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.data = p.data - self.lr * update

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v]}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = [np.asarray(m, dtype=np.float64).reshape(p.shape) for m, p in zip(state["m"], self.params)]
        self.v = [np.asarray(v, dtype=np.float64).reshape(p.shape) for v, p in zip(state["v"], self.params)]


def make_optimizer(cfg: TrainConfig, params: list[Tensor], lr: float):
    if cfg.optimizer == "adam":
        return Adam(params, lr, cfg.adam_betas)
    return SGD(params, lr)


def clip_grad_norm(grads: list[Tensor], max_norm: float) -> list[Tensor]:
    if max_norm <= 0:
        return grads
    total = math.sqrt(float(np.sum([np.sum(g.data**2) for g in grads])))
    if total <= max_norm:
        return grads
    k = max_norm / total
    return [Tensor(g.data * k) for g in grads]


# ------------------------------------------------------------------- buffer


@dataclass
class RolloutBuffer:
    """Per-step training records, stored as ``(B, T, ...)`` arrays.

    Each row is one trajectory, so boundaries fall every ``T`` steps of the
    flattened index.
    """

    obs: np.ndarray
    actions: np.ndarray
    next_obs: np.ndarray
    logp_old: np.ndarray
    logp_new: np.ndarray | None = None
    rewards: np.ndarray | None = None
    values: np.ndarray | None = None
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @classmethod
    def from_rollout(cls, ro: envmod.Rollout) -> "RolloutBuffer":
        return cls(ro.obs.copy(), ro.actions.copy(), ro.next_obs.copy(),
                   ro.log_probs.copy(), ro.log_probs.copy())

    def __len__(self):
        return int(np.prod(self.actions.shape[:2]))

    @property
    def boundaries(self) -> np.ndarray:
        B, T = self.actions.shape[:2]
        return np.arange(B) * T

    def finalize(self, rewards, values, gamma: float, lam: float) -> None:
        """Store rewards and values (with bootstrap column) and fill advantages/targets."""
        B, T = self.actions.shape[:2]
        rewards = np.asarray(rewards, dtype=np.float64).reshape(B, T)
        values = np.asarray(values, dtype=np.float64).reshape(B, T + 1)
        self.rewards = rewards
        self.values = values[:, :T].copy()
        self.advantages = gae(rewards, values, gamma, lam)
        self.returns = discounted_returns(rewards, gamma)

    def check(self) -> None:
        n = self.actions.shape[:2]
        for name in ("obs", "next_obs", "logp_old", "rewards", "values", "advantages", "returns"):
            arr = getattr(self, name)
            if arr is None:
                raise TrainingError(f"buffer field {name} not filled")
            if arr.shape[:2] != n:
                raise TrainingError(f"buffer field {name} has shape {arr.shape}, expected {n}")


# ------------------------------------------------------------------ trainer


@dataclass
class IterationReport:
    iteration: int
    disc_loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    mean_reward: float

    def row(self) -> list:
        return [self.iteration, self.disc_loss, self.policy_loss, self.value_loss, self.entropy, self.mean_reward]


LOSS_HEADER = ["iter", "disc_loss", "policy_loss", "value_loss", "entropy", "mean_reward"]


@dataclass
class ExpertSet:
    """Expert windows aligned with the rollout horizon."""

    obs: np.ndarray  # (N, T, D) scaled
    actions: np.ndarray  # (N, T, 2) raw meters
    starts: list[tuple[int, int, int]] = field(default_factory=list)  # (scene, vehicle, frame)


@dataclass
class Nets:
    policy: PolicyNet
    value: ValueNet
    disc: DiscriminatorNet

    @classmethod
    def build(cls, cfg: TrainConfig, obs_dim: int, rng: np.random.Generator) -> "Nets":
        return cls(
            PolicyNet(obs_dim, cfg.hidden_size, cfg.num_layers, cfg.n_components, rng, cfg.sigma_min),
            ValueNet(obs_dim, cfg.hidden_size, cfg.num_layers, rng),
            DiscriminatorNet(obs_dim + 2, cfg.hidden_size, cfg.num_layers, cfg.mlp_size, rng),
        )

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, net in (("policy", self.policy), ("value", self.value), ("disc", self.disc)):
            out.update({f"{prefix}.{k}": v for k, v in net.state_dict().items()})
        return out

    def load_state_dict(self, state: dict) -> None:
        for prefix, net in (("policy", self.policy), ("value", self.value), ("disc", self.disc)):
            sub = {k[len(prefix) + 1:]: v for k, v in state.items() if k.startswith(prefix + ".")}
            net.load_state_dict(sub)


def velocity_frame(scaler, dt: float, unit: float):
    """Frame whose mean offset is the displacement at the ego's current velocity.

    Observations are standardized, so the raw velocity is ``obs * scale + mean``
    on the velocity columns; the offset is that velocity times ``dt``.
    """
    gain = np.zeros((len(scaler.mean_), 2))
    gain[2, 0] = scaler.scale_[2] * dt
    gain[3, 1] = scaler.scale_[3] * dt
    loc = np.array([scaler.mean_[2], scaler.mean_[3]]) * dt
    return loc, np.full(2, unit), gain


class Trainer:
    """Holds networks, optimizers, scalers and the expert set for one run."""

    def __init__(self, cfg: TrainConfig, scenes: list, rng: np.random.Generator | None = None,
                 obs_scaler=None, action_scaler=None):
        self.cfg = cfg.validate()
        if not scenes:
            raise TrainingError("no scenes to train on")
        self.scenes = list(scenes)
        dts = {float(s.dt) for s in self.scenes}
        if len(dts) != 1:
            raise TrainingError(f"scenes disagree on dt: {sorted(dts)}")
        self.dt = dts.pop()
        self.n_lanes = max(s.n_lanes for s in self.scenes)
        for s in self.scenes:
            s.n_lanes = self.n_lanes
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.obs_dim = envmod.obs_size(self.n_lanes)
        self.obs_scaler = obs_scaler or self._fit_obs_scaler()
        self.action_scaler = action_scaler or self._fit_action_scaler()
        self.experts = self._expert_windows()
        self.starts = self._valid_starts()
        if not self.starts or len(self.experts.obs) == 0:
            raise TrainingError(f"scenes too short for horizon {cfg.horizon}")
        self.nets = Nets.build(cfg, self.obs_dim, self.rng)
        if cfg.action_frame == "velocity":
            self.nets.policy.head.set_action_frame(*velocity_frame(self.obs_scaler, self.dt, cfg.action_unit))
        self.opt_policy = make_optimizer(cfg, self.nets.policy.parameters(), cfg.lr_policy)
        self.opt_value = make_optimizer(cfg, self.nets.value.parameters(), cfg.lr_value)
        self.opt_disc = make_optimizer(cfg, self.nets.disc.parameters(), cfg.lr_disc)
        self.iteration = 0

    # setup
    def _fit_obs_scaler(self):
        rows = [envmod.expert_observations(s, vid) for s in self.scenes for vid in s.vehicle_ids]
        return envmod.ObservationScaler().fit(np.concatenate(rows))

    def _fit_action_scaler(self):
        acts = [np.diff(s.tracks[vid].positions(), axis=0) for s in self.scenes for vid in s.vehicle_ids]
        return envmod.ObservationScaler().fit(np.concatenate(acts))

    def _expert_windows(self) -> ExpertSet:
        T = self.cfg.horizon
        obs, acts, starts = [], [], []
        for si, s in enumerate(self.scenes):
            for vid in s.vehicle_ids:
                track = s.tracks[vid]
                if len(track) < T + 1:
                    continue
                o = envmod.expert_observations(s, vid, self.obs_scaler)
                a = np.diff(track.positions(), axis=0)
                for i in range(0, len(track) - T, self.cfg.expert_stride):
                    obs.append(o[i : i + T])
                    acts.append(a[i : i + T])
                    starts.append((si, vid, int(track.frames[i])))
        D = self.obs_dim
        return ExpertSet(np.array(obs).reshape(-1, T, D), np.array(acts).reshape(-1, T, 2), starts)

    def _valid_starts(self) -> list[tuple[int, int, int]]:
        T = self.cfg.horizon
        out = []
        for si, s in enumerate(self.scenes):
            last = s.last_frame
            for vid in s.vehicle_ids:
                for f in s.tracks[vid].frames:
                    if f + T <= last:
                        out.append((si, vid, int(f)))
        return out

    # pieces of an iteration
    def pairs(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        B, T, _ = actions.shape
        a = self.action_scaler.transform(actions.reshape(B * T, 2)).reshape(B, T, 2)
        return np.concatenate([obs, a], axis=-1)

    def collect(self, n: int | None = None) -> envmod.Rollout:
        n = n or self.cfg.rollouts_per_iter
        picks = self.rng.integers(0, len(self.starts), size=n)
        groups: dict[int, list[int]] = {}
        for k, idx in enumerate(picks):
            groups.setdefault(self.starts[idx][0], []).append(k)
        parts: list[tuple[list[int], envmod.Rollout]] = []
        for si in sorted(groups):
            ks = groups[si]
            ego = [self.starts[picks[k]][1] for k in ks]
            frames = [self.starts[picks[k]][2] for k in ks]
            ro = envmod.rollout(self.nets.policy, self.scenes[si], ego, frames, self.cfg.horizon,
                                self.rng, self.obs_scaler, self.cfg.action_cap)
            parts.append((ks, ro))
        if len(parts) == 1:
            return parts[0][1]
        order = np.argsort(np.concatenate([ks for ks, _ in parts]), kind="stable")

        def cat(name):
            return np.concatenate([getattr(ro, name) for _, ro in parts])[order]

        return envmod.Rollout(
            ego_ids=[int(v) for v in np.concatenate([ro.ego_ids for _, ro in parts])[order]],
            start_frames=[int(v) for v in np.concatenate([ro.start_frames for _, ro in parts])[order]],
            positions=cat("positions"), states=cat("states"), obs=cat("obs"),
            actions=cat("actions"), next_obs=cat("next_obs"), log_probs=cat("log_probs"),
        )

    def critic_step(self, gen_pairs: np.ndarray) -> float:
        cfg = self.cfg
        pick = self.rng.integers(0, len(self.experts.obs), size=len(gen_pairs))
        exp_pairs = self.pairs(self.experts.obs[pick], self.experts.actions[pick])
        D = self.nets.disc
        if cfg.use_wgan_gp:
            if cfg.critic_orientation == "cost":
                # D is trained as a cost (high on generated) so r = -D rewards expert-likeness
                loss = wgan_gp_disc_loss(D, gen_pairs, exp_pairs, cfg.gp_coefficient, self.rng)
            else:
                loss = wgan_gp_disc_loss(D, exp_pairs, gen_pairs, cfg.gp_coefficient, self.rng)
        else:
            loss = bce_disc_loss(D, exp_pairs, gen_pairs)
        params = D.parameters()
        grads = clip_grad_norm(dc.grad(loss, params), cfg.max_grad_norm)
        self.opt_disc.step(grads)
        return loss.item()

    def rewards(self, gen_pairs: np.ndarray) -> np.ndarray:
        with dc.no_grad():
            scores = self.nets.disc(Tensor(gen_pairs)).data
        return reward_from_score(scores, "wgan" if self.cfg.use_wgan_gp else "bce")

    def policy_step(self, buf: RolloutBuffer, adv: np.ndarray) -> tuple[float, float, float]:
        cfg = self.cfg
        obs = Tensor(buf.obs)
        logp = self.nets.policy.log_prob(obs, buf.actions)
        if cfg.use_ppo:
            lp = ppo_policy_loss(logp, buf.logp_old, adv, bounds=cfg.clip_bounds())
        else:
            lp = unclipped_policy_loss(logp, buf.logp_old, adv)
        ent = entropy_estimate(logp)
        values = self.nets.value(obs)
        vl = dc.mean(dc.square(values - buf.returns))
        total = total_loss(lp, vl, ent, cfg.c1, cfg.c2)
        pparams = self.nets.policy.parameters()
        vparams = self.nets.value.parameters()
        grads = dc.grad(total, pparams + vparams)
        self.opt_policy.step(clip_grad_norm(grads[: len(pparams)], cfg.max_grad_norm))
        self.opt_value.step(clip_grad_norm(grads[len(pparams):], cfg.max_grad_norm))
        buf.logp_new = logp.data.copy()
        return lp.item(), vl.item(), ent.item()

    def train_iteration(self) -> IterationReport:
        cfg = self.cfg
        ro = self.collect()
        buf = RolloutBuffer.from_rollout(ro)
        gen_pairs = self.pairs(buf.obs, buf.actions)

        disc_losses = [self.critic_step(gen_pairs) for _ in range(cfg.disc_updates)]
        rewards = self.rewards(gen_pairs)
        mean_reward = float(rewards.mean())
        if cfg.normalize_rewards:
            # the critic's level drifts freely; only relative rewards carry signal
            rewards = (rewards - mean_reward) / (rewards.std() + 1e-8)
        with dc.no_grad():
            seq = np.concatenate([buf.obs, buf.next_obs[:, -1:]], axis=1)
            values = self.nets.value(Tensor(seq)).data
        buf.finalize(rewards, values, cfg.gae_gamma, cfg.gae_lambda)
        buf.check()
        adv = buf.advantages
        if cfg.normalize_advantages:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)

        epochs = cfg.ppo_epochs if cfg.use_ppo else 1
        stats = [self.policy_step(buf, adv) for _ in range(epochs)]
        pl, vl, ent = (float(np.mean(x)) for x in zip(*stats))
        report = IterationReport(
            self.iteration,
            float(np.mean(disc_losses)) if disc_losses else float("nan"),
            pl, vl, ent, mean_reward,
        )
        self.iteration += 1
        self.last_rollout = ro
        return report


def train_iteration(trainer: Trainer) -> IterationReport:
    return trainer.train_iteration()
