"""Networks on top of :mod:`trajgail.diffcore`.

GRU encoders, the Gaussian-mixture policy head, the value network and the
unbounded critic.  Sequences are laid out batch-major: ``(batch, time,
features)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

SIGMA_MIN = 1e-3
LOG_2PI = float(np.log(2 * np.pi))


class Module:
    """Parameter container.  Tensors and sub-modules are collected in
    attribute order, which fixes the checkpoint naming."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out.append((prefix + key, val))
            elif isinstance(val, Module):
                out.extend(val.named_parameters(prefix + key + "."))
            elif isinstance(val, list) and val and isinstance(val[0], Module):
                for i, m in enumerate(val):
                    out.extend(m.named_parameters(f"{prefix}{key}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in own.items():
            v = np.asarray(state[k], dtype=np.float64)
            if v.shape != p.shape:
                raise ValueError(f"parameter {k}: shape {v.shape} != {p.shape}")
            p.data = v.copy()


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.W = _uniform(rng, n_in, (n_in, n_out))
        self.b = _zeros((n_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return dc.matmul(x, self.W) + self.b


class GruLayer(Module):
    """One GRU layer; gates are packed as [update | reset | candidate]."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        H = hidden_size
        self.input_size = input_size
        self.hidden_size = H
        self.W = _uniform(rng, input_size, (input_size, 3 * H))
        self.U_zr = _uniform(rng, H, (H, 2 * H))
        self.U_h = _uniform(rng, H, (H, H))
        self.b = _zeros((3 * H,))

    def input_projection(self, x: Tensor) -> Tensor:
        return dc.matmul(x, self.W) + self.b

    def cell(self, xw: Tensor, h: Tensor) -> Tensor:
        """Advance one step given the precomputed input projection ``xw``."""
        H = self.hidden_size
        hzr = dc.matmul(h, self.U_zr)
        z = dc.sigmoid(xw[:, :H] + hzr[:, :H])
        r = dc.sigmoid(xw[:, H : 2 * H] + hzr[:, H:])
        h_cand = dc.tanh(xw[:, 2 * H :] + dc.matmul(r * h, self.U_h))
        return h + z * (h_cand - h)


class GruStack(Module):
    def __init__(
        self,
        input_size: int,
        hidden_size: int,
        num_layers: int = 1,
        rng: np.random.Generator | None = None,
    ):
        rng = np.random.default_rng(0) if rng is None else rng
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.layers = [
            GruLayer(input_size if i == 0 else hidden_size, hidden_size, rng)
            for i in range(num_layers)
        ]

    def initial_state(self, batch: int) -> list[Tensor]:
        return [Tensor(np.zeros((batch, self.hidden_size))) for _ in self.layers]

    def step(self, x: Tensor, hs: list[Tensor]) -> list[Tensor]:
        """One time step through every layer; returns the new per-layer states."""
        if x.shape[-1] != self.input_size:
            raise ValueError(f"GRU input size {x.shape[-1]} != {self.input_size}")
        new = []
        inp = x
        for layer, h in zip(self.layers, hs):
            h = layer.cell(layer.input_projection(inp), h)
            new.append(h)
            inp = h
        return new

    def forward(self, xs: Tensor, h0: list[Tensor] | None = None) -> Tensor:
        """Run a ``(B, T, input)`` sequence; returns top-layer states ``(B, T, H)``."""
        if xs.ndim != 3 or xs.shape[2] != self.input_size:
            raise ValueError(f"expected (B, T, {self.input_size}) input, got {xs.shape}")
        B, T, _ = xs.shape
        hs = h0 if h0 is not None else self.initial_state(B)
        seq = xs
        for layer, h in zip(self.layers, hs):
            n_in = seq.shape[2]
            xw = dc.reshape(layer.input_projection(dc.reshape(seq, (B * T, n_in))), (B, T, -1))
            outs = []
            for t in range(T):
                h = layer.cell(xw[:, t, :], h)
                outs.append(h)
            seq = dc.stack(outs, axis=1)
        return seq

    __call__ = forward


def gru_forward(stack: GruStack, sequence: Tensor, h0: list[Tensor] | None = None) -> Tensor:
    return stack.forward(sequence, h0)


@dataclass
class GmmParams:
    """Mixture parameters for a batch of ``N`` steps.

    ``logits``/``weights`` are ``(N, K)``; ``means``/``scales`` ``(N, K, 2)``.
    """

    logits: Tensor
    weights: Tensor
    means: Tensor
    scales: Tensor

    def __len__(self):
        return self.weights.shape[0]

    @classmethod
    def from_arrays(cls, weights, means, scales) -> "GmmParams":
        w = np.atleast_2d(np.asarray(weights, dtype=np.float64))
        logits = Tensor(np.log(w))
        return cls(logits, Tensor(w), Tensor(np.asarray(means, float).reshape(w.shape + (2,))),
                   Tensor(np.asarray(scales, float).reshape(w.shape + (2,))))


class GmmPolicyHead(Module):
    def __init__(self, hidden_size: int, n_components: int = 3,
                 rng: np.random.Generator | None = None, sigma_min: float = SIGMA_MIN):
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_components = n_components
        self.sigma_min = sigma_min
        self.proj = Linear(hidden_size, 5 * n_components, rng)
        self.set_action_frame(np.zeros(2), np.ones(2))

    def set_action_frame(self, loc, unit, obs_gain=None) -> None:
        """Fixed (untrained) frame for the mixture means and scales.

        means = loc + obs @ obs_gain + unit * raw_means, scales = unit * softplus(.) + sigma_min.
        The default is the identity frame with no observation term.
        """
        loc = np.asarray(loc, dtype=np.float64).reshape(2)
        unit = np.asarray(unit, dtype=np.float64).reshape(2)
        if not np.all(unit > 0) or not np.all(np.isfinite(loc)):
            raise ValueError("action frame needs finite loc and positive unit")
        if obs_gain is not None:
            obs_gain = np.asarray(obs_gain, dtype=np.float64)
            if obs_gain.ndim != 2 or obs_gain.shape[1] != 2 or not np.all(np.isfinite(obs_gain)):
                raise ValueError("obs_gain must be a finite (obs_size, 2) matrix")
        self.action_loc, self.action_unit, self.obs_gain = loc, unit, obs_gain

    def __call__(self, hidden: Tensor) -> GmmParams:
        return gmm_params(self, hidden)


def gmm_params(head: GmmPolicyHead, hidden: Tensor, obs=None) -> GmmParams:
    """Map ``(N, H)`` hidden states to mixture weights, means and scales.

    ``obs`` (``(N, obs_size)``) is only read when the head has an observation gain.
    """
    K = head.n_components
    out = head.proj(hidden)
    N = out.shape[0]
    logits = out[:, :K]
    means = dc.reshape(out[:, K : 3 * K], (N, K, 2))
    pre = dc.reshape(out[:, 3 * K :], (N, K, 2))
    scales = dc.softplus(pre)
    loc, unit = head.action_loc, head.action_unit
    if np.any(loc != 0) or np.any(unit != 1):
        means = means * unit + loc
        scales = scales * unit
    if head.obs_gain is not None:
        if obs is None:
            raise ValueError("this head needs the observations")
        offset = dc.matmul(dc.as_tensor(obs), Tensor(head.obs_gain))
        means = means + dc.reshape(offset, (N, 1, 2))
    scales = scales + head.sigma_min
    return GmmParams(logits, dc.softmax(logits), means, scales)


def gmm_log_prob(params: GmmParams, action) -> Tensor:
    """log sum_k w_k N(a; mu_k, diag(sigma_k^2)) for each of the N rows."""
    a = dc.as_tensor(action)
    N, K = params.weights.shape
    a = dc.reshape(a, (N, 1, 2))
    z = (a - params.means) / params.scales
    comp = (
        dc.scale(dc.sum(dc.square(z), axis=-1), -0.5)
        - dc.sum(dc.log(params.scales), axis=-1)
        - LOG_2PI
    )
    log_w = params.logits - dc.logsumexp(params.logits, keepdims=True)
    return dc.logsumexp(log_w + comp)


def gmm_sample(params: GmmParams, rng: np.random.Generator) -> np.ndarray:
    """Draw one action per row: pick a component, then a diagonal Gaussian."""
    w = params.weights.data
    mu = params.means.data
    sig = params.scales.data
    N, K = w.shape
    u = rng.random(N)
    cdf = np.cumsum(w, axis=1)
    k = np.minimum((u[:, None] > cdf).sum(axis=1), K - 1)
    eps = rng.standard_normal((N, 2))
    rows = np.arange(N)
    return mu[rows, k] + sig[rows, k] * eps


def entropy_estimate(log_probs: Tensor) -> Tensor:
    """Monte-Carlo entropy, -mean(log pi(a|s)), over the batch's own actions."""
    if log_probs.size == 0:
        raise ValueError("entropy_estimate: empty batch")
    return dc.neg(dc.mean(log_probs))


class PolicyNet(Module):
    """GRU encoder followed by the mixture head."""

    def __init__(self, obs_size: int, hidden_size: int = 32, num_layers: int = 1,
                 n_components: int = 3, rng: np.random.Generator | None = None,
                 sigma_min: float = SIGMA_MIN):
        rng = np.random.default_rng(0) if rng is None else rng
        self.gru = GruStack(obs_size, hidden_size, num_layers, rng)
        self.head = GmmPolicyHead(hidden_size, n_components, rng, sigma_min)

    def sequence_params(self, obs: Tensor) -> GmmParams:
        """Mixture parameters for every step of ``(B, T, obs)``; rows are b*T + t."""
        B, T, _ = obs.shape
        hid = self.gru(obs)
        flat = dc.reshape(obs, (B * T, obs.shape[2])) if self.head.obs_gain is not None else None
        return gmm_params(self.head, dc.reshape(hid, (B * T, self.gru.hidden_size)), flat)

    def log_prob(self, obs: Tensor, actions) -> Tensor:
        """``(B, T)`` log-probabilities of ``(B, T, 2)`` actions."""
        B, T, _ = obs.shape
        lp = gmm_log_prob(self.sequence_params(obs), dc.reshape(dc.as_tensor(actions), (B * T, 2)))
        return dc.reshape(lp, (B, T))

    def step(self, obs: np.ndarray, hs: list[Tensor]) -> tuple[GmmParams, list[Tensor]]:
        hs = self.gru.step(Tensor(obs), hs)
        return gmm_params(self.head, hs[-1], obs), hs

    # rollout protocol (see trajgail.env.rollout)
    def begin(self, batch: int) -> list[Tensor]:
        return self.gru.initial_state(batch)

    def act(self, obs: np.ndarray, hs: list[Tensor], rng: np.random.Generator, cap: float):
        """Sample one action per row, clipped to ``cap``, with its log-probability."""
        with dc.no_grad():
            params, hs = self.step(np.asarray(obs, dtype=np.float64), hs)
            a = np.clip(gmm_sample(params, rng), -cap, cap)
            lp = gmm_log_prob(params, a).data
        return a, lp, hs


class ValueNet(Module):
    def __init__(self, obs_size: int, hidden_size: int = 32, num_layers: int = 1,
                 rng: np.random.Generator | None = None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.gru = GruStack(obs_size, hidden_size, num_layers, rng)
        self.out = Linear(hidden_size, 1, rng)

    def __call__(self, obs: Tensor) -> Tensor:
        """``(B, T)`` state values."""
        B, T, _ = obs.shape
        hid = dc.reshape(self.gru(obs), (B * T, self.gru.hidden_size))
        return dc.reshape(self.out(hid), (B, T))


class DiscriminatorNet(Module):
    """Scores each (state, action) step with an unbounded real."""

    def __init__(self, input_size: int, hidden_size: int = 32, num_layers: int = 1,
                 mlp_size: int = 64, rng: np.random.Generator | None = None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.input_size = input_size
        self.gru = GruStack(input_size, hidden_size, num_layers, rng)
        self.fc = Linear(hidden_size, mlp_size, rng)
        self.out = Linear(mlp_size, 1, rng)

    def __call__(self, pairs: Tensor) -> Tensor:
        return discriminator_score(self, pairs)


def discriminator_score(net: DiscriminatorNet, pairs) -> Tensor:
    """``(B, T)`` scores for ``(B, T, obs + 2)`` concatenated state-action input."""
    x = dc.as_tensor(pairs)
    if x.ndim != 3 or x.shape[1] == 0:
        raise ValueError(f"expected a nonempty (B, T, D) sequence, got {x.shape}")
    if x.shape[2] != net.input_size:
        raise ValueError(f"pair size {x.shape[2]} != {net.input_size}")
    B, T, _ = x.shape
    hid = dc.reshape(net.gru(x), (B * T, net.gru.hidden_size))
    return dc.reshape(net.out(dc.tanh(net.fc(hid))), (B, T))

