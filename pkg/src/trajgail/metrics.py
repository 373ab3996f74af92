"""Two-sample distances between 1-D feature marginals.

MMD (biased, Gaussian kernel), order-1 Wasserstein, and histogram KL / JS.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FEATURES = ("speed", "acceleration", "dx", "dy")
METRICS = ("mmd", "wd", "kl", "js")


def _sample(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("empty sample")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite sample values")
    return x


def feature_marginals(trajectories, dt: float) -> dict[str, np.ndarray]:
    """Pool speed, acceleration and per-frame displacements over trajectories.

    Each trajectory is an ``(n, 2)`` position array with ``n >= 3``.
    """
    out = {k: [] for k in FEATURES}
    for traj in trajectories:
        p = np.asarray(traj, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] < 3:
            raise ValueError("each trajectory needs at least 3 positions")
        d = np.diff(p, axis=0)
        speed = np.linalg.norm(d, axis=1) / dt
        out["speed"].append(speed)
        out["acceleration"].append(np.diff(speed) / dt)
        out["dx"].append(d[:, 0])
        out["dy"].append(d[:, 1])
    return {k: np.concatenate(v) for k, v in out.items()}


def median_bandwidth(x, y) -> float:
    """Median pairwise distance over the pooled sample (1.0 if degenerate)."""
    z = np.concatenate([_sample(x), _sample(y)])
    z = np.sort(z)
    n = len(z)
    if n < 2:
        return 1.0
    # median of |z_i - z_j| over i < j without materializing huge matrices
    if n <= 4000:
        d = np.abs(z[:, None] - z[None, :])[np.triu_indices(n, 1)]
    else:
        rng = np.random.default_rng(0)
        i = rng.integers(0, n, 200_000)
        j = rng.integers(0, n, 200_000)
        d = np.abs(z[i] - z[j])[i != j]
    med = float(np.median(d))
    return med if med > 0 else 1.0


def _kernel_mean(a: np.ndarray, b: np.ndarray, sigma: float, chunk: int = 2048) -> float:
    total = 0.0
    for s in range(0, len(a), chunk):
        diff = a[s : s + chunk, None] - b[None, :]
        total += float(np.exp(-(diff * diff) / (2 * sigma * sigma)).sum())
    return total / (len(a) * len(b))


def mmd(x, y, bandwidth: float | None = None) -> float:
    """Biased squared MMD with a Gaussian kernel."""
    x, y = _sample(x), _sample(y)
    sigma = median_bandwidth(x, y) if bandwidth is None else float(bandwidth)
    if not sigma > 0:
        raise ValueError("bandwidth must be positive")
    x, y = np.sort(x), np.sort(y)
    # canonical argument order keeps the result bit-identical under swapping
    if (len(y), y.tobytes()) < (len(x), x.tobytes()):
        x, y = y, x
    return _kernel_mean(x, x, sigma) + _kernel_mean(y, y, sigma) - 2 * _kernel_mean(x, y, sigma)


def wasserstein_1d(x, y, rng: np.random.Generator | None = None) -> float:
    """Mean absolute difference of sorted samples.

    Unequal sizes: the larger sample is subsampled without replacement.
    """
    x, y = _sample(x), _sample(y)
    if len(x) != len(y):
        rng = np.random.default_rng(0) if rng is None else rng
        if len(x) > len(y):
            x = rng.choice(np.sort(x), size=len(y), replace=False)
        else:
            y = rng.choice(np.sort(y), size=len(x), replace=False)
    return float(np.mean(np.abs(np.sort(x) - np.sort(y))))


def shared_edges(x, y, bins: int = 64) -> np.ndarray:
    z = np.concatenate([_sample(x), _sample(y)])
    lo, hi = float(z.min()), float(z.max())
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, bins + 1)


def _hist(x, edges, smoothing: float) -> np.ndarray:
    h, _ = np.histogram(x, bins=edges)
    p = h / h.sum() + smoothing
    return p / p.sum()


def kl_from_probs(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def kl_hist(x, y, bins: int = 64, smoothing: float = 1e-8) -> float:
    """KL(p || q) between smoothed histograms of ``x`` and ``y`` on shared bins."""
    if not smoothing > 0:
        raise ValueError("smoothing must be positive")
    edges = shared_edges(x, y, bins)
    return max(kl_from_probs(_hist(x, edges, smoothing), _hist(y, edges, smoothing)), 0.0)


def js_from_probs(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    m = 0.5 * (p + q)
    return 0.5 * kl_from_probs(p, m) + 0.5 * kl_from_probs(q, m)


def js(x, y, bins: int = 64) -> float:
    """Jensen-Shannon divergence (natural log) between histograms on shared bins."""
    edges = shared_edges(x, y, bins)
    p = _hist(x, edges, 0.0)
    q = _hist(y, edges, 0.0)
    # symmetric sum so js(x, y) == js(y, x) bit-for-bit
    m = 0.5 * (p + q)
    return max(0.5 * (kl_from_probs(p, m) + kl_from_probs(q, m)), 0.0)


@dataclass
class MetricReport:
    values: dict[str, dict[str, float]] = field(default_factory=dict)
    params: dict[str, object] = field(default_factory=dict)

    def mean(self, metric: str) -> float:
        return float(np.mean([v[metric] for v in self.values.values()]))

    def to_lines(self) -> list[str]:
        lines = [f"params.{k} = {v}" for k, v in self.params.items()]
        for feat, vals in self.values.items():
            for m in METRICS:
                lines.append(f"{feat}.{m} = {vals[m]!r}")
        for m in METRICS:
            lines.append(f"mean.{m} = {self.mean(m)!r}")
        return lines

    def dumps(self, comments=()) -> str:
        return "".join(f"# {c}\n" for c in comments) + "\n".join(self.to_lines()) + "\n"

    @classmethod
    def loads(cls, text: str) -> "MetricReport":
        rep = cls()
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            head, _, tail = key.strip().partition(".")
            if head == "params":
                rep.params[tail] = val.strip()
            elif head != "mean":
                rep.values.setdefault(head, {})[tail] = float(val)
        return rep


def evaluate(generated: dict[str, np.ndarray], reference: dict[str, np.ndarray], bins: int = 64,
             smoothing: float = 1e-8, bandwidth: float | None = None, seed: int = 0,
             features=FEATURES) -> MetricReport:
    """All four metrics per feature; samples are ``feature -> values`` dicts."""
    rep = MetricReport(params={"bins": bins, "smoothing": smoothing,
                               "bandwidth": "median" if bandwidth is None else bandwidth,
                               "kernel": "gaussian", "mmd_estimator": "biased", "seed": seed})
    for feat in features:
        g, r = generated[feat], reference[feat]
        rng = np.random.default_rng(seed)
        rep.values[feat] = {
            "mmd": mmd(g, r, bandwidth),
            "wd": wasserstein_1d(g, r, rng),
            "kl": kl_hist(g, r, bins, smoothing),
            "js": js(g, r, bins),
        }
    return rep
