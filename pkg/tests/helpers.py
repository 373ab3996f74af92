"""Shared oracles for the test-suite."""

import numpy as np

from trajgail import diffcore as dc


def param_grad_error(loss_fn, params, eps=1e-6, record_probes=False):
    """Max relative error of analytic parameter gradients vs central differences.

    ``loss_fn()`` must rebuild the scalar from the current parameter values.
    Error per coordinate: |analytic - numeric| / max(1, |analytic|).
    Set ``record_probes`` when the loss itself takes gradients.
    """
    import contextlib

    probe = contextlib.nullcontext if record_probes else dc.no_grad
    analytic = [g.data.copy() for g in dc.grad(loss_fn(), params)]
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        num = np.empty(flat.size)
        for i in range(flat.size):
            keep = flat[i]
            with probe():
                flat[i] = keep + eps
                hi = loss_fn().item()
                flat[i] = keep - eps
                lo = loss_fn().item()
            flat[i] = keep
            num[i] = (hi - lo) / (2 * eps)
        err = np.abs(g.reshape(-1) - num) / np.maximum(1.0, np.abs(g.reshape(-1)))
        worst = max(worst, float(err.max()))
    return worst


def numpy_gru(layer_params, xs, h0=None):
    """Reference GRU with h' = (1 - z) h + z h_cand, for one layer.

    ``layer_params`` = (W (in, 3H), U_zr (H, 2H), U_h (H, H), b (3H)); xs is (B, T, in).
    """
    W, Uzr, Uh, b = layer_params
    H = Uh.shape[0]
    B, T, _ = xs.shape
    h = np.zeros((B, H)) if h0 is None else h0
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))  # noqa: E731
    out = []
    for t in range(T):
        x = xs[:, t]
        z = sig(x @ W[:, :H] + h @ Uzr[:, :H] + b[:H])
        r = sig(x @ W[:, H:2 * H] + h @ Uzr[:, H:] + b[H:2 * H])
        hc = np.tanh(x @ W[:, 2 * H:] + (r * h) @ Uh + b[2 * H:])
        h = (1 - z) * h + z * hc
        out.append(h)
    return np.stack(out, axis=1)
