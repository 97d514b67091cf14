"""Shared test utilities: independent oracles and finite-difference gradients."""

from __future__ import annotations

import math

import numpy as np

from cogstates import tensor as tz


def conv1d_loop_oracle(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Direct triple-loop same-padding convolution; deliberately naive."""
    t_len, cin = x.shape
    k, _, cout = w.shape
    pad = (k - 1) // 2
    out = np.zeros((t_len, cout))
    for t in range(t_len):
        for co in range(cout):
            acc = b[co]
            for kk in range(k):
                ti = t + kk - pad
                if 0 <= ti < t_len:
                    for ci in range(cin):
                        acc += x[ti, ci] * w[kk, ci, co]
            out[t, co] = acc
    return out


def scalar_sigmoid(v: float) -> float:
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def lstm_step_scalar_oracle(x, h_prev, c_prev, w, b):
    """One LSTM step computed with pure-Python scalar arithmetic (gate order i,f,g,o)."""
    cin = len(x)
    hdim = len(h_prev)
    cat = list(x) + list(h_prev)
    z = [sum(cat[r] * w[r][j] for r in range(cin + hdim)) + b[j] for j in range(4 * hdim)]
    h_new, c_new = [], []
    for u in range(hdim):
        i = scalar_sigmoid(z[u])
        f = scalar_sigmoid(z[hdim + u])
        g = math.tanh(z[2 * hdim + u])
        o = scalar_sigmoid(z[3 * hdim + u])
        c = f * c_prev[u] + i * g
        c_new.append(c)
        h_new.append(o * math.tanh(c))
    return h_new, c_new


def lstm_unroll_oracle(x_seq: np.ndarray, w: np.ndarray, b: np.ndarray,
                       reverse: bool = False) -> np.ndarray:
    """Unrolled LSTM over a (T, Cin) sequence via the scalar step oracle."""
    t_len = x_seq.shape[0]
    hdim = w.shape[1] // 4
    h = [0.0] * hdim
    c = [0.0] * hdim
    out = np.zeros((t_len, hdim))
    order = range(t_len - 1, -1, -1) if reverse else range(t_len)
    wl = w.tolist()
    bl = b.tolist()
    for t in order:
        h, c = lstm_step_scalar_oracle(x_seq[t].tolist(), h, c, wl, bl)
        out[t] = h
    return out


def finite_diff(loss_fn, arrays: list[np.ndarray], h: float = 1e-6) -> list[np.ndarray]:
    """Central finite-difference gradient of ``loss_fn(arrays) -> float`` w.r.t. each array."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            lp = loss_fn(arrays)
            flat[idx] = orig - h
            lm = loss_fn(arrays)
            flat[idx] = orig
            gflat[idx] = (lp - lm) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradcheck(build_loss, params: list[tz.Tensor], tol: float = 1e-5, h: float = 1e-6) -> float:
    """Compare autograd gradients of ``build_loss()`` against central differences.

    ``build_loss`` must rebuild the graph from the params' current ``.data``
    buffers on every call and return a scalar Tensor.
    """
    loss = build_loss()
    loss.backward()
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.grad = None

    def loss_value(_arrays):
        return float(build_loss().data)

    numeric = finite_diff(loss_value, [p.data for p in params], h=h)
    worst = max(max_rel_err(a, n) for a, n in zip(analytic, numeric))
    assert worst <= tol, f"gradient mismatch: max relative error {worst:.3e} > {tol:.0e}"
    return worst
