"""Dense tensors with reverse-mode gradient computation.

Just enough autograd to train the two fixed sequence classifiers in
:mod:`cogstates.models`: every operation records its inputs and a backward
closure on the output node, and ``Tensor.backward()`` walks the recorded
graph in reverse topological order. Heavy lifting (GEMM, windowed views)
is delegated to numpy; everything is deterministic for fixed inputs and
explicit RNG state.

Gate order for the LSTM ops is input, forget, cell-update, output
(``i, f, g, o``) throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64
FLOAT_DTYPES = (np.float32, np.float64)


class TensorError(Exception):
    """Base class for numeric-core failures."""


class ShapeError(TensorError):
    """Operand shapes do not conform; message names the offending dimension."""


class BackwardError(TensorError):
    """backward() misuse: no recorded forward, repeated call, or non-scalar root."""


class Tensor:
    """A dense float array plus an optional gradient buffer.

    ``grad`` is populated by :meth:`backward` for nodes that (transitively)
    feed from a ``requires_grad`` leaf, and always matches ``data`` in shape.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn",
                 "_needs_grad", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: tuple = (), _backward_fn=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward_fn = _backward_fn
        self._needs_grad = requires_grad or any(p._needs_grad for p in _parents)
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self) -> None:
        """Propagate d(self)/d(leaf) into every reachable leaf's ``grad``.

        Only scalar roots are accepted. The recorded graph is single-use:
        a second call on the same root raises, as does a call on a node
        that no forward pass ever produced.
        """
        if self.data.size != 1:
            raise BackwardError(f"backward root must be scalar, got shape {self.shape}")
        if self._backward_fn is None and not self._parents:
            raise BackwardError("backward before forward: node has no computation record")
        if self._consumed:
            raise BackwardError("backward already ran on this node; run a new forward first")
        self._consumed = True

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen and parent._needs_grad:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
                node._backward_fn = None
            if not node.requires_grad and node is not self:
                node.grad = None  # free intermediate buffers as we go

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


@dataclass
class Parameter:
    """A named trainable tensor; names must be unique within a model."""

    tensor: Tensor
    name: str
    trainable: bool = True

    def __post_init__(self):
        self.tensor.requires_grad = True
        self.tensor._needs_grad = True

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.tensor.grad


@dataclass
class AdamState:
    """Adam moment buffers plus hyperparameters; ``lr`` may be lowered by a schedule."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], state: AdamState) -> None:
    """One bias-corrected Adam update over ``params``; gradients are zeroed afterward."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p in params:
        if not p.trainable:
            continue
        g = p.tensor.grad
        if g is None:
            raise TensorError(f"adam_step: parameter '{p.name}' has no gradient")
        if p.name not in state.m:
            state.m[p.name] = np.zeros_like(p.tensor.data)
            state.v[p.name] = np.zeros_like(p.tensor.data)
        m = state.m[p.name]
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.tensor.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        g[...] = 0.0


def assert_finite(x, what: str = "tensor") -> None:
    """Raise if ``x`` contains NaN or Inf; forward ops must never produce them."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if not np.all(np.isfinite(arr)):
        raise TensorError(f"non-finite values in {what}")


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t._needs_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)  # own a copy; g may be a view
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, _parents=(a, b))

    def _bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    out._backward_fn = _bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, _parents=(a, b))

    def _bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    out._backward_fn = _bw
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for a of rank 1 or 2 and b of rank 2."""
    if b.ndim != 2 or a.ndim not in (1, 2):
        raise ShapeError(f"matmul supports (N,)|(B,N) @ (N,M); got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions differ, {a.shape[-1]} (dim {a.ndim - 1} of lhs) "
            f"vs {b.shape[0]} (dim 0 of rhs)")
    out = Tensor(a.data @ b.data, _parents=(a, b))

    def _bw(g):
        if a.ndim == 1:
            _accumulate(a, g @ b.data.T)
            _accumulate(b, np.outer(a.data, g))
        else:
            _accumulate(a, g @ b.data.T)
            _accumulate(b, a.data.T @ g)

    out._backward_fn = _bw
    return out


def tsum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar node."""
    out = Tensor(np.asarray(x.data.sum(), dtype=x.dtype), _parents=(x,))

    def _bw(g):
        _accumulate(x, np.broadcast_to(g, x.shape).astype(x.dtype, copy=True))

    out._backward_fn = _bw
    return out


def reshape(x: Tensor, shape: tuple) -> Tensor:
    out = Tensor(x.data.reshape(shape), _parents=(x,))

    def _bw(g):
        _accumulate(x, g.reshape(x.shape))

    out._backward_fn = _bw
    return out


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    return reshape(x, (x.shape[0], -1))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), _parents=tuple(parts))
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def _bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(p, g[tuple(idx)])

    out._backward_fn = _bw
    return out


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice ``[start, start+length)`` along ``axis``."""
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(x.data[idx], _parents=(x,))

    def _bw(g):
        if x._needs_grad:
            buf = np.zeros_like(x.data)
            buf[idx] = g
            _accumulate(x, buf)

    out._backward_fn = _bw
    return out


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0.0)
    out = Tensor(out_data, _parents=(x,))

    def _bw(g):
        _accumulate(x, g * (x.data > 0))

    out._backward_fn = _bw
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = Tensor(_sigmoid_raw(x.data), _parents=(x,))
    s = out.data

    def _bw(g):
        _accumulate(x, g * s * (1.0 - s))

    out._backward_fn = _bw
    return out


def _sigmoid_raw(z: np.ndarray) -> np.ndarray:
    # split form avoids exp overflow for large |z|
    pos = z >= 0
    out = np.empty_like(z)
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def tanh(x: Tensor) -> Tensor:
    out = Tensor(np.tanh(x.data), _parents=(x,))
    t = out.data

    def _bw(g):
        _accumulate(x, g * (1.0 - t * t))

    out._backward_fn = _bw
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``; rows sum to 1 within 1e-9."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, _parents=(x,))

    def _bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(x, y * (g - dot))

    out._backward_fn = _bw
    return out


def dropout(x: Tensor, rate: float, mode: str, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: train mode zeroes with probability ``rate`` and scales
    survivors by 1/(1-rate); eval mode is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ValueError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        out = Tensor(x.data, _parents=(x,))

        def _bw_id(g):
            _accumulate(x, g)

        out._backward_fn = _bw_id
        return out

    if rng is None:
        raise ValueError("dropout in train mode requires an explicit rng")
    scale = 1.0 / (1.0 - rate)
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) * scale
    out = Tensor(x.data * mask, _parents=(x,))

    def _bw(g):
        _accumulate(x, g * mask)

    out._backward_fn = _bw
    return out


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weights + bias`` for x of shape (N,) or (B, N)."""
    if weights.ndim != 2:
        raise ShapeError(f"dense: weights must be 2-D, got shape {weights.shape}")
    if x.shape[-1] != weights.shape[0]:
        raise ShapeError(
            f"dense: input feature dim {x.shape[-1]} does not match weights dim 0 "
            f"({weights.shape[0]})")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense: bias shape {bias.shape} must be ({weights.shape[1]},)")
    return add(matmul(x, weights), bias)


def conv1d(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Length-preserving 1-D convolution over the time axis.

    ``x`` is (T, Cin) or (B, T, Cin); ``weights`` is (K, Cin, Cout) with K odd
    (zero padding of (K-1)/2 on each side); ``bias`` is (Cout,). Output keeps
    the input length:

        out[t, co] = bias[co] + sum_{k, ci} x[t + k - (K-1)/2, ci] * weights[k, ci, co]

    with out-of-range input treated as zero.
    """
    if weights.ndim != 3:
        raise ShapeError(f"conv1d: weights must be (K, Cin, Cout), got shape {weights.shape}")
    k, cin, cout = weights.shape
    if k % 2 != 1:
        raise ShapeError(f"conv1d: kernel size must be odd for symmetric padding, got K={k} (dim 0 of weights)")
    squeeze = x.ndim == 2
    if x.ndim not in (2, 3):
        raise ShapeError(f"conv1d: input must be (T, Cin) or (B, T, Cin), got shape {x.shape}")
    if x.shape[-1] != cin:
        raise ShapeError(
            f"conv1d: input has {x.shape[-1]} channels (last dim) but weights expect {cin} (dim 1)")
    if bias.shape != (cout,):
        raise ShapeError(f"conv1d: bias shape {bias.shape} must be ({cout},)")

    xd = x.data[None] if squeeze else x.data
    b_, t_ = xd.shape[0], xd.shape[1]
    pad = (k - 1) // 2
    xp = np.pad(xd, ((0, 0), (pad, pad), (0, 0)))
    s0, s1, s2 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, shape=(b_, t_, k, cin), strides=(s0, s1, s1, s2))
    cols = windows.reshape(b_ * t_, k * cin)  # copies; reused by backward
    w2 = weights.data.reshape(k * cin, cout)
    y = (cols @ w2 + bias.data).reshape(b_, t_, cout)
    out = Tensor(y[0] if squeeze else y, _parents=(x, weights, bias))

    def _bw(g):
        g3 = g[None] if squeeze else g
        g2 = g3.reshape(b_ * t_, cout)
        _accumulate(weights, (cols.T @ g2).reshape(k, cin, cout))
        _accumulate(bias, g2.sum(axis=0))
        if x._needs_grad:
            dcols = (g2 @ w2.T).reshape(b_, t_, k, cin)
            dxp = np.zeros_like(xp)
            for kk in range(k):
                dxp[:, kk:kk + t_, :] += dcols[:, :, kk, :]
            dx = dxp[:, pad:pad + t_, :]
            _accumulate(x, dx[0] if squeeze else dx)

    out._backward_fn = _bw
    return out


def maxpool1d(x: Tensor, pool: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping max pooling over time; a trailing remainder of fewer
    than ``pool`` steps is dropped. Argmax positions are recorded so the
    backward pass routes gradient only to the winning elements."""
    if stride != pool:
        raise ShapeError(f"maxpool1d: only stride == pool is supported, got pool={pool}, stride={stride}")
    if pool < 1:
        raise ShapeError(f"maxpool1d: pool must be >= 1, got {pool}")
    squeeze = x.ndim == 2
    if x.ndim not in (2, 3):
        raise ShapeError(f"maxpool1d: input must be (T, C) or (B, T, C), got shape {x.shape}")
    xd = x.data[None] if squeeze else x.data
    b_, t_, c_ = xd.shape
    if t_ < pool:
        raise ShapeError(f"maxpool1d: time dimension {t_} (dim {x.ndim - 2}) is shorter than pool={pool}")
    t_out = t_ // pool
    blocks = xd[:, :t_out * pool, :].reshape(b_, t_out, pool, c_)
    arg = blocks.argmax(axis=2)  # ties resolve to the earliest position
    y = np.take_along_axis(blocks, arg[:, :, None, :], axis=2)[:, :, 0, :]
    out = Tensor(y[0] if squeeze else y, _parents=(x,))

    def _bw(g):
        if not x._needs_grad:
            return
        g3 = g[None] if squeeze else g
        dblocks = np.zeros_like(blocks)
        np.put_along_axis(dblocks, arg[:, :, None, :], g3[:, :, None, :], axis=2)
        dx = np.zeros_like(xd)
        dx[:, :t_out * pool, :] = dblocks.reshape(b_, t_out * pool, c_)
        _accumulate(x, dx[0] if squeeze else dx)

    out._backward_fn = _bw
    return out


def lstm_cell_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor,
                   weights: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step on the concatenated-input formulation.

    ``weights`` maps (Cin + H) -> 4H with gate blocks ordered i, f, g, o;
    ``bias`` is (4H,). Returns the new hidden and cell states:

        i, f, o = sigmoid(.), g = tanh(.)
        c_t = f * c_prev + i * g
        h_t = o * tanh(c_t)
    """
    h = h_prev.shape[-1]
    if weights.shape != (x_t.shape[-1] + h, 4 * h):
        raise ShapeError(
            f"lstm_cell_step: weights shape {weights.shape} must be "
            f"({x_t.shape[-1] + h}, {4 * h}) for Cin={x_t.shape[-1]}, H={h}")
    if bias.shape != (4 * h,):
        raise ShapeError(f"lstm_cell_step: bias shape {bias.shape} must be ({4 * h},)")
    z = dense(concat([x_t, h_prev], axis=-1), weights, bias)
    i = sigmoid(narrow(z, -1, 0, h))
    f = sigmoid(narrow(z, -1, h, h))
    g = tanh(narrow(z, -1, 2 * h, h))
    o = sigmoid(narrow(z, -1, 3 * h, h))
    c_t = add(mul(f, c_prev), mul(i, g))
    h_t = mul(o, tanh(c_t))
    return h_t, c_t


def lstm_scan(x: Tensor, weights: Tensor, bias: Tensor, reverse: bool = False) -> Tensor:
    """Run an LSTM over the full sequence as one fused graph node.

    ``x`` is (B, T, Cin) or (T, Cin); output is the per-step hidden states,
    (B, T, H) or (T, H), aligned to the original time order even when
    ``reverse`` scans from the end. Initial hidden and cell states are zero.
    The backward pass is hand-written truncation-free BPTT over the cached
    per-step gate activations.
    """
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    b_, t_, cin = xd.shape
    four_h = weights.shape[1]
    if four_h % 4 != 0:
        raise ShapeError(f"lstm_scan: weights dim 1 must be a multiple of 4, got {four_h}")
    h = four_h // 4
    if weights.shape[0] != cin + h:
        raise ShapeError(
            f"lstm_scan: weights dim 0 is {weights.shape[0]}, expected Cin+H = {cin + h}")
    if bias.shape != (four_h,):
        raise ShapeError(f"lstm_scan: bias shape {bias.shape} must be ({four_h},)")

    order = range(t_ - 1, -1, -1) if reverse else range(t_)
    w = weights.data
    bvec = bias.data
    dt = xd.dtype

    cat = np.empty((t_, b_, cin + h), dtype=dt)      # [x_t, h_prev] per step
    gates = np.empty((t_, b_, four_h), dtype=dt)     # i, f, g, o post-activation
    c_prevs = np.empty((t_, b_, h), dtype=dt)
    tanh_c = np.empty((t_, b_, h), dtype=dt)
    hs = np.zeros((b_, t_, h), dtype=dt)

    h_t = np.zeros((b_, h), dtype=dt)
    c_t = np.zeros((b_, h), dtype=dt)
    for step, t in enumerate(order):
        cat[step, :, :cin] = xd[:, t, :]
        cat[step, :, cin:] = h_t
        z = cat[step] @ w + bvec
        z[:, :2 * h] = _sigmoid_raw(z[:, :2 * h])
        z[:, 3 * h:] = _sigmoid_raw(z[:, 3 * h:])
        np.tanh(z[:, 2 * h:3 * h], out=z[:, 2 * h:3 * h])
        gates[step] = z
        c_prevs[step] = c_t
        c_t = z[:, h:2 * h] * c_t + z[:, :h] * z[:, 2 * h:3 * h]
        np.tanh(c_t, out=tanh_c[step])
        h_t = z[:, 3 * h:] * tanh_c[step]
        hs[:, t, :] = h_t

    out = Tensor(hs[0] if squeeze else hs, _parents=(x, weights, bias))

    def _bw(grad_out):
        g3 = grad_out[None] if squeeze else grad_out
        dw = np.zeros_like(w)
        db = np.zeros_like(bvec)
        dx = np.zeros_like(xd) if x._needs_grad else None
        dh_next = np.zeros((b_, h), dtype=dt)
        dc_next = np.zeros((b_, h), dtype=dt)
        dz = np.empty((b_, four_h), dtype=dt)
        for step in range(t_ - 1, -1, -1):
            t = order[step]
            z = gates[step]
            i, f, gc, o = z[:, :h], z[:, h:2 * h], z[:, 2 * h:3 * h], z[:, 3 * h:]
            dh = g3[:, t, :] + dh_next
            dc = dh * o * (1.0 - tanh_c[step] ** 2) + dc_next
            dz[:, :h] = dc * gc * i * (1.0 - i)                       # input gate
            dz[:, h:2 * h] = dc * c_prevs[step] * f * (1.0 - f)       # forget gate
            dz[:, 2 * h:3 * h] = dc * i * (1.0 - gc * gc)             # cell update
            dz[:, 3 * h:] = dh * tanh_c[step] * o * (1.0 - o)         # output gate
            dw += cat[step].T @ dz
            db += dz.sum(axis=0)
            dcat = dz @ w.T
            if dx is not None:
                dx[:, t, :] += dcat[:, :cin]
            dh_next = dcat[:, cin:]
            dc_next = dc * f
        _accumulate(weights, dw)
        _accumulate(bias, db)
        if dx is not None:
            _accumulate(x, dx[0] if squeeze else dx)

    out._backward_fn = _bw
    return out


def bilstm_forward(x: Tensor, fwd_params: tuple[Tensor, Tensor],
                   bwd_params: tuple[Tensor, Tensor]) -> Tensor:
    """Bidirectional LSTM: forward-scan and reverse-scan hidden states
    concatenated per time step, (.., T, 2H)."""
    return concat([lstm_scan(x, *fwd_params, reverse=False),
                   lstm_scan(x, *bwd_params, reverse=True)], axis=-1)


PROB_FLOOR = 1e-12


def cross_entropy_loss(probs: Tensor, labels, class_weights=None) -> Tensor:
    """Mean negative log probability of the true class.

    ``probs`` rows must already sum to 1 within 1e-6 (softmax output);
    probabilities are clamped at 1e-12 before the log. ``class_weights``,
    when given, turns the mean into a per-class weighted mean.
    """
    labels = np.asarray(labels)
    if probs.ndim != 2:
        raise ShapeError(f"cross_entropy_loss: probs must be (B, C), got shape {probs.shape}")
    b_, c_ = probs.shape
    if labels.shape != (b_,):
        raise ShapeError(f"cross_entropy_loss: labels shape {labels.shape} must be ({b_},)")
    if labels.min() < 0 or labels.max() >= c_:
        bad = labels[(labels < 0) | (labels >= c_)][0]
        raise ValueError(f"cross_entropy_loss: label {bad} outside [0, {c_})")
    assert_finite(probs, "cross_entropy_loss probs")
    rowsum = probs.data.sum(axis=1)
    if np.abs(rowsum - 1.0).max() > 1e-6:
        worst = int(np.abs(rowsum - 1.0).argmax())
        raise ValueError(
            f"cross_entropy_loss: probs row {worst} sums to {rowsum[worst]:.9f}, expected 1 +/- 1e-6")

    picked = probs.data[np.arange(b_), labels]
    clamped = np.maximum(picked, PROB_FLOOR)
    if class_weights is not None:
        wvec = np.asarray(class_weights, dtype=probs.dtype)[labels]
        wsum = wvec.sum()
    else:
        wvec = None
        wsum = float(b_)
    losses = -np.log(clamped)
    value = (losses * wvec).sum() / wsum if wvec is not None else losses.mean()
    out = Tensor(np.asarray(value, dtype=probs.dtype), _parents=(probs,))

    def _bw(g):
        if not probs._needs_grad:
            return
        dprobs = np.zeros_like(probs.data)
        scale = np.where(picked > PROB_FLOOR, -1.0 / clamped, 0.0)
        if wvec is not None:
            scale = scale * wvec
        dprobs[np.arange(b_), labels] = scale / wsum
        _accumulate(probs, dprobs * g)

    out._backward_fn = _bw
    return out
