"""Differentiable kernels: convolutions, batch norm, dense layers, pooling, losses."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp

from .tensor import Tape, Tensor, as_tensor, checked


def linear(x: Tensor, w: Tensor, b: Tensor | None = None, tape: Tape | None = None) -> Tensor:
    """``x @ w + b`` over the last axis."""
    x = as_tensor(x)
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear: input width {x.shape[-1]} does not match weight {w.shape}")
    val = x.value @ w.value
    if b is not None:
        val = val + b.value
    out = Tensor(checked(val, "linear"))
    if tape is not None:

        def back():
            g = out.grad
            if g is None:
                return
            g2 = g.reshape(-1, g.shape[-1])
            x2 = x.value.reshape(-1, x.shape[-1])
            w.accumulate(x2.T @ g2, owned=True)
            if b is not None:
                b.accumulate(g2.sum(axis=0), owned=True)
            x.accumulate(g @ w.value.T, owned=True)

        tape.record(back)
    return out


def conv1d(x: Tensor, w: Tensor, tape: Tape | None = None) -> Tensor:
    """Valid cross-correlation along axis 1.

    x: ``m x L x c_in``; w: ``c_in x c_out x k``; result ``m x (L-k+1) x c_out``.
    """
    x = as_tensor(x)
    m, L, cin = x.shape
    cin_w, cout, k = w.shape
    if cin != cin_w:
        raise ValueError(f"conv1d: {cin} input channels but weights expect {cin_w}")
    if L < k:
        raise ValueError(f"conv1d: sequence length {L} shorter than kernel {k}")
    Lo = L - k + 1
    xv, wv = x.value, w.value
    if k == 1:
        val = xv @ wv[:, :, 0]
    else:
        val = xv[:, 0:Lo] @ wv[:, :, 0]
        for t in range(1, k):
            val += xv[:, t : t + Lo] @ wv[:, :, t]
    out = Tensor(checked(val, "conv1d"))
    if tape is not None:

        def back():
            g = out.grad
            if g is None:
                return
            g2 = g.reshape(-1, cout)
            gw = np.empty_like(wv)
            if k == 1:
                gw[:, :, 0] = xv.reshape(-1, cin).T @ g2
                x.accumulate(g @ wv[:, :, 0].T, owned=True)
                w.accumulate(gw, owned=True)
                return
            gx = np.zeros_like(xv)
            for t in range(k):
                xs = xv[:, t : t + Lo].reshape(-1, cin)
                gw[:, :, t] = xs.T @ g2
                gx[:, t : t + Lo] += g @ wv[:, :, t].T
            w.accumulate(gw, owned=True)
            x.accumulate(gx, owned=True)

        tape.record(back)
    return out


@numba.njit(cache=True)
def _depthwise_forward(x, w):
    m, L, c = x.shape
    k = w.shape[1]
    Lo = L - k + 1
    out = np.zeros((m, Lo, c), dtype=x.dtype)
    for i in range(m):
        for pos in range(Lo):
            for t in range(k):
                for ch in range(c):
                    out[i, pos, ch] += x[i, pos + t, ch] * w[ch, t]
    return out


@numba.njit(cache=True)
def _depthwise_backward(x, w, g):
    m, L, c = x.shape
    k = w.shape[1]
    Lo = L - k + 1
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    for i in range(m):
        for pos in range(Lo):
            for t in range(k):
                for ch in range(c):
                    gv = g[i, pos, ch]
                    gx[i, pos + t, ch] += gv * w[ch, t]
                    gw[ch, t] += gv * x[i, pos + t, ch]
    return gx, gw


def depthwise_conv1d(x: Tensor, w: Tensor, tape: Tape | None = None) -> Tensor:
    """Per-channel valid convolution; w is ``c x k``."""
    x = as_tensor(x)
    m, L, c = x.shape
    cw, k = w.shape
    if c != cw:
        raise ValueError(f"depthwise_conv1d: {c} channels but weights expect {cw}")
    if L < k:
        raise ValueError(f"depthwise_conv1d: sequence length {L} shorter than kernel {k}")
    dt = np.result_type(x.value, w.value)
    xv = np.ascontiguousarray(x.value, dtype=dt)
    wv = np.ascontiguousarray(w.value, dtype=dt)
    out = Tensor(checked(_depthwise_forward(xv, wv), "depthwise_conv1d"))
    if tape is not None:

        def back():
            g = out.grad
            if g is None:
                return
            gx, gw = _depthwise_backward(xv, wv, np.ascontiguousarray(g, dtype=dt))
            w.accumulate(gw, owned=True)
            x.accumulate(gx, owned=True)

        tape.record(back)
    return out


@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, dtype=np.float64) -> "BatchNormState":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool,
    tape: Tape | None = None,
) -> Tensor:
    """Normalize each channel (last axis) over all other axes."""
    x = as_tensor(x)
    c = x.shape[-1]
    xv = x.value.reshape(-1, c)
    n = xv.shape[0]
    if training:
        if n < 2:
            raise ValueError("batch_norm in training mode needs at least 2 values per channel")
        mu = xv.mean(axis=0)
        var = xv.var(axis=0)
        mom = state.momentum
        state.running_mean = (1 - mom) * state.running_mean + mom * mu
        state.running_var = (1 - mom) * state.running_var + mom * var * n / (n - 1)
    else:
        mu = state.running_mean
        var = state.running_var
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (xv - mu) * inv
    val = (xhat * gamma.value + beta.value).reshape(x.shape)
    out = Tensor(checked(val, "batch_norm"))
    if tape is not None:

        def back():
            g = out.grad
            if g is None:
                return
            g2 = g.reshape(-1, c)
            gamma.accumulate((g2 * xhat).sum(axis=0), owned=True)
            beta.accumulate(g2.sum(axis=0), owned=True)
            gxhat = g2 * gamma.value
            if training:
                gx = inv / n * (
                    n * gxhat - gxhat.sum(axis=0) - xhat * (gxhat * xhat).sum(axis=0)
                )
            else:
                gx = gxhat * inv
            x.accumulate(gx.reshape(x.shape), owned=True)

        tape.record(back)
    return out


def relu(x: Tensor, tape: Tape | None = None) -> Tensor:
    x = as_tensor(x)
    mask = x.value > 0
    out = Tensor(np.maximum(x.value, 0))
    if tape is not None:

        def back():
            if out.grad is not None:
                x.accumulate(out.grad * mask, owned=True)

        tape.record(back)
    return out


def dropout(
    x: Tensor, rate: float, rng: np.random.Generator | None, training: bool, tape: Tape | None = None
) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mask = ((rng.random(x.shape) >= rate) / (1.0 - rate)).astype(x.dtype)
    out = Tensor(x.value * mask)
    if tape is not None:

        def back():
            if out.grad is not None:
                x.accumulate(out.grad * mask, owned=True)

        tape.record(back)
    return out


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(checked(a.value + b.value, "add"))
    if tape is not None:

        def back():
            if out.grad is not None:
                a.accumulate(out.grad)
                b.accumulate(out.grad)

        tape.record(back)
    return out


def gather_rows(h: Tensor, idx: np.ndarray, tape: Tape | None = None) -> Tensor:
    """``h[idx]`` for integer ``idx`` of any shape."""
    h = as_tensor(h)
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(h.value[idx])
    if tape is not None:

        def back():
            g = out.grad
            if g is None:
                return
            flat = idx.ravel()
            scatter = sp.csr_matrix(
                (np.ones(flat.size, dtype=g.dtype), (flat, np.arange(flat.size))),
                shape=(h.shape[0], flat.size),
            )
            h.accumulate(np.asarray(scatter @ g.reshape(flat.size, -1)), owned=True)

        tape.record(back)
    return out


def concat(parts: list, tape: Tape | None = None) -> Tensor:
    """Concatenate along the last axis; plain arrays are treated as constants."""
    vals = [p.value if isinstance(p, Tensor) else np.asarray(p) for p in parts]
    out = Tensor(np.concatenate(vals, axis=-1))
    if tape is not None:
        bounds = np.cumsum([0] + [v.shape[-1] for v in vals])

        def back():
            g = out.grad
            if g is None:
                return
            for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
                if isinstance(p, Tensor):
                    p.accumulate(g[..., lo:hi])

        tape.record(back)
    return out


def sparse_matmul(mat: sp.spmatrix, x: Tensor, tape: Tape | None = None) -> Tensor:
    """``mat @ x`` with a constant sparse left factor (pooling, segment sums)."""
    x = as_tensor(x)
    lead = x.shape[:-1]
    x2 = x.value.reshape(-1, x.shape[-1])
    if mat.shape[1] != x2.shape[0]:
        raise ValueError(f"sparse_matmul: {mat.shape} @ {x2.shape}")
    out = Tensor(np.asarray(mat @ x2))
    if tape is not None:
        mt = mat.T.tocsr()

        def back():
            if out.grad is not None:
                x.accumulate(np.asarray(mt @ out.grad).reshape(*lead, x.shape[-1]), owned=True)

        tape.record(back)
    return out


def cross_entropy(logits: Tensor, target: np.ndarray, tape: Tape | None = None) -> Tensor:
    """Mean softmax cross-entropy over rows."""
    logits = as_tensor(logits)
    target = np.asarray(target, dtype=np.int64)
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = z.shape[0]
    loss = -logp[np.arange(n), target].mean()
    out = Tensor(checked(np.asarray(loss), "cross_entropy"))
    if tape is not None:

        def back():
            if out.grad is None:
                return
            g = np.exp(logp)
            g[np.arange(n), target] -= 1.0
            logits.accumulate(g * (out.grad / n), owned=True)

        tape.record(back)
    return out


def l1_loss(pred: Tensor, target: np.ndarray, tape: Tape | None = None) -> Tensor:
    """Mean absolute error."""
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=pred.dtype).reshape(pred.shape)
    diff = pred.value - target
    out = Tensor(checked(np.asarray(np.abs(diff).mean()), "l1_loss"))
    if tape is not None:

        def back():
            if out.grad is not None:
                pred.accumulate(np.sign(diff) * (out.grad / diff.size), owned=True)

        tape.record(back)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
