"""Differentiable layer operations for the policy network.

Every op validates shapes up front, computes the forward value with
float64 accumulation in dots/reductions, and registers a backward
closure via :func:`make_node`. Convolution, pooling and the LSTM are
fused nodes: their backward passes are hand-derived rather than composed
from primitives, which keeps the per-step graph small enough to train
thousands of episodes on a CPU.

``conv1d`` and ``maxpool1d`` accept an optional leading axis of
independent applications (the time-distributed case); a 2-D input is the
plain single-sequence form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, make_node

CE_EPS = 1e-12


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matmul with float64 accumulation, cast back to the operand dtype."""
    out = a.astype(np.float64, copy=False) @ b.astype(np.float64, copy=False)
    return out.astype(np.result_type(a, b), copy=False)


def _sum64(x: np.ndarray, axis=None) -> np.ndarray:
    return np.sum(x, axis=axis, dtype=np.float64).astype(x.dtype, copy=False)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form: stable for any magnitude, one vectorized kernel
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def add_n(tensors) -> Tensor:
    """Sum of same-shape tensors as a single n-ary node."""
    tensors = list(tensors)
    if not tensors:
        raise ValueError("add_n needs at least one tensor")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ShapeError(f"add_n shapes differ: {shape} vs {t.shape}")
    acc = np.zeros(shape, dtype=np.float64)
    for t in tensors:
        acc += t.data
    data = acc.astype(tensors[0].dtype, copy=False)

    def backward(g):
        return tuple(g for _ in tensors)

    return make_node(data, tensors, backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        return (g * c,)

    return make_node(x.data * c, (x,), backward)


def relu(x: Tensor) -> Tensor:
    def backward(g):
        return (g * (x.data > 0),)

    return make_node(np.maximum(x.data, 0.0), (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return make_node(x.data.reshape(shape), (x,), backward)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map ``x @ w + b`` with ``w`` stored as [in_dim, out_dim].

    ``x`` may be a single vector [in] or a batch [n, in].
    """
    if w.data.ndim != 2 or b.data.ndim != 1 or b.shape[0] != w.shape[1]:
        raise ShapeError(f"dense params malformed: w{w.shape} b{b.shape}")
    if x.data.ndim not in (1, 2) or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense input {x.shape} does not match weights {w.shape}")

    out = _mm(x.data, w.data) + b.data

    if x.data.ndim == 1:

        def backward(g):
            return (_mm(g, w.data.T), np.outer(x.data, g), g)

    else:

        def backward(g):
            return (_mm(g, w.data.T), _mm(x.data.T, g), _sum64(g, axis=0))

    return make_node(out, (x, w, b), backward)


def conv1d(x: Tensor, kernels: Tensor, b: Tensor) -> Tensor:
    """Same-length 1-D convolution, zero-padded, odd kernel width only.

    ``x`` is [len, ch_in] or [T, len, ch_in]; ``kernels`` is
    [k, ch_in, ch_out]. A 3-D input applies the same kernels to each of
    the T leading slices independently.
    """
    if kernels.data.ndim != 3:
        raise ShapeError(f"conv1d kernels must be [k, ch_in, ch_out], got {kernels.shape}")
    kk, cin, cout = kernels.shape
    if kk % 2 == 0:
        raise ValueError(f"conv1d kernel width must be odd for same padding, got {kk}")
    if b.data.ndim != 1 or b.shape[0] != cout:
        raise ShapeError(f"conv1d bias {b.shape} does not match ch_out {cout}")
    if x.data.ndim not in (2, 3) or x.shape[-1] != cin:
        raise ShapeError(f"conv1d input {x.shape} does not match kernels {kernels.shape}")
    length = x.shape[-2]
    if length < 1:
        raise ShapeError("conv1d input length must be >= 1")

    pad = (kk - 1) // 2
    xp = np.zeros((*x.shape[:-2], length + 2 * pad, cin), dtype=x.dtype)
    xp[..., pad : pad + length, :] = x.data
    # [..., len, ch_in, k] -> [..., len, k, ch_in] -> [..., len, k*ch_in]
    cols = sliding_window_view(xp, kk, axis=-2)
    cols = np.swapaxes(cols, -1, -2).reshape(*x.shape[:-1], kk * cin)
    kmat = kernels.data.reshape(kk * cin, cout)
    out = _mm(cols, kmat) + b.data

    def backward(g):
        g_flat = g.reshape(-1, cout)
        dk = _mm(cols.reshape(-1, kk * cin).T, g_flat).reshape(kk, cin, cout)
        db = _sum64(g_flat, axis=0)
        dcols = _mm(g, kmat.T).reshape(*x.shape[:-1], kk, cin)
        dxp = np.zeros_like(xp)
        for j in range(kk):
            dxp[..., j : j + length, :] += dcols[..., :, j, :]
        dx = dxp[..., pad : pad + length, :]
        return (dx, dk, db)

    return make_node(out, (x, kernels, b), backward)


def maxpool1d(x: Tensor, window: int) -> Tensor:
    """Per-channel max over non-overlapping windows along the length axis.

    Output length is floor(len / window); a trailing remainder is
    dropped. Gradient flows to the first maximal element of each window.
    """
    if window < 1:
        raise ValueError(f"pool window must be >= 1, got {window}")
    if x.data.ndim not in (2, 3):
        raise ShapeError(f"maxpool1d expects [len, ch] or [T, len, ch], got {x.shape}")
    length, ch = x.shape[-2], x.shape[-1]
    if length < window:
        raise ShapeError(f"maxpool1d input length {length} shorter than window {window}")

    n = length // window
    lead = x.shape[:-2]
    xr = x.data[..., : n * window, :].reshape(*lead, n, window, ch)
    idx = np.argmax(xr, axis=-2)
    out = np.take_along_axis(xr, idx[..., None, :], axis=-2).squeeze(-2)

    def backward(g):
        dxr = np.zeros_like(xr)
        np.put_along_axis(dxr, idx[..., None, :], g[..., None, :], axis=-2)
        dx = np.zeros_like(x.data)
        dx[..., : n * window, :] = dxr.reshape(*lead, n * window, ch)
        return (dx,)

    return make_node(out, (x,), backward)


@dataclass
class LstmGateParams:
    """Per-gate LSTM weights: input (w), recurrent (u) and bias (b)."""

    w_i: Tensor
    w_f: Tensor
    w_g: Tensor
    w_o: Tensor
    u_i: Tensor
    u_f: Tensor
    u_g: Tensor
    u_o: Tensor
    b_i: Tensor
    b_f: Tensor
    b_g: Tensor
    b_o: Tensor

    def tensors(self):
        return (
            self.w_i, self.w_f, self.w_g, self.w_o,
            self.u_i, self.u_f, self.u_g, self.u_o,
            self.b_i, self.b_f, self.b_g, self.b_o,
        )

    @property
    def hidden(self) -> int:
        return self.w_i.shape[1]


def lstm(x_seq: Tensor, p: LstmGateParams) -> Tensor:
    """Run the LSTM recurrence over [T, in] and return the final hidden state.

    Gates: i/f/o sigmoid, candidate g tanh; c_t = f*c + i*g,
    h_t = o*tanh(c_t); h_0 = c_0 = 0. The whole unrolled recurrence is a
    single graph node whose backward is backprop-through-time.
    """
    if x_seq.data.ndim != 2:
        raise ShapeError(f"lstm input must be [T, in], got {x_seq.shape}")
    T, n_in = x_seq.shape
    if T < 1:
        raise ShapeError("lstm needs at least one timestep")
    hid = p.hidden
    for t in (p.w_i, p.w_f, p.w_g, p.w_o):
        if t.shape != (n_in, hid):
            raise ShapeError(f"lstm input weights {t.shape} do not match ({n_in}, {hid})")
    for t in (p.u_i, p.u_f, p.u_g, p.u_o):
        if t.shape != (hid, hid):
            raise ShapeError(f"lstm recurrent weights {t.shape} do not match ({hid}, {hid})")
    for t in (p.b_i, p.b_f, p.b_g, p.b_o):
        if t.shape != (hid,):
            raise ShapeError(f"lstm bias {t.shape} does not match ({hid},)")

    # pack gates as [i | f | o | g]: the three sigmoid gates form one
    # contiguous block so each step needs two activation kernels, and the
    # input-side projection for all timesteps is a single matmul
    x = x_seq.data
    W64 = np.concatenate(
        [p.w_i.data, p.w_f.data, p.w_o.data, p.w_g.data], axis=1
    ).astype(np.float64, copy=False)
    U64 = np.concatenate(
        [p.u_i.data, p.u_f.data, p.u_o.data, p.u_g.data], axis=1
    ).astype(np.float64, copy=False)
    b64 = np.concatenate([p.b_i.data, p.b_f.data, p.b_o.data, p.b_g.data]).astype(
        np.float64, copy=False
    )
    dtype = np.result_type(x, p.w_i.data)
    x64 = x.astype(np.float64, copy=False)
    zx = x64 @ W64 + b64  # [T, 4H]

    h3 = 3 * hid
    gates = np.empty((T, 4 * hid))  # post-activation i,f,o,g
    h_prev = np.empty((T, hid))
    c_prev = np.empty((T, hid))
    tanh_c = np.empty((T, hid))
    h = np.zeros(hid)
    c = np.zeros(hid)
    for t in range(T):
        z = zx[t] + h @ U64
        row = gates[t]
        row[:h3] = _sigmoid(z[:h3])
        row[h3:] = np.tanh(z[h3:])
        h_prev[t] = h
        c_prev[t] = c
        c = row[hid : 2 * hid] * c + row[:hid] * row[h3:]
        tc = np.tanh(c)
        tanh_c[t] = tc
        h = row[2 * hid : h3] * tc

    def backward(g_out):
        U64T = np.ascontiguousarray(U64.T)
        dz_all = np.empty((T, 4 * hid))
        dh = g_out.astype(np.float64, copy=True)
        dc = np.zeros(hid)
        for t in range(T - 1, -1, -1):
            row = gates[t]
            i, f, o, gg = row[:hid], row[hid : 2 * hid], row[2 * hid : h3], row[h3:]
            tc = tanh_c[t]
            do = dh * tc
            dc += dh * o * (1.0 - tc * tc)
            dz = dz_all[t]
            dz[:hid] = dc * gg * i * (1.0 - i)
            dz[hid : 2 * hid] = dc * c_prev[t] * f * (1.0 - f)
            dz[2 * hid : h3] = do * o * (1.0 - o)
            dz[h3:] = dc * i * (1.0 - gg * gg)
            dh = dz @ U64T
            dc *= f
        dx = (dz_all @ W64.T).astype(x.dtype, copy=False)
        dW = x64.T @ dz_all
        dU = h_prev.T @ dz_all
        db = dz_all.sum(axis=0)
        wdt, bdt = p.w_i.dtype, p.b_i.dtype
        sl = {  # packed column block per gate, in parent order i,f,g,o
            "i": slice(0, hid),
            "f": slice(hid, 2 * hid),
            "g": slice(h3, 4 * hid),
            "o": slice(2 * hid, h3),
        }
        out = [dx]
        out += [dW[:, sl[k]].astype(wdt, copy=False) for k in "ifgo"]
        out += [dU[:, sl[k]].astype(wdt, copy=False) for k in "ifgo"]
        out += [db[sl[k]].astype(bdt, copy=False) for k in "ifgo"]
        return tuple(out)

    return make_node(h.astype(dtype, copy=False), (x_seq,) + p.tensors(), backward)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability ``rate`` and rescale survivors.

    Inference (``training=False``) is the identity and consumes no
    randomness.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:

        def backward(g):
            return (g,)

        return make_node(x.data, (x,), backward)

    if rng is None:
        raise ValueError("training dropout needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    scale_factor = 1.0 / (1.0 - rate)
    mult = keep * scale_factor

    def backward(g):
        return (g * mult,)

    return make_node(x.data * mult, (x,), backward)


def softmax(logits: Tensor) -> Tensor:
    """Max-subtracted softmax over a 1-D logit vector."""
    if logits.data.ndim != 1:
        raise ShapeError(f"softmax expects a 1-D vector, got {logits.shape}")
    z = logits.data - logits.data.max()
    e = np.exp(z)
    y = e / _sum64(e)

    def backward(g):
        dot = float(np.sum(g.astype(np.float64) * y.astype(np.float64)))
        return (y * (g - dot),)

    return make_node(y, (logits,), backward)


def cross_entropy(probs: Tensor, target_index: int) -> Tensor:
    """Negative log-likelihood of ``target_index`` under ``probs``."""
    n = probs.shape[0]
    if not 0 <= target_index < n:
        raise IndexError(f"target index {target_index} out of range for {n} classes")
    p = float(probs.data[target_index]) + CE_EPS

    def backward(g):
        dp = np.zeros_like(probs.data)
        dp[target_index] = -float(g) / p
        return (dp,)

    return make_node(np.asarray(-np.log(p), dtype=probs.dtype), (probs,), backward)


def huber(pred: Tensor, target: np.ndarray, delta: float = 1.0) -> Tensor:
    """Mean Huber loss against a constant target.

    Quadratic within ``delta`` of the target, linear beyond, so the
    per-element gradient magnitude is capped at ``delta / size``.
    """
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"huber shapes differ: pred {pred.shape} vs target {target.shape}")
    e = pred.data.astype(np.float64) - target.astype(np.float64)
    ae = np.abs(e)
    quad = ae <= delta
    per_elem = np.where(quad, 0.5 * e * e, delta * (ae - 0.5 * delta))
    n = e.size
    loss = per_elem.sum() / n

    def backward(g):
        de = np.clip(e, -delta, delta) / n * float(g)
        return (de.astype(pred.dtype, copy=False),)

    return make_node(np.asarray(loss, dtype=pred.dtype), (pred,), backward)
